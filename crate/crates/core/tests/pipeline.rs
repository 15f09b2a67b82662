use sdq::codec::{fake_quantize, NumberFormat};
use sdq::pipeline::{baseline_quant, baseline_sparse, relative_error, run_sdq, SdqConfig};
use sdq::sparsify::{prune_nm, prune_sparsegpt, score_magnitude, PruneMethod, DEFAULT_DAMPING};
use sdq::synth::{self, LayerShape};
use sdq::tensor::{matmul_ref, DenseMatrix, SparsityPattern};

fn cfg(name: &str) -> SdqConfig {
    name.parse().unwrap()
}

fn small_layer(seed: u64) -> synth::LayerData {
    synth::layer(
        LayerShape {
            out_features: 32,
            in_features: 128,
            calib_samples: 48,
            batch: 16,
            ..LayerShape::default()
        },
        seed,
    )
}

/// Integer matrix in [-127, 127] whose every run of 16 along the chosen axis
/// contains 127, so every unquantized int8 scale is exactly 1.
fn int8_exact(rows: usize, cols: usize, along_rows: bool, seed: u64) -> DenseMatrix {
    let mut state = seed;
    DenseMatrix::from_fn(rows, cols, |i, j| {
        let pos = if along_rows { j } else { i };
        if pos % 16 == 0 {
            return 127.0;
        }
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) % 255) as f64 - 127.0
    })
}

#[test]
fn lossless_configuration_reproduces_the_dense_product() {
    let mut c = cfg("SDQ-M8:8-0:8int8-8:8int8");
    c.scale_format = None;
    let w = int8_exact(8, 64, true, 1);
    let x = int8_exact(64, 5, false, 2);
    let res = run_sdq(&w, None, &x, &c).unwrap();
    assert_eq!(res.output_error, 0.0);
    assert_eq!(res.w_hat, w);
    assert_eq!(res.output, matmul_ref(&w, &x).unwrap());
}

/// Packs the nonzeros of each block into `n` slots, quantizes that stream and
/// scatters it back, without going through the library's sparse container.
fn manual_branch(
    w: &DenseMatrix,
    p: SparsityPattern,
    f: NumberFormat,
    sf: Option<NumberFormat>,
    qvs: usize,
) -> DenseMatrix {
    let blocks = w.cols() / p.m();
    let mut slots = Vec::new();
    let mut positions = Vec::new();
    for r in 0..w.rows() {
        for b in 0..blocks {
            let nz: Vec<usize> = (0..p.m()).filter(|&j| w.get(r, b * p.m() + j) != 0.0).collect();
            for s in 0..p.n() {
                match nz.get(s) {
                    Some(&j) => {
                        slots.push(w.get(r, b * p.m() + j));
                        positions.push(Some((r, b * p.m() + j)));
                    }
                    None => {
                        slots.push(0.0);
                        positions.push(None);
                    }
                }
            }
        }
    }
    let packed = DenseMatrix::new(w.rows(), blocks * p.n(), slots).unwrap();
    let q = fake_quantize(&packed, qvs, f, sf).unwrap();
    let mut out = vec![0.0; w.rows() * w.cols()];
    for (v, pos) in q.data().iter().zip(positions) {
        if let Some((r, c)) = pos {
            out[r * w.cols() + c] = *v;
        }
    }
    DenseMatrix::new(w.rows(), w.cols(), out).unwrap()
}

#[test]
fn without_outliers_the_pipeline_is_prune_then_quantize() {
    for seed in 0..5 {
        let d = small_layer(seed);
        let c = cfg("SDQ-M4:8-0:8int8-4:8fp4");
        let p = SparsityPattern::new(4, 8).unwrap();
        let res = run_sdq(&d.weights, None, &d.eval, &c).unwrap();
        assert!(res.outliers.is_none());

        let pruned = prune_nm(&d.weights, &score_magnitude(&d.weights), p).unwrap();
        let w_hat = manual_branch(&pruned, p, NumberFormat::FP4_E2M1, c.scale_format, c.qvs);
        let x_q = fake_quantize(&d.eval.transpose(), c.qvs, NumberFormat::FP4_E2M1, c.scale_format)
            .unwrap()
            .transpose();
        assert_eq!(res.pruned, pruned);
        assert_eq!(res.w_hat, w_hat);
        assert_eq!(res.output, matmul_ref(&w_hat, &x_q).unwrap());
    }
}

#[test]
fn runs_are_deterministic() {
    let d = small_layer(9);
    for name in ["SDQ-W7:8-1:8int8-6:8fp4", "SDQ-S6:8-2:8int8-4:8int4"] {
        let a = run_sdq(&d.weights, Some(&d.calibration), &d.eval, &cfg(name)).unwrap();
        let b = run_sdq(&d.weights, Some(&d.calibration), &d.eval, &cfg(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn reconstruction_stays_inside_the_pruned_support() {
    for seed in 0..5 {
        let d = small_layer(seed);
        for name in ["SDQ-W7:8-1:8int8-6:8fp4", "SDQ-M3:4-1:4int8-2:4fp4", "SDQ-S6:8-1:8int8-5:8int4"] {
            let res = run_sdq(&d.weights, Some(&d.calibration), &d.eval, &cfg(name)).unwrap();
            let sp = res.pruned.support();
            assert!(res.w_hat.support().iter().zip(&sp).all(|(h, p)| !h || *p), "{name}");
            if !matches!(cfg(name).method, PruneMethod::SparseGpt { .. }) {
                assert!(sp.iter().zip(d.weights.support()).all(|(p, w)| !p || w));
            }
        }
    }
}

#[test]
fn quant_baseline_is_scale_invariant_without_scale_quantization() {
    let d = small_layer(4);
    for f in [NumberFormat::FP4_E2M1, NumberFormat::INT4, NumberFormat::INT8] {
        let a = baseline_quant(&d.weights, &d.eval, f, None, 16).unwrap();
        let b = baseline_quant(&d.weights.scale(2.0), &d.eval, f, None, 16).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "{}: {a} vs {b}", f.name());
    }
}

#[test]
fn sparsegpt_reconstructs_calibration_no_worse_than_magnitude() {
    let p = SparsityPattern::new(4, 8).unwrap();
    let mut margins = Vec::new();
    for seed in 0..20 {
        let mut r = synth::rng(seed);
        let w = synth::gaussian(8, 16, &mut r);
        let x = synth::gaussian(64, 16, &mut r);
        let err = |w_hat: &DenseMatrix| {
            let xt = x.transpose();
            let diff = matmul_ref(&w.sub(w_hat).unwrap(), &xt).unwrap();
            diff.frobenius_norm()
        };
        let obs = err(&prune_sparsegpt(&w, &x, p, DEFAULT_DAMPING).unwrap());
        let mag = err(&prune_nm(&w, &score_magnitude(&w), p).unwrap());
        assert!(obs <= mag, "seed {seed}: sparsegpt {obs} vs magnitude {mag}");
        margins.push(mag - obs);
    }
    assert!(margins.iter().any(|m| *m > 0.0));
}

#[test]
fn finer_q_vectors_fit_at_least_as_well() {
    let w = synth::gaussian(4, 64, &mut synth::rng(5));
    let mse = |qvs| {
        let q = fake_quantize(&w, qvs, NumberFormat::INT4, None).unwrap();
        let d = w.sub(&q).unwrap();
        d.data().iter().map(|v| v * v).sum::<f64>() / d.data().len() as f64
    };
    assert!(mse(16) <= mse(64));
}

#[test]
fn sdq_beats_plain_fp4_and_fp4_beats_int4() {
    let c = cfg("SDQ-W7:8-1:8int8-6:8fp4");
    for seed in 0..20 {
        let d = synth::layer(LayerShape::default(), seed);
        let sdq = run_sdq(&d.weights, Some(&d.calibration), &d.eval, &c).unwrap().output_error;
        let fp4 = baseline_quant(&d.weights, &d.eval, NumberFormat::FP4_E2M1, c.scale_format, c.qvs).unwrap();
        let int4 = baseline_quant(&d.weights, &d.eval, NumberFormat::INT4, c.scale_format, c.qvs).unwrap();
        assert!(sdq < fp4, "seed {seed}: sdq {sdq} fp4 {fp4}");
        assert!(int4 >= fp4, "seed {seed}: int4 {int4} fp4 {fp4}");
    }
}

#[test]
fn heavier_pruning_hurts_more() {
    for seed in 0..20 {
        let d = small_layer(seed);
        let e = |n| {
            baseline_sparse(
                &d.weights,
                Some(&d.calibration),
                &d.eval,
                PruneMethod::Wanda,
                SparsityPattern::new(n, 8).unwrap(),
            )
            .unwrap()
        };
        assert!(e(2) > e(4), "seed {seed}");
    }
}

#[test]
fn stage_errors_are_consistent() {
    let d = small_layer(2);
    let res = run_sdq(&d.weights, Some(&d.calibration), &d.eval, &cfg("SDQ-W7:8-1:8int8-6:8fp4")).unwrap();
    let o_ref = matmul_ref(&d.weights, &d.eval).unwrap();
    let direct = relative_error(&matmul_ref(&res.pruned, &d.eval).unwrap(), &o_ref).unwrap();
    assert_eq!(res.stages.sparsify, direct);
    assert!(res.stages.sparsify > 0.0 && res.output_error > 0.0);
    assert!(res.cost.is_consistent());
}

#[test]
fn wanda_and_product_need_calibration() {
    let d = small_layer(1);
    assert!(run_sdq(&d.weights, None, &d.eval, &cfg("SDQ-W7:8-1:8int8-6:8fp4")).is_err());
    let mut c = cfg("SDQ-M7:8-1:8int8-6:8fp4");
    assert!(run_sdq(&d.weights, None, &d.eval, &c).is_err());
    c.metric = "magnitude".parse().unwrap();
    run_sdq(&d.weights, None, &d.eval, &c).unwrap();
}

use std::path::Path;
use std::process::{Command, Output};

use sdq::io::{load_matrix, Report};

fn sdq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdq"))
        .args(args)
        .env_remove("SDQ_SEED")
        .output()
        .unwrap()
}

fn report(out: &Output) -> Report {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    Report::parse(&String::from_utf8(out.stdout.clone()).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn cost_of_the_headline_configuration() {
    let r = report(&sdq(&[
        "cost", "--config", "SDQ-W7:8-1:8int8-6:8fp4", "--qvs", "16", "--sf", "fp8-e4m3",
    ]));
    assert_eq!(r.get("effective_throughput"), Some("4.0"));
    assert_eq!(r.get("quant.scale_format"), Some("fp8-e4m3"));
    let total: f64 = ["data_bits", "meta_s_bits", "meta_q_bits"]
        .iter()
        .map(|k| r.get(k).unwrap().parse::<f64>().unwrap())
        .sum();
    assert_eq!(total, r.get("bits_per_weight").unwrap().parse::<f64>().unwrap());
}

#[test]
fn semilocal_coverage_example() {
    let r = report(&sdq(&[
        "coverage", "--mode", "semilocal", "--qvs", "64", "--pattern", "1:8", "--ratio", "0.03",
        "--seed", "7",
    ]));
    assert!(r.get("coverage").unwrap().parse::<f64>().unwrap() >= 0.99);
}

#[test]
fn figure_csv_has_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fig.csv");
    report(&sdq(&["cost", "--figure", "--csv", p(&csv)]));
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.starts_with("config,data_bits,meta_s_bits,meta_q_bits"));
}

#[test]
fn files_flow_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let (w, x, xe) = (path("w.sdqt"), path("x.sdqt"), path("xe.sdqt"));
    report(&sdq(&["gen", "--kind", "heavy-tail", "--rows", "32", "--cols", "128", "--seed", "3", "--out", p(&w)]));
    report(&sdq(&["gen", "--rows", "40", "--cols", "128", "--seed", "4", "--dtype", "f32", "--out", p(&x)]));
    report(&sdq(&["gen", "--rows", "128", "--cols", "8", "--seed", "5", "--out", p(&xe)]));

    let pruned = path("pruned.sdqt");
    let r = report(&sdq(&[
        "sparsify", "--weights", p(&w), "--calib", p(&x), "--method", "sparsegpt", "--pattern", "4:8",
        "--out", p(&pruned),
    ]));
    assert_eq!(r.get("valid"), Some("true"));

    let (o, i) = (path("o.sdqt"), path("i.sdqt"));
    let r = report(&sdq(&[
        "decompose", "--weights", p(&pruned), "--pattern", "4:8", "--outliers", "1:8", "--out-outliers",
        p(&o), "--out-inliers", p(&i),
    ]));
    assert_eq!(r.get("outlier_nonzeros"), Some("512"));
    let sum = load_matrix(&o).unwrap().add(&load_matrix(&i).unwrap()).unwrap();
    assert_eq!(sum, load_matrix(&pruned).unwrap());

    let q = path("q.sdqt");
    let r = report(&sdq(&["quantize", "--input", p(&i), "--format", "fp4", "--sf", "fp8-e4m3", "--out", p(&q)]));
    assert!(r.get("relative_error").unwrap().parse::<f64>().unwrap() > 0.0);

    let rep = path("run.txt");
    let out = sdq(&[
        "run", "--config", "SDQ-W7:8-1:8int8-6:8fp4", "--weights", p(&w), "--calib", p(&x), "--eval",
        p(&xe), "--report", p(&rep),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = Report::parse(&std::fs::read_to_string(&rep).unwrap());
    assert_eq!(r.get("config"), Some("SDQ-W7:8-1:8int8-6:8fp4"));
    assert_eq!(r.get("input.weights"), Some(p(&w)));
    assert!(r.get("output_error").is_some());
}

#[test]
fn run_report_embeds_the_resolved_configuration() {
    let r = report(&sdq(&["run", "--config", "SDQ-M7:8-1:8int8-6:8fp4", "--metric", "magnitude", "--qvs", "32", "--seed", "2"]));
    for key in [
        "sparsify.method",
        "decompose.metric",
        "decompose.order",
        "quant.scale_format",
        "quant.qvs",
        "quant.inlier_activation",
        "seed",
    ] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r.get("quant.qvs"), Some("32"));
    assert_eq!(r.get("decompose.metric"), Some("magnitude"));
}

#[test]
fn seed_defaults_from_the_environment() {
    let run = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_sdq"));
        cmd.args(["coverage", "--pattern", "2:8", "--ratio", "0.02", "--rows", "64", "--cols", "64"]);
        match seed {
            Some(s) => cmd.env("SDQ_SEED", s),
            None => cmd.env_remove("SDQ_SEED"),
        };
        report(&cmd.output().unwrap())
    };
    assert_eq!(run(Some("42")).get("seed"), Some("42"));
    assert_eq!(run(None).get("seed"), Some("0"));
}

#[test]
fn compare_reports_three_axes_per_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let (w, x, xe) = (path("w.sdqt"), path("x.sdqt"), path("xe.sdqt"));
    report(&sdq(&["gen", "--kind", "heavy-tail", "--rows", "16", "--cols", "128", "--out", p(&w)]));
    report(&sdq(&["gen", "--rows", "32", "--cols", "128", "--out", p(&x)]));
    report(&sdq(&["gen", "--rows", "128", "--cols", "4", "--out", p(&xe)]));
    let r = report(&sdq(&["compare", "--weights", p(&w), "--calib", p(&x), "--eval", p(&xe)]));
    let names: Vec<&str> = r
        .entries()
        .iter()
        .filter_map(|(k, _)| k.strip_suffix(".output_error"))
        .collect();
    assert!(names.len() >= 5);
    for n in names {
        assert!(r.get(&format!("{n}.bits_per_weight")).is_some());
        assert!(r.get(&format!("{n}.effective_throughput")).is_some());
    }
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let cases: &[&[&str]] = &[
        &["run", "--bogus"],
        &["cost", "--config", "SDQ-W7:8-1:8int8-5:8fp4"],
        &["cost", "--config", "SDQ-W7:8-1:4int8-6:8fp4"],
        &["quantize", "--input", "/nonexistent.sdqt", "--format", "fp4"],
        &["coverage", "--pattern", "1:8", "--ratio", "1.5"],
    ];
    for args in cases {
        let out = sdq(args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty(), "{args:?} printed no diagnostic");
    }
}

#[test]
fn manifest_with_missing_inputs_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.toml");
    std::fs::write(
        &m,
        "config = \"SDQ-W7:8-1:8int8-6:8fp4\"\nseed = 1\n[inputs]\nweights = \"w.sdqt\"\neval = \"x.sdqt\"\n",
    )
    .unwrap();
    let out = sdq(&["run", "--manifest", p(&m)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sdq::codec::{fake_quantize, fake_quantize_activations, parse_optional_format, NumberFormat};
use sdq::costmodel::{
    bits_per_weight, figure_csv, format_throughput, metadata_figure, metadata_figure_configs,
    CostReport, IndexEncoding, StorageSpec,
};
use sdq::decompose::{
    coverage_global, coverage_semilocal, extract_outliers, DecompositionSpec, OutlierMetric,
    OutlierMetricKind, OutlierOrder,
};
use sdq::io::{load_matrix, save_matrix, Dtype, Overrides, Report, RunManifest};
use sdq::pipeline::{
    baseline_quant, baseline_quant_cost, baseline_sparse, baseline_sparse_cost, relative_error,
    run_sdq, sdq_cost, SdqConfig, UNQUANTIZED_SCALE_BITS,
};
use sdq::sparsify::{PruneMethod, SignificanceMetric};
use sdq::synth::{self, LayerData, LayerShape};
use sdq::tensor::{validate_nm, DenseMatrix, SparsityPattern};

#[derive(Parser)]
#[command(name = "sdq", version, about = "Sparsify, decompose and quantize weight matrices")]
struct Cli {
    /// Worker threads for row-parallel kernels (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic matrix.
    Gen(GenArgs),
    /// Prune weights to an N:M pattern.
    Sparsify(SparsifyArgs),
    /// Split N:M sparse weights into outlier and inlier tensors.
    Decompose(DecomposeArgs),
    /// Fake-quantize a matrix with per-vector scales.
    Quantize(QuantizeArgs),
    /// Run the full pipeline on one layer.
    Run(RunArgs),
    /// Measure how well local N:M extraction covers designated outliers.
    Coverage(CoverageArgs),
    /// Report effective throughput and bits per weight.
    Cost(CostArgs),
    /// Compare SDQ configurations against sparse-only and quant-only baselines.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Gaussian,
    HeavyTail,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    kind: GenKind,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    /// Fraction of planted outliers (heavy-tail only).
    #[arg(long, default_value_t = 0.01)]
    ratio: f64,
    #[arg(long, default_value_t = synth::DEFAULT_OUTLIER_SCALE)]
    outlier_scale: f64,
    #[arg(long, env = "SDQ_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "f64")]
    dtype: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SparsifyArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Calibration activations, samples × in_features.
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value = "magnitude")]
    method: String,
    #[arg(long)]
    pattern: SparsityPattern,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Pattern the input already satisfies.
    #[arg(long)]
    pattern: SparsityPattern,
    /// Outlier pattern N_o:M.
    #[arg(long)]
    outliers: SparsityPattern,
    #[arg(long, default_value = "magnitude")]
    metric: String,
    #[arg(long, default_value = "large")]
    order: String,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value = "fp4")]
    inlier_format: String,
    #[arg(long = "sf", default_value = "none")]
    scale_format: String,
    #[arg(long, default_value_t = 16)]
    qvs: usize,
    #[arg(long)]
    out_outliers: PathBuf,
    #[arg(long)]
    out_inliers: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    format: String,
    #[arg(long = "sf", default_value = "none")]
    scale_format: String,
    #[arg(long, default_value_t = 16)]
    qvs: usize,
    /// Treat the input as activations (in_features × batch): Q-Vectors run
    /// down columns.
    #[arg(long)]
    activations: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct OverrideArgs {
    #[arg(long)]
    qvs: Option<usize>,
    #[arg(long = "sf")]
    scale_format: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    damping: Option<f64>,
}

impl OverrideArgs {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            qvs: self.qvs,
            scale_format: self.scale_format.clone(),
            metric: self.metric.clone(),
            order: self.order.clone(),
            method: self.method.clone(),
            damping: self.damping,
            ..Overrides::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML manifest; other flags are ignored when given.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    config: Option<String>,
    #[command(flatten)]
    overrides: OverrideArgs,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long, env = "SDQ_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    w_hat: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Global,
    Semilocal,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long, value_enum, default_value = "global")]
    mode: ModeArg,
    #[arg(long, default_value_t = 64)]
    qvs: usize,
    /// Extraction pattern N_o:M.
    #[arg(long)]
    pattern: SparsityPattern,
    #[arg(long)]
    ratio: f64,
    #[arg(long, env = "SDQ_SEED", default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds to average over.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 512)]
    rows: usize,
    #[arg(long, default_value_t = 512)]
    cols: usize,
    /// Analyze this matrix instead of generated Gaussians.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, required_unless_present = "figure")]
    config: Option<String>,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Emit the metadata table for 32-element tiles.
    #[arg(long)]
    figure: bool,
    /// Write the table as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// SDQ configurations to evaluate (repeatable).
    #[arg(long = "config")]
    configs: Vec<String>,
    #[command(flatten)]
    overrides: OverrideArgs,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long, env = "SDQ_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Sparsify(a) => cmd_sparsify(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Run(a) => cmd_run(a),
        Command::Coverage(a) => cmd_coverage(a),
        Command::Cost(a) => cmd_cost(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path) -> Result<DenseMatrix> {
    load_matrix(path).with_context(|| format!("loading {}", path.display()))
}

fn load_opt(path: Option<&PathBuf>) -> Result<Option<DenseMatrix>> {
    path.map(|p| load(p)).transpose()
}

fn emit(report: &Report, path: Option<&Path>) -> Result<()> {
    let text = report.render();
    match path {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn push_cost(r: &mut Report, prefix: &str, cost: &CostReport) {
    r.push_f64(format!("{prefix}effective_throughput"), cost.effective_throughput);
    r.push(
        format!("{prefix}effective_throughput_display"),
        format_throughput(cost.effective_throughput),
    );
    r.push_f64(format!("{prefix}bits_per_weight"), cost.bits_per_weight);
    r.push_f64(format!("{prefix}data_bits"), cost.breakdown.data);
    r.push_f64(format!("{prefix}meta_s_bits"), cost.breakdown.index);
    r.push_f64(format!("{prefix}meta_q_bits"), cost.breakdown.scale);
    for (i, b) in cost.branches.iter().enumerate() {
        push_cost(r, &format!("{prefix}branch.{i}."), b);
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let dtype: Dtype = a.dtype.parse()?;
    let mut rng = synth::rng(a.seed);
    let m = match a.kind {
        GenKind::Gaussian => synth::gaussian(a.rows, a.cols, &mut rng),
        GenKind::HeavyTail => synth::heavy_tail(a.rows, a.cols, a.ratio, a.outlier_scale, &mut rng),
    };
    save_matrix(&a.out, &m, dtype)?;
    let mut r = Report::new();
    r.push("command", "gen")
        .push("kind", match a.kind {
            GenKind::Gaussian => "gaussian",
            GenKind::HeavyTail => "heavy-tail",
        })
        .push("shape", format!("{}x{}", a.rows, a.cols))
        .push("seed", a.seed)
        .push("dtype", a.dtype)
        .push("out", a.out.display());
    if matches!(a.kind, GenKind::HeavyTail) {
        r.push_f64("ratio", a.ratio).push_f64("outlier_scale", a.outlier_scale);
    }
    emit(&r, None)
}

fn cmd_sparsify(a: SparsifyArgs) -> Result<()> {
    let w = load(&a.weights)?;
    let calib = load_opt(a.calib.as_ref())?;
    let mut method: PruneMethod = a.method.parse()?;
    if let (PruneMethod::SparseGpt { damping }, Some(d)) = (&mut method, a.damping) {
        *damping = d;
    }
    let pruned = SignificanceMetric::bind(method, calib.as_ref())?.prune(&w, a.pattern)?;
    save_matrix(&a.out, &pruned, Dtype::F64)?;
    let mut r = Report::new();
    r.push("command", "sparsify")
        .push("method", method.name())
        .push("pattern", a.pattern)
        .push("nonzeros", pruned.count_nonzeros())
        .push("valid", validate_nm(&pruned, a.pattern)?.valid)
        .push_f64("weight_error", relative_error(&pruned, &w)?)
        .push("out", a.out.display());
    emit(&r, None)
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let ws = load(&a.weights)?;
    let calib = load_opt(a.calib.as_ref())?;
    let kind: OutlierMetricKind = a.metric.parse()?;
    let order: OutlierOrder = a.order.parse()?;
    let metric = match kind {
        OutlierMetricKind::Magnitude => OutlierMetric::Magnitude,
        OutlierMetricKind::Product => OutlierMetric::Product {
            calibration: calib
                .as_ref()
                .context("product metric needs --calib")?,
        },
        OutlierMetricKind::OutputError => OutlierMetric::OutputError {
            inlier_format: a.inlier_format.parse()?,
            scale_format: parse_optional_format(&a.scale_format)?,
            qvs: a.qvs,
        },
    };
    let spec = DecompositionSpec {
        outliers: a.outliers,
        metric,
        order,
    };
    let d = extract_outliers(&ws, a.pattern, &spec)?;
    save_matrix(&a.out_outliers, &d.outliers, Dtype::F64)?;
    save_matrix(&a.out_inliers, &d.inliers, Dtype::F64)?;
    let mut r = Report::new();
    r.push("command", "decompose")
        .push("pattern", a.pattern)
        .push("outlier_pattern", d.outlier_pattern)
        .push("inlier_pattern", d.inlier_pattern)
        .push("metric", kind)
        .push("order", order)
        .push("outlier_nonzeros", d.outliers.count_nonzeros())
        .push("inlier_nonzeros", d.inliers.count_nonzeros());
    emit(&r, None)
}

fn cmd_quantize(a: QuantizeArgs) -> Result<()> {
    let x = load(&a.input)?;
    let format: NumberFormat = a.format.parse()?;
    let sf = parse_optional_format(&a.scale_format)?;
    let q = if a.activations {
        fake_quantize_activations(&x, a.qvs, format, sf)?
    } else {
        fake_quantize(&x, a.qvs, format, sf)?
    };
    if let Some(out) = &a.out {
        save_matrix(out, &q, Dtype::F64)?;
    }
    let cost = bits_per_weight(StorageSpec {
        pattern: SparsityPattern::dense(4)?,
        data_bits: format.total_bits(),
        scale_bits: sf.map_or(UNQUANTIZED_SCALE_BITS, |f| f.total_bits()),
        qvs: a.qvs,
        index: IndexEncoding::None,
    })?;
    let mut r = Report::new();
    r.push("command", "quantize")
        .push("format", format)
        .push("scale_format", sf.map_or_else(|| "none".into(), |f| f.name()))
        .push("qvs", a.qvs)
        .push("axis", if a.activations { "columns" } else { "rows" })
        .push_f64("relative_error", relative_error(&q, &x)?)
        .push_f64("bits_per_weight", cost.bits_per_weight);
    emit(&r, None)
}

/// Layer inputs, whether calibration is real, and report lines naming the source.
type LoadedLayer = (LayerData, bool, Vec<(String, String)>);

struct RunPlan {
    cfg: SdqConfig,
    seed: u64,
    data: LayerData,
    has_calibration: bool,
    source: Vec<(String, String)>,
    report: Option<PathBuf>,
    w_hat: Option<PathBuf>,
}

fn layer_from_files(
    weights: &Path,
    calib: Option<&PathBuf>,
    eval: &Path,
) -> Result<LoadedLayer> {
    let w = load(weights)?;
    let x_eval = load(eval)?;
    let calib_m = load_opt(calib)?;
    let mut source = vec![
        ("input.weights".to_string(), weights.display().to_string()),
        ("input.eval".to_string(), eval.display().to_string()),
    ];
    if let Some(c) = calib {
        source.push(("input.calibration".into(), c.display().to_string()));
    }
    let has = calib_m.is_some();
    Ok((
        LayerData {
            weights: w,
            calibration: calib_m.unwrap_or_else(|| DenseMatrix::zeros(0, 0)),
            eval: x_eval,
        },
        has,
        source,
    ))
}

fn generated_layer(shape: LayerShape, seed: u64) -> LoadedLayer {
    let source = vec![
        ("input.generated".to_string(), "heavy-tail".to_string()),
        (
            "input.shape".into(),
            format!(
                "weights {}x{}, calibration {}x{}, eval {}x{}",
                shape.out_features,
                shape.in_features,
                shape.calib_samples,
                shape.in_features,
                shape.in_features,
                shape.batch
            ),
        ),
        ("input.outlier_ratio".into(), format!("{:?}", shape.outlier_ratio)),
        ("input.outlier_scale".into(), format!("{:?}", shape.outlier_scale)),
    ];
    (synth::layer(shape, seed), true, source)
}

fn plan_run(a: &RunArgs) -> Result<RunPlan> {
    if let Some(path) = &a.manifest {
        let m = RunManifest::load(path)?;
        m.check_inputs()?;
        let cfg = m.resolve_config()?;
        let (data, has_calibration, source) = match (&m.inputs, m.generate) {
            (Some(i), _) => layer_from_files(&i.weights, i.calibration.as_ref(), &i.eval)?,
            (None, Some(g)) => generated_layer(g.into(), m.seed),
            (None, None) => unreachable!("validated by RunManifest"),
        };
        return Ok(RunPlan {
            cfg,
            seed: m.seed,
            data,
            has_calibration,
            source,
            report: m.outputs.report.clone().or_else(|| a.report.clone()),
            w_hat: m.outputs.w_hat.clone().or_else(|| a.w_hat.clone()),
        });
    }
    let name = a.config.as_deref().context("run needs --manifest or --config")?;
    let mut cfg: SdqConfig = name.parse()?;
    a.overrides.to_overrides().apply(&mut cfg)?;
    let (data, has_calibration, source) = match (&a.weights, &a.eval) {
        (Some(w), Some(e)) => layer_from_files(w, a.calib.as_ref(), e)?,
        (None, None) => generated_layer(LayerShape::default(), a.seed),
        _ => bail!("--weights and --eval must be given together"),
    };
    Ok(RunPlan {
        cfg,
        seed: a.seed,
        data,
        has_calibration,
        source,
        report: a.report.clone(),
        w_hat: a.w_hat.clone(),
    })
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let plan = plan_run(&a)?;
    let calib = plan.has_calibration.then_some(&plan.data.calibration);
    let res = run_sdq(&plan.data.weights, calib, &plan.data.eval, &plan.cfg)?;
    if let Some(p) = &plan.w_hat {
        save_matrix(p, &res.w_hat, Dtype::F64)?;
    }

    let mut r = Report::new();
    r.push("command", "run");
    r.extend(plan.cfg.describe());
    r.push("seed", plan.seed);
    r.extend(plan.source.clone());
    r.push("accumulator", "f64");
    r.push_f64("output_error", res.output_error)
        .push_f64("stage.sparsify_output_error", res.stages.sparsify)
        .push_f64("stage.weight_quant_output_error", res.stages.weight_quant)
        .push_f64("stage.weight_error", res.stages.weight)
        .push("pruned_nonzeros", res.pruned.count_nonzeros())
        .push(
            "outlier_nonzeros",
            res.outliers.as_ref().map_or(0, |o| o.dequantized.nnz()),
        )
        .push("inlier_nonzeros", res.inliers.dequantized.nnz());
    push_cost(&mut r, "cost.", &res.cost);
    emit(&r, plan.report.as_deref())?;
    if plan.report.is_some() {
        eprintln!(
            "{}: output error {:.6}, {} effective throughput, {:.3} bits/weight",
            plan.cfg,
            res.output_error,
            format_throughput(res.cost.effective_throughput),
            res.cost.bits_per_weight
        );
    }
    Ok(())
}

fn cmd_coverage(a: CoverageArgs) -> Result<()> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let mut r = Report::new();
    r.push("command", "coverage")
        .push(
            "mode",
            match a.mode {
                ModeArg::Global => "global",
                ModeArg::Semilocal => "semilocal",
            },
        )
        .push("pattern", a.pattern)
        .push_f64("ratio", a.ratio);
    if matches!(a.mode, ModeArg::Semilocal) {
        r.push("qvs", a.qvs);
    }
    let measure = |w: &DenseMatrix| match a.mode {
        ModeArg::Global => coverage_global(w, a.ratio, a.pattern),
        ModeArg::Semilocal => coverage_semilocal(w, a.ratio, a.pattern, a.qvs),
    };
    let fractions: Vec<f64> = if let Some(p) = &a.weights {
        r.push("input", p.display());
        let c = measure(&load(p)?)?;
        r.push("designated", c.designated).push("covered", c.covered);
        vec![c.covered_fraction]
    } else {
        r.push("input", format!("gaussian {}x{}", a.rows, a.cols))
            .push("seed", a.seed)
            .push("seeds", a.seeds);
        let mut out = Vec::new();
        for s in a.seed..a.seed + a.seeds {
            let w = synth::gaussian(a.rows, a.cols, &mut synth::rng(s));
            let c = measure(&w)?;
            r.push_f64(format!("seed.{s}.coverage"), c.covered_fraction);
            out.push(c.covered_fraction);
        }
        out
    };
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let min = fractions.iter().copied().fold(f64::INFINITY, f64::min);
    r.push_f64("coverage", mean).push_f64("coverage_min", min);
    emit(&r, None)
}

fn cmd_cost(a: CostArgs) -> Result<()> {
    let mut r = Report::new();
    r.push("command", "cost");
    if a.figure {
        let rows = metadata_figure(&metadata_figure_configs())?;
        r.push("tile_elements", rows[0].tile);
        r.push("scale_accounting", "per Q-Vector of stored values, whole scales per tile");
        for row in &rows {
            let p = format!("figure.{}.", row.label);
            r.push(format!("{p}data_bits"), row.data_bits)
                .push(format!("{p}meta_s_bits"), row.meta_s_bits)
                .push(format!("{p}meta_q_bits"), row.meta_q_bits)
                .push_f64(format!("{p}bits_per_weight"), row.bits_per_weight())
                .push_f64(format!("{p}effective_throughput"), row.effective_throughput);
        }
        if let Some(p) = &a.csv {
            fs::write(p, figure_csv(&rows)).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    if let Some(name) = &a.config {
        let mut cfg: SdqConfig = name.parse()?;
        a.overrides.to_overrides().apply(&mut cfg)?;
        r.extend(cfg.describe());
        r.push("scale_accounting", "per Q-Vector of stored values");
        push_cost(&mut r, "", &sdq_cost(&cfg)?);
        if let (Some(p), false) = (&a.csv, a.figure) {
            let c = sdq_cost(&cfg)?;
            let csv = format!(
                "{}\n{},{:?},{:?},{:?},{:?},{:?}\n",
                sdq::costmodel::CSV_HEADER,
                cfg.name(),
                c.breakdown.data,
                c.breakdown.index,
                c.breakdown.scale,
                c.bits_per_weight,
                c.effective_throughput
            );
            fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    emit(&r, None)
}

const DEFAULT_COMPARE_CONFIGS: &[&str] = &[
    "SDQ-W7:8-1:8int8-6:8fp4",
    "SDQ-W8:8-1:8int8-7:8fp4",
    "SDQ-W7:8-1:8int8-6:8int4",
];

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let (data, has_calibration, source) = match (&a.weights, &a.eval) {
        (Some(w), Some(e)) => layer_from_files(w, a.calib.as_ref(), e)?,
        (None, None) => generated_layer(LayerShape::default(), a.seed),
        _ => bail!("--weights and --eval must be given together"),
    };
    let calib = has_calibration.then_some(&data.calibration);
    let names: Vec<String> = if a.configs.is_empty() {
        DEFAULT_COMPARE_CONFIGS.iter().map(|s| s.to_string()).collect()
    } else {
        a.configs.clone()
    };
    let overrides = a.overrides.to_overrides();

    let mut rows: Vec<(String, f64, CostReport)> = Vec::new();
    let mut qvs = sdq::pipeline::DEFAULT_QVS;
    let mut sf = Some(NumberFormat::FP8_E4M3);
    for name in &names {
        let mut cfg: SdqConfig = name.parse()?;
        overrides.apply(&mut cfg)?;
        qvs = cfg.qvs;
        sf = cfg.scale_format;
        let res = run_sdq(&data.weights, calib, &data.eval, &cfg)?;
        rows.push((cfg.name(), res.output_error, res.cost));
    }
    for (label, fmt) in [
        ("Q-WA-int8", NumberFormat::INT8),
        ("Q-WA-fp4", NumberFormat::FP4_E2M1),
        ("Q-WA-int4", NumberFormat::INT4),
    ] {
        let err = baseline_quant(&data.weights, &data.eval, fmt, sf, qvs)?;
        rows.push((label.into(), err, baseline_quant_cost(fmt, sf, qvs, 8)?));
    }
    let mut sparse = vec![(PruneMethod::Magnitude, "S-Magnitude")];
    if has_calibration {
        sparse.push((PruneMethod::Wanda, "S-Wanda"));
    }
    for (method, label) in sparse {
        for n in [2, 4] {
            let p = SparsityPattern::new(n, 8)?;
            let err = baseline_sparse(&data.weights, calib, &data.eval, method, p)?;
            rows.push((format!("{label}-{p}"), err, baseline_sparse_cost(p)?));
        }
    }

    let mut r = Report::new();
    r.push("command", "compare").push("seed", a.seed);
    r.extend(source);
    r.push("qvs", qvs)
        .push("scale_format", sf.map_or_else(|| "none".into(), |f| f.name()));
    for (name, err, cost) in &rows {
        r.push_f64(format!("{name}.output_error"), *err)
            .push_f64(format!("{name}.bits_per_weight"), cost.bits_per_weight)
            .push_f64(format!("{name}.effective_throughput"), cost.effective_throughput);
    }
    emit(&r, a.report.as_deref())?;

    eprintln!("{:<28} {:>12} {:>10} {:>8}", "config", "out_error", "bits/w", "speedup");
    for (name, err, cost) in &rows {
        eprintln!(
            "{:<28} {:>12.6} {:>10.3} {:>8}",
            name,
            err,
            cost.bits_per_weight,
            format_throughput(cost.effective_throughput)
        );
    }
    Ok(())
}

//! `semseg`: ingest telemetry, measure segment separability, prune, and
//! compare canonical against residual predictive risk.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use semseg_core::ingest::{clean_frame, parse_long_metrics, pivot_to_wide, write_long_csv, LONG_HEADER};
use semseg_core::pipeline::{self, to_json_string};
use semseg_core::prediction::{EvalConfig, ModelKind, ModelSpec, DEFAULT_THETA_QUANTILE};
use semseg_core::pruning::DEFAULT_TAU_RED;
use semseg_core::separability::{ShiftMode, DEFAULT_SHIFT_REPEATS};
use semseg_core::synth::MIN_SAMPLES;
use semseg_core::transforms::{DEFAULT_EPSILON, DEFAULT_WINDOW};
use semseg_core::{
    analyze, generate_telemetry, parse_taxonomy, prepare, AnalysisOptions, Error, FaultLog, MetricFrame, Prepared,
    RollingBaseline, SegmentTaxonomy, SynthConfig,
};

#[derive(Parser)]
#[command(name = "semseg", version, about = "Semantic segmentation of monitoring telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pivot a long CSV (timestamp,metric,value) to a cleaned wide CSV.
    Ingest(IngestArgs),
    /// Segment separability, circular-shift test and redundancy pruning.
    Analyze(AnalyzeArgs),
    /// Canonical vs residual vs full vs PCA risk over the sweep grid.
    Evaluate(EvaluateArgs),
    /// Generate synthetic telemetry with planted faults.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    max_missing: f64,
    /// Cleaning summary JSON; printed to stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PrepareArgs {
    /// Wide CSV (from `ingest`) or raw long CSV.
    #[arg(long = "in")]
    #[serde(skip)]
    input: PathBuf,
    /// Segment taxonomy JSON; the bundled default when omitted.
    #[arg(long)]
    #[serde(skip)]
    taxonomy: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    max_missing: f64,
    /// Rolling-baseline window in samples.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_TAU_RED)]
    tau_red: f64,
    #[arg(long, default_value_t = DEFAULT_SHIFT_REPEATS)]
    shift_repeats: usize,
    #[arg(long, value_enum, default_value_t = ShiftArg::Independent)]
    shift_mode: ShiftArg,
    #[arg(long, env = "SEMSEG_SEED", default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: PrepareArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the pooled correlation samples (fig2_omegas.csv).
    #[arg(long)]
    omegas: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: PrepareArgs,
    /// Fault log CSV (timestamp[,magnitude]).
    #[arg(long)]
    faults: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split counts: a range `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "2..9", value_parser = usize_list)]
    splits: UsizeList,
    /// Label horizons in seconds.
    #[arg(long, value_delimiter = ',', default_values_t = [600i64, 1200])]
    deltas: Vec<i64>,
    /// Aggregation windows in seconds.
    #[arg(long, value_delimiter = ',', default_values_t = [300i64, 600, 900, 1200])]
    windows: Vec<i64>,
    #[arg(long, value_delimiter = ',', default_value = "logistic,forest,boosted", value_parser = model_kind)]
    models: Vec<ModelKind>,
    #[arg(long = "theta-q", default_value_t = DEFAULT_THETA_QUANTILE)]
    theta_q: f64,
    /// PCA components; the pruned canonical width when omitted.
    #[arg(long)]
    pca_k: Option<usize>,
    /// Evaluate the grid on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "SEMSEG_SEED", default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 30)]
    cadence: i64,
    #[arg(long, default_value_t = 20)]
    residual: usize,
    /// Near-copies of canonical features to plant.
    #[arg(long, default_value_t = 0)]
    duplicates: usize,
    #[arg(long)]
    threshold: Option<f64>,
    /// Seconds between a latent upcrossing and the fault it triggers.
    #[arg(long)]
    lead: Option<i64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ShiftArg {
    Independent,
    Common,
    Zero,
}

impl From<ShiftArg> for ShiftMode {
    fn from(a: ShiftArg) -> Self {
        match a {
            ShiftArg::Independent => ShiftMode::Independent,
            ShiftArg::Common => ShiftMode::Common,
            ShiftArg::Zero => ShiftMode::Zero,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct UsizeList(Vec<usize>);

fn usize_list(s: &str) -> std::result::Result<UsizeList, String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("invalid integer {t:?}"));
    let values = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse(a)?, parse(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty range {s}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(parse).collect::<std::result::Result<Vec<_>, _>>()?
    };
    Ok(UsizeList(values))
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("invalid number {s:?}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn model_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Marks an error as a usage problem (exit 1).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if matches!(e, Error::Config(_)) { 1 } else { 2 };
        }
    }
    2
}

#[derive(Serialize)]
struct Stage {
    stage: &'static str,
    seconds: f64,
}

#[derive(Default)]
struct Timer(Vec<Stage>);

impl Timer {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push(Stage {
            stage,
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over the effective configuration and the contents of every input.
fn write_manifest(dir: &Path, command: &str, config: Value, seed: u64, inputs: &[&Path], timer: Timer) -> Result<()> {
    let mut hasher = Sha256::new();
    hasher.update(to_json_string(&config).as_bytes());
    let mut listed = Vec::new();
    for path in inputs {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let digest = sha256_hex(&bytes);
        hasher.update(digest.as_bytes());
        listed.push(json!({ "path": path.display().to_string(), "sha256": digest }));
    }
    let manifest = json!({
        "command": command,
        "config": config,
        "config_digest": hex::encode(hasher.finalize()),
        "seed": seed,
        "inputs": listed,
        "versions": { "semseg_core": semseg_core::VERSION, "semseg_cli": env!("CARGO_PKG_VERSION") },
        "timings": timer.0,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    fs::write(path, to_json_string(value)).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn is_long_csv(path: &Path) -> Result<bool> {
    let mut header = String::new();
    BufReader::new(open(path)?)
        .read_line(&mut header)
        .with_context(|| format!("reading {}", path.display()))?;
    let fields: Vec<&str> = header.trim_end().split(',').map(str::trim).collect();
    Ok(fields == LONG_HEADER)
}

/// Reads either format; long input is pivoted but not cleaned.
fn read_frame(path: &Path) -> Result<MetricFrame> {
    if is_long_csv(path)? {
        let (records, _) = parse_long_metrics(open(path)?)?;
        Ok(pivot_to_wide(&records)?.0)
    } else {
        Ok(MetricFrame::read_wide_csv_path(path)?)
    }
}

fn load_taxonomy(path: Option<&Path>) -> Result<SegmentTaxonomy> {
    match path {
        Some(p) => Ok(parse_taxonomy(p)?),
        None => Ok(SegmentTaxonomy::bundled()),
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let (records, load) = parse_long_metrics(open(&args.input)?)?;
    let (wide, pivot) = pivot_to_wide(&records)?;
    let (cleaned, cleaning) = clean_frame(&wide, args.max_missing)?;
    cleaned.write_wide_csv(create(&args.out)?)?;
    let summary = to_json_string(&json!({ "load": load, "pivot": pivot, "cleaning": cleaning }));
    match args.summary {
        Some(path) => fs::write(&path, summary).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{summary}"),
    }
    Ok(())
}

struct Loaded {
    taxonomy: SegmentTaxonomy,
    prepared: Prepared,
    options: AnalysisOptions,
}

fn load_and_prepare(args: &PrepareArgs, timer: &mut Timer) -> Result<Loaded> {
    if !(args.tau_red > 0.0 && args.tau_red <= 1.0) {
        return Err(Usage(format!("--tau-red must lie in (0, 1], got {}", args.tau_red)).into());
    }
    let taxonomy = load_taxonomy(args.taxonomy.as_deref())?;
    let frame = timer.run("load", || read_frame(&args.input))?;
    let baseline = RollingBaseline::new(args.window, args.epsilon)?;
    let prepared = timer.run("prepare", || prepare(&frame, &taxonomy, args.max_missing, &baseline))?;
    let options = AnalysisOptions {
        tau_red: args.tau_red,
        shift_repeats: args.shift_repeats,
        shift_mode: args.shift_mode.into(),
        seed: args.seed,
    };
    Ok(Loaded {
        taxonomy,
        prepared,
        options,
    })
}

fn inputs<'a>(common: &'a PrepareArgs, extra: &[&'a Path]) -> Vec<&'a Path> {
    let mut v = vec![common.input.as_path()];
    v.extend(common.taxonomy.as_deref());
    v.extend(extra);
    v
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let mut timer = Timer::default();
    let loaded = load_and_prepare(&args.common, &mut timer)?;
    let analysis = timer.run("analyze", || analyze(&loaded.prepared, &loaded.taxonomy, &loaded.options))?;
    out_dir(&args.out)?;
    write_json(&args.out.join("separability.json"), &analysis.separability_json(&loaded.prepared))?;
    write_json(&args.out.join("pruning.json"), &analysis.pruning_json())?;
    if args.omegas {
        analysis.write_omegas(create(&args.out.join("fig2_omegas.csv"))?)?;
    }
    let config = json!({ "analyze": args.common, "omegas": args.omegas });
    write_manifest(&args.out, "analyze", config, args.common.seed, &inputs(&args.common, &[]), timer)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let seed = args.common.seed;
    let config = EvalConfig {
        n_splits: args.splits.0.clone(),
        deltas: args.deltas.clone(),
        windows: args.windows.clone(),
        models: args.models.iter().map(|&k| ModelSpec::new(k, seed)).collect(),
        theta_quantile: args.theta_q,
        parallel: !args.sequential,
    };
    config.validate()?;
    let faults = FaultLog::load(&args.faults)?;
    let mut timer = Timer::default();
    let loaded = load_and_prepare(&args.common, &mut timer)?;
    let analysis = timer.run("analyze", || analyze(&loaded.prepared, &loaded.taxonomy, &loaded.options))?;
    let retained = analysis.pruning.retained_columns();
    let report = timer.run("evaluate", || {
        pipeline::evaluate(&loaded.prepared, &retained, &faults, &config, args.pca_k)
    })?;

    out_dir(&args.out)?;
    write_json(&args.out.join("risk.json"), &pipeline::risk_json(&report))?;
    report.write_csv(create(&args.out.join("risk.csv"))?)?;
    pipeline::write_gap_csv(&report, create(&args.out.join("fig3_gap.csv"))?)?;
    pipeline::write_risk_auc_csv(&report, create(&args.out.join("fig4_risk_auc.csv"))?)?;
    pipeline::write_condcorr_csv(&report, create(&args.out.join("fig5_condcorr.csv"))?)?;

    let manifest_config = json!({ "analyze": args.common, "eval": config, "pca_k": args.pca_k });
    write_manifest(
        &args.out,
        "evaluate",
        manifest_config,
        seed,
        &inputs(&args.common, &[args.faults.as_path()]),
        timer,
    )
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    if args.samples < MIN_SAMPLES {
        return Err(Usage(format!("--samples must be at least {MIN_SAMPLES}, got {}", args.samples)).into());
    }
    let defaults = SynthConfig::default();
    let config = SynthConfig {
        n_samples: args.samples,
        cadence: args.cadence,
        n_residual: args.residual,
        n_duplicates: args.duplicates,
        fault_threshold: args.threshold.unwrap_or(defaults.fault_threshold),
        fault_lead: args.lead.unwrap_or(defaults.fault_lead),
        seed: args.seed,
        ..defaults
    };
    let out = generate_telemetry(&config)?;
    out_dir(&args.out)?;
    write_long_csv(&out.frame.to_long_records(), create(&args.out.join("metrics.csv"))?)?;
    out.faults.write_csv(create(&args.out.join("faults.csv"))?)?;
    let truth = json!({ "config": config, "truth": out.truth, "n_faults": out.faults.len() });
    write_json(&args.out.join("truth.json"), &truth)
}

/// The cause chain, skipping causes whose text a parent already includes.
fn describe(err: &anyhow::Error) -> String {
    let mut text = err.to_string();
    for cause in err.chain().skip(1) {
        let c = cause.to_string();
        if !text.contains(&c) {
            text = format!("{text}: {c}");
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

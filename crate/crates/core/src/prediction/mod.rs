//! Fault-horizon labels, expanding-window evaluation and risk metrics.

mod models;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use models::{clip_probability, fit_predict, ModelKind, ModelSpec, Prediction, PROB_CLIP};

use crate::baselines::{pca_fit, pca_transform};
use crate::error::{Error, Result};
use crate::ingest::MetricFrame;
use crate::stats::{pearson, quantile};

pub const DEFAULT_THETA_QUANTILE: f64 = 0.9;
pub const DEFAULT_WINDOWS: [i64; 4] = [300, 600, 900, 1200];
pub const DEFAULT_DELTAS: [i64; 2] = [600, 1200];
pub const DEFAULT_SPLITS: Range<usize> = 2..10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub timestamp: i64,
    pub magnitude: f64,
}

/// Confirmed faults in ascending time order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultLog {
    events: Vec<FaultEvent>,
}

impl FaultLog {
    pub fn new(mut events: Vec<FaultEvent>) -> Self {
        events.sort_by_key(|e| e.timestamp);
        Self { events }
    }

    pub fn events(&self) -> &[FaultEvent] {
        &self.events
    }

    pub fn times(&self) -> impl Iterator<Item = i64> + '_ {
        self.events.iter().map(|e| e.timestamp)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events outside `[first, last]`.
    pub fn out_of_range(&self, first: i64, last: i64) -> Vec<FaultEvent> {
        self.events
            .iter()
            .filter(|e| e.timestamp < first || e.timestamp > last)
            .copied()
            .collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
        if headers.get(0) != Some("timestamp") {
            return Err(Error::Format("fault log must start with a timestamp column".into()));
        }
        let mut events = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            let line = i + 2;
            let timestamp = rec
                .get(0)
                .and_then(|s| s.parse::<i64>().ok())
                .ok_or_else(|| Error::Format(format!("bad fault timestamp on line {line}")))?;
            let magnitude = match rec.get(1).filter(|s| !s.is_empty()) {
                Some(s) => s
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad fault magnitude on line {line}")))?,
                None => 0.0,
            };
            events.push(FaultEvent { timestamp, magnitude });
        }
        Ok(Self::new(events))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["timestamp", "magnitude"]).map_err(fmt)?;
        for e in &self.events {
            w.write_record([e.timestamp.to_string(), e.magnitude.to_string()]).map_err(fmt)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

/// `y[t] = 1` iff some fault falls in `(t, t + delta]`.
pub fn label_horizon(timestamps: &[i64], faults: &FaultLog, delta: i64) -> Result<Vec<u8>> {
    if delta <= 0 {
        return Err(Error::Config(format!("horizon must be positive, got {delta}")));
    }
    let times: Vec<i64> = faults.times().collect();
    Ok(timestamps
        .iter()
        .map(|&t| {
            let next = times.partition_point(|&f| f <= t);
            u8::from(next < times.len() && times[next] <= t + delta)
        })
        .collect())
}

/// Binned design matrix for one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    pub timestamps: Vec<i64>,
    pub columns: Vec<String>,
    pub horizon: i64,
    pub window: i64,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

fn cadence(timestamps: &[i64]) -> Option<i64> {
    timestamps.windows(2).map(|w| w[1] - w[0]).min()
}

/// Averages features over non-overlapping windows anchored at the first
/// timestamp; a bin is labelled positive if any member is.
pub fn aggregate_frame(frame: &MetricFrame, y: &[u8], window: i64, horizon: i64) -> Result<LabeledDataset> {
    let ts = frame.timestamps();
    if y.len() != ts.len() {
        return Err(Error::LengthMismatch {
            left: ts.len(),
            right: y.len(),
        });
    }
    if ts.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(c) = cadence(ts) {
        if window < c {
            return Err(Error::Config(format!("window {window}s is below the {c}s cadence")));
        }
    }
    if window <= 0 {
        return Err(Error::Config(format!("window must be positive, got {window}")));
    }

    let t0 = ts[0];
    let mut bins: Vec<(i64, Range<usize>)> = Vec::new();
    for (i, &t) in ts.iter().enumerate() {
        let start = t0 + (t - t0) / window * window;
        match bins.last_mut() {
            Some((s, r)) if *s == start => r.end = i + 1,
            _ => bins.push((start, i..i + 1)),
        }
    }

    let d = frame.n_cols();
    let mut x = Array2::<f64>::zeros((bins.len(), d));
    for (j, col) in frame.iter_columns().map(|(_, c)| c).enumerate() {
        for (b, (_, r)) in bins.iter().enumerate() {
            x[[b, j]] = col[r.clone()].iter().sum::<f64>() / r.len() as f64;
        }
    }
    Ok(LabeledDataset {
        x,
        y: bins.iter().map(|(_, r)| y[r.clone()].iter().copied().max().unwrap_or(0)).collect(),
        timestamps: bins.iter().map(|(s, _)| *s).collect(),
        columns: frame.columns().to_vec(),
        horizon,
        window,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Expanding-window folds with boundaries `floor(i*T/(n+1))`.
pub fn time_splits(t: usize, n_splits: usize) -> Result<Vec<Fold>> {
    if n_splits < 2 {
        return Err(Error::Config(format!("n_splits must be at least 2, got {n_splits}")));
    }
    let needed = (n_splits + 1) * 2;
    if t < needed {
        return Err(Error::InsufficientData { needed, got: t });
    }
    let b = |i: usize| i * t / (n_splits + 1);
    Ok((1..=n_splits)
        .map(|i| Fold {
            train: 0..b(i),
            test: b(i)..b(i + 1),
        })
        .collect())
}

fn check_lengths(y: &[u8], p: &[f64]) -> Result<()> {
    if y.len() != p.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: p.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn log_loss(y: &[u8], p: &[f64]) -> Result<f64> {
    check_lengths(y, p)?;
    let total: f64 = y
        .iter()
        .zip(p)
        .map(|(&yi, &pi)| {
            let pi = clip_probability(pi);
            if yi == 1 {
                pi.ln()
            } else {
                (1.0 - pi).ln()
            }
        })
        .sum();
    Ok(-total / y.len() as f64)
}

/// Rank-sum AUC with ties counted as one half; `None` when a class is empty.
pub fn auc(y: &[u8], p: &[f64]) -> Option<f64> {
    if y.len() != p.len() {
        return None;
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = crate::stats::mid_ranks(p);
    let rank_sum: f64 = ranks.iter().zip(y).filter(|(_, &v)| v == 1).map(|(r, _)| r).sum();
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Log-loss of the constant predictor at the training positive rate.
pub fn baseline_risk(train_y: &[u8], test_y: &[u8]) -> Result<f64> {
    if train_y.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rate = train_y.iter().filter(|&&v| v == 1).count() as f64 / train_y.len() as f64;
    log_loss(test_y, &vec![rate; test_y.len()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCorrelation {
    pub theta: f64,
    pub covariance: f64,
    pub correlation: Option<f64>,
    pub n: usize,
}

/// Covariance and correlation of `(p_r, p_c)` restricted to `p_c > theta`,
/// where `theta` is the `q` quantile of `p_c`. Covariance is 0 below two points.
pub fn conditional_high_risk_corr(p_c: &[f64], p_r: &[f64], q: f64) -> Result<ConditionalCorrelation> {
    if p_c.len() != p_r.len() {
        return Err(Error::LengthMismatch {
            left: p_c.len(),
            right: p_r.len(),
        });
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("theta quantile must lie in (0,1), got {q}")));
    }
    if p_c.is_empty() {
        return Err(Error::EmptyInput);
    }
    let theta = quantile(p_c, q);
    let (c, r): (Vec<f64>, Vec<f64>) = p_c.iter().zip(p_r).filter(|(&c, _)| c > theta).map(|(&c, &r)| (c, r)).unzip();
    let n = c.len();
    let covariance = if n < 2 {
        0.0
    } else {
        let (mc, mr) = (crate::stats::mean(&c), crate::stats::mean(&r));
        c.iter().zip(&r).map(|(a, b)| (a - mc) * (b - mr)).sum::<f64>() / (n - 1) as f64
    };
    let correlation = if n < 3 { None } else { pearson(&r, &c) };
    Ok(ConditionalCorrelation {
        theta,
        covariance,
        correlation,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Canonical,
    Residual,
    Full,
    Pca,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Canonical => "canonical",
            Representation::Residual => "residual",
            Representation::Full => "full",
            Representation::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_splits: Vec<usize>,
    pub deltas: Vec<i64>,
    pub windows: Vec<i64>,
    pub models: Vec<ModelSpec>,
    pub theta_quantile: f64,
    #[serde(skip)]
    pub parallel: bool,
}

impl EvalConfig {
    /// Splits 2..=9, windows of 5 to 20 minutes, two horizons, all model kinds.
    pub fn default_sweep(seed: u64) -> Self {
        Self {
            n_splits: DEFAULT_SPLITS.collect(),
            deltas: DEFAULT_DELTAS.to_vec(),
            windows: DEFAULT_WINDOWS.to_vec(),
            models: ModelKind::ALL.iter().map(|&k| ModelSpec::new(k, seed)).collect(),
            theta_quantile: DEFAULT_THETA_QUANTILE,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = self.n_splits.is_empty() || self.deltas.is_empty() || self.windows.is_empty() || self.models.is_empty();
        if empty {
            return Err(Error::Config("evaluation grid has an empty axis".into()));
        }
        if let Some(n) = self.n_splits.iter().find(|&&n| n < 2) {
            return Err(Error::Config(format!("n_splits must be at least 2, got {n}")));
        }
        if self.deltas.iter().chain(&self.windows).any(|&v| v <= 0) {
            return Err(Error::Config("horizons and windows must be positive".into()));
        }
        if !(self.theta_quantile > 0.0 && self.theta_quantile < 1.0) {
            return Err(Error::Config("theta quantile must lie in (0,1)".into()));
        }
        self.models.iter().try_for_each(ModelSpec::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
    pub train_max_time: i64,
    pub test_min_time: i64,
    pub test_positives: usize,
    pub risk: f64,
    pub auc: Option<f64>,
    pub baseline_risk: f64,
    pub degenerate: bool,
}

/// One (representation, model, n_splits, horizon, window) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCell {
    pub representation: Representation,
    pub model: ModelKind,
    pub n_splits: usize,
    pub horizon: i64,
    pub window: i64,
    pub risk: f64,
    pub auc: Option<f64>,
    pub baseline_risk: f64,
    pub folds: Vec<FoldOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldConditional {
    pub fold: usize,
    #[serde(flatten)]
    pub value: ConditionalCorrelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSummary {
    pub theta_quantile: f64,
    pub covariance: f64,
    pub correlation: Option<f64>,
    pub n_conditioned: usize,
    pub folds_with_correlation: usize,
    pub folds: Vec<FoldConditional>,
}

/// Risk of every representation for one configuration, plus the
/// residual-minus-canonical gap and the high-risk conditional correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCell {
    pub model: ModelKind,
    pub n_splits: usize,
    pub horizon: i64,
    pub window: i64,
    pub risks: BTreeMap<Representation, f64>,
    pub gap: Option<f64>,
    pub conditional: Option<ConditionalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationSummary {
    pub representation: Representation,
    pub mean_risk: f64,
    pub mean_auc: Option<f64>,
    pub mean_baseline_risk: f64,
    pub n_cells: usize,
}

/// Paired per-fold risk differences `rep - canonical` with a two-sided
/// sign test over non-zero differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub representation: Representation,
    pub mean_difference: f64,
    pub n_pairs: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub sign_test_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedConfig {
    pub model: ModelKind,
    pub n_splits: usize,
    pub horizon: i64,
    pub window: i64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub config: EvalConfig,
    pub faults_total: usize,
    pub faults_out_of_range: usize,
    pub cells: Vec<RiskCell>,
    pub gaps: Vec<GapCell>,
    pub summary: Vec<RepresentationSummary>,
    pub paired: Vec<PairedComparison>,
    pub skipped: Vec<SkippedConfig>,
}

pub const RISK_CSV_HEADER: [&str; 10] = [
    "representation",
    "model",
    "n_splits",
    "horizon",
    "window",
    "risk",
    "auc",
    "baseline_risk",
    "n_folds",
    "gap",
];

impl RiskReport {
    pub fn cell(&self, rep: Representation, model: ModelKind, n_splits: usize, horizon: i64, window: i64) -> Option<&RiskCell> {
        self.cells.iter().find(|c| {
            c.representation == rep && c.model == model && c.n_splits == n_splits && c.horizon == horizon && c.window == window
        })
    }

    pub fn summary_for(&self, rep: Representation) -> Option<&RepresentationSummary> {
        self.summary.iter().find(|s| s.representation == rep)
    }

    /// One row per cell; `gap` repeats the configuration's residual-minus-canonical value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(RISK_CSV_HEADER).map_err(fmt)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            let gap = self
                .gaps
                .iter()
                .find(|g| g.model == c.model && g.n_splits == c.n_splits && g.horizon == c.horizon && g.window == c.window)
                .and_then(|g| g.gap);
            w.write_record([
                c.representation.as_str().to_string(),
                c.model.to_string(),
                c.n_splits.to_string(),
                c.horizon.to_string(),
                c.window.to_string(),
                c.risk.to_string(),
                opt(c.auc),
                c.baseline_risk.to_string(),
                c.folds.len().to_string(),
                opt(gap),
            ])
            .map_err(fmt)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

/// A representation to evaluate: its feature frame and, for the PCA
/// baseline, the number of components fitted per training fold.
#[derive(Debug, Clone, Copy)]
pub struct RepresentationInput<'a> {
    pub representation: Representation,
    pub frame: &'a MetricFrame,
    pub pca_components: Option<usize>,
}

/// Canonical-versus-residual evaluation over the configured sweep.
pub fn evaluate_decomposition(canonical: &MetricFrame, residual: &MetricFrame, faults: &FaultLog, config: &EvalConfig) -> Result<RiskReport> {
    evaluate_representations(
        &[
            RepresentationInput {
                representation: Representation::Canonical,
                frame: canonical,
                pca_components: None,
            },
            RepresentationInput {
                representation: Representation::Residual,
                frame: residual,
                pca_components: None,
            },
        ],
        faults,
        config,
    )
}

struct Task {
    window: usize,
    delta: usize,
    n_splits: usize,
    model: usize,
}

struct TaskOutput {
    cells: Vec<RiskCell>,
    gap: Option<GapCell>,
    skipped: Option<SkippedConfig>,
}

/// Shared engine: identical folds, labels and model specs for every input.
pub fn evaluate_representations(inputs: &[RepresentationInput<'_>], faults: &FaultLog, config: &EvalConfig) -> Result<RiskReport> {
    config.validate()?;
    let first = inputs.first().ok_or(Error::EmptyInput)?;
    let ts = first.frame.timestamps();
    if ts.is_empty() {
        return Err(Error::EmptyInput);
    }
    for input in inputs {
        if input.frame.timestamps() != ts {
            return Err(Error::Data(format!("{} frame timestamps differ", input.representation.as_str())));
        }
        if input.frame.n_cols() == 0 {
            return Err(Error::Data(format!("{} frame has no columns", input.representation.as_str())));
        }
    }

    // datasets[window][delta][input]
    let mut datasets = Vec::with_capacity(config.windows.len());
    for &window in &config.windows {
        let mut per_delta = Vec::with_capacity(config.deltas.len());
        for &delta in &config.deltas {
            let y = label_horizon(ts, faults, delta)?;
            let per_input = inputs
                .iter()
                .map(|inp| aggregate_frame(inp.frame, &y, window, delta))
                .collect::<Result<Vec<_>>>()?;
            per_delta.push(per_input);
        }
        datasets.push(per_delta);
    }

    let mut tasks = Vec::new();
    for window in 0..config.windows.len() {
        for delta in 0..config.deltas.len() {
            for &n_splits in &config.n_splits {
                for model in 0..config.models.len() {
                    tasks.push(Task {
                        window,
                        delta,
                        n_splits,
                        model,
                    });
                }
            }
        }
    }

    let run = |task: &Task| run_task(task, &datasets[task.window][task.delta], inputs, config);
    let outputs: Vec<TaskOutput> = if config.parallel {
        tasks.par_iter().map(run).collect::<Result<_>>()?
    } else {
        tasks.iter().map(run).collect::<Result<_>>()?
    };

    let mut cells = Vec::new();
    let mut gaps = Vec::new();
    let mut skipped = Vec::new();
    for out in outputs {
        cells.extend(out.cells);
        gaps.extend(out.gap);
        skipped.extend(out.skipped);
    }
    cells.sort_by(|a, b| {
        (a.representation, a.model, a.n_splits, a.horizon, a.window).cmp(&(b.representation, b.model, b.n_splits, b.horizon, b.window))
    });
    gaps.sort_by_key(|g| (g.model, g.n_splits, g.horizon, g.window));
    skipped.sort_by_key(|s| (s.model, s.n_splits, s.horizon, s.window));

    let reps: Vec<Representation> = inputs.iter().map(|i| i.representation).collect();
    let summary = summarize_representations(&cells, &reps);
    let paired = paired_comparisons(&cells, &reps);
    Ok(RiskReport {
        config: config.clone(),
        faults_total: faults.len(),
        faults_out_of_range: faults.out_of_range(ts[0], ts[ts.len() - 1]).len(),
        cells,
        gaps,
        summary,
        paired,
        skipped,
    })
}

fn rows(x: &Array2<f64>, r: &Range<usize>) -> Array2<f64> {
    x.slice(s![r.clone(), ..]).to_owned()
}

fn project(input: &RepresentationInput<'_>, train: Array2<f64>, test: Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let Some(k) = input.pca_components else {
        return Ok((train, test));
    };
    let k = k.clamp(1, train.ncols()).min(train.nrows().saturating_sub(1)).max(1);
    let model = pca_fit(train.view(), k)?;
    Ok((pca_transform(&model, train.view())?, pca_transform(&model, test.view())?))
}

fn fit_fold(
    spec: &ModelSpec,
    input: &RepresentationInput<'_>,
    ds: &LabeledDataset,
    fold: &Fold,
) -> Result<Prediction> {
    let (train, test) = project(input, rows(&ds.x, &fold.train), rows(&ds.x, &fold.test))?;
    fit_predict(spec, train.view(), &ds.y[fold.train.clone()], test.view())
}

fn run_task(task: &Task, data: &[LabeledDataset], inputs: &[RepresentationInput<'_>], config: &EvalConfig) -> Result<TaskOutput> {
    let spec = &config.models[task.model];
    let window = config.windows[task.window];
    let horizon = config.deltas[task.delta];
    let ds0 = &data[0];
    let folds = match time_splits(ds0.len(), task.n_splits) {
        Ok(f) => f,
        Err(e @ Error::InsufficientData { .. }) => {
            return Ok(TaskOutput {
                cells: Vec::new(),
                gap: None,
                skipped: Some(SkippedConfig {
                    model: spec.kind,
                    n_splits: task.n_splits,
                    horizon,
                    window,
                    reason: e.to_string(),
                }),
            })
        }
        Err(e) => return Err(e),
    };

    let mut per_input: Vec<Vec<FoldOutcome>> = vec![Vec::new(); inputs.len()];
    let mut probs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); inputs.len()];
    for (fi, fold) in folds.iter().enumerate() {
        if fold.test.is_empty() || fold.train.is_empty() {
            continue;
        }
        let train_max_time = ds0.timestamps[fold.train.end - 1];
        let test_min_time = ds0.timestamps[fold.test.start];
        if train_max_time >= test_min_time {
            return Err(Error::Data(format!("fold {fi} leaks: train ends at {train_max_time}, test starts at {test_min_time}")));
        }
        let y_train = &ds0.y[fold.train.clone()];
        let y_test = &ds0.y[fold.test.clone()];
        let base = baseline_risk(y_train, y_test)?;
        for (ii, (input, ds)) in inputs.iter().zip(data).enumerate() {
            let pred = fit_fold(spec, input, ds, fold)?;
            per_input[ii].push(FoldOutcome {
                fold: fi,
                train: fold.train.clone(),
                test: fold.test.clone(),
                train_max_time,
                test_min_time,
                test_positives: y_test.iter().filter(|&&v| v == 1).count(),
                risk: log_loss(y_test, &pred.probabilities)?,
                auc: auc(y_test, &pred.probabilities),
                baseline_risk: base,
                degenerate: pred.degenerate,
            });
            probs[ii].push(pred.probabilities);
        }
    }

    let cells: Vec<RiskCell> = inputs
        .iter()
        .zip(per_input)
        .map(|(input, folds)| {
            let n = folds.len().max(1) as f64;
            let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
            RiskCell {
                representation: input.representation,
                model: spec.kind,
                n_splits: task.n_splits,
                horizon,
                window,
                risk: folds.iter().map(|f| f.risk).sum::<f64>() / n,
                auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
                baseline_risk: folds.iter().map(|f| f.baseline_risk).sum::<f64>() / n,
                folds,
            }
        })
        .collect();

    let index_of = |rep| inputs.iter().position(|i| i.representation == rep);
    let conditional = match (index_of(Representation::Canonical), index_of(Representation::Residual)) {
        (Some(ci), Some(ri)) => {
            let mut folds = Vec::new();
            for (k, (pc, pr)) in probs[ci].iter().zip(&probs[ri]).enumerate() {
                folds.push(FoldConditional {
                    fold: cells[ci].folds[k].fold,
                    value: conditional_high_risk_corr(pc, pr, config.theta_quantile)?,
                });
            }
            let corrs: Vec<f64> = folds.iter().filter_map(|f| f.value.correlation).collect();
            let n = folds.len().max(1) as f64;
            Some(ConditionalSummary {
                theta_quantile: config.theta_quantile,
                covariance: folds.iter().map(|f| f.value.covariance).sum::<f64>() / n,
                correlation: (!corrs.is_empty()).then(|| corrs.iter().sum::<f64>() / corrs.len() as f64),
                n_conditioned: folds.iter().map(|f| f.value.n).sum(),
                folds_with_correlation: corrs.len(),
                folds,
            })
        }
        _ => None,
    };
    let risks: BTreeMap<Representation, f64> = cells.iter().map(|c| (c.representation, c.risk)).collect();
    let gap = match (risks.get(&Representation::Residual), risks.get(&Representation::Canonical)) {
        (Some(r), Some(c)) => Some(r - c),
        _ => None,
    };
    Ok(TaskOutput {
        gap: Some(GapCell {
            model: spec.kind,
            n_splits: task.n_splits,
            horizon,
            window,
            risks,
            gap,
            conditional,
        }),
        cells,
        skipped: None,
    })
}

fn summarize_representations(cells: &[RiskCell], reps: &[Representation]) -> Vec<RepresentationSummary> {
    reps.iter()
        .map(|&rep| {
            let mine: Vec<&RiskCell> = cells.iter().filter(|c| c.representation == rep).collect();
            let n = mine.len().max(1) as f64;
            let aucs: Vec<f64> = mine.iter().filter_map(|c| c.auc).collect();
            RepresentationSummary {
                representation: rep,
                mean_risk: mine.iter().map(|c| c.risk).sum::<f64>() / n,
                mean_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
                mean_baseline_risk: mine.iter().map(|c| c.baseline_risk).sum::<f64>() / n,
                n_cells: mine.len(),
            }
        })
        .collect()
}

fn paired_comparisons(cells: &[RiskCell], reps: &[Representation]) -> Vec<PairedComparison> {
    if !reps.contains(&Representation::Canonical) {
        return Vec::new();
    }
    let canonical: Vec<&RiskCell> = cells.iter().filter(|c| c.representation == Representation::Canonical).collect();
    reps.iter()
        .filter(|&&r| r != Representation::Canonical)
        .map(|&rep| {
            let mut diffs = Vec::new();
            for c in cells.iter().filter(|c| c.representation == rep) {
                let base = canonical
                    .iter()
                    .find(|b| b.model == c.model && b.n_splits == c.n_splits && b.horizon == c.horizon && b.window == c.window);
                if let Some(base) = base {
                    diffs.extend(c.folds.iter().zip(&base.folds).map(|(a, b)| a.risk - b.risk));
                }
            }
            let n_positive = diffs.iter().filter(|&&d| d > 0.0).count();
            let n_negative = diffs.iter().filter(|&&d| d < 0.0).count();
            PairedComparison {
                representation: rep,
                mean_difference: if diffs.is_empty() { 0.0 } else { diffs.iter().sum::<f64>() / diffs.len() as f64 },
                n_pairs: diffs.len(),
                n_positive,
                n_negative,
                sign_test_p: sign_test(n_positive, n_negative),
            }
        })
        .collect()
}

/// Two-sided exact binomial sign test at p = 1/2.
pub fn sign_test(n_positive: usize, n_negative: usize) -> f64 {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let n = n_positive + n_negative;
    if n == 0 {
        return 1.0;
    }
    let k = n_positive.min(n_negative) as u64;
    let dist = Binomial::new(0.5, n as u64).expect("valid binomial");
    (2.0 * dist.cdf(k)).min(1.0)
}

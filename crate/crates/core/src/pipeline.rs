//! End-to-end orchestration shared by the CLI and the acceptance suite,
//! plus the JSON/CSV report shapes.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::baselines::compare_representations;
use crate::error::{Error, Result};
use crate::ingest::{clean_frame, CleaningSummary, MetricFrame, DEFAULT_MAX_MISSING};
use crate::prediction::{EvalConfig, FaultLog, Representation, RiskReport};
use crate::pruning::{run_pruning, PruneResult, DEFAULT_TAU_RED};
use crate::separability::{analyze_segments, circular_shift_test, CorrelationReport, ShiftMode, ShiftResult, DEFAULT_SHIFT_REPEATS};
use crate::taxonomy::{assign_segments, SegmentTaxonomy, SegmentedSpace};
use crate::transforms::{apply_pipeline, RollingBaseline, TransformedFrame};

/// Cleaned frame, its segmentation and both transformed spaces.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cleaned: MetricFrame,
    pub cleaning: CleaningSummary,
    pub space: SegmentedSpace,
    pub canonical: TransformedFrame,
    pub residual: TransformedFrame,
}

pub fn prepare(frame: &MetricFrame, taxonomy: &SegmentTaxonomy, max_missing: f64, baseline: &RollingBaseline) -> Result<Prepared> {
    let (cleaned, cleaning) = clean_frame(frame, max_missing)?;
    let space = assign_segments(&cleaned, taxonomy)?;
    let (canonical, residual) = apply_pipeline(&cleaned, &space, taxonomy, baseline)?;
    Ok(Prepared {
        cleaned,
        cleaning,
        space,
        canonical,
        residual,
    })
}

/// Same as [`prepare`] with the default missing-data threshold and baseline.
pub fn prepare_default(frame: &MetricFrame, taxonomy: &SegmentTaxonomy) -> Result<Prepared> {
    prepare(frame, taxonomy, DEFAULT_MAX_MISSING, &RollingBaseline::default())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisOptions {
    pub tau_red: f64,
    pub shift_repeats: usize,
    pub shift_mode: ShiftMode,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            tau_red: DEFAULT_TAU_RED,
            shift_repeats: DEFAULT_SHIFT_REPEATS,
            shift_mode: ShiftMode::Independent,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub separability: CorrelationReport,
    pub shift: ShiftResult,
    pub pruning: PruneResult,
    pub options: AnalysisOptions,
}

pub fn analyze(prepared: &Prepared, taxonomy: &SegmentTaxonomy, options: &AnalysisOptions) -> Result<Analysis> {
    let segments = &prepared.space.canonical;
    let separability = analyze_segments(&prepared.canonical, segments)?;
    let shift = circular_shift_test(&prepared.canonical, segments, options.shift_repeats, options.seed, options.shift_mode)?;
    let pruning = run_pruning(&prepared.canonical, segments, options.tau_red, &taxonomy.keep_list)?;
    Ok(Analysis {
        separability,
        shift,
        pruning,
        options: options.clone(),
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

impl Analysis {
    pub fn separability_json(&self, prepared: &Prepared) -> Value {
        let mut v = to_value(&self.separability);
        v["shift"] = to_value(&self.shift);
        v["options"] = to_value(&self.options);
        v["space"] = to_value(&prepared.space);
        v["cleaning"] = to_value(&prepared.cleaning);
        v["provenance"] = json!({
            "canonical": prepared.canonical.provenance(),
            "residual": prepared.residual.provenance(),
        });
        v
    }

    pub fn pruning_json(&self) -> Value {
        to_value(&self.pruning)
    }

    /// Pooled intra (`in`) and inter (`out`) segment correlations.
    pub fn write_omegas<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["set", "rho"]).map_err(fmt)?;
        for (set, values) in [("in", &self.separability.omega_in), ("out", &self.separability.omega_out)] {
            for v in values.iter() {
                w.write_record([set, &v.to_string()]).map_err(fmt)?;
            }
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Pruned canonical space plus the four-way risk comparison.
pub fn evaluate(prepared: &Prepared, retained: &[String], faults: &FaultLog, config: &EvalConfig, pca_k: Option<usize>) -> Result<RiskReport> {
    let canonical = prepared.canonical.select(retained)?;
    if prepared.residual.n_cols() == 0 {
        return Err(Error::Data("residual space is empty".into()));
    }
    let full = canonical.concat(&prepared.residual)?;
    compare_representations(&canonical, &prepared.residual, &full, faults, config, pca_k)
}

/// Stringifies to pretty JSON with a trailing newline; object keys are sorted.
pub fn to_json_string(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values serialize");
    s.push('\n');
    s
}

pub fn risk_json(report: &RiskReport) -> Value {
    to_value(report)
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Residual-minus-canonical gap per configuration.
pub fn write_gap_csv<W: Write>(report: &RiskReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["model", "n_splits", "horizon", "window", "risk_canonical", "risk_residual", "gap"])
        .map_err(fmt)?;
    for g in &report.gaps {
        w.write_record([
            g.model.to_string(),
            g.n_splits.to_string(),
            g.horizon.to_string(),
            g.window.to_string(),
            csv_opt(g.risks.get(&Representation::Canonical).copied()),
            csv_opt(g.risks.get(&Representation::Residual).copied()),
            csv_opt(g.gap),
        ])
        .map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Per-fold risk, AUC and baseline for every representation.
pub fn write_risk_auc_csv<W: Write>(report: &RiskReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["representation", "model", "n_splits", "horizon", "window", "fold", "risk", "auc", "baseline_risk"])
        .map_err(fmt)?;
    for c in &report.cells {
        for f in &c.folds {
            w.write_record([
                c.representation.as_str().to_string(),
                c.model.to_string(),
                c.n_splits.to_string(),
                c.horizon.to_string(),
                c.window.to_string(),
                f.fold.to_string(),
                f.risk.to_string(),
                csv_opt(f.auc),
                f.baseline_risk.to_string(),
            ])
            .map_err(fmt)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

/// Per-fold conditional high-risk correlation between the two spaces.
pub fn write_condcorr_csv<W: Write>(report: &RiskReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["model", "n_splits", "horizon", "window", "fold", "theta", "covariance", "correlation", "n"])
        .map_err(fmt)?;
    for g in &report.gaps {
        let Some(cond) = &g.conditional else { continue };
        for f in &cond.folds {
            w.write_record([
                g.model.to_string(),
                g.n_splits.to_string(),
                g.horizon.to_string(),
                g.window.to_string(),
                f.fold.to_string(),
                f.value.theta.to_string(),
                f.value.covariance.to_string(),
                csv_opt(f.value.correlation),
                f.value.n.to_string(),
            ])
            .map_err(fmt)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

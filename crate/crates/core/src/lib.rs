//! Semantic feature segmentation for monitoring time series.
//!
//! The crate turns raw telemetry into a canonical feature space (semantic
//! segments with segment-specific transforms) and a residual space, measures
//! how well the segments separate, prunes intra-segment redundancy, and
//! compares the predictive risk of the two spaces (plus full-space and PCA
//! baselines) under time-aware cross-validation.

pub mod baselines;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod prediction;
pub mod pruning;
pub mod separability;
pub mod stats;
pub mod synth;
pub mod taxonomy;
pub mod transforms;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use ingest::{clean_frame, load_long_metrics, pivot_to_wide, CleaningSummary, LongRecord, MetricFrame};
pub use baselines::{compare_representations, pca_fit, pca_transform, PcaModel};
pub use pipeline::{analyze, prepare, prepare_default, Analysis, AnalysisOptions, Prepared};
pub use prediction::{
    evaluate_decomposition, EvalConfig, FaultEvent, FaultLog, ModelKind, ModelSpec, Representation, RiskReport,
};
pub use pruning::{run_pruning, PruneResult};
pub use separability::{analyze_segments, circular_shift_test, CorrelationReport, ShiftMode, ShiftResult};
pub use taxonomy::{assign_segments, parse_taxonomy, SegmentTaxonomy, SegmentedSpace};
pub use transforms::{apply_pipeline, RollingBaseline, TransformedFrame};
pub use synth::{generate_telemetry, GroundTruth, SynthConfig, SynthOutput};

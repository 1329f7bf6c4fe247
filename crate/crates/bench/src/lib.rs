//! Shared fixtures for the criterion benches.

use semseg_core::{analyze, generate_telemetry, prepare_default, AnalysisOptions, FaultLog, Prepared, SegmentTaxonomy, SynthConfig};

pub struct Fixture {
    pub prepared: Prepared,
    pub faults: FaultLog,
    pub retained: Vec<String>,
}

/// Synthetic telemetry of `samples` rows, prepared and pruned with default settings.
pub fn fixture(samples: usize) -> Fixture {
    let config = SynthConfig {
        n_samples: samples,
        ..SynthConfig::default()
    };
    let synth = generate_telemetry(&config).expect("synth");
    let taxonomy = SegmentTaxonomy::bundled();
    let prepared = prepare_default(&synth.frame, &taxonomy).expect("prepare");
    let analysis = analyze(&prepared, &taxonomy, &AnalysisOptions::default()).expect("analyze");
    Fixture {
        retained: analysis.pruning.retained_columns(),
        faults: synth.faults,
        prepared,
    }
}

//! Experiment driver for the GPI-PRIS beamforming library: JSON experiment
//! specs, seeded sweeps fanned out over a thread pool, CSV and JSON-lines
//! results, and timing of the phase-shift stage.

pub mod bench;
pub mod error;
pub mod experiment;
pub mod output;
pub mod spec;

pub use bench::{bench_from_spec, bench_ris_stage, BenchOptions, BenchPoint, BenchTable};
pub use error::{HarnessError, Result};
pub use experiment::{check_output_contract, run_experiment, run_point, PointContext, ResultRow, ResultTable, RunOptions, Scheme};
pub use spec::{load_config, ConfigSource, ExperimentKind, ExperimentSpec};

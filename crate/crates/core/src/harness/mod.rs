//! Reproducible experiment driver: configuration, deterministic training
//! loops, metrics persistence, verification subcommands, evaluation, and
//! static plot emission.

pub mod config;
pub mod eval;
pub mod metrics;
pub mod plot;
pub mod train;
pub mod verify;

pub use config::RunConfig;
pub use metrics::{read_metrics, MetricsHeader, MetricsRecord, MetricsWriter};
pub use train::{train, train_resumable, Experiment, TrainOutcome};
pub use verify::{verify_grad, verify_sde, GradFault, GradReport, SdeFault, SdeReport};

//! Monte Carlo laboratory: simulation designs, replication engine and
//! table renderers for the estimators in `nbrdid`.

pub mod checks;
pub mod design;
pub mod replicate;
pub mod rng;
pub mod robustness;
pub mod suite;
pub mod tables;

pub use design::{DesignId, DesignSpec, Draw, FixedDesign, Generator, Truth};
pub use replicate::{replicate, run_replications, summarize, ReplicationSummary, RunOptions};
pub use suite::{parse_suite, SuiteEntry, SuiteModels};

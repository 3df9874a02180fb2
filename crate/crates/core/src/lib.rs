pub mod cluster;
pub mod config;
pub mod engine;
pub mod error;
pub mod interconnect;
pub mod mapping;
pub mod system;
pub mod harness;
pub mod metrics;

pub use config::{parse_config, validate, ArchConfig, ConfigError, InterconnectConfig, InterconnectKind, ValidatedArch, Violation};
pub use engine::{Cycle, Timeline};
pub use error::SimError;
pub use harness::{run_once, run_sweep, HarnessError, SweepSpec, Workload};
pub use mapping::{LayerDescriptor, MapError, MappingPlan, Strategy};
pub use metrics::MetricsReport;
pub use system::{simulate, RunOptions, SimOutcome};

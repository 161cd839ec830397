//! Experiment plumbing: declarative configs, sweep execution, CSV/JSON
//! emission, theorem-verification suites, and a reverse-SDE sampling demo.

pub mod config;
pub mod sde;
pub mod sweep;
pub mod verify;

pub use config::{ConfigError, ExperimentConfig, TraceSetting};
pub use sde::{forward_em_samples, reverse_sde_demo, SdeDemoResult};
pub use sweep::{run_sweep, OutputFormat, SweepResult, SweepRow};
pub use verify::{verify_all, verify_suite, CheckResult, Suite, VerifyReport};

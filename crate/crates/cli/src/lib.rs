//! Configuration, persistence and commands behind the `outpaint4d` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod inputs;
pub mod oracle;
pub mod store;

pub use commands::{
    cmd_dataprep, cmd_init, cmd_render, cmd_run, cmd_step, Context, DataprepTarget, InitReport, RunReport,
    StepReport,
};
pub use config::{LoadedConfig, PipelineConfig, Workspace};
pub use error::{exit, CliError};

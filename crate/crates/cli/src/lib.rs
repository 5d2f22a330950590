//! Scenario files, command dispatch and result serialization for `gvs`.

pub mod build;
pub mod commands;
pub mod error;
pub mod hooks;
pub mod output;
pub mod scenario;

pub use build::{build_model, Model};
pub use commands::{run_file, run_text, Command, RunOptions};
pub use error::CliError;
pub use output::{Bundle, Table};
pub use scenario::{parse_scenario, Parsed, Scenario};

//! Experiment orchestration: configuration, presets, the round loop and CSV output.

pub mod config;
pub mod csv;
pub mod presets;
pub mod run;

pub use config::{DatasetSpec, RunConfig};
pub use csv::{emit_csv, parse_csv, to_csv_string};
pub use presets::{preset, preset_names};
pub use run::{run, PrivacyAudit, RoundRecord, RunOutput, Simulation};

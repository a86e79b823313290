//! Scenario layer: configuration, presets, the end-to-end runner and its
//! output files.

pub mod config;
pub mod io;
pub mod presets;
pub mod run;
pub mod units;

pub use config::{load_config, parse_config, parse_override, ConfigSources, ScenarioConfig};
pub use presets::{preset_table, ScenarioKind, Variant};
pub use run::{run_scenario, RunManifest, RunOptions, RunOutcome};
pub use units::{parse_quantity, Dimension, Quantity};

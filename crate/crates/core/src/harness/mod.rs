pub mod compare;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod run;

pub use compare::{compare, Comparison, RoundDelta};
pub use config::{parse_config, parse_config_str, DataPaths, DatasetKind, ExperimentConfig, Framework};
pub use metrics::{format_csv, parse_csv, read_csv, round_rows, MetricRow, CSV_HEADER};
pub use plot::{curves, plot_svg};
pub use run::{run, summary_table, Manifest, RunOutcome, RunStatus, SummaryRow, CODE_VERSION};

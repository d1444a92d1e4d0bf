//! Command line, configuration files, evaluation, metrics and seeding.

mod cli;
mod config;
mod eval;
mod metrics;
mod seeding;

pub use cli::{run, CHECKPOINT_FILE, EVAL_FILE, MANIFEST_FILE, METRICS_FILE};
pub use config::{apply_entries, load_config_file, parse_key_values, RunManifest};
pub use eval::{evaluate, EvalRecord, Policy};
pub use metrics::{format_row, MetricsWriter, METRICS_HEADER};
pub use seeding::{eval_seeds, stream_rng, Stream};

//! Dataset ingestion, window construction, metrics, synthetic corpora and
//! report writers.

mod csv_io;
mod metrics;
mod report;
pub mod synthetic;
mod windows;

pub use csv_io::{default_columns, load_csv, parse_csv, read_csv, write_csv, write_csv_file, DatasetSpec, LoadedSeries, SplitFractions};
pub use metrics::{amad, amad_per_channel, mse_mae, reconstruction_rate, token_budget, TokenMethod};
pub use report::{line_plot_svg, EvalReport, HorizonMetrics};
pub use windows::{make_windows, sliding_pairs, split_bounds, SplitWindows, WindowPair};

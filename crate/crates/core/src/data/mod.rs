//! Dataset files, graphs, windowing, splitting and normalization.

mod dataset;
pub mod format;
mod graph;
mod meta;
mod series;
pub mod synthetic;

pub use dataset::{split_counts, window_count, Batch, Dataset, NormStats, Sample, Split};
pub use format::{decode_tensor, encode_tensor, read_tensor_file, write_tensor_file};
pub use graph::PredefinedGraph;
pub use meta::{parse_timestamp, Calendar, SeriesMeta, DAYS_PER_WEEK, MINUTES_PER_DAY};
pub use series::{
    load_dataset_dir, save_dataset_dir, sidecar_path, RawSeries, ADJ_FILE, DATA_FILE, META_FILE,
};

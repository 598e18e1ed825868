//! Datasets, synthetic benchmark functions, and evaluation metrics.

mod data;
mod metrics;
mod synthetic;

pub use data::{ingest_csv, ingest_csv_reader, Dataset, DatasetManifest, Split, Standardization};
pub use metrics::{mean_log_likelihood, metrics, rmse, top_rank_recall, Metrics};
pub use synthetic::{generate_synthetic, generate_train_test, GroundTruth, SyntheticFunction, SYNTHETIC_DIM};

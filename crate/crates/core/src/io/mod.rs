//! Dataset files, the weight container, dataset statistics and reports.

pub mod idx;
pub mod report;
pub mod stats;
pub mod weights;

pub use idx::{load_idx_images, load_idx_labels, IdxImages, MnistSet, Split};
pub use report::{read_csv, write_csv, write_json, ReportRow, CSV_HEADERS};
pub use stats::{dataset_stats, SparsityStats};
pub use weights::{TensorData, WeightContainer, WeightRecord};

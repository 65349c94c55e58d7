//! Neural-network representation, forward pass and per-layer accounting.

mod dataset;
mod format;
mod layer;
mod model;
mod stats;
mod tensor;

pub use dataset::Dataset;
pub use format::{load_dataset, load_model, save_dataset, save_model, DatasetBundle};
pub use layer::{Conv2d, Dense, Layer};
pub use model::{Model, RecordedPredictions, WeightOverrides};
pub use stats::LayerStats;
pub use tensor::Tensor;

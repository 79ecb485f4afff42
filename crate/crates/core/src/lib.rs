//! Weakly supervised stacked Indian Buffet Process.
//!
//! Images are bags of patch feature vectors with image-level object and
//! attribute tags. Training fits a truncated mean-field posterior over
//! per-patch factor assignments, per-image stick weights and Gaussian factor
//! appearances; inference reuses the per-image updates with appearances frozen.

pub mod data;
pub mod error;
pub mod infer;
pub mod mat;
pub mod metrics;
pub mod sampler;
pub mod special;
pub mod tasks;
pub mod train;

pub use data::{
    load_dataset, load_model, load_posteriors, save_model, write_dataset, write_posteriors,
    FactorLayout, Hyperparams, ImageBag, Model, PosteriorRecord, PosteriorSummary, Prior,
};
pub use error::{Error, Result};
pub use mat::Mat;
pub use infer::{infer, infer_batch, InferOptions};
pub use train::{train, train_state, EtaForm, TrainOptions, TrainReport, VariationalState};

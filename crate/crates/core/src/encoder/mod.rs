//! Prototype-based multi-modal encoder.
//!
//! Time series and text embeddings each pass through a relu convolution
//! whose output columns are segment representations. Each class owns `k`
//! time and `k′` text prototypes; a sample's evidence for a prototype is the
//! best similarity `exp(−‖p − z_j‖²)` over its segments, and a non-negative
//! fusion matrix turns the `kC + k′C` evidences into class probabilities.
//! After training, prototypes are projected onto real training segments so
//! that every explanation points at observed data.

mod checkpoint;
mod config;
mod explain;
mod gradcheck;
mod loss;
mod model;
mod project;
mod regression;
mod train;

pub use checkpoint::{load_model, save_model, MODEL_FORMAT, MODEL_VERSION};
pub use config::{EncoderConfig, RegressionConfig, RegressionLoss};
pub use explain::{explain, Explanation, ExplanationItem};
pub use gradcheck::{random_case, run_gradcheck, GradcheckConfig, GradcheckReport, GroupCheck};
pub use loss::{diversity_penalty, loss_and_gradients, loss_total, LossBreakdown};
pub use model::{
    classify, prototype_similarities, EncoderModel, ForwardTrace, Modality, Params, Provenance,
    SegmentContent, Similarities,
};
pub use project::project_prototypes;
pub use regression::{
    pooled_reconstruction, refit_head, regression_forward, regression_loss, regression_output,
};
pub use train::{
    evaluate, finalize, new_optimizer, train_encoder, train_step, EpochRecord, TrainingHistory,
    ValidationMetrics,
};

//! The train / predict / reflect / refine loop.
//!
//! Each iteration trains the encoder on the current texts, predicts the
//! validation split with the encoder and the explanation-prompted LLM, fuses
//! both with a validation-selected α, reflects on the training predictions
//! and rewrites every training and validation text under the resulting
//! guideline. The encoder and reflection of the best iteration (by fused
//! validation macro-F1) are kept for the test phase.

mod config;
#[cfg(test)]
pub(crate) mod fixture;
mod fusion;
mod run;
mod rundir;
mod state;
mod test_phase;

pub use config::{conform_encoder, EarlyStop, LoopConfig, ReflectionSource};
pub use fusion::{fuse_predictions, fused_metrics, select_alpha, FusionConfig, FusionRecord, ALPHA_GRID};
pub use run::{run_iteration, run_loop, Runtime};
pub use rundir::{series_report, RunDir};
pub use state::{
    load_checkpoint, save_checkpoint, BestState, Checkpoint, IterationReport, LoopState,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use test_phase::{test_phase, TestOutcome, TestRecord};

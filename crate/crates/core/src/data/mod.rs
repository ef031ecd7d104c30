//! Dataset ingestion, splits, normalization, text segmentation, embeddings,
//! and the synthetic planted-motif generator.

pub mod embed;
pub mod io;
mod prep;
mod sample;
pub mod segment;
pub mod synth;

pub use embed::{embed_segments, EmbedStats, EmbeddingCache, EmbeddingProvider, HashEmbedder};
pub use io::{load_dataset, save_dataset};
pub use prep::{fit_normalization, normalize, prepare_splits, split_dataset};
pub use sample::{
    DatasetManifest, MultiModalSample, NormalizationStats, Split, SplitRatios, Splits, Target, Task,
};
pub use segment::{segment_text, SegmentationPolicy};
pub use synth::{majority_token_class, synthesize_dataset, RegressionSynth, SyntheticSpec};

//! Embedding datasets: file ingestion, seen/novel manifests, synthetic
//! generation and episode sampling.

pub mod dataset;
pub mod episode;
pub mod hfemb;
pub mod manifest;
pub mod synth;

pub use dataset::{EmbeddingDataset, EmbeddingRecord, SplitTag};
pub use episode::{keyed_rng, sample_episode, Episode, EpisodeItem, EpisodeSpec};
pub use hfemb::{load_embeddings, read_embeddings, save_embeddings, write_embeddings};
pub use manifest::DatasetManifest;
pub use synth::{
    generate_synthetic, generate_synthetic_with_classes, ClassGaussian, CovarianceMode, SynthSpec,
};

//! N-way k-shot episode sampling.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::dataset::{EmbeddingDataset, EmbeddingRecord};
use crate::error::{Error, Result};

/// RNG domain tags so different consumers of one seed never share a stream.
pub mod domain {
    pub const EPISODE: u64 = 1;
    pub const FINE_TUNE: u64 = 2;
    pub const CLASSIFIER_INIT: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const ADAPTER_TRAIN: u64 = 5;
    pub const SUPPORT_SELECT: u64 = 6;
}

/// Counter-based stream: independent of how many other streams were used
/// before, so parallel workers see the same numbers as a sequential loop.
pub fn keyed_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub episode_count: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            n_way: 5,
            k_shot: 5,
            n_query: 15,
            episode_count: 400,
            seed: 0,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::InvalidConfig(format!("n-way {} must be >= 2", self.n_way)));
        }
        if self.k_shot < 1 || self.n_query < 1 {
            return Err(Error::InvalidConfig("k-shot and n-query must be >= 1".into()));
        }
        if self.episode_count < 1 {
            return Err(Error::InvalidConfig("episode count must be >= 1".into()));
        }
        Ok(())
    }

    /// Every class must be able to fill support and query; episodes may
    /// draw any of them.
    pub fn check_dataset(&self, ds: &EmbeddingDataset) -> Result<()> {
        self.validate()?;
        if ds.class_count() < self.n_way {
            return Err(Error::InvalidConfig(format!(
                "{}-way episodes need at least {} classes, dataset has {}",
                self.n_way,
                self.n_way,
                ds.class_count()
            )));
        }
        let required = self.k_shot + self.n_query;
        for c in 0..ds.class_count() {
            let available = ds.class_records(c).len();
            if available < required {
                return Err(Error::InsufficientSamples {
                    class: ds.class_names()[c].clone(),
                    available,
                    required,
                });
            }
        }
        Ok(())
    }
}

/// A record with its label inside the episode (0..n_way).
#[derive(Debug, Clone, Copy)]
pub struct EpisodeItem<'a> {
    pub record: &'a EmbeddingRecord,
    pub record_index: usize,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Episode<'a> {
    /// Dataset class indices; position is the episode label.
    pub classes: Vec<usize>,
    pub support: Vec<EpisodeItem<'a>>,
    pub query: Vec<EpisodeItem<'a>>,
}

pub fn sample_episode<'a>(
    ds: &'a EmbeddingDataset,
    spec: &EpisodeSpec,
    episode_index: usize,
) -> Result<Episode<'a>> {
    spec.validate()?;
    if ds.class_count() < spec.n_way {
        return Err(Error::InvalidConfig(format!(
            "{}-way episodes need at least {} classes, dataset has {}",
            spec.n_way,
            spec.n_way,
            ds.class_count()
        )));
    }
    let mut rng = keyed_rng(spec.seed, domain::EPISODE, episode_index as u64);
    let classes = sample(&mut rng, ds.class_count(), spec.n_way).into_vec();
    let required = spec.k_shot + spec.n_query;
    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut query = Vec::with_capacity(spec.n_way * spec.n_query);
    for (label, &c) in classes.iter().enumerate() {
        let pool = ds.class_records(c);
        if pool.len() < required {
            return Err(Error::InsufficientSamples {
                class: ds.class_names()[c].clone(),
                available: pool.len(),
                required,
            });
        }
        let picks = sample(&mut rng, pool.len(), required);
        for (n, p) in picks.iter().enumerate() {
            let record_index = pool[p];
            let item = EpisodeItem {
                record: &ds.records()[record_index],
                record_index,
                label,
            };
            if n < spec.k_shot {
                support.push(item);
            } else {
                query.push(item);
            }
        }
    }
    Ok(Episode {
        classes,
        support,
        query,
    })
}

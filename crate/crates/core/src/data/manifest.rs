//! Dataset manifest: which file holds the embeddings and how its classes are
//! split into seen and novel sets.
//!
//! Plain `key = value` lines; `#` starts a comment.
//!
//! ```text
//! dataset = embeddings.hfemb
//! split_seed = 7
//! seen = walk,run,jump
//! novel = swim,climb
//! ```
//!
//! A relative `dataset` path is resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::{EmbeddingDataset, SplitTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dataset: PathBuf,
    pub split_seed: u64,
    pub seen: Vec<String>,
    pub novel: Vec<String>,
}

impl DatasetManifest {
    /// Shuffles `class_names` with `seed` and declares the last `novel_count` novel.
    pub fn random_split(
        dataset: PathBuf,
        class_names: &[String],
        novel_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if novel_count == 0 || novel_count > class_names.len() {
            return Err(Error::InvalidConfig(format!(
                "novel class count {novel_count} must be in 1..={}",
                class_names.len()
            )));
        }
        let mut names = class_names.to_vec();
        names.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let novel = names.split_off(names.len() - novel_count);
        Ok(DatasetManifest {
            dataset,
            split_seed: seed,
            seen: names,
            novel,
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "# hflow dataset manifest\ndataset = {}\nsplit_seed = {}\nseen = {}\nnovel = {}\n",
            self.dataset.display(),
            self.split_seed,
            self.seen.join(","),
            self.novel.join(",")
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            if map.insert(k.trim().to_string(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate key `{}`", k.trim()),
                });
            }
        }
        let get = |key: &str| {
            map.get(key).cloned().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("manifest is missing `{key}`"),
            })
        };
        let list = |v: &str| -> Vec<String> {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        };
        let (_, dataset) = get("dataset")?;
        let (seed_line, seed) = get("split_seed")?;
        let split_seed = seed.parse().map_err(|e| Error::Parse {
            line: seed_line,
            message: format!("bad split_seed: {e}"),
        })?;
        let seen = map.get("seen").map(|(_, v)| list(v)).unwrap_or_default();
        let novel = map.get("novel").map(|(_, v)| list(v)).unwrap_or_default();
        let m = DatasetManifest {
            dataset: PathBuf::from(dataset),
            split_seed,
            seen,
            novel,
        };
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        match self.seen.iter().find(|s| self.novel.contains(s)) {
            Some(c) => Err(Error::OverlappingSplits(c.clone())),
            None => Ok(()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = DatasetManifest::parse(&text)?;
        if m.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                m.dataset = dir.join(&m.dataset);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Splits `ds` into its seen and novel parts; either side is `None` when
    /// the manifest lists no classes for it.
    pub fn apply(
        &self,
        ds: &EmbeddingDataset,
    ) -> Result<(Option<EmbeddingDataset>, Option<EmbeddingDataset>)> {
        self.check_disjoint()?;
        let resolve = |names: &[String]| -> Result<Vec<usize>> {
            names
                .iter()
                .map(|n| {
                    ds.class_index(n).ok_or_else(|| {
                        Error::InvalidConfig(format!("manifest class `{n}` is not in the dataset"))
                    })
                })
                .collect()
        };
        let seen = resolve(&self.seen)?;
        let novel = resolve(&self.novel)?;
        let seen = (!seen.is_empty())
            .then(|| ds.subset(&seen, SplitTag::Seen))
            .transpose()?;
        let novel = (!novel.is_empty())
            .then(|| ds.subset(&novel, SplitTag::Novel))
            .transpose()?;
        Ok((seen, novel))
    }
}

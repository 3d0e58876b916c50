use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseVector;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub label: usize,
    pub vector: DenseVector,
    pub source_id: String,
}

/// Which side of a seen/novel split a dataset holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    /// Loaded directly from a file, before any split is applied.
    #[default]
    Unsplit,
    Seen,
    Novel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    class_names: Vec<String>,
    records: Vec<EmbeddingRecord>,
    split_tag: SplitTag,
    by_class: Vec<Vec<usize>>,
}

impl EmbeddingDataset {
    /// Validates dims, labels, class names, and that every class has a record.
    pub fn new(
        dim: usize,
        class_names: Vec<String>,
        records: Vec<EmbeddingRecord>,
        split_tag: SplitTag,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        if class_names.is_empty() {
            return Err(Error::InvalidConfig("dataset declares no classes".into()));
        }
        for (i, name) in class_names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!(
                    "class name `{name}` must be non-empty without whitespace"
                )));
            }
            if class_names[..i].contains(name) {
                return Err(Error::InvalidConfig(format!("duplicate class name `{name}`")));
            }
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, r) in records.iter().enumerate() {
            if r.vector.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.vector.dim(),
                });
            }
            if r.source_id.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidConfig(format!(
                    "source id {:?} contains a tab or line break",
                    r.source_id
                )));
            }
            let bucket = by_class.get_mut(r.label).ok_or(Error::IndexOutOfRange {
                index: r.label,
                len: class_names.len(),
            })?;
            bucket.push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::EmptyClass(class_names[c].clone()));
        }
        Ok(EmbeddingDataset {
            dim,
            class_names,
            records,
            split_tag,
            by_class,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    /// Record indices of class `label`.
    pub fn class_records(&self, label: usize) -> &[usize] {
        &self.by_class[label]
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Keeps only `classes` (by index, in the given order) and relabels them 0..n.
    pub fn subset(&self, classes: &[usize], tag: SplitTag) -> Result<EmbeddingDataset> {
        let mut names = Vec::with_capacity(classes.len());
        let mut records = Vec::new();
        for (new_label, &c) in classes.iter().enumerate() {
            let name = self.class_names.get(c).ok_or(Error::IndexOutOfRange {
                index: c,
                len: self.class_count(),
            })?;
            names.push(name.clone());
            for &i in &self.by_class[c] {
                let r = &self.records[i];
                records.push(EmbeddingRecord {
                    label: new_label,
                    vector: r.vector.clone(),
                    source_id: r.source_id.clone(),
                });
            }
        }
        EmbeddingDataset::new(self.dim, names, records, tag)
    }

    /// Same records with every vector replaced by `f(vector)`.
    pub fn map_vectors<F>(&self, mut f: F) -> Result<EmbeddingDataset>
    where
        F: FnMut(&DenseVector) -> Result<DenseVector>,
    {
        let records = self
            .records
            .iter()
            .map(|r| {
                Ok(EmbeddingRecord {
                    label: r.label,
                    vector: f(&r.vector)?,
                    source_id: r.source_id.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dim = records[0].vector.dim();
        EmbeddingDataset::new(dim, self.class_names.clone(), records, self.split_tag)
    }
}

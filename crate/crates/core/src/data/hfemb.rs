//! `HFEMB1` text format.
//!
//! ```text
//! HFEMB1 <dim> <class-name> <class-name> ...
//! <class-name>\t<source-id>\t<f1>,<f2>,...,<f_dim>
//! ```
//!
//! UTF-8, one record per line. Floats are written with 17 significant digits
//! so a save/load cycle is lossless. Blank lines are ignored.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::data::dataset::{EmbeddingDataset, EmbeddingRecord, SplitTag};
use crate::error::{Error, Result};
use crate::linalg::DenseVector;

pub const MAGIC: &str = "HFEMB1";

pub fn write_embeddings<W: Write>(ds: &EmbeddingDataset, mut w: W) -> std::io::Result<()> {
    write!(w, "{MAGIC} {}", ds.dim())?;
    for name in ds.class_names() {
        write!(w, " {name}")?;
    }
    writeln!(w)?;
    let mut line = String::new();
    for r in ds.records() {
        line.clear();
        line.push_str(&ds.class_names()[r.label]);
        line.push('\t');
        line.push_str(&r.source_id);
        line.push('\t');
        for (i, x) in r.vector.as_slice().iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{x:.16e}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingDataset> {
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    let (dim, class_names) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(parse_err(1, "missing HFEMB1 header".into()));
        };
        let line = line.map_err(|e| parse_err(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(MAGIC) {
            return Err(parse_err(i + 1, format!("expected `{MAGIC}` header")));
        }
        let dim: usize = tokens
            .next()
            .ok_or_else(|| parse_err(i + 1, "header lacks a dimension".into()))?
            .parse()
            .map_err(|e| parse_err(i + 1, format!("bad dimension: {e}")))?;
        let names: Vec<String> = tokens.map(str::to_string).collect();
        if names.is_empty() {
            return Err(parse_err(i + 1, "header declares no classes".into()));
        }
        break (dim, names);
    };

    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(label), Some(source_id), Some(values)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(parse_err(lineno, "expected label<TAB>source_id<TAB>values".into()));
        };
        let label_index = class_names
            .iter()
            .position(|n| n == label)
            .ok_or_else(|| Error::UnknownLabel {
                line: lineno,
                label: label.to_string(),
            })?;
        let vector = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("bad value `{v}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.len() != dim {
            return Err(Error::DimMismatch {
                line: lineno,
                expected: dim,
                found: vector.len(),
            });
        }
        let vector = DenseVector::new(vector).map_err(|e| parse_err(lineno, e.to_string()))?;
        records.push(EmbeddingRecord {
            label: label_index,
            vector,
            source_id: source_id.to_string(),
        });
    }
    EmbeddingDataset::new(dim, class_names, records, SplitTag::Unsplit)
}

pub fn save_embeddings(path: &Path, ds: &EmbeddingDataset) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_embeddings(ds, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingDataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(f))
}

//! Gaussian class clusters with controlled covariance structure.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::dataset::{EmbeddingDataset, EmbeddingRecord, SplitTag};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, random_orthogonal, DenseMatrix, DenseVector};

/// Off-diagonal correlation every full-mode class must reach somewhere.
pub const MIN_FULL_CORRELATION: f64 = 0.3;
const MAX_ROTATION_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    #[default]
    Isotropic,
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_count: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub covariance_mode: CovarianceMode,
    /// Overall standard deviation of the within-class noise.
    pub noise_scale: f64,
    /// Standard deviation of the class means around the origin.
    pub mean_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            class_count: 10,
            dim: 16,
            samples_per_class: 100,
            covariance_mode: CovarianceMode::Isotropic,
            noise_scale: 1.0,
            mean_scale: 2.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.class_count == 0 || self.dim == 0 || self.samples_per_class == 0 {
            return bad("class count, dim and samples per class must be positive".into());
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise scale {} must be positive", self.noise_scale));
        }
        if !(self.mean_scale >= 0.0 && self.mean_scale.is_finite()) {
            return bad(format!("mean scale {} must be non-negative", self.mean_scale));
        }
        if self.covariance_mode == CovarianceMode::Full && self.dim < 2 {
            return bad("full covariance needs dim >= 2".into());
        }
        Ok(())
    }
}

/// `N(mean, U diag(eigenvalues) U^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGaussian {
    mean: Vec<f64>,
    rotation: DenseMatrix,
    eigenvalues: Vec<f64>,
}

impl ClassGaussian {
    pub fn new(mean: Vec<f64>, rotation: DenseMatrix, eigenvalues: Vec<f64>) -> Result<Self> {
        let n = mean.len();
        if rotation.rows() != n || rotation.cols() != n || eigenvalues.len() != n {
            return Err(Error::Shape(format!(
                "class gaussian: mean dim {n}, rotation {}x{}, {} eigenvalues",
                rotation.rows(),
                rotation.cols(),
                eigenvalues.len()
            )));
        }
        if eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(ClassGaussian {
            mean,
            rotation,
            eigenvalues,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn rotation(&self) -> &DenseMatrix {
        &self.rotation
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn covariance(&self) -> DenseMatrix {
        let n = self.mean.len();
        let u = &self.rotation;
        let mut cov = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let s = (0..n)
                    .map(|k| u.get(i, k) * self.eigenvalues[k] * u.get(j, k))
                    .sum();
                cov.set(i, j, s);
            }
        }
        cov
    }

    /// Largest `|corr_ij|` over `i != j`.
    pub fn max_abs_correlation(&self) -> f64 {
        let cov = self.covariance();
        let n = cov.rows();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                let c = cov.get(i, j) / (cov.get(i, i) * cov.get(j, j)).sqrt();
                best = best.max(c.abs());
            }
        }
        best
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let scaled: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|l| l.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let rotated = self.rotation.matvec(&scaled);
        self.mean.iter().zip(rotated).map(|(m, r)| m + r).collect()
    }
}

/// Eigenvalues spread geometrically over a 16:1 range, mean-normalized so
/// the average variance is `noise_scale^2`.
fn spread_eigenvalues(dim: usize, noise_scale: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim)
        .map(|i| {
            let t = if dim == 1 { 0.5 } else { i as f64 / (dim - 1) as f64 };
            (4.0f64.ln() * (1.0 - 2.0 * t)).exp()
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / dim as f64;
    raw.iter().map(|l| l / mean * noise_scale * noise_scale).collect()
}

fn draw_class<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<ClassGaussian> {
    let n = spec.dim;
    let mean: Vec<f64> = (0..n)
        .map(|_| spec.mean_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let g = match spec.covariance_mode {
        CovarianceMode::Isotropic => ClassGaussian::new(
            mean,
            DenseMatrix::identity(n),
            vec![spec.noise_scale * spec.noise_scale; n],
        )?,
        CovarianceMode::Diagonal => {
            let mut eig = spread_eigenvalues(n, spec.noise_scale);
            for i in (1..n).rev() {
                eig.swap(i, rng.gen_range(0..=i));
            }
            ClassGaussian::new(mean, DenseMatrix::identity(n), eig)?
        }
        CovarianceMode::Full => {
            let eig = spread_eigenvalues(n, spec.noise_scale);
            let mut draws = 0;
            loop {
                let g = ClassGaussian::new(mean.clone(), random_orthogonal(n, rng), eig.clone())?;
                if g.max_abs_correlation() >= MIN_FULL_CORRELATION {
                    break g;
                }
                draws += 1;
                if draws == MAX_ROTATION_DRAWS {
                    return Err(Error::InvalidConfig(format!(
                        "no rotation reached correlation {MIN_FULL_CORRELATION} in {draws} draws"
                    )));
                }
            }
        }
    };
    cholesky(&g.covariance())?;
    Ok(g)
}

pub fn class_name(c: usize) -> String {
    format!("class{c:03}")
}

/// Dataset plus the generating distribution of each class.
pub fn generate_synthetic_with_classes(
    spec: &SynthSpec,
) -> Result<(EmbeddingDataset, Vec<ClassGaussian>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = (0..spec.class_count)
        .map(|_| draw_class(spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(spec.class_count * spec.samples_per_class);
    for (c, g) in classes.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            records.push(EmbeddingRecord {
                label: c,
                vector: DenseVector::new(g.sample(&mut rng))?,
                source_id: format!("synth-{c}-{i}"),
            });
        }
    }
    let names = (0..spec.class_count).map(class_name).collect();
    let ds = EmbeddingDataset::new(spec.dim, names, records, SplitTag::Unsplit)?;
    Ok((ds, classes))
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<EmbeddingDataset> {
    generate_synthetic_with_classes(spec).map(|(ds, _)| ds)
}

/// Unbiased sample covariance of `rows`.
pub fn sample_covariance(rows: &[&[f64]]) -> DenseMatrix {
    let n = rows[0].len();
    let count = rows.len() as f64;
    let mut mean = vec![0.0; n];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x / count;
        }
    }
    let mut cov = DenseMatrix::zeros(n, n);
    for r in rows {
        for i in 0..n {
            for j in 0..n {
                let v = cov.get(i, j) + (r[i] - mean[i]) * (r[j] - mean[j]) / (count - 1.0);
                cov.set(i, j, v);
            }
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_rows(ds: &EmbeddingDataset, c: usize) -> Vec<&[f64]> {
        ds.class_records(c)
            .iter()
            .map(|&i| ds.records()[i].vector.as_slice())
            .collect()
    }

    #[test]
    fn isotropic_sample_covariance_is_identity() {
        let spec = SynthSpec {
            class_count: 3,
            dim: 4,
            samples_per_class: 1000,
            seed: 11,
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        for c in 0..3 {
            let cov = sample_covariance(&class_rows(&ds, c));
            let err = cov.max_abs_diff(&DenseMatrix::identity(4));
            assert!(err < 0.1, "class {c}: {err}");
        }
    }

    #[test]
    fn known_rotation_reconstructs() {
        let t: f64 = 0.6;
        let u = DenseMatrix::from_rows(&[vec![t.cos(), -t.sin()], vec![t.sin(), t.cos()]]).unwrap();
        let g = ClassGaussian::new(vec![1.0, -1.0], u, vec![4.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Vec<f64>> = (0..2000).map(|_| g.sample(&mut rng)).collect();
        let rows: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
        let err = sample_covariance(&rows).max_abs_diff(&g.covariance());
        assert!(err < 0.15, "{err}");
    }

    #[test]
    fn full_mode_is_correlated_and_spd() {
        let spec = SynthSpec {
            covariance_mode: CovarianceMode::Full,
            class_count: 6,
            dim: 16,
            samples_per_class: 5,
            seed: 3,
            ..SynthSpec::default()
        };
        let (_, classes) = generate_synthetic_with_classes(&spec).unwrap();
        for g in &classes {
            assert!(g.max_abs_correlation() >= MIN_FULL_CORRELATION);
            let cov = g.covariance();
            assert!(cov.is_symmetric(1e-12));
            assert!(cholesky(&cov).is_ok());
        }
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let spec = SynthSpec {
            covariance_mode: CovarianceMode::Diagonal,
            seed: 7,
            ..SynthSpec::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn eigenvalues_average_to_noise_variance() {
        let e = spread_eigenvalues(8, 0.5);
        let mean = e.iter().sum::<f64>() / 8.0;
        assert!((mean - 0.25).abs() < 1e-12);
        assert!((e[0] / e[7] - 16.0).abs() < 1e-9);
    }
}

//! Episodic evaluation, paired comparisons and the flow-length grid.

use rand::seq::index::sample;
use serde::Serialize;

use crate::data::episode::{domain, keyed_rng, sample_episode, EpisodeSpec};
use crate::data::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::linalg::DenseVector;
use crate::model::{predict, train_adapter, AdapterModel, TrainConfig, TrainHistory};
use crate::par::{map_range, Execution};

/// z-value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub top1: f64,
    pub top5: f64,
    pub skipped_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeResult>,
    pub episode_count: usize,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub flow_length: usize,
    pub top1_mean: f64,
    /// 95% CI half-width, 1.96 * sample std / sqrt(n).
    pub top1_ci95: f64,
    pub top5_mean: f64,
    pub top5_ci95: f64,
}

/// Mean and 95% CI half-width; the half-width is 0 for a single value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

/// Is `label` among the `k` largest logits? Ties go to the lower index,
/// matching a first-maximum argmax.
pub fn in_top_k(logits: &DenseVector, label: usize, k: usize) -> bool {
    let l = logits.as_slice();
    let target = l[label];
    let ahead = l
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count();
    ahead < k
}

/// `k` records per class, chosen by `seed`, as training pairs.
pub fn select_per_class(ds: &EmbeddingDataset, k: usize, seed: u64) -> Result<Vec<(&DenseVector, usize)>> {
    let mut rng = keyed_rng(seed, domain::SUPPORT_SELECT, 0);
    let mut out = Vec::with_capacity(k * ds.class_count());
    for c in 0..ds.class_count() {
        let pool = ds.class_records(c);
        if pool.len() < k {
            return Err(Error::InsufficientSamples {
                class: ds.class_names()[c].clone(),
                available: pool.len(),
                required: k,
            });
        }
        for p in sample(&mut rng, pool.len(), k) {
            out.push((&ds.records()[pool[p]].vector, c));
        }
    }
    Ok(out)
}

/// Adapter trained on `k_shot` records of every class in `ds`.
pub fn train_adapter_on(
    ds: &EmbeddingDataset,
    cfg: &TrainConfig,
    k_shot: usize,
) -> Result<(AdapterModel, TrainHistory)> {
    cfg.validate()?;
    let dims = cfg.adapter_dims(ds.dim(), ds.class_count());
    let mut model = AdapterModel::init(&dims, &mut keyed_rng(cfg.seed, domain::MODEL_INIT, 0))?;
    let samples = select_per_class(ds, k_shot, cfg.seed)?;
    let mut rng = keyed_rng(cfg.seed, domain::ADAPTER_TRAIN, 0);
    let history = train_adapter(&mut model, &samples, cfg, cfg.max_epochs, &mut rng)?;
    Ok((model, history))
}

/// Fine-tunes a copy of `base` on one episode's support set and scores its
/// query set.
pub fn run_episode(
    base: &AdapterModel,
    ds: &EmbeddingDataset,
    spec: &EpisodeSpec,
    cfg: &TrainConfig,
    index: usize,
) -> Result<EpisodeResult> {
    let ep = sample_episode(ds, spec, index)?;
    let key = index as u64;
    let mut model = base.clone();
    model.reset_classifier(spec.n_way, &mut keyed_rng(spec.seed, domain::CLASSIFIER_INIT, key));
    let support: Vec<(&DenseVector, usize)> =
        ep.support.iter().map(|i| (&i.record.vector, i.label)).collect();
    let mut rng = keyed_rng(spec.seed, domain::FINE_TUNE, key);
    let history = train_adapter(&mut model, &support, cfg, cfg.fine_tune_epochs, &mut rng)?;
    let k = spec.n_way.min(5);
    let (mut top1, mut top5) = (0usize, 0usize);
    for q in &ep.query {
        let logits = predict(&model, &q.record.vector)?;
        top1 += in_top_k(&logits, q.label, 1) as usize;
        top5 += in_top_k(&logits, q.label, k) as usize;
    }
    let n = ep.query.len() as f64;
    Ok(EpisodeResult {
        episode: index,
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
        skipped_steps: history.skipped_steps,
    })
}

pub fn evaluate_episodes(
    base: &AdapterModel,
    ds: &EmbeddingDataset,
    spec: &EpisodeSpec,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<EvalReport> {
    spec.check_dataset(ds)?;
    cfg.validate()?;
    if base.hidden.in_dim() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.hidden.in_dim(),
            found: ds.dim(),
        });
    }
    let episodes = map_range(spec.episode_count, exec, |i| run_episode(base, ds, spec, cfg, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let top1: Vec<f64> = episodes.iter().map(|e| e.top1).collect();
    let top5: Vec<f64> = episodes.iter().map(|e| e.top5).collect();
    let (top1_mean, top1_ci95) = mean_ci95(&top1);
    let (top5_mean, top5_ci95) = mean_ci95(&top5);
    Ok(EvalReport {
        episode_count: episodes.len(),
        episodes,
        n_way: spec.n_way,
        k_shot: spec.k_shot,
        n_query: spec.n_query,
        flow_length: base.flow.length(),
        top1_mean,
        top1_ci95,
        top5_mean,
        top5_ci95,
    })
}

/// Train on `k_shot` per class, then evaluate: one grid cell.
pub fn run_cell(
    ds: &EmbeddingDataset,
    cfg: &TrainConfig,
    spec: &EpisodeSpec,
    exec: Execution,
) -> Result<(AdapterModel, TrainHistory, EvalReport)> {
    spec.check_dataset(ds)?;
    let (model, history) = train_adapter_on(ds, cfg, spec.k_shot)?;
    let report = evaluate_episodes(&model, ds, spec, cfg, exec)?;
    Ok((model, history, report))
}

/// Per-episode difference `b - a` in top-1 accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedComparison {
    pub episodes: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    pub diff_ci95: f64,
    pub b_wins: usize,
    pub a_wins: usize,
}

impl PairedComparison {
    pub fn ci_excludes_zero(&self) -> bool {
        self.mean_diff - self.diff_ci95 > 0.0 || self.mean_diff + self.diff_ci95 < 0.0
    }
}

pub fn paired_top1(a: &EvalReport, b: &EvalReport) -> Result<PairedComparison> {
    let same = a.episodes.len() == b.episodes.len()
        && a.episodes.iter().zip(&b.episodes).all(|(x, y)| x.episode == y.episode);
    if !same {
        return Err(Error::InvalidConfig("paired reports must cover the same episodes".into()));
    }
    let diffs: Vec<f64> = a.episodes.iter().zip(&b.episodes).map(|(x, y)| y.top1 - x.top1).collect();
    let (mean_diff, diff_ci95) = mean_ci95(&diffs);
    Ok(PairedComparison {
        episodes: diffs.len(),
        mean_a: a.top1_mean,
        mean_b: b.top1_mean,
        mean_diff,
        diff_ci95,
        b_wins: diffs.iter().filter(|&&d| d > 0.0).count(),
        a_wins: diffs.iter().filter(|&&d| d < 0.0).count(),
    })
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub flow_length: usize,
    pub k_shot: usize,
    pub outcome: std::result::Result<EvalReport, String>,
}

/// Runs every (T, k) cell; a failing cell is recorded and the grid goes on.
pub fn run_ablation(
    ds: &EmbeddingDataset,
    lengths: &[usize],
    shots: &[usize],
    cfg: &TrainConfig,
    spec: &EpisodeSpec,
    exec: Execution,
) -> Vec<AblationCell> {
    let mut cells = Vec::with_capacity(lengths.len() * shots.len());
    for &flow_length in lengths {
        for &k_shot in shots {
            let cell_cfg = TrainConfig {
                flow_length,
                ..cfg.clone()
            };
            let cell_spec = EpisodeSpec {
                k_shot,
                ..spec.clone()
            };
            let outcome = run_cell(ds, &cell_cfg, &cell_spec, exec)
                .map(|(_, _, r)| r)
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("cell T={flow_length} k={k_shot} failed: {e}");
            }
            cells.push(AblationCell {
                flow_length,
                k_shot,
                outcome,
            });
        }
    }
    cells
}

/// Flow length with the highest mean top-1 among successful cells for
/// `k_shot`; ties go to the shorter flow.
pub fn best_length(cells: &[AblationCell], k_shot: usize) -> Option<usize> {
    cells
        .iter()
        .filter(|c| c.k_shot == k_shot)
        .filter_map(|c| c.outcome.as_ref().ok().map(|r| (c.flow_length, r.top1_mean)))
        .fold(None, |best: Option<(usize, f64)>, (t, m)| match best {
            Some((bt, bm)) if bm > m || (bm == m && bt <= t) => Some((bt, bm)),
            _ => Some((t, m)),
        })
        .map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, SynthSpec};

    #[test]
    fn ci_of_constant_is_zero() {
        assert_eq!(mean_ci95(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        assert_eq!(mean_ci95(&[0.25]), (0.25, 0.0));
        let (m, h) = mean_ci95(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((h - 1.96 * (0.5f64 / 2.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn top_k_ties_break_low() {
        let l = DenseVector::new(vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        assert!(in_top_k(&l, 1, 1));
        assert!(!in_top_k(&l, 2, 1));
        assert!(in_top_k(&l, 2, 2));
        assert!(in_top_k(&l, 3, 4));
        assert!(!in_top_k(&l, 3, 3));
    }

    fn small() -> (EmbeddingDataset, TrainConfig, EpisodeSpec) {
        let ds = generate_synthetic(&SynthSpec {
            class_count: 4,
            dim: 3,
            samples_per_class: 12,
            mean_scale: 6.0,
            seed: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            hidden_dim: 8,
            latent_dim: 3,
            flow_length: 1,
            max_epochs: 3,
            fine_tune_epochs: 5,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let spec = EpisodeSpec {
            n_way: 3,
            k_shot: 2,
            n_query: 4,
            episode_count: 6,
            seed: 1,
        };
        (ds, cfg, spec)
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let (ds, cfg, spec) = small();
        let (model, _) = train_adapter_on(&ds, &cfg, 2).unwrap();
        let a = evaluate_episodes(&model, &ds, &spec, &cfg, Execution::Sequential).unwrap();
        let b = evaluate_episodes(&model, &ds, &spec, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.episodes.iter().all(|e| e.top5 == 1.0 && e.top1 <= e.top5));
    }

    #[test]
    fn grid_records_failures() {
        let (ds, cfg, spec) = small();
        let spec = EpisodeSpec {
            episode_count: 1,
            ..spec
        };
        let cells = run_ablation(&ds, &[0, 1], &[1, 50], &cfg, &spec, Execution::Sequential);
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().filter(|c| c.k_shot == 1).all(|c| c.outcome.is_ok()));
        assert!(cells.iter().filter(|c| c.k_shot == 50).all(|c| c.outcome.is_err()));
        assert!(best_length(&cells, 1).is_some());
        assert_eq!(best_length(&cells, 50), None);
    }

    #[test]
    fn paired_needs_same_episodes() {
        let (ds, cfg, spec) = small();
        let (model, _) = train_adapter_on(&ds, &cfg, 2).unwrap();
        let a = evaluate_episodes(&model, &ds, &spec, &cfg, Execution::Sequential).unwrap();
        let p = paired_top1(&a, &a).unwrap();
        assert_eq!((p.mean_diff, p.diff_ci95), (0.0, 0.0));
        assert!(!p.ci_excludes_zero());
        let mut short = a.clone();
        short.episodes.pop();
        assert!(paired_top1(&a, &short).is_err());
    }
}

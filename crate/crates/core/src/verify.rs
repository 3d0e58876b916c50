//! Self-verification suites behind `hflow verify`.
//!
//! Each suite draws random instances, measures the worst deviation from a
//! property and compares it with a fixed tolerance. The reflection under test
//! is injectable so a deliberately broken one can be shown to fail.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::episode::keyed_rng;
use crate::error::{Error, Result};
use crate::flow::{flow_forward, FlowStack, ReflectorActivation};
use crate::linalg::{
    decompose_orthogonal, determinant, householder_apply, orthogonality_defect, random_orthogonal,
    DenseMatrix, DenseVector,
};
use crate::model::{adapter_loss_and_grad, AdapterDims, AdapterModel};
use crate::posterior::{kl_analytic_diag, kl_flow_term, reparameterize, GaussianPosterior};

pub const SUITES: [&str; 7] = [
    "involution",
    "determinant",
    "isometry",
    "theorem1",
    "theorem2",
    "gradcheck",
    "kl-oracle",
];

/// `(v, z) -> H(v) z`.
pub type ReflectFn = fn(&DenseVector, &DenseVector) -> Result<DenseVector>;

#[derive(Debug, Clone, Copy)]
pub struct VerifyConfig {
    pub seed: u64,
    pub reflect: ReflectFn,
    /// Random instances per matrix suite.
    pub trials: usize,
    pub gradcheck_seeds: usize,
    pub kl_posteriors: usize,
    pub kl_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 0,
            reflect: householder_apply,
            trials: 200,
            gradcheck_seeds: 5,
            kl_posteriors: 5,
            kl_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: usize,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<12} {}  checks={:<6} max={:.3e}  tol={:.1e}",
            self.suite,
            if self.passed { "PASS" } else { "FAIL" },
            self.checks,
            self.observed,
            self.tolerance
        )
    }
}

fn report(suite: &str, checks: usize, tolerance: f64, observed: f64) -> SuiteReport {
    SuiteReport {
        suite: suite.to_string(),
        checks,
        tolerance,
        observed,
        passed: observed <= tolerance,
    }
}

fn gaussian(dim: usize, rng: &mut ChaCha8Rng) -> DenseVector {
    DenseVector::from_raw((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

/// Dense matrix of the map `z -> reflect(v, z)`, column by column.
pub fn reflection_matrix(reflect: ReflectFn, v: &DenseVector) -> Result<DenseMatrix> {
    let n = v.dim();
    let mut m = DenseMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = DenseVector::zeros(n);
        e[c] = 1.0;
        for (r, x) in reflect(v, &e)?.as_slice().iter().enumerate() {
            m.set(r, c, *x);
        }
    }
    Ok(m)
}

pub fn run_suite(name: &str, cfg: &VerifyConfig) -> Result<SuiteReport> {
    let mut rng = keyed_rng(cfg.seed, 100, SUITES.iter().position(|s| *s == name).unwrap_or(0) as u64);
    match name {
        "involution" => {
            let mut worst = 0.0f64;
            for _ in 0..cfg.trials {
                let n = rng.gen_range(2..=64);
                let h = reflection_matrix(cfg.reflect, &gaussian(n, &mut rng))?;
                let sq = h.matmul(&h)?;
                worst = worst
                    .max(orthogonality_defect(&h))
                    .max(sq.max_abs_diff(&DenseMatrix::identity(n)));
            }
            Ok(report(name, cfg.trials, 1e-10, worst))
        }
        "determinant" => {
            let mut worst = 0.0f64;
            for _ in 0..cfg.trials {
                let n = rng.gen_range(2..=16);
                let h = reflection_matrix(cfg.reflect, &gaussian(n, &mut rng))?;
                worst = worst.max((determinant(&h)? + 1.0).abs());
            }
            Ok(report(name, cfg.trials, 1e-8, worst))
        }
        "isometry" => {
            let mut worst = 0.0f64;
            for _ in 0..cfg.trials {
                let n = rng.gen_range(2..=32);
                let z = gaussian(n, &mut rng);
                let hz = (cfg.reflect)(&gaussian(n, &mut rng), &z)?;
                worst = worst.max((hz.norm() - z.norm()).abs() / z.norm().max(1.0));
            }
            for i in 0..cfg.trials {
                let m = rng.gen_range(2..=8);
                let hidden = rng.gen_range(1..=6);
                let act = if i % 2 == 0 {
                    ReflectorActivation::None
                } else {
                    ReflectorActivation::Tanh
                };
                let stack = FlowStack::init(i % 6, hidden, m, act, &mut rng);
                let z0 = gaussian(m, &mut rng);
                let (zt, _, log_det) = flow_forward(&stack, &z0, &gaussian(hidden, &mut rng))?;
                if log_det != 0.0 {
                    worst = f64::INFINITY;
                }
                worst = worst.max((zt.norm() - z0.norm()).abs() / z0.norm().max(1.0));
            }
            Ok(report(name, 2 * cfg.trials, 1e-12, worst))
        }
        "theorem1" => {
            let mut worst = 0.0f64;
            for _ in 0..cfg.trials {
                let n = rng.gen_range(2..=16);
                let u = random_orthogonal(n, &mut rng);
                let (y, s) = decompose_orthogonal(&u)?.basis_kernel();
                let mut ysyt = y.matmul(&s)?.matmul(&y.transpose())?;
                ysyt.data_mut().iter_mut().for_each(|x| *x = -*x);
                for i in 0..n {
                    ysyt.set(i, i, ysyt.get(i, i) + 1.0);
                }
                worst = worst.max(ysyt.max_abs_diff(&u));
            }
            Ok(report(name, cfg.trials, 1e-8, worst))
        }
        "theorem2" => {
            let mut worst = 0.0f64;
            for _ in 0..cfg.trials {
                let n = rng.gen_range(2..=16);
                let mut u = random_orthogonal(n, &mut rng);
                if rng.gen_bool(0.5) {
                    // flip one column so both determinant signs are covered
                    for r in 0..n {
                        u.set(r, 0, -u.get(r, 0));
                    }
                }
                let d = decompose_orthogonal(&u)?;
                if d.reflectors.len() > n {
                    worst = f64::INFINITY;
                }
                worst = worst.max(d.reconstruct().max_abs_diff(&u));
            }
            Ok(report(name, cfg.trials, 1e-8, worst))
        }
        "gradcheck" => {
            let mut worst = 0.0f64;
            let mut checks = 0;
            for s in 0..cfg.gradcheck_seeds {
                for t in [0, 1, 3, 5] {
                    let g = adapter_gradcheck(cfg.seed.wrapping_add(s as u64), t)?;
                    worst = worst.max(g.worst_ratio);
                    checks += g.checked;
                }
            }
            Ok(report(name, checks, 1.0, worst))
        }
        "kl-oracle" => {
            let (worst_z, worst_null) = kl_oracle(&mut rng, cfg.kl_posteriors, cfg.kl_samples)?;
            // z-scores are checked against 3; the null gap against 1e-10.
            let observed = (worst_z / 3.0).max(worst_null / 1e-10);
            Ok(report(name, cfg.kl_posteriors * cfg.kl_samples, 1.0, observed))
        }
        other => Err(Error::InvalidConfig(format!(
            "unknown suite `{other}`; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

/// Runs `only` (or all suites) and returns their reports in order.
pub fn run_suites(only: Option<&str>, cfg: &VerifyConfig) -> Result<Vec<SuiteReport>> {
    match only {
        Some(name) => Ok(vec![run_suite(name, cfg)?]),
        None => SUITES.iter().map(|s| run_suite(s, cfg)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOutcome {
    pub checked: usize,
    /// Worst `|fd - analytic| / max(1e-4 * scale, 1e-6)`; at most 1 passes.
    pub worst_ratio: f64,
}

/// Central differences against the analytic gradient of `CE + beta * KL`
/// for a random small adapter.
pub fn adapter_gradcheck(seed: u64, flow_length: usize) -> Result<GradcheckOutcome> {
    let mut rng = keyed_rng(seed, 101, flow_length as u64);
    let dims = AdapterDims {
        embedding_dim: rng.gen_range(2..=6),
        hidden_dim: rng.gen_range(2..=6),
        latent_dim: rng.gen_range(2..=8),
        class_count: rng.gen_range(2..=5),
        flow_length,
        activation: if rng.gen_bool(0.5) {
            ReflectorActivation::Tanh
        } else {
            ReflectorActivation::None
        },
    };
    let model = AdapterModel::init(&dims, &mut rng)?;
    let x = gaussian(dims.embedding_dim, &mut rng);
    let eps = gaussian(dims.latent_dim, &mut rng);
    let label = rng.gen_range(0..dims.class_count);
    let beta = rng.gen_range(0.0..1.0);
    let (_, grads) = adapter_loss_and_grad(&model, &x, label, &eps, beta)?;
    let analytic = grads.to_flat();
    let base = model.to_flat();
    let mut probe = model.clone();
    let mut loss_at = |params: &[f64]| -> Result<f64> {
        probe.load_flat(params)?;
        Ok(adapter_loss_and_grad(&probe, &x, label, &eps, beta)?.0.total)
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + h;
        let up = loss_at(&params)?;
        params[i] = base[i] - h;
        let down = loss_at(&params)?;
        params[i] = base[i];
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(analytic[i].abs());
        worst = worst.max((fd - analytic[i]).abs() / (1e-4 * scale).max(1e-6));
    }
    Ok(GradcheckOutcome {
        checked: base.len(),
        worst_ratio: worst,
    })
}

/// Worst Monte Carlo z-score of the T = 0 flow term against the closed form,
/// and worst `|kl_flow_term|` at the standard-normal posterior for T > 0.
fn kl_oracle(rng: &mut ChaCha8Rng, posteriors: usize, samples: usize) -> Result<(f64, f64)> {
    let mut worst_z = 0.0f64;
    for _ in 0..posteriors {
        let m = rng.gen_range(1..=8);
        let mu = gaussian(m, rng);
        let lv = DenseVector::from_raw((0..m).map(|_| rng.gen_range(-2.0..1.0)).collect());
        let post = GaussianPosterior::new(mu, lv)?;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let s = reparameterize(&post, &gaussian(m, rng))?;
            let k = kl_flow_term(&post, &s, &s.z0);
            sum += k;
            sum_sq += k * k;
        }
        let n = samples as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) * n / (n - 1.0) / n).sqrt();
        worst_z = worst_z.max((mean - kl_analytic_diag(&post)).abs() / se);
    }
    let mut worst_null = 0.0f64;
    for i in 0..posteriors * 20 {
        let m = rng.gen_range(2..=8);
        let hidden = rng.gen_range(1..=6);
        let stack = FlowStack::init(1 + i % 5, hidden, m, ReflectorActivation::None, rng);
        let post = GaussianPosterior::standard(m);
        let s = reparameterize(&post, &gaussian(m, rng))?;
        let (zt, _, _) = flow_forward(&stack, &s.z0, &gaussian(hidden, rng))?;
        worst_null = worst_null.max(kl_flow_term(&post, &s, &zt).abs());
    }
    Ok((worst_z, worst_null))
}

//! Central finite differences against the hand-derived reverse passes.

use hflow::flow::{flow_backward, flow_forward, FlowStack, ReflectorActivation};
use hflow::model::{adapter_loss_and_grad, AdapterDims, AdapterModel};
use hflow::DenseVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const REL: f64 = 1e-4;
const ABS: f64 = 1e-6;

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= (REL * fd.abs().max(an.abs())).max(ABS)
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> DenseVector {
    DenseVector::new((0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Reads or writes flow parameter `i` in declaration order.
fn with_param(stack: &mut FlowStack, i: usize, f: impl FnOnce(&mut f64)) {
    let mut offset = 0;
    let mut f = Some(f);
    stack.visit_mut(&mut |block| {
        if (offset..offset + block.len()).contains(&i) {
            (f.take().unwrap())(&mut block[i - offset]);
        }
        offset += block.len();
    });
}

fn get_param(stack: &FlowStack, i: usize) -> f64 {
    let mut flat = Vec::new();
    stack.visit(&mut |block| flat.extend_from_slice(block));
    flat[i]
}

#[test]
fn flow_gradients_match_finite_differences() {
    for t in [1, 2, 3, 5] {
        for m in [2, 4, 8] {
            for (k, act) in [ReflectorActivation::None, ReflectorActivation::Tanh].into_iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64((t * 100 + m * 10 + k) as u64);
                let hidden = 3;
                let stack = FlowStack::init(t, hidden, m, act, &mut rng);
                let z0 = random_vec(m, &mut rng);
                let h = random_vec(hidden, &mut rng);
                let g = random_vec(m, &mut rng);
                let loss = |s: &FlowStack, z: &DenseVector, h: &DenseVector| {
                    flow_forward(s, z, h).unwrap().0.dot(&g)
                };
                let (_, trace, _) = flow_forward(&stack, &z0, &h).unwrap();
                let grads = flow_backward(&stack, &trace, &g).unwrap();

                for i in 0..m {
                    let mut up = z0.clone();
                    up[i] += STEP;
                    let mut down = z0.clone();
                    down[i] -= STEP;
                    let fd = (loss(&stack, &up, &h) - loss(&stack, &down, &h)) / (2.0 * STEP);
                    assert!(close(fd, grads.grad_z0[i]), "T={t} M={m} dz0[{i}]: {fd} vs {}", grads.grad_z0[i]);
                }
                for i in 0..hidden {
                    let mut up = h.clone();
                    up[i] += STEP;
                    let mut down = h.clone();
                    down[i] -= STEP;
                    let fd = (loss(&stack, &z0, &up) - loss(&stack, &z0, &down)) / (2.0 * STEP);
                    assert!(close(fd, grads.grad_h[i]), "T={t} M={m} dh[{i}]: {fd} vs {}", grads.grad_h[i]);
                }
                for i in 0..stack.param_count() {
                    let mut up = stack.clone();
                    with_param(&mut up, i, |p| *p += STEP);
                    let mut down = stack.clone();
                    with_param(&mut down, i, |p| *p -= STEP);
                    let fd = (loss(&up, &z0, &h) - loss(&down, &z0, &h)) / (2.0 * STEP);
                    let an = get_param(&grads.params, i);
                    assert!(close(fd, an), "T={t} M={m} {act:?} param {i}: {fd} vs {an}");
                }
            }
        }
    }
}

#[test]
fn adapter_gradients_match_finite_differences() {
    for seed in 0..6u64 {
        for t in [0, 1, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + t as u64);
            let dims = AdapterDims {
                embedding_dim: 4,
                hidden_dim: 5,
                latent_dim: 4,
                class_count: 3,
                flow_length: t,
                activation: ReflectorActivation::None,
            };
            let model = AdapterModel::init(&dims, &mut rng).unwrap();
            let x = random_vec(4, &mut rng);
            let eps = random_vec(4, &mut rng);
            let beta = 0.5;
            let (_, grads) = adapter_loss_and_grad(&model, &x, 2, &eps, beta).unwrap();
            let analytic = grads.to_flat();
            let flat = model.to_flat();
            let mut probe = model.clone();
            for i in 0..flat.len() {
                let mut p = flat.clone();
                p[i] += STEP;
                probe.load_flat(&p).unwrap();
                let up = adapter_loss_and_grad(&probe, &x, 2, &eps, beta).unwrap().0.total;
                p[i] -= 2.0 * STEP;
                probe.load_flat(&p).unwrap();
                let down = adapter_loss_and_grad(&probe, &x, 2, &eps, beta).unwrap().0.total;
                let fd = (up - down) / (2.0 * STEP);
                assert!(close(fd, analytic[i]), "seed {seed} T={t} param {i}: {fd} vs {}", analytic[i]);
            }
        }
    }
}

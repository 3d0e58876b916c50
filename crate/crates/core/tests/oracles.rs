use hflow::data::{generate_synthetic, SynthSpec};
use hflow::experiment::in_top_k;
use hflow::linalg::householder_apply;
use hflow::model::{base_forward, train_base, ToyBaseEncoder, TrainConfig};
use hflow::verify::{run_suite, VerifyConfig};
use hflow::{DenseVector, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `z + 2 v (v.z) / |v|^2`: a sign slip that is no longer a reflection.
fn wrong_sign(v: &DenseVector, z: &DenseVector) -> Result<DenseVector> {
    let scale = 2.0 * v.dot(z) / v.dot(v);
    Ok(DenseVector::new(z.as_slice().iter().zip(v.as_slice()).map(|(zi, vi)| zi + scale * vi).collect())
        .unwrap())
}

#[test]
fn verify_catches_a_sign_mutation() {
    let good = VerifyConfig {
        trials: 50,
        ..VerifyConfig::default()
    };
    let bad = VerifyConfig {
        reflect: wrong_sign,
        ..good
    };
    for suite in ["involution", "determinant", "isometry"] {
        assert!(run_suite(suite, &good).unwrap().passed, "{suite} should pass");
        let r = run_suite(suite, &bad).unwrap();
        assert!(!r.passed, "{suite} missed the mutation: {r}");
    }
    // sanity: the canary really differs from the reference
    let v = DenseVector::new(vec![1.0, 2.0]).unwrap();
    let z = DenseVector::new(vec![0.5, -1.0]).unwrap();
    assert_ne!(wrong_sign(&v, &z).unwrap(), householder_apply(&v, &z).unwrap());
}

#[test]
fn base_encoder_separates_held_out_clusters() {
    let ds = generate_synthetic(&SynthSpec {
        class_count: 8,
        dim: 16,
        samples_per_class: 100,
        seed: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..ds.class_count() {
        for (i, &r) in ds.class_records(c).iter().enumerate() {
            let rec = &ds.records()[r];
            if i < 80 { &mut train } else { &mut test }.push((&rec.vector, rec.label));
        }
    }
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        base_batch: 32,
        ..TrainConfig::default()
    };
    let mut enc = ToyBaseEncoder::init(&[16, 32], 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    train_base(&mut enc, &train, &cfg, 40, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let correct = test
        .iter()
        .filter(|(x, y)| in_top_k(&base_forward(&enc, x).unwrap().1, *y, 1))
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc >= 0.95, "held-out accuracy {acc}");
}

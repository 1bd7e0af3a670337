mod common;

use awe::models::{
    ae_loss, batch_total_and_grads, reparameterize, EncDec, Example, ModelKind, Objective,
};
use awe::numerics::{Matrix, ParamCollection};
use common::{random_matrix, random_model, rng, small_config};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn relative_gap(a: &ParamCollection, b: &ParamCollection) -> f64 {
    let mut diff = a.clone();
    let mut neg = b.clone();
    neg.scale(-1.0);
    diff.add_assign(&neg).unwrap();
    diff.global_norm() / a.global_norm().max(1e-300)
}

#[test]
fn padded_batches_match_unbatched_sums() {
    let mut r = rng(11);
    for trial in 0..20 {
        let kind = if trial % 2 == 0 { ModelKind::Ae } else { ModelKind::Cae };
        let model = random_model(small_config(kind, 3, 6, 2, 5), trial);
        let n = r.random_range(1..7);
        let inputs: Vec<Matrix> = (0..n)
            .map(|_| {
                let t = r.random_range(1..10);
                random_matrix(&mut r, t, 3)
            })
            .collect();
        let targets: Vec<Matrix> = if kind == ModelKind::Cae {
            (0..n)
                .map(|_| {
                    let t = r.random_range(1..10);
                    random_matrix(&mut r, t, 3)
                })
                .collect()
        } else {
            inputs.clone()
        };
        let examples: Vec<Example<'_>> = inputs
            .iter()
            .zip(&targets)
            .map(|(input, target)| Example { input, target })
            .collect();

        let (batched, grads) = batch_total_and_grads(&model, &examples, Objective::Reconstruction).unwrap();
        let mut sum = 0.0;
        let mut gsum = model.params.zeros_like();
        for e in &examples {
            let (l, g) = batch_total_and_grads(&model, &[*e], Objective::Reconstruction).unwrap();
            sum += l;
            gsum.add_assign(&g).unwrap();
        }
        assert!((batched - sum).abs() <= 1e-10 * sum.abs(), "trial {trial}: {batched} vs {sum}");
        assert!(relative_gap(&gsum, &grads) < 1e-10, "trial {trial}");
    }
}

#[test]
fn variational_padded_batches_match_unbatched_sums() {
    use awe::models::VaeConfig;
    let mut r = rng(12);
    let model = random_model(small_config(ModelKind::Vae, 3, 6, 2, 5), 3);
    let xs: Vec<Matrix> = [4, 1, 7, 3].iter().map(|&t| random_matrix(&mut r, t, 3)).collect();
    let noise = common::normal_matrix(&mut r, xs.len(), 5);
    let vae = VaeConfig { sigma: 0.3 };
    let examples: Vec<Example<'_>> = xs.iter().map(|x| Example { input: x, target: x }).collect();
    let (batched, grads) =
        batch_total_and_grads(&model, &examples, Objective::Variational { vae, noise: &noise }).unwrap();
    let mut sum = 0.0;
    let mut gsum = model.params.zeros_like();
    for (i, e) in examples.iter().enumerate() {
        let row = Matrix::row_vector(noise.row(i).to_vec());
        let (l, g) =
            batch_total_and_grads(&model, &[*e], Objective::Variational { vae, noise: &row }).unwrap();
        sum += l;
        gsum.add_assign(&g).unwrap();
    }
    assert!((batched - sum).abs() <= 1e-10 * sum.abs());
    assert!(relative_gap(&gsum, &grads) < 1e-10);
}

/// Swaps the two feature dimensions in every parameter that touches them.
fn swap_feature_dims(model: &EncDec) -> EncDec {
    let mut out = model.clone();
    for g in ["z", "r", "h"] {
        let w = out.params.get_mut(&format!("enc.0.w_{g}")).unwrap();
        let (r0, r1) = (w.row(0).to_vec(), w.row(1).to_vec());
        w.row_mut(0).copy_from_slice(&r1);
        w.row_mut(1).copy_from_slice(&r0);
    }
    for name in ["dec.out.w", "dec.out.b"] {
        let m = out.params.get_mut(name).unwrap();
        for r in 0..m.rows() {
            let row = m.row_mut(r);
            row.swap(0, 1);
        }
    }
    out
}

#[test]
fn loss_is_invariant_to_relabelling_feature_dimensions() {
    let mut r = rng(21);
    for seed in 0..10 {
        let model = random_model(small_config(ModelKind::Ae, 2, 5, 2, 3), seed);
        let swapped = swap_feature_dims(&model);
        let t = r.random_range(1..9);
        let x = random_matrix(&mut r, t, 2);
        let mut xs = x.clone();
        for i in 0..t {
            xs.row_mut(i).swap(0, 1);
        }
        let a = ae_loss(&model, &x).unwrap();
        let b = ae_loss(&swapped, &xs).unwrap();
        assert!(a >= 0.0);
        assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn reparameterized_samples_have_the_right_moments() {
    let mut r = rng(31);
    let mu = [0.5, -1.0, 2.0];
    let lv = [0.0, -1.0, 1.5];
    let n = 100_000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let e: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut r)).collect();
        let z = reparameterize(&mu, &lv, &e);
        for i in 0..3 {
            sum[i] += z[i];
            sq[i] += z[i] * z[i];
        }
    }
    for i in 0..3 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        assert!((mean - mu[i]).abs() < 0.01 * mu[i].abs(), "mean {i}: {mean}");
        assert!((var - lv[i].exp()).abs() < 0.02 * lv[i].exp(), "var {i}: {var}");
    }
}

mod common;

use awe::models::{
    batch_loss_and_grads, batch_total_and_grads, kl_diag_gaussian_to_standard, EncDec, Example,
    ModelKind, Objective, VaeConfig,
};
use awe::numerics::{check_gradients, forward_backward, Matrix, ParamCollection};
use common::{normal_matrix, random_matrix, random_model, rng, small_config};
use proptest::prelude::*;

const STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;

fn sequences(seed: u64, lengths: &[usize]) -> Vec<Matrix> {
    let mut r = rng(seed);
    lengths.iter().map(|&t| random_matrix(&mut r, t, 3)).collect()
}

fn check_model(
    kind: ModelKind,
    examples: &[Example<'_>],
    objective: Objective<'_>,
    seed: u64,
) -> f64 {
    let cfg = small_config(kind, 3, 8, 2, 6);
    let model = random_model(cfg.clone(), seed);
    check_gradients(
        |p| {
            let m = EncDec {
                config: cfg.clone(),
                params: p.clone(),
            };
            batch_loss_and_grads(&m, examples, objective)
        },
        &model.params,
        STEP,
    )
    .unwrap()
}

#[test]
fn autoencoder_gradients_match_finite_differences() {
    for seed in 0..3 {
        let xs = sequences(seed, &[5, 3, 6]);
        let ex: Vec<Example<'_>> = xs.iter().map(|x| Example { input: x, target: x }).collect();
        let err = check_model(ModelKind::Ae, &ex, Objective::Reconstruction, seed);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn correspondence_gradients_match_finite_differences() {
    for seed in 0..3 {
        let xs = sequences(seed + 10, &[2, 6, 4, 5]);
        let ex = [
            Example { input: &xs[0], target: &xs[1] },
            Example { input: &xs[1], target: &xs[0] },
            Example { input: &xs[2], target: &xs[3] },
        ];
        let err = check_model(ModelKind::Cae, &ex, Objective::Reconstruction, seed);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn variational_gradients_match_finite_differences() {
    for seed in 0..3 {
        let xs = sequences(seed + 20, &[4, 6]);
        let ex: Vec<Example<'_>> = xs.iter().map(|x| Example { input: x, target: x }).collect();
        let noise = normal_matrix(&mut rng(seed + 30), 2, 6);
        let objective = Objective::Variational {
            vae: VaeConfig { sigma: 0.7 },
            noise: &noise,
        };
        let err = check_model(ModelKind::Vae, &ex, objective, seed);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn kl_gradient_wrt_heads() {
    let mut r = rng(5);
    let mut p = ParamCollection::new();
    p.insert("mu", random_matrix(&mut r, 1, 6)).unwrap();
    p.insert("lv", random_matrix(&mut r, 1, 6)).unwrap();
    let f = |p: &ParamCollection| {
        forward_backward(p, |g| {
            let mu = g.param("mu")?;
            let lv = g.param("lv")?;
            let mu2 = g.mul(mu, mu)?;
            let var = g.exp(lv);
            let a = g.add(mu2, var)?;
            let b = g.sub(a, lv)?;
            let s = g.scale_shift(b, 0.5, -0.5);
            Ok(g.sum(s))
        })
    };
    let (loss, _) = f(&p).unwrap();
    let closed = kl_diag_gaussian_to_standard(p.get("mu").unwrap().data(), p.get("lv").unwrap().data());
    assert!((loss - closed).abs() < 1e-12);
    assert!(check_gradients(f, &p, 1e-5).unwrap() < TOLERANCE);
}

fn relative_gap(a: &ParamCollection, b: &ParamCollection) -> f64 {
    let mut diff = a.clone();
    let mut neg = b.clone();
    neg.scale(-1.0);
    diff.add_assign(&neg).unwrap();
    diff.global_norm() / a.global_norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn summed_gradients_ignore_batch_order(
        lengths in prop::collection::vec(1usize..7, 2..6),
        seed in 0u64..1000,
        rotate in 1usize..5,
    ) {
        let xs = sequences(seed, &lengths);
        let cfg = small_config(ModelKind::Ae, 3, 5, 2, 4);
        let model = random_model(cfg, seed);
        let ex: Vec<Example<'_>> = xs.iter().map(|x| Example { input: x, target: x }).collect();
        let mut permuted = ex.clone();
        permuted.rotate_left(rotate % ex.len());
        permuted.reverse();
        let (la, ga) = batch_total_and_grads(&model, &ex, Objective::Reconstruction).unwrap();
        let (lb, gb) = batch_total_and_grads(&model, &permuted, Objective::Reconstruction).unwrap();
        prop_assert!((la - lb).abs() <= 1e-10 * la.abs());
        prop_assert!(relative_gap(&ga, &gb) < 1e-10);
    }
}

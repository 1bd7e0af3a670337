//! Finite-difference check of the encoder-decoder gradients.
//!
//! cargo run --release --example gradient_check

use awe::models::{batch_loss_and_grads, EncDec, Example, ModelConfig, ModelKind, Objective, VaeConfig};
use awe::numerics::{check_gradients, Matrix};

fn seq(t: usize, d: usize, phase: f64) -> Matrix {
    Matrix::from_vec(t, d, (0..t * d).map(|i| (i as f64 * 0.7 + phase).sin()).collect())
        .expect("shape")
}

fn main() -> awe::Result<()> {
    let xs = [seq(4, 3, 0.0), seq(6, 3, 1.0), seq(3, 3, 2.0)];
    for kind in [ModelKind::Ae, ModelKind::Cae, ModelKind::Vae] {
        let cfg = ModelConfig {
            kind,
            input_dim: 3,
            hidden: 8,
            enc_layers: 2,
            dec_layers: 2,
            embed_dim: 6,
        };
        let model = EncDec::init(cfg.clone(), 3)?;
        let examples: Vec<Example<'_>> = match kind {
            ModelKind::Cae => vec![
                Example { input: &xs[0], target: &xs[1] },
                Example { input: &xs[1], target: &xs[2] },
            ],
            _ => xs.iter().map(|x| Example { input: x, target: x }).collect(),
        };
        let noise = Matrix::from_vec(examples.len(), 6, (0..examples.len() * 6).map(|i| (i as f64).cos()).collect())
            .expect("shape");
        let objective = if kind == ModelKind::Vae {
            Objective::Variational { vae: VaeConfig { sigma: 0.5 }, noise: &noise }
        } else {
            Objective::Reconstruction
        };
        let err = check_gradients(
            |p| {
                let m = EncDec { config: cfg.clone(), params: p.clone() };
                batch_loss_and_grads(&m, &examples, objective)
            },
            &model.params,
            1e-4,
        )?;
        println!("{kind}: {} parameters, worst relative error {err:.2e}", model.params.num_scalars());
    }
    Ok(())
}

//! Autoencoder and variational autoencoder trained on random segments.
//!
//! cargo run --release --example train_autoencoder

use awe::data_io::sample_random_segments;
use awe::evaluation::{same_different_eval, Embedder};
use awe::models::{EncDec, ModelConfig, ModelKind, VaeConfig};
use awe::synth::{generate, SynthConfig};
use awe::training::{train_ae, EarlyStopping, TrainConfig};

fn main() -> awe::Result<()> {
    let corpus = generate(&SynthConfig::default(), 1)?;
    let segments = sample_random_segments(&corpus.train, 600, 10, 40, 1)?;
    println!("{} random training segments", segments.len());

    for (kind, sigma) in [(ModelKind::Ae, 1.0), (ModelKind::Vae, 0.1)] {
        let cfg = ModelConfig {
            kind,
            input_dim: 13,
            hidden: 32,
            enc_layers: 1,
            dec_layers: 1,
            embed_dim: 32,
        };
        let train = TrainConfig {
            max_epochs: 8,
            early_stopping: EarlyStopping::Off,
            vae: VaeConfig { sigma },
            ..TrainConfig::default()
        };
        let mut model = EncDec::init(cfg, 1)?;
        let report = train_ae(&corpus.train, &segments, &mut model, &train, None)?;
        let losses: Vec<String> = report.losses().iter().map(|l| format!("{l:.1}")).collect();
        println!("{kind} losses: {}", losses.join(" "));
        let r = same_different_eval(&corpus.test, &corpus.eval_tokens, &Embedder::Model(&model))?;
        println!("{kind} AP {:.4}", r.ap);
    }
    Ok(())
}

//! Correspondence autoencoder on discovered-style word pairs, with and without
//! autoencoder pretraining, over several seeds with validation-based model
//! selection.
//!
//! cargo run --release --example correspondence_autoencoder

use awe::data_io::EvalToken;
use awe::evaluation::{same_different_eval, Embedder};
use awe::models::{EncDec, ModelConfig, ModelKind};
use awe::synth::{generate, SynthConfig};
use awe::training::{multi_seed_run, train_cae, EarlyStopping, TrainConfig, Validation};

fn main() -> awe::Result<()> {
    let corpus = generate(&SynthConfig::default(), 1)?;
    let val_tokens: Vec<EvalToken> = corpus.train_tokens.iter().step_by(4).cloned().collect();
    let model_cfg = ModelConfig {
        kind: ModelKind::Cae,
        input_dim: 13,
        hidden: 48,
        enc_layers: 1,
        dec_layers: 1,
        embed_dim: 64,
    };
    println!("{} training pairs", corpus.pairs.len());

    let ds = same_different_eval(&corpus.test, &corpus.eval_tokens, &Embedder::Downsample { k: 10 })?;
    println!("downsampling AP {:.4}", ds.ap);

    for pretrain_epochs in [0, 4] {
        let report = multi_seed_run(&[1, 2], |seed| {
            let train = TrainConfig {
                max_epochs: 10,
                pretrain_epochs,
                early_stopping: EarlyStopping::Patience(3),
                seed,
                ..TrainConfig::default()
            };
            let mut model = EncDec::init(model_cfg.clone(), seed)?;
            let val = Validation { archive: &corpus.train, tokens: &val_tokens };
            let report = train_cae(&corpus.train, &corpus.pairs, &mut model, &train, Some(val))?;
            let test = same_different_eval(&corpus.test, &corpus.eval_tokens, &Embedder::Model(&model))?;
            Ok((report, Some(test.ap)))
        })?;
        println!("pretraining epochs {pretrain_epochs}:");
        print!("{}", report.summary_text());
    }
    Ok(())
}

//! Downsampling embeddings on a synthetic corpus.
//!
//! cargo run --release --example downsample_baseline

use awe::baselines::downsample_embed;
use awe::evaluation::{same_different_eval, Embedder};
use awe::numerics::Matrix;
use awe::synth::{generate, SynthConfig};

fn main() -> awe::Result<()> {
    let ramp = Matrix::from_vec(19, 1, (0..19).map(f64::from).collect()).expect("shape");
    println!("ramp of 19 frames -> {:?}", downsample_embed(&ramp, 10));

    let corpus = generate(&SynthConfig::default(), 1)?;
    for k in [5, 10, 20] {
        let r = same_different_eval(&corpus.test, &corpus.eval_tokens, &Embedder::Downsample { k })?;
        println!(
            "k={k:2}: dim {:3}, AP {:.4} (same speaker {:.4}, different speaker {:.4})",
            k * 13,
            r.ap,
            r.ap_same_speaker.unwrap_or(f64::NAN),
            r.ap_different_speaker.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

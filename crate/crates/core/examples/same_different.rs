//! Same-different evaluation: AP from hand-made scores, then the
//! training-free baselines side by side on a synthetic corpus.
//!
//! cargo run --release --example same_different

use awe::baselines::DtwConfig;
use awe::data_io::EvalToken;
use awe::evaluation::{average_precision, same_different_eval, Embedder, ScoredPair};
use awe::synth::{generate, SynthConfig};

fn main() -> awe::Result<()> {
    let pairs: Vec<ScoredPair> = [(0.1, true), (0.2, false), (0.3, true)]
        .iter()
        .enumerate()
        .map(|(i, &(distance, same))| ScoredPair {
            index_a: i,
            index_b: i + 1,
            distance,
            is_same_type: same,
            is_same_speaker: false,
        })
        .collect();
    let curve = average_precision(&pairs)?;
    for p in &curve.points {
        println!("threshold {:.1}: recall {:.2} precision {:.3}", p.threshold, p.recall, p.precision);
    }
    println!("AP {:.4}", curve.ap);

    let corpus = generate(&SynthConfig::default(), 3)?;
    let tokens: Vec<EvalToken> = corpus.eval_tokens.iter().step_by(2).cloned().collect();
    for embedder in [Embedder::Downsample { k: 10 }, Embedder::Dtw(DtwConfig::default())] {
        let r = same_different_eval(&corpus.test, &tokens, &embedder)?;
        println!(
            "{embedder:>14}: AP {:.4} over {} pairs ({} same-type), {:.3}s scoring",
            r.ap, r.pair_count, r.positive_pairs, r.scoring_seconds
        );
    }
    Ok(())
}

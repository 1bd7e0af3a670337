//! DTW alignment costs, and DTW as a same-different scorer.
//!
//! cargo run --release --example dtw_alignment

use awe::baselines::{dtw_cost, DtwConfig, LocalDistance};
use awe::data_io::EvalToken;
use awe::evaluation::{same_different_eval, Embedder};
use awe::numerics::Matrix;
use awe::synth::{generate, SynthConfig};

fn main() -> awe::Result<()> {
    let a = Matrix::from_vec(2, 1, vec![0.0, 2.0]).expect("shape");
    let b = Matrix::from_vec(2, 1, vec![0.0, 1.0]).expect("shape");
    for normalize in [false, true] {
        let cfg = DtwConfig {
            local_distance: LocalDistance::SquaredEuclidean,
            normalize_by_path_length: normalize,
        };
        println!("[0,2] vs [0,1], normalize={normalize}: {}", dtw_cost(&a, &b, &cfg));
    }

    // A stretched copy aligns at zero cost.
    let x = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0]).expect("shape");
    let slow = Matrix::from_vec(5, 2, vec![1.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.0, 1.0, 0.0, 1.0])
        .expect("shape");
    println!("stretched copy: {:.3}", dtw_cost(&x, &slow, &DtwConfig::default()));

    let corpus = generate(&SynthConfig::default(), 1)?;
    let subset: Vec<EvalToken> = corpus.eval_tokens.iter().step_by(4).cloned().collect();
    let r = same_different_eval(&corpus.test, &subset, &Embedder::Dtw(DtwConfig::default()))?;
    println!(
        "DTW on {} tokens ({} pairs): AP {:.4} in {:.2}s",
        r.token_count, r.pair_count, r.ap, r.scoring_seconds
    );
    Ok(())
}

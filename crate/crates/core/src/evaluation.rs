//! Same-different word discrimination.
//!
//! Every unordered pair of evaluation tokens gets a distance; sweeping a
//! threshold over the distances gives a precision-recall curve, and the area
//! under it is the average precision (AP).

use std::fmt;
use std::time::Instant;

use crate::baselines::{downsample_embed, dtw_cost, DtwConfig};
use crate::data_io::{extract_segment, EvalToken, FeatureArchive};
use crate::error::{Error, Result};
use crate::models::{embed_all, EncDec};
use crate::numerics::Matrix;

/// `1 - u·v / (‖u‖‖v‖)`, or 1 when either vector has zero norm.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine distance of vectors with different lengths");
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 2.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPair {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
    pub is_same_type: bool,
    pub is_same_speaker: bool,
}

/// Scores all `n(n-1)/2` unordered token pairs with `distance(i, j)`.
pub fn score_all_pairs<F>(tokens: &[EvalToken], mut distance: F) -> Result<Vec<ScoredPair>>
where
    F: FnMut(usize, usize) -> f64,
{
    let n = tokens.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(i, j);
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("distance between tokens {i} and {j}")));
            }
            out.push(ScoredPair {
                index_a: i,
                index_b: j,
                distance: d,
                is_same_type: tokens[i].word_type == tokens[j].word_type,
                is_same_speaker: tokens[i].speaker == tokens[j].speaker,
            });
        }
    }
    Ok(out)
}

/// Pairs scored by cosine distance between per-token embeddings.
pub fn score_embeddings(tokens: &[EvalToken], embeddings: &[Vec<f64>]) -> Result<Vec<ScoredPair>> {
    if tokens.len() != embeddings.len() {
        return Err(Error::Data(format!(
            "{} tokens but {} embeddings",
            tokens.len(),
            embeddings.len()
        )));
    }
    score_all_pairs(tokens, |i, j| cosine_distance(&embeddings[i], &embeddings[j]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrPoint {
    /// Pairs with distance at or below this value are called "same".
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// One point per distinct distance, in increasing threshold order.
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

/// Area under the precision-recall curve traced by sweeping the threshold
/// over every distinct distance.
///
/// Pairs sharing a distance enter together, so each tie group adds its
/// recall gain times the precision reached once the whole group is in.
/// Without ties this is the mean precision at the ranks of the positive
/// pairs; with every distance equal it is the fraction of positive pairs.
pub fn average_precision(pairs: &[ScoredPair]) -> Result<PrCurve> {
    let positives = pairs.iter().filter(|p| p.is_same_type).count();
    if positives == 0 {
        return Err(Error::Data(
            "average precision is undefined without same-type pairs".into(),
        ));
    }
    let mut order: Vec<&ScoredPair> = pairs.iter().collect();
    order.sort_by(|a, b| a.distance.total_cmp(&b.distance));

    let p_total = positives as f64;
    let mut points = Vec::new();
    let (mut seen, mut hits) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let d = order[i].distance;
        while i < order.len() && order[i].distance == d {
            seen += 1;
            hits += order[i].is_same_type as usize;
            i += 1;
        }
        let recall = hits as f64 / p_total;
        let precision = hits as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: d,
            recall,
            precision,
        });
    }
    Ok(PrCurve { points, ap })
}

/// Which representation drives the distances.
pub enum Embedder<'a> {
    Model(&'a EncDec),
    Downsample { k: usize },
    Dtw(DtwConfig),
}

impl fmt::Display for Embedder<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Embedder::Model(m) => write!(f, "encdec-{}", m.config.kind),
            Embedder::Downsample { k } => write!(f, "downsample-{k}"),
            Embedder::Dtw(_) => f.write_str("dtw"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SameDifferentResult {
    pub ap: f64,
    pub curve: PrCurve,
    pub token_count: usize,
    pub pair_count: usize,
    pub positive_pairs: usize,
    /// AP restricted to pairs from the same speaker, when any are positive.
    pub ap_same_speaker: Option<f64>,
    /// AP restricted to cross-speaker pairs, when any are positive.
    pub ap_different_speaker: Option<f64>,
    pub embed_seconds: f64,
    pub scoring_seconds: f64,
}

fn subset_ap(pairs: &[ScoredPair], same_speaker: bool) -> Option<f64> {
    let subset: Vec<ScoredPair> = pairs
        .iter()
        .filter(|p| p.is_same_speaker == same_speaker)
        .cloned()
        .collect();
    average_precision(&subset).ok().map(|c| c.ap)
}

/// Extracts every token's segment, represents it with `embedder`, scores all
/// pairs, and computes AP plus the speaker breakdown.
pub fn same_different_eval(
    archive: &FeatureArchive,
    tokens: &[EvalToken],
    embedder: &Embedder<'_>,
) -> Result<SameDifferentResult> {
    let segments: Vec<Matrix> = tokens
        .iter()
        .map(|t| extract_segment(archive, &t.segment).map(|s| s.frames))
        .collect::<Result<_>>()?;

    let embed_start = Instant::now();
    let embeddings: Option<Vec<Vec<f64>>> = match embedder {
        Embedder::Model(model) => {
            let refs: Vec<&Matrix> = segments.iter().collect();
            Some(embed_all(model, &refs, 64)?)
        }
        Embedder::Downsample { k } => Some(segments.iter().map(|s| downsample_embed(s, *k)).collect()),
        Embedder::Dtw(_) => None,
    };
    let embed_seconds = embed_start.elapsed().as_secs_f64();

    let score_start = Instant::now();
    let pairs = match (&embeddings, embedder) {
        (Some(e), _) => score_embeddings(tokens, e)?,
        (None, Embedder::Dtw(cfg)) => {
            score_all_pairs(tokens, |i, j| dtw_cost(&segments[i], &segments[j], cfg))?
        }
        (None, _) => unreachable!("only DTW skips embedding"),
    };
    summarize(tokens.len(), pairs, embed_seconds, score_start)
}

/// Same-different evaluation of embeddings computed elsewhere, one per token.
pub fn same_different_from_embeddings(
    tokens: &[EvalToken],
    embeddings: &[Vec<f64>],
) -> Result<SameDifferentResult> {
    let score_start = Instant::now();
    let pairs = score_embeddings(tokens, embeddings)?;
    summarize(tokens.len(), pairs, 0.0, score_start)
}

fn summarize(
    token_count: usize,
    pairs: Vec<ScoredPair>,
    embed_seconds: f64,
    score_start: Instant,
) -> Result<SameDifferentResult> {
    let curve = average_precision(&pairs)?;
    let scoring_seconds = score_start.elapsed().as_secs_f64();
    Ok(SameDifferentResult {
        ap: curve.ap,
        token_count,
        pair_count: pairs.len(),
        positive_pairs: pairs.iter().filter(|p| p.is_same_type).count(),
        ap_same_speaker: subset_ap(&pairs, true),
        ap_different_speaker: subset_ap(&pairs, false),
        curve,
        embed_seconds,
        scoring_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::SegmentRef;

    fn pairs_from(labels: &[(f64, bool)]) -> Vec<ScoredPair> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &(d, same))| ScoredPair {
                index_a: i,
                index_b: i + 1,
                distance: d,
                is_same_type: same,
                is_same_speaker: false,
            })
            .collect()
    }

    fn token(word: &str, speaker: &str) -> EvalToken {
        EvalToken {
            segment: SegmentRef::new("u", 0, 1),
            word_type: word.into(),
            speaker: speaker.into(),
        }
    }

    #[test]
    fn cosine_cases() {
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]), 1.0);
        let d = cosine_distance(&[1.0, 0.0], &[1.0, 1.0]);
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((d - 0.29289).abs() < 1e-5);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn pair_counts_and_labels() {
        let toks = vec![token("a", "s1"), token("a", "s2")];
        let p = score_all_pairs(&toks, |_, _| 0.3).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p[0].is_same_type);
        assert!(!p[0].is_same_speaker);
        let toks = vec![token("a", "s"), token("b", "s"), token("a", "s"), token("c", "s")];
        assert_eq!(score_all_pairs(&toks, |_, _| 0.0).unwrap().len(), 6);
    }

    #[test]
    fn ap_hand_cases() {
        let perfect = pairs_from(&[(0.1, true), (0.2, true), (0.3, false), (0.4, false)]);
        assert_eq!(average_precision(&perfect).unwrap().ap, 1.0);
        let mixed = pairs_from(&[(0.1, true), (0.2, false), (0.3, true)]);
        let ap = average_precision(&mixed).unwrap().ap;
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((ap - 0.8333).abs() < 1e-4);
        assert!(average_precision(&pairs_from(&[(0.1, false)])).is_err());
    }

    #[test]
    fn complete_ties_give_positive_fraction() {
        let tied = pairs_from(&[(0.5, false), (0.5, true), (0.5, false), (0.5, false)]);
        assert_eq!(average_precision(&tied).unwrap().ap, 0.25);
    }

    #[test]
    fn curve_recall_is_nondecreasing() {
        let p = pairs_from(&[(0.4, true), (0.1, false), (0.3, true), (0.1, true), (0.9, false)]);
        let c = average_precision(&p).unwrap();
        assert!(c.points.windows(2).all(|w| w[0].recall <= w[1].recall));
        assert_eq!(c.points.last().unwrap().recall, 1.0);
        assert!(c.ap > 0.0 && c.ap <= 1.0);
    }
}

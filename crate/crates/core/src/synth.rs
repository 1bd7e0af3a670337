//! Synthetic word corpus with known word types and speakers.
//!
//! Word types are smooth trajectories through a small shared inventory of
//! "phone" targets in feature space, so different words share material.
//! Each token is its word's template under a random monotone time warp,
//! passed through its speaker's per-dimension affine channel, plus frame
//! noise. Tokens are concatenated into utterances; a training split supplies
//! ground-truth same-type pairs and a test split the evaluation tokens.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_io::{EvalToken, FeatureArchive, FeatureSequence, PairEntry, SegmentRef};
use crate::error::Result;
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub vocab: usize,
    /// Test-split tokens per word type.
    pub tokens_per_type: usize,
    /// Training-split tokens per word type.
    pub train_tokens_per_type: usize,
    pub speakers: usize,
    pub dim: usize,
    /// Size of the shared phone inventory.
    pub phones: usize,
    /// Spread of phone targets around the shared mean frame.
    pub phone_sd: f64,
    /// Spread of the shared mean frame common to every word.
    pub mean_sd: f64,
    pub min_phones_per_word: usize,
    pub max_phones_per_word: usize,
    pub frames_per_phone: usize,
    pub min_length_factor: f64,
    pub max_length_factor: f64,
    pub min_gain: f64,
    pub max_gain: f64,
    pub bias_sd: f64,
    pub noise_sd: f64,
    pub words_per_utterance: usize,
    pub pairs_per_type: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab: 20,
            tokens_per_type: 40,
            train_tokens_per_type: 40,
            speakers: 5,
            dim: 13,
            phones: 10,
            phone_sd: 0.2,
            mean_sd: 1.0,
            min_phones_per_word: 3,
            max_phones_per_word: 5,
            frames_per_phone: 5,
            min_length_factor: 0.7,
            max_length_factor: 1.4,
            min_gain: 0.8,
            max_gain: 1.2,
            bias_sd: 0.1,
            noise_sd: 0.05,
            words_per_utterance: 5,
            pairs_per_type: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub train: FeatureArchive,
    pub test: FeatureArchive,
    /// Same-type pairs drawn from the training split.
    pub pairs: Vec<PairEntry>,
    /// Every training token, labelled (useful for validation or oracles).
    pub train_tokens: Vec<EvalToken>,
    pub eval_tokens: Vec<EvalToken>,
}

struct Speaker {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

fn word_name(i: usize) -> String {
    format!("w{i:03}")
}

fn speaker_name(i: usize) -> String {
    format!("s{i:02}")
}

/// Piecewise-linear path through phone targets with a short plateau on each.
fn make_template(phone_seq: &[usize], phones: &[Vec<f64>], frames_per_phone: usize) -> Matrix {
    let dim = phones[0].len();
    let len = phone_seq.len() * frames_per_phone;
    let mut m = Matrix::zeros(len, dim);
    for t in 0..len {
        // Position in phone units, centred on each phone's span.
        let pos = (t as f64 + 0.5) / frames_per_phone as f64 - 0.5;
        let lo = pos.floor().max(0.0) as usize;
        let lo = lo.min(phone_seq.len() - 1);
        let hi = (lo + 1).min(phone_seq.len() - 1);
        let frac = (pos - lo as f64).clamp(0.0, 1.0);
        // Smoothstep keeps transitions gradual.
        let s = frac * frac * (3.0 - 2.0 * frac);
        let (a, b) = (&phones[phone_seq[lo]], &phones[phone_seq[hi]]);
        for d in 0..dim {
            m.set(t, d, a[d] + s * (b[d] - a[d]));
        }
    }
    m
}

/// Resamples `template` to a random length along a random monotone warp.
fn warp(template: &Matrix, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Matrix {
    let (len, dim) = template.shape();
    let factor = rng.random_range(cfg.min_length_factor..=cfg.max_length_factor);
    let out_len = ((len as f64 * factor).round() as usize).max(2);
    // Monotone map [0,1] -> [0,1] through 4 knots with random positive increments.
    let knots = 4;
    let mut cum = vec![0.0];
    for _ in 0..knots {
        let inc: f64 = rng.random_range(0.5..1.5);
        cum.push(cum.last().unwrap() + inc);
    }
    let total = *cum.last().unwrap();
    cum.iter_mut().for_each(|c| *c /= total);
    let mut out = Matrix::zeros(out_len, dim);
    for t in 0..out_len {
        let u = t as f64 / (out_len - 1) as f64;
        let seg = ((u * knots as f64).floor() as usize).min(knots - 1);
        let local = u * knots as f64 - seg as f64;
        let w = cum[seg] + local * (cum[seg + 1] - cum[seg]);
        let p = w * (len - 1) as f64;
        let lo = (p.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        let frac = p - lo as f64;
        for d in 0..dim {
            let (a, b) = (template.get(lo, d), template.get(hi, d));
            out.set(t, d, a + frac * (b - a));
        }
    }
    out
}

struct Token {
    word: usize,
    speaker: usize,
    frames: Matrix,
}

fn render_split(
    prefix: &str,
    per_type: usize,
    templates: &[Matrix],
    speakers: &[Speaker],
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(FeatureArchive, Vec<EvalToken>)> {
    let noise = Normal::new(0.0, cfg.noise_sd).expect("valid noise sd");
    let mut tokens = Vec::with_capacity(templates.len() * per_type);
    for (w, tpl) in templates.iter().enumerate() {
        for i in 0..per_type {
            let speaker = i % speakers.len();
            let sp = &speakers[speaker];
            let mut frames = warp(tpl, cfg, rng);
            for t in 0..frames.rows() {
                for d in 0..cfg.dim {
                    let v = sp.gain[d] * frames.get(t, d) + sp.bias[d] + noise.sample(rng);
                    frames.set(t, d, v);
                }
            }
            tokens.push(Token {
                word: w,
                speaker,
                frames,
            });
        }
    }
    // Group by speaker, shuffle, and pack into utterances.
    let mut archive = FeatureArchive::new();
    let mut labels = Vec::new();
    let mut utt_index = 0;
    for s in 0..speakers.len() {
        let mut mine: Vec<&Token> = tokens.iter().filter(|t| t.speaker == s).collect();
        rand::seq::SliceRandom::shuffle(mine.as_mut_slice(), rng);
        for chunk in mine.chunks(cfg.words_per_utterance.max(1)) {
            let id = format!("{prefix}_{}_{utt_index:04}", speaker_name(s));
            utt_index += 1;
            let total: usize = chunk.iter().map(|t| t.frames.rows()).sum();
            let mut m = Matrix::zeros(total, cfg.dim);
            let mut off = 0;
            for tok in chunk {
                let n = tok.frames.rows();
                for t in 0..n {
                    m.row_mut(off + t).copy_from_slice(tok.frames.row(t));
                }
                labels.push(EvalToken {
                    segment: SegmentRef::new(id.clone(), off, off + n),
                    word_type: word_name(tok.word),
                    speaker: speaker_name(s),
                });
                off += n;
            }
            archive.insert(FeatureSequence::new(id, m))?;
        }
    }
    Ok((archive, labels))
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mean: Vec<f64> = (0..cfg.dim).map(|_| cfg.mean_sd * unit.sample(&mut rng)).collect();
    let phones: Vec<Vec<f64>> = (0..cfg.phones.max(1))
        .map(|_| {
            mean.iter()
                .map(|m| m + cfg.phone_sd * unit.sample(&mut rng))
                .collect()
        })
        .collect();
    let phone_ids: Vec<usize> = (0..phones.len()).collect();
    let templates: Vec<Matrix> = (0..cfg.vocab)
        .map(|_| {
            let n = rng.random_range(cfg.min_phones_per_word..=cfg.max_phones_per_word);
            let mut seq: Vec<usize> = Vec::with_capacity(n);
            while seq.len() < n {
                let p = *phone_ids.choose(&mut rng).expect("nonempty inventory");
                if seq.last() != Some(&p) {
                    seq.push(p);
                }
            }
            make_template(&seq, &phones, cfg.frames_per_phone.max(1))
        })
        .collect();
    let bias = Normal::new(0.0, cfg.bias_sd).expect("valid bias sd");
    let speakers: Vec<Speaker> = (0..cfg.speakers.max(1))
        .map(|_| Speaker {
            gain: (0..cfg.dim)
                .map(|_| rng.random_range(cfg.min_gain..=cfg.max_gain))
                .collect(),
            bias: (0..cfg.dim).map(|_| bias.sample(&mut rng)).collect(),
        })
        .collect();

    let (train, train_tokens) = render_split(
        "train",
        cfg.train_tokens_per_type,
        &templates,
        &speakers,
        cfg,
        &mut rng,
    )?;
    let (test, eval_tokens) =
        render_split("test", cfg.tokens_per_type, &templates, &speakers, cfg, &mut rng)?;

    let mut pairs = Vec::new();
    for w in 0..cfg.vocab {
        let name = word_name(w);
        let same: Vec<&EvalToken> = train_tokens.iter().filter(|t| t.word_type == name).collect();
        if same.len() < 2 {
            continue;
        }
        for _ in 0..cfg.pairs_per_type {
            let i = rng.random_range(0..same.len());
            let mut j = rng.random_range(0..same.len() - 1);
            if j >= i {
                j += 1;
            }
            pairs.push(PairEntry {
                a: same[i].segment.clone(),
                b: same[j].segment.clone(),
            });
        }
    }

    Ok(SynthCorpus {
        train,
        test,
        pairs,
        train_tokens,
        eval_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{encode_feature_archive, validate_refs};

    #[test]
    fn counts_and_labels() {
        let cfg = SynthConfig::default();
        let c = generate(&cfg, 3).unwrap();
        assert_eq!(c.eval_tokens.len(), 800);
        assert_eq!(c.train_tokens.len(), 800);
        assert_eq!(c.pairs.len(), 20 * 30);
        validate_refs(&c.test, c.eval_tokens.iter().map(|t| &t.segment)).unwrap();
        validate_refs(&c.train, c.pairs.iter().flat_map(|p| [&p.a, &p.b])).unwrap();
        let label = |s: &SegmentRef| {
            c.train_tokens
                .iter()
                .find(|t| &t.segment == s)
                .unwrap()
                .word_type
                .clone()
        };
        for p in &c.pairs {
            assert_ne!(p.a, p.b);
            assert_eq!(label(&p.a), label(&p.b));
        }
        let speakers: std::collections::HashSet<_> =
            c.eval_tokens.iter().map(|t| t.speaker.clone()).collect();
        assert_eq!(speakers.len(), 5);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = SynthConfig {
            vocab: 4,
            tokens_per_type: 5,
            train_tokens_per_type: 5,
            ..SynthConfig::default()
        };
        let a = generate(&cfg, 11).unwrap();
        let b = generate(&cfg, 11).unwrap();
        let bytes = |arch: &FeatureArchive| {
            encode_feature_archive(&arch.iter().cloned().collect::<Vec<_>>()).unwrap()
        };
        assert_eq!(bytes(&a.train), bytes(&b.train));
        assert_eq!(bytes(&a.test), bytes(&b.test));
        assert_eq!(a.pairs, b.pairs);
        assert_ne!(bytes(&a.test), bytes(&generate(&cfg, 12).unwrap().test));
    }

    #[test]
    fn token_lengths_follow_warp_range() {
        let cfg = SynthConfig::default();
        let c = generate(&cfg, 5).unwrap();
        let lo = (3.0 * 5.0 * 0.7f64).round() as usize;
        let hi = (5.0 * 5.0 * 1.4f64).round() as usize;
        assert!(c
            .eval_tokens
            .iter()
            .all(|t| t.segment.len() >= lo && t.segment.len() <= hi));
    }
}

//! Training-free baselines: downsampling embeddings and DTW alignment cost.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Concatenates `k` frames sampled at equally spaced positions
/// `p_i = i (T-1) / (k-1)`, linearly interpolating between neighbours.
pub fn downsample_embed(x: &Matrix, k: usize) -> Vec<f64> {
    let (t, d) = x.shape();
    assert!(t >= 1 && k >= 1, "downsampling needs at least one frame and one slot");
    let mut out = Vec::with_capacity(k * d);
    for i in 0..k {
        let p = if t == 1 || k == 1 {
            0.0
        } else {
            i as f64 * (t - 1) as f64 / (k - 1) as f64
        };
        let lo = (p.floor() as usize).min(t - 1);
        let hi = (lo + 1).min(t - 1);
        let frac = p - lo as f64;
        if frac == 0.0 || lo == hi {
            out.extend_from_slice(x.row(lo));
        } else {
            out.extend(
                x.row(lo)
                    .iter()
                    .zip(x.row(hi))
                    .map(|(a, b)| a + frac * (b - a)),
            );
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LocalDistance {
    /// `1 - cos(a, b)`; a zero-norm frame gives distance 1.
    #[default]
    Cosine,
    Euclidean,
    SquaredEuclidean,
}

impl FromStr for LocalDistance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "euclidean" => Ok(Self::Euclidean),
            "sqeuclidean" => Ok(Self::SquaredEuclidean),
            _ => Err(Error::Config(format!(
                "unknown local distance '{s}' (cosine|euclidean|sqeuclidean)"
            ))),
        }
    }
}

impl LocalDistance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            LocalDistance::Cosine => crate::evaluation::cosine_distance(a, b),
            LocalDistance::Euclidean => LocalDistance::SquaredEuclidean.eval(a, b).sqrt(),
            LocalDistance::SquaredEuclidean => {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
            }
        }
    }
}

/// Symmetric-step DTW (diagonal, horizontal, vertical moves).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtwConfig {
    pub local_distance: LocalDistance,
    /// Divide the accumulated cost by the number of cells on the optimal path.
    pub normalize_by_path_length: bool,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            local_distance: LocalDistance::Cosine,
            normalize_by_path_length: true,
        }
    }
}

/// Accumulated cost of the best monotone alignment of `a` and `b`.
///
/// `D(i,j) = d(i,j) + min(D(i-1,j-1), D(i-1,j), D(i,j-1))`. When several
/// predecessors tie on cost the shorter path wins, so the normalized score
/// uses the shortest of the cost-optimal paths.
pub fn dtw_cost(a: &Matrix, b: &Matrix, cfg: &DtwConfig) -> f64 {
    let (n, m) = (a.rows(), b.rows());
    assert!(n >= 1 && m >= 1, "DTW needs nonempty sequences");
    assert_eq!(a.cols(), b.cols(), "DTW operands differ in dimension");
    let mut cost = vec![f64::INFINITY; m];
    let mut len = vec![0usize; m];
    let mut prev_cost = vec![f64::INFINITY; m];
    let mut prev_len = vec![0usize; m];
    for i in 0..n {
        std::mem::swap(&mut cost, &mut prev_cost);
        std::mem::swap(&mut len, &mut prev_len);
        for j in 0..m {
            let d = cfg.local_distance.eval(a.row(i), b.row(j));
            let (best, best_len) = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, usize::MAX);
                let mut consider = |c: f64, l: usize| {
                    if c < best.0 || (c == best.0 && l < best.1) {
                        best = (c, l);
                    }
                };
                if i > 0 && j > 0 {
                    consider(prev_cost[j - 1], prev_len[j - 1]);
                }
                if i > 0 {
                    consider(prev_cost[j], prev_len[j]);
                }
                if j > 0 {
                    consider(cost[j - 1], len[j - 1]);
                }
                best
            };
            cost[j] = d + best;
            len[j] = best_len + 1;
        }
    }
    let total = cost[m - 1];
    if cfg.normalize_by_path_length {
        total / len[m - 1] as f64
    } else {
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn ten_frames_are_copied() {
        let x = Matrix::from_vec(10, 2, (0..20).map(|v| v as f64 * 0.5).collect()).unwrap();
        assert_eq!(downsample_embed(&x, 10), x.data().to_vec());
    }

    #[test]
    fn ramp_of_nineteen() {
        let x = col(&(0..19).map(|v| v as f64).collect::<Vec<_>>());
        let expect: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        assert_eq!(downsample_embed(&x, 10), expect);
    }

    #[test]
    fn single_frame_is_repeated() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let e = downsample_embed(&x, 10);
        assert_eq!(e.len(), 30);
        for c in e.chunks(3) {
            assert_eq!(c, &[1.0, -2.0, 3.0]);
        }
    }

    #[test]
    fn interpolates_between_frames() {
        let x = col(&[0.0, 10.0, 20.0, 30.0]);
        // Positions 0, 1/3, 2/3, ... ; slot 1 sits a third of the way to frame 1.
        let e = downsample_embed(&x, 10);
        assert!((e[1] - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(e[9], 30.0);
    }

    #[test]
    fn frame_repetition_invariance() {
        // T=10 → T=19 by inserting midpoints: sampling positions align exactly.
        let base: Vec<f64> = (0..10).map(|v| (v * v) as f64).collect();
        let mut up = Vec::new();
        for i in 0..10 {
            up.push(base[i]);
            if i < 9 {
                up.push(0.5 * (base[i] + base[i + 1]));
            }
        }
        assert_eq!(downsample_embed(&col(&base), 10), downsample_embed(&col(&up), 10));
    }

    #[test]
    fn dtw_hand_table() {
        let a = col(&[0.0, 2.0]);
        let b = col(&[0.0, 1.0]);
        let raw = DtwConfig {
            local_distance: LocalDistance::SquaredEuclidean,
            normalize_by_path_length: false,
        };
        assert_eq!(dtw_cost(&a, &b, &raw), 1.0);
        let norm = DtwConfig {
            normalize_by_path_length: true,
            ..raw
        };
        assert_eq!(dtw_cost(&a, &b, &norm), 0.5);
    }

    #[test]
    fn dtw_identity_and_symmetry() {
        let a = Matrix::from_rows(&[vec![0.1, 0.4], vec![-1.0, 0.3], vec![0.5, 0.5]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.3, 0.4], vec![-0.2, 0.9]]).unwrap();
        for ld in [LocalDistance::Euclidean, LocalDistance::Cosine] {
            for normalize in [false, true] {
                let cfg = DtwConfig {
                    local_distance: ld,
                    normalize_by_path_length: normalize,
                };
                assert!(dtw_cost(&a, &a, &cfg).abs() < 1e-12);
                assert!((dtw_cost(&a, &b, &cfg) - dtw_cost(&b, &a, &cfg)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cosine_zero_frame_costs_one() {
        let a = Matrix::zeros(1, 2);
        let b = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let cfg = DtwConfig::default();
        assert_eq!(dtw_cost(&a, &b, &cfg), 1.0);
    }
}

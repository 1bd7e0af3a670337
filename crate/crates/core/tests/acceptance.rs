//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs under `cargo test`; the synthetic training comparison dominates the
//! runtime (a few minutes on one core).

mod common;

use std::time::Instant;

use awe::baselines::{downsample_embed, dtw_cost, DtwConfig, LocalDistance};
use awe::config::Config;
use awe::data_io::{sample_random_segments, EvalToken, SegmentRef};
use awe::evaluation::{
    average_precision, cosine_distance, same_different_eval, score_all_pairs, Embedder, ScoredPair,
};
use awe::models::{
    ae_loss, batch_loss_and_grads, batch_total_and_grads, cae_loss, kl_diag_gaussian_to_standard,
    EncDec, Example, ModelConfig, ModelKind, Objective, VaeConfig,
};
use awe::numerics::{check_gradients, Matrix, ParamCollection};
use awe::synth::{generate, SynthConfig};
use awe::training::{multi_seed_run, train_ae, train_cae, EarlyStopping, RunReport, TrainConfig};
use common::{normal_matrix, random_matrix, random_model, rng, small_config};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// 1 -------------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let xs: Vec<Matrix> = [6, 4, 5, 2].iter().map(|&t| random_matrix(&mut r, t, 3)).collect();
    let noise = normal_matrix(&mut r, 2, 6);
    let mut worst = Vec::new();
    for kind in [ModelKind::Ae, ModelKind::Vae, ModelKind::Cae] {
        let cfg = small_config(kind, 3, 8, 2, 6);
        let model = random_model(cfg.clone(), 7);
        let examples: Vec<Example<'_>> = match kind {
            ModelKind::Cae => vec![
                Example { input: &xs[0], target: &xs[1] },
                Example { input: &xs[2], target: &xs[3] },
            ],
            _ => xs[..2].iter().map(|x| Example { input: x, target: x }).collect(),
        };
        let objective = match kind {
            ModelKind::Vae => Objective::Variational {
                vae: VaeConfig { sigma: 0.7 },
                noise: &noise,
            },
            _ => Objective::Reconstruction,
        };
        let err = check_gradients(
            |p| {
                let m = EncDec { config: cfg.clone(), params: p.clone() };
                batch_loss_and_grads(&m, &examples, objective)
            },
            &model.params,
            1e-4,
        )
        .unwrap();
        worst.push((kind, err));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|(_, e)| *e < 1e-4) && secs < 30.0;
    let detail = worst
        .iter()
        .map(|(k, e)| format!("{k} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("max relative error {detail} (< 1e-4), {secs:.1}s"))
}

// 2 -------------------------------------------------------------------------

/// `E_q[log q(z) - log p(z)]` from `n` samples of `q = N(mu, exp(lv))`.
fn kl_monte_carlo(mu: &[f64], lv: &[f64], n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut total = 0.0;
    for _ in 0..n {
        let mut log_ratio = 0.0;
        for (m, l) in mu.iter().zip(lv) {
            let e: f64 = StandardNormal.sample(rng);
            let z = m + (0.5 * l).exp() * e;
            log_ratio += -0.5 * l - 0.5 * e * e + 0.5 * z * z;
        }
        total += log_ratio;
    }
    total / n as f64
}

fn kl_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(202);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dim = r.random_range(2..6);
        let mu: Vec<f64> = (0..dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let closed = kl_diag_gaussian_to_standard(&mu, &lv);
        let mc = kl_monte_carlo(&mu, &lv, 1_000_000, &mut r);
        worst = worst.max((closed - mc).abs() / closed);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 0.01 && secs < 30.0,
        format!("worst relative gap {:.3}% over 20 draws (< 1%), {secs:.1}s", 100.0 * worst),
    )
}

// 3 -------------------------------------------------------------------------

/// Every monotone path, keeping the lowest cost and, among equal costs, the
/// fewest cells.
fn dtw_brute_force(a: &Matrix, b: &Matrix, cfg: &DtwConfig) -> f64 {
    fn walk(
        i: usize,
        j: usize,
        cost: f64,
        len: usize,
        local: &[Vec<f64>],
        best: &mut (f64, usize),
    ) {
        let cost = cost + local[i][j];
        let len = len + 1;
        let (n, m) = (local.len(), local[0].len());
        if i == n - 1 && j == m - 1 {
            if cost < best.0 || (cost == best.0 && len < best.1) {
                *best = (cost, len);
            }
            return;
        }
        if i + 1 < n {
            walk(i + 1, j, cost, len, local, best);
        }
        if j + 1 < m {
            walk(i, j + 1, cost, len, local, best);
        }
        if i + 1 < n && j + 1 < m {
            walk(i + 1, j + 1, cost, len, local, best);
        }
    }
    let local: Vec<Vec<f64>> = (0..a.rows())
        .map(|i| {
            (0..b.rows())
                .map(|j| cfg.local_distance.eval(a.row(i), b.row(j)))
                .collect()
        })
        .collect();
    let mut best = (f64::INFINITY, usize::MAX);
    walk(0, 0, 0.0, 0, &local, &mut best);
    if cfg.normalize_by_path_length {
        best.0 / best.1 as f64
    } else {
        best.0
    }
}

fn dtw_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(303);
    let mut worst = 0.0f64;
    let mut count = 0;
    for instance in 0..200 {
        let (ta, tb) = (r.random_range(1..=6), r.random_range(1..=6));
        // Half the instances use small integer frames so equal-cost paths occur.
        let mut frames = |t: usize| {
            if instance % 2 == 0 {
                random_matrix(&mut r, t, 3)
            } else {
                Matrix::from_vec(t, 2, (0..2 * t).map(|_| r.random_range(0..3) as f64).collect())
                    .unwrap()
            }
        };
        let a = frames(ta);
        let b = frames(tb);
        for ld in [LocalDistance::Euclidean, LocalDistance::Cosine] {
            for normalize in [false, true] {
                let cfg = DtwConfig {
                    local_distance: ld,
                    normalize_by_path_length: normalize,
                };
                worst = worst.max((dtw_cost(&a, &b, &cfg) - dtw_brute_force(&a, &b, &cfg)).abs());
                count += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 10.0,
        format!("{count} comparisons, max |difference| {worst:.1e} (<= 1e-9), {secs:.2}s"),
    )
}

// 4 -------------------------------------------------------------------------

/// Precision and recall recounted from scratch at every distinct threshold.
fn ap_brute_force(pairs: &[ScoredPair]) -> f64 {
    let mut thresholds: Vec<f64> = pairs.iter().map(|p| p.distance).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let positives = pairs.iter().filter(|p| p.is_same_type).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for th in thresholds {
        let called: Vec<&ScoredPair> = pairs.iter().filter(|p| p.distance <= th).collect();
        let hits = called.iter().filter(|p| p.is_same_type).count() as f64;
        let recall = hits / positives;
        area += (recall - prev_recall) * hits / called.len() as f64;
        prev_recall = recall;
    }
    area
}

fn ap_oracle() -> Outcome {
    let mut r = rng(404);
    let mut worst = 0.0f64;
    for instance in 0..200 {
        let n = r.random_range(1..=30);
        let mut pairs: Vec<ScoredPair> = (0..n)
            .map(|i| ScoredPair {
                index_a: i,
                index_b: i + 1,
                distance: if instance % 2 == 0 {
                    r.random_range(0.0..1.0)
                } else {
                    r.random_range(0..5) as f64 / 4.0
                },
                is_same_type: r.random_bool(0.4),
                is_same_speaker: false,
            })
            .collect();
        pairs[0].is_same_type = true;
        let ap = average_precision(&pairs).unwrap().ap;
        worst = worst.max((ap - ap_brute_force(&pairs)).abs());
    }
    let hand: Vec<ScoredPair> = [(0.1, true), (0.2, false), (0.3, true)]
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
    let hand_ap = average_precision(&hand).unwrap().ap;
    outcome(
        worst <= 1e-10 && (hand_ap - 0.8333).abs() < 5e-5,
        format!("200 instances, max |difference| {worst:.1e} (<= 1e-10); [+,-,+] -> {hand_ap:.4}"),
    )
}

// 5 -------------------------------------------------------------------------

fn reduction_identity() -> Outcome {
    let mut r = rng(505);
    let mut mismatches = 0;
    for case in 0..100 {
        let dim = r.random_range(1..5);
        let cfg = small_config(
            ModelKind::Cae,
            dim,
            r.random_range(1..9),
            r.random_range(1..4),
            r.random_range(1..7),
        );
        let model = random_model(cfg, case);
        let t = r.random_range(1..12);
        let x = random_matrix(&mut r, t, dim);
        if cae_loss(&model, &x, &x).unwrap() != ae_loss(&model, &x).unwrap() {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches}/100 cases differ (exact equality required)"))
}

// 6 -------------------------------------------------------------------------

fn relative_gap(a: &ParamCollection, b: &ParamCollection) -> f64 {
    let mut diff = a.clone();
    let mut neg = b.clone();
    neg.scale(-1.0);
    diff.add_assign(&neg).unwrap();
    diff.global_norm() / a.global_norm().max(1e-300)
}

fn objective(kind: ModelKind, noise: &Matrix) -> Objective<'_> {
    match kind {
        ModelKind::Vae => Objective::Variational {
            vae: VaeConfig { sigma: 0.5 },
            noise,
        },
        _ => Objective::Reconstruction,
    }
}

fn masked_batch_equivalence() -> Outcome {
    let mut r = rng(606);
    let mut worst_loss = 0.0f64;
    let mut worst_grad = 0.0f64;
    for trial in 0..30 {
        let kind = [ModelKind::Ae, ModelKind::Cae, ModelKind::Vae][trial % 3];
        let model = random_model(small_config(kind, 3, 6, 2, 4), trial as u64);
        let n = r.random_range(1..8);
        let mut len = || r.random_range(1..12);
        let lens: Vec<(usize, usize)> = (0..n).map(|_| (len(), len())).collect();
        let inputs: Vec<Matrix> = lens.iter().map(|&(a, _)| random_matrix(&mut r, a, 3)).collect();
        let targets: Vec<Matrix> = if kind == ModelKind::Cae {
            lens.iter().map(|&(_, b)| random_matrix(&mut r, b, 3)).collect()
        } else {
            inputs.clone()
        };
        let noise = normal_matrix(&mut r, n, 4);
        let examples: Vec<Example<'_>> = inputs
            .iter()
            .zip(&targets)
            .map(|(input, target)| Example { input, target })
            .collect();
        let (batched, grads) = batch_total_and_grads(&model, &examples, objective(kind, &noise)).unwrap();
        let mut sum = 0.0;
        let mut gsum = model.params.zeros_like();
        for (i, e) in examples.iter().enumerate() {
            let row = Matrix::row_vector(noise.row(i).to_vec());
            let (l, g) = batch_total_and_grads(&model, &[*e], objective(kind, &row)).unwrap();
            sum += l;
            gsum.add_assign(&g).unwrap();
        }
        worst_loss = worst_loss.max((batched - sum).abs() / sum.abs());
        worst_grad = worst_grad.max(relative_gap(&gsum, &grads));
    }
    outcome(
        worst_loss <= 1e-10 && worst_grad <= 1e-10,
        format!("30 random batches, relative loss gap {worst_loss:.1e}, gradient gap {worst_grad:.1e} (<= 1e-10)"),
    )
}

// 7 -------------------------------------------------------------------------

fn downsampling_identity() -> Outcome {
    let mut r = rng(707);
    let x = random_matrix(&mut r, 10, 13);
    let copy = downsample_embed(&x, 10) == x.data();
    let ramp = Matrix::from_vec(19, 1, (0..19).map(f64::from).collect()).unwrap();
    let got = downsample_embed(&ramp, 10);
    let expect: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
    outcome(
        copy && got == expect,
        format!("T=10 copied exactly: {copy}; ramp of 19 -> {got:?}"),
    )
}

// 8 -------------------------------------------------------------------------

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn synthetic_model(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        input_dim: 13,
        hidden: 64,
        enc_layers: 1,
        dec_layers: 1,
        embed_dim: 130,
    }
}

fn fixed_budget(max_epochs: usize, pretrain_epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs,
        pretrain_epochs,
        early_stopping: EarlyStopping::Off,
        seed,
        ..TrainConfig::default()
    }
}

fn fmt_run(r: &RunReport) -> String {
    format!(
        "{:.3} +- {:.3}",
        r.mean_ap.unwrap_or(f64::NAN),
        r.std_ap.unwrap_or(f64::NAN)
    )
}

fn synthetic_reproduction() -> Outcome {
    let start = Instant::now();
    let corpus = generate(&Config::default().synth().unwrap(), 1).unwrap();
    let (train, test, tokens) = (&corpus.train, &corpus.test, &corpus.eval_tokens);
    let test_ap = |m: &EncDec| same_different_eval(test, tokens, &Embedder::Model(m)).map(|r| Some(r.ap));

    let downsample = same_different_eval(test, tokens, &Embedder::Downsample { k: 10 }).unwrap().ap;

    // Twenty correspondence epochs after five autoencoder epochs; the other
    // models get the same number of passes over a comparable item count.
    let (main, pre) = (20, 5);
    let cae = multi_seed_run(&SEEDS, |seed| {
        let mut m = EncDec::init(synthetic_model(ModelKind::Cae), seed)?;
        let report = train_cae(train, &corpus.pairs, &mut m, &fixed_budget(main, pre, seed), None)?;
        Ok((report, test_ap(&m)?))
    })
    .unwrap();
    let non_init = multi_seed_run(&SEEDS, |seed| {
        let mut m = EncDec::init(synthetic_model(ModelKind::Cae), seed)?;
        let report = train_cae(train, &corpus.pairs, &mut m, &fixed_budget(main, 0, seed), None)?;
        Ok((report, test_ap(&m)?))
    })
    .unwrap();
    let pretrain_only = multi_seed_run(&SEEDS, |seed| {
        let mut m = EncDec::init(synthetic_model(ModelKind::Cae), seed)?;
        let report = train_cae(train, &corpus.pairs, &mut m, &fixed_budget(0, pre, seed), None)?;
        Ok((report, test_ap(&m)?))
    })
    .unwrap();
    let segment_count = 2 * corpus.pairs.len();
    let ae = multi_seed_run(&SEEDS, |seed| {
        let segments: Vec<SegmentRef> = sample_random_segments(train, segment_count, 10, 40, seed)?;
        let mut m = EncDec::init(synthetic_model(ModelKind::Ae), seed)?;
        let report = train_ae(train, &segments, &mut m, &fixed_budget(main + pre, 0, seed), None)?;
        Ok((report, test_ap(&m)?))
    })
    .unwrap();

    let mean = |r: &RunReport| r.mean_ap.unwrap();
    let (c, a, n) = (mean(&cae), mean(&ae), mean(&non_init));
    let mins = start.elapsed().as_secs_f64() / 60.0;
    let pass = c - a >= 0.05 && c - downsample >= 0.05 && c > n && mins < 30.0;
    outcome(
        pass,
        format!(
            "CAE {} | AE {} | downsampling {downsample:.3} | CAE non-init {} | pretraining only {} \
             (CAE-AE {:+.3}, CAE-downsampling {:+.3}, need >= 0.05; CAE vs non-init {:+.3}, need > 0), {mins:.1} min",
            fmt_run(&cae),
            fmt_run(&ae),
            fmt_run(&non_init),
            fmt_run(&pretrain_only),
            c - a,
            c - downsample,
            c - n,
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn speed() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let cfg = SynthConfig {
            tokens_per_type: 50,
            ..SynthConfig::default()
        };
        let corpus = generate(&cfg, 9).unwrap();
        let tokens: &[EvalToken] = &corpus.eval_tokens;
        let segments: Vec<Matrix> = tokens
            .iter()
            .map(|t| awe::data_io::extract_segment(&corpus.test, &t.segment).unwrap().frames)
            .collect();
        let embeddings: Vec<Vec<f64>> = segments.iter().map(|s| downsample_embed(s, 10)).collect();

        let t = Instant::now();
        let cos = score_all_pairs(tokens, |i, j| cosine_distance(&embeddings[i], &embeddings[j])).unwrap();
        let cos_secs = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let dtw_cfg = DtwConfig::default();
        let dtw = score_all_pairs(tokens, |i, j| dtw_cost(&segments[i], &segments[j], &dtw_cfg)).unwrap();
        let dtw_secs = t.elapsed().as_secs_f64();
        let ratio = dtw_secs / cos_secs;
        outcome(
            ratio >= 10.0 && cos.len() == dtw.len(),
            format!(
                "{} tokens, {} pairs: cosine on {}-d embeddings {cos_secs:.3}s, DTW {dtw_secs:.2}s, {ratio:.0}x (>= 10x)",
                tokens.len(),
                cos.len(),
                embeddings[0].len()
            ),
        )
    })
}

// 10 ------------------------------------------------------------------------

fn determinism() -> Outcome {
    let corpus = generate(&SynthConfig::default(), 4).unwrap();
    let run = |kind: ModelKind| {
        let cfg = ModelConfig {
            hidden: 24,
            embed_dim: 32,
            ..synthetic_model(kind)
        };
        let mut m = EncDec::init(cfg, 11).unwrap();
        let tc = TrainConfig {
            vae: VaeConfig { sigma: 0.3 },
            ..fixed_budget(3, 1, 11)
        };
        let report = match kind {
            ModelKind::Cae => train_cae(&corpus.train, &corpus.pairs, &mut m, &tc, None).unwrap(),
            _ => {
                let segs = sample_random_segments(&corpus.train, 300, 10, 40, 11).unwrap();
                train_ae(&corpus.train, &segs, &mut m, &tc, None).unwrap()
            }
        };
        let ap = same_different_eval(&corpus.test, &corpus.eval_tokens, &Embedder::Model(&m))
            .unwrap()
            .ap;
        (report.losses(), ap)
    };
    let mut same = true;
    let mut aps = Vec::new();
    for kind in [ModelKind::Ae, ModelKind::Vae, ModelKind::Cae] {
        let (a, b) = (run(kind), run(kind));
        same &= a == b;
        aps.push(format!("{kind} {:.6}", a.1));
    }
    outcome(same, format!("loss curves and final AP identical across two runs ({})", aps.join(", ")))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("KL oracle", kl_oracle),
        ("DTW oracle", dtw_oracle),
        ("AP oracle", ap_oracle),
        ("reduction identity", reduction_identity),
        ("masked-batch equivalence", masked_batch_equivalence),
        ("downsampling identity", downsampling_identity),
        ("synthetic directional reproduction", synthetic_reproduction),
        ("speed", speed),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        failed += !o.pass as usize;
        println!(
            "criterion {:2} {}: {} - {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

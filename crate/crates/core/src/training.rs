//! Minibatch Adam training for the encoder-decoder models.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data_io::{extract_segment, EvalToken, FeatureArchive, PairEntry, SegmentRef};
use crate::error::{Error, Result};
use crate::evaluation::{same_different_eval, Embedder};
use crate::models::{batch_loss_and_grads, EncDec, Example, ModelKind, Objective, VaeConfig};
use crate::numerics::{Matrix, ParamCollection};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one per parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamCollection,
    pub v: ParamCollection,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamCollection, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamCollection,
    grads: &ParamCollection,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::Shape {
            op: "adam_step",
            detail: "parameter, gradient and moment layouts differ".into(),
        });
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of '{name}' at optimizer step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads.value(i).data();
        let m = state.m.value_mut(i).data_mut();
        for (mk, gk) in m.iter_mut().zip(g) {
            *mk = beta1 * *mk + (1.0 - beta1) * gk;
        }
        let v = state.v.value_mut(i).data_mut();
        for (vk, gk) in v.iter_mut().zip(g) {
            *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
        }
        let (m, v) = (state.m.value(i).data(), state.v.value(i).data());
        let p = params.value_mut(i).data_mut();
        for ((pk, mk), vk) in p.iter_mut().zip(m).zip(v) {
            let m_hat = mk / bc1;
            let v_hat = vk / bc2;
            *pk -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamCollection, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits `0..n` into batches of at most `batch_size` indices, shuffled
/// deterministically by `(seed, epoch)` when `shuffle` is set.
pub fn make_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64));
        order.shuffle(&mut rng);
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EarlyStopping {
    Off,
    /// Stop after this many epochs without a validation AP improvement.
    Patience(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue { best_epoch: usize },
    Stop { best_epoch: usize },
}

/// Early-stopping rule over the validation AP history (epochs are 1-based).
/// Only strict improvements count.
pub fn early_stop_check(history: &[f64], patience: usize) -> StopDecision {
    assert!(!history.is_empty(), "early stopping needs at least one epoch");
    let mut best = 0;
    for (i, &ap) in history.iter().enumerate() {
        if ap > history[best] {
            best = i;
        }
    }
    let best_epoch = best + 1;
    if history.len() - best_epoch >= patience {
        StopDecision::Stop { best_epoch }
    } else {
        StopDecision::Continue { best_epoch }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping: EarlyStopping,
    /// AE epochs before switching to the correspondence loss.
    pub pretrain_epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub adam: AdamConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub vae: VaeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            early_stopping: EarlyStopping::Patience(5),
            pretrain_epochs: 15,
            seed: 1,
            shuffle: true,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            vae: VaeConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Main,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based, counted across phases.
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub val_ap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned, when validation selected one.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// One `epoch, mean_loss[, val_AP]` line per epoch.
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            let _ = write!(s, "{}, {:.6}", e.epoch, e.mean_loss);
            if let Some(ap) = e.val_ap {
                let _ = write!(s, ", {ap:.6}");
            }
            s.push('\n');
        }
        s
    }
}

/// Held-out tokens scored after every epoch.
#[derive(Clone, Copy)]
pub struct Validation<'a> {
    pub archive: &'a FeatureArchive,
    pub tokens: &'a [EvalToken],
}

impl Validation<'_> {
    pub fn ap(&self, model: &EncDec) -> Result<f64> {
        Ok(same_different_eval(self.archive, self.tokens, &Embedder::Model(model))?.ap)
    }
}

/// Training material: distinct segments and (input, target) index pairs.
struct ItemSet {
    segments: Vec<Matrix>,
    items: Vec<(usize, usize)>,
}

struct SegmentCache<'a> {
    archive: &'a FeatureArchive,
    index: HashMap<SegmentRef, usize>,
    segments: Vec<Matrix>,
}

impl<'a> SegmentCache<'a> {
    fn new(archive: &'a FeatureArchive) -> Self {
        Self {
            archive,
            index: HashMap::new(),
            segments: Vec::new(),
        }
    }

    fn id(&mut self, r: &SegmentRef) -> Result<usize> {
        if let Some(&i) = self.index.get(r) {
            return Ok(i);
        }
        let seq = extract_segment(self.archive, r)?;
        self.segments.push(seq.frames);
        self.index.insert(r.clone(), self.segments.len() - 1);
        Ok(self.segments.len() - 1)
    }
}

fn run_phase(
    model: &mut EncDec,
    data: &ItemSet,
    cfg: &TrainConfig,
    phase: Phase,
    epochs: usize,
    validation: Option<Validation<'_>>,
    report: &mut TrainReport,
) -> Result<()> {
    if data.items.is_empty() {
        return Err(Error::Data("no training items".into()));
    }
    let mut adam = AdamState::new(&model.params, cfg.adam);
    let use_validation = phase == Phase::Main
        && validation.is_some()
        && matches!(cfg.early_stopping, EarlyStopping::Patience(_));
    let mut history = Vec::new();
    let mut best: Option<(usize, ParamCollection)> = None;
    let dim = model.config.embed_dim;

    for _ in 0..epochs {
        let epoch = report.epochs.len() + 1;
        let batches = make_batches(data.items.len(), cfg.batch_size, cfg.seed, epoch, cfg.shuffle);
        let mut loss_sum = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let examples: Vec<Example<'_>> = batch
                .iter()
                .map(|&i| {
                    let (a, b) = data.items[i];
                    Example {
                        input: &data.segments[a],
                        target: &data.segments[b],
                    }
                })
                .collect();
            let noise;
            let objective = if model.config.kind.is_variational() {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(cfg.seed, epoch as u64), bi as u64));
                let values = (0..batch.len() * dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                noise = Matrix::from_vec(batch.len(), dim, values)?;
                Objective::Variational {
                    vae: cfg.vae,
                    noise: &noise,
                }
            } else {
                Objective::Reconstruction
            };
            let (loss, mut grads) = batch_loss_and_grads(model, &examples, objective)
                .map_err(|e| match e {
                    Error::NonFinite(m) => {
                        Error::NonFinite(format!("training diverged at epoch {epoch}: {m}"))
                    }
                    other => other,
                })?;
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam_step(&mut adam, &mut model.params, &grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let mean_loss = loss_sum / data.items.len() as f64;

        let val_ap = match (use_validation, validation) {
            (true, Some(v)) => Some(v.ap(model)?),
            _ => None,
        };
        report.epochs.push(EpochLog {
            epoch,
            phase,
            mean_loss,
            val_ap,
        });

        if let (Some(ap), EarlyStopping::Patience(patience)) = (val_ap, cfg.early_stopping) {
            history.push(ap);
            let decision = early_stop_check(&history, patience);
            let best_local = match decision {
                StopDecision::Continue { best_epoch } | StopDecision::Stop { best_epoch } => {
                    best_epoch
                }
            };
            if best_local == history.len() {
                best = Some((epoch, model.params.clone()));
            }
            if let StopDecision::Stop { .. } = decision {
                report.stopped_early = true;
                break;
            }
        }
    }
    if let Some((epoch, params)) = best {
        model.params = params;
        report.best_epoch = Some(epoch);
    }
    Ok(())
}

fn check_kind(model: &EncDec, allowed: &[ModelKind]) -> Result<()> {
    if !allowed.contains(&model.config.kind) {
        return Err(Error::Usage(format!(
            "cannot train a {} model with this procedure",
            model.config.kind
        )));
    }
    Ok(())
}

/// Trains an AE (reconstruction loss) or VAE on single segments, e.g. random
/// segments from [`crate::data_io::sample_random_segments`].
pub fn train_ae(
    archive: &FeatureArchive,
    segments: &[SegmentRef],
    model: &mut EncDec,
    cfg: &TrainConfig,
    validation: Option<Validation<'_>>,
) -> Result<TrainReport> {
    check_kind(model, &[ModelKind::Ae, ModelKind::Vae, ModelKind::Cae])?;
    let mut cache = SegmentCache::new(archive);
    let items = segments
        .iter()
        .map(|s| cache.id(s).map(|i| (i, i)))
        .collect::<Result<Vec<_>>>()?;
    let data = ItemSet {
        segments: cache.segments,
        items,
    };
    let mut report = TrainReport::default();
    run_phase(model, &data, cfg, Phase::Main, cfg.max_epochs, validation, &mut report)?;
    Ok(report)
}

/// Correspondence training: `pretrain_epochs` of AE training on every
/// segment that occurs in a pair, then the paired loss with each pair used
/// in both directions.
pub fn train_cae(
    archive: &FeatureArchive,
    pairs: &[PairEntry],
    model: &mut EncDec,
    cfg: &TrainConfig,
    validation: Option<Validation<'_>>,
) -> Result<TrainReport> {
    check_kind(model, &[ModelKind::Cae, ModelKind::Ae])?;
    if pairs.is_empty() {
        return Err(Error::Data("correspondence training needs at least one pair".into()));
    }
    let mut cache = SegmentCache::new(archive);
    let mut directed = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        let a = cache.id(&p.a)?;
        let b = cache.id(&p.b)?;
        directed.push((a, b));
        directed.push((b, a));
    }
    let n_segments = cache.segments.len();
    let mut report = TrainReport::default();

    if cfg.pretrain_epochs > 0 {
        let ae = ItemSet {
            segments: cache.segments,
            items: (0..n_segments).map(|i| (i, i)).collect(),
        };
        run_phase(model, &ae, cfg, Phase::Pretrain, cfg.pretrain_epochs, None, &mut report)?;
        cache.segments = ae.segments;
    }
    let cae = ItemSet {
        segments: cache.segments,
        items: directed,
    };
    run_phase(model, &cae, cfg, Phase::Main, cfg.max_epochs, validation, &mut report)?;
    Ok(report)
}

/// Number of directed items per correspondence epoch.
pub fn cae_items_per_epoch(pairs: &[PairEntry]) -> usize {
    2 * pairs.len()
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_and_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (mean, std)
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub report: TrainReport,
    /// Held-out AP of the returned model, when a validation set was given.
    pub final_ap: Option<f64>,
}

/// Independent runs over several seeds.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub runs: Vec<SeedRun>,
    /// Mean over the runs that have an AP.
    pub mean_ap: Option<f64>,
    /// Sample standard deviation; needs two runs with an AP.
    pub std_ap: Option<f64>,
}

impl RunReport {
    pub fn from_runs(runs: Vec<SeedRun>) -> Self {
        let aps: Vec<f64> = runs.iter().filter_map(|r| r.final_ap).collect();
        let (mean_ap, std_ap) = if aps.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_and_std(&aps);
            (Some(m), s)
        };
        Self {
            runs,
            mean_ap,
            std_ap,
        }
    }

    pub fn final_aps(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.final_ap).collect()
    }

    pub fn summary_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        let mut s = String::new();
        for r in &self.runs {
            let _ = writeln!(
                s,
                "seed {} epochs {} best_epoch {} AP {}",
                r.seed,
                r.report.epochs.len(),
                r.report.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string()),
                fmt(r.final_ap)
            );
        }
        let _ = writeln!(s, "mean AP {} std {}", fmt(self.mean_ap), fmt(self.std_ap));
        s
    }
}

/// Runs `experiment` once per seed (in parallel when a pool is available)
/// and aggregates the final APs.
pub fn multi_seed_run<F>(seeds: &[u64], experiment: F) -> Result<RunReport>
where
    F: Fn(u64) -> Result<(TrainReport, Option<f64>)> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Usage("at least one seed is required".into()));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            experiment(seed).map(|(report, final_ap)| SeedRun {
                seed,
                report,
                final_ap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport::from_runs(runs))
}

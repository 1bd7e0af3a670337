//! GRU encoder-decoder models and their training objectives.
//!
//! The encoder is a stack of unidirectional GRU layers read over the input
//! frames from a zero state. The embedding is an affine map of the top
//! layer's final hidden state (two affine heads, mean and log-variance, for
//! the variational model). The decoder is a second GRU stack that receives
//! the embedding as its input at every step, starts from a zero state and
//! never sees ground-truth frames; an affine map of its top hidden state
//! gives each output frame.
//!
//! Parameter names: `enc.{l}.{w,u,b}_{z,r,h}`, `enc.emb.{w,b}` (or
//! `enc.mu.{w,b}` and `enc.logvar.{w,b}`), `dec.{l}.*`, `dec.out.{w,b}`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, NodeId, ParamCollection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ae,
    Vae,
    Cae,
}

impl ModelKind {
    pub fn is_variational(self) -> bool {
        self == ModelKind::Vae
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ae => "ae",
            ModelKind::Vae => "vae",
            ModelKind::Cae => "cae",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ae" => Ok(ModelKind::Ae),
            "vae" => Ok(ModelKind::Vae),
            "cae" => Ok(ModelKind::Cae),
            _ => Err(Error::Usage(format!("unknown model kind '{s}' (ae|vae|cae)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Feature dimension D.
    pub input_dim: usize,
    /// Hidden units per GRU layer.
    pub hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Embedding dimension M.
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Ae,
            input_dim: 13,
            hidden: 400,
            enc_layers: 3,
            dec_layers: 3,
            embed_dim: 130,
        }
    }
}

/// Weighting of the variational objective. The prior is N(0, I).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeConfig {
    /// Standard deviation of the Gaussian decoder output.
    pub sigma: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { sigma: 1e-5 }
    }
}

impl VaeConfig {
    pub fn reconstruction_weight(&self) -> f64 {
        1.0 / (2.0 * self.sigma * self.sigma)
    }
}

const GATES: [&str; 3] = ["z", "r", "h"];

fn gru_names(prefix: &str, input: usize, hidden: usize) -> Vec<(String, usize, usize)> {
    let mut v = Vec::new();
    for g in GATES {
        v.push((format!("{prefix}.w_{g}"), input, hidden));
    }
    for g in GATES {
        v.push((format!("{prefix}.u_{g}"), hidden, hidden));
    }
    for g in GATES {
        v.push((format!("{prefix}.b_{g}"), 1, hidden));
    }
    v
}

/// Names and shapes of every parameter of a model, in canonical order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let mut v = Vec::new();
    for l in 0..cfg.enc_layers {
        let input = if l == 0 { cfg.input_dim } else { cfg.hidden };
        v.extend(gru_names(&format!("enc.{l}"), input, cfg.hidden));
    }
    let heads: &[&str] = if cfg.kind.is_variational() {
        &["enc.mu", "enc.logvar"]
    } else {
        &["enc.emb"]
    };
    for h in heads {
        v.push((format!("{h}.w"), cfg.hidden, cfg.embed_dim));
        v.push((format!("{h}.b"), 1, cfg.embed_dim));
    }
    for l in 0..cfg.dec_layers {
        let input = if l == 0 { cfg.embed_dim } else { cfg.hidden };
        v.extend(gru_names(&format!("dec.{l}"), input, cfg.hidden));
    }
    v.push(("dec.out.w".into(), cfg.hidden, cfg.input_dim));
    v.push(("dec.out.b".into(), 1, cfg.input_dim));
    v
}

/// Weights and configuration of one encoder-decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncDec {
    pub config: ModelConfig,
    pub params: ParamCollection,
}

impl EncDec {
    fn validate_config(cfg: &ModelConfig) -> Result<()> {
        if cfg.input_dim == 0
            || cfg.hidden == 0
            || cfg.embed_dim == 0
            || cfg.enc_layers == 0
            || cfg.dec_layers == 0
        {
            return Err(Error::Config(format!("degenerate model configuration {cfg:?}")));
        }
        Ok(())
    }

    /// All parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Self::validate_config(&config)?;
        let mut params = ParamCollection::new();
        for (name, r, c) in param_layout(&config) {
            params.insert(name, Matrix::zeros(r, c))?;
        }
        Ok(Self { config, params })
    }

    /// Weight matrices uniform on ±sqrt(6 / (fan_in + fan_out)); biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in model.params.values_mut() {
            if m.rows() == 1 {
                continue;
            }
            let r = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
            m.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-r..r));
        }
        Ok(model)
    }

    /// Every parameter, biases included, uniform on `[-scale, scale)`.
    pub fn randomize(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in self.params.values_mut() {
            m.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-scale..scale));
        }
    }

    /// Copies parameters shared by name and shape from `other`.
    pub fn copy_shared_from(&mut self, other: &EncDec) {
        for i in 0..self.params.len() {
            let name = self.params.name(i).to_string();
            if let Some(src) = other.params.get(&name) {
                if src.shape() == self.params.value(i).shape() {
                    *self.params.value_mut(i) = src.clone();
                }
            }
        }
    }

    fn embedding_head(&self) -> &'static str {
        if self.config.kind.is_variational() {
            "enc.mu"
        } else {
            "enc.emb"
        }
    }
}

/// The nine matrices of one GRU layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayerParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_h: Matrix,
}

impl GruLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Matrix::zeros(input, hidden),
            w_r: Matrix::zeros(input, hidden),
            w_h: Matrix::zeros(input, hidden),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
            b_z: Matrix::zeros(1, hidden),
            b_r: Matrix::zeros(1, hidden),
            b_h: Matrix::zeros(1, hidden),
        }
    }

    /// Extracts layer `prefix` (e.g. `enc.0`) from a collection.
    pub fn from_collection(params: &ParamCollection, prefix: &str) -> Result<Self> {
        let get = |s: &str| {
            params
                .get(&format!("{prefix}.{s}"))
                .cloned()
                .ok_or_else(|| Error::Data(format!("missing parameter {prefix}.{s}")))
        };
        Ok(Self {
            w_z: get("w_z")?,
            w_r: get("w_r")?,
            w_h: get("w_h")?,
            u_z: get("u_z")?,
            u_r: get("u_r")?,
            u_h: get("u_h")?,
            b_z: get("b_z")?,
            b_r: get("b_r")?,
            b_h: get("b_h")?,
        })
    }

    fn into_collection(self, prefix: &str) -> Result<ParamCollection> {
        let mut p = ParamCollection::new();
        let parts = [
            ("w_z", self.w_z),
            ("w_r", self.w_r),
            ("w_h", self.w_h),
            ("u_z", self.u_z),
            ("u_r", self.u_r),
            ("u_h", self.u_h),
            ("b_z", self.b_z),
            ("b_r", self.b_r),
            ("b_h", self.b_h),
        ];
        for (n, m) in parts {
            p.insert(format!("{prefix}.{n}"), m)?;
        }
        Ok(p)
    }
}

/// Input-side projections `x·W_g + b_g` for the three gates.
struct GateInputs([NodeId; 3]);

fn gate_inputs(g: &mut Graph<'_>, prefix: &str, x: NodeId) -> Result<GateInputs> {
    let mut out = [x; 3];
    for (i, gate) in GATES.iter().enumerate() {
        let w = g.param(&format!("{prefix}.w_{gate}"))?;
        let b = g.param(&format!("{prefix}.b_{gate}"))?;
        out[i] = g.affine(x, w, b)?;
    }
    Ok(GateInputs(out))
}

/// One GRU update given precomputed input projections:
/// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
/// `c = tanh(xW_h + (r⊙h)U_h + b_h)`, `h' = (1-z)⊙h + z⊙c`.
fn gru_update(
    g: &mut Graph<'_>,
    prefix: &str,
    inputs: &GateInputs,
    h_prev: NodeId,
) -> Result<NodeId> {
    let [xz, xr, xh] = inputs.0;
    let u_z = g.param(&format!("{prefix}.u_z"))?;
    let u_r = g.param(&format!("{prefix}.u_r"))?;
    let u_h = g.param(&format!("{prefix}.u_h"))?;
    let hz = g.matmul(h_prev, u_z)?;
    let pre_z = g.add(xz, hz)?;
    let z = g.sigmoid(pre_z);
    let hr = g.matmul(h_prev, u_r)?;
    let pre_r = g.add(xr, hr)?;
    let r = g.sigmoid(pre_r);
    let rh = g.mul(r, h_prev)?;
    let rhu = g.matmul(rh, u_h)?;
    let pre_c = g.add(xh, rhu)?;
    let cand = g.tanh(pre_c);
    let delta = g.sub(cand, h_prev)?;
    let step = g.mul(z, delta)?;
    g.add(h_prev, step)
}

/// A single GRU step on plain vectors.
pub fn gru_step(layer: &GruLayerParams, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let hidden = layer.u_z.rows();
    if h_prev.len() != hidden || x.len() != layer.w_z.rows() {
        return Err(Error::Shape {
            op: "gru_step",
            detail: format!(
                "h_prev {} (expected {hidden}), x {} (expected {})",
                h_prev.len(),
                x.len(),
                layer.w_z.rows()
            ),
        });
    }
    let params = layer.clone().into_collection("l")?;
    let mut g = Graph::new(&params);
    let xn = g.input(Matrix::row_vector(x.to_vec()));
    let hn = g.input(Matrix::row_vector(h_prev.to_vec()));
    let gi = gate_inputs(&mut g, "l", xn)?;
    let h = gru_update(&mut g, "l", &gi, hn)?;
    Ok(g.value(h).data().to_vec())
}

/// Variable-length sequences padded to a common length, one matrix per step.
pub struct PaddedBatch {
    lengths: Vec<usize>,
    steps: Vec<Matrix>,
}

impl PaddedBatch {
    pub fn new(seqs: &[&Matrix]) -> Result<Self> {
        let dim = seqs.first().map_or(0, |s| s.cols());
        if seqs.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        for s in seqs {
            if s.rows() == 0 {
                return Err(Error::Data("empty sequence in batch".into()));
            }
            if s.cols() != dim {
                return Err(Error::Shape {
                    op: "PaddedBatch",
                    detail: format!("sequence dimension {} vs {dim}", s.cols()),
                });
            }
        }
        let lengths: Vec<usize> = seqs.iter().map(|s| s.rows()).collect();
        let max_len = *lengths.iter().max().unwrap_or(&0);
        let steps = (0..max_len)
            .map(|t| {
                let mut m = Matrix::zeros(seqs.len(), dim);
                for (b, s) in seqs.iter().enumerate() {
                    if t < s.rows() {
                        m.row_mut(b).copy_from_slice(s.row(t));
                    }
                }
                m
            })
            .collect();
        Ok(Self { lengths, steps })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.steps.len()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    fn active(&self, t: usize) -> usize {
        self.lengths.iter().filter(|&&l| t < l).count()
    }

    /// `cols`-wide 0/1 mask of the rows still active at step `t`.
    fn mask(&self, t: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(self.batch_size(), cols);
        for (b, &l) in self.lengths.iter().enumerate() {
            if t < l {
                m.row_mut(b).iter_mut().for_each(|v| *v = 1.0);
            }
        }
        m
    }
}

/// Runs the encoder stack and returns the top layer's final hidden state,
/// taken at each sequence's own last frame.
fn encoder_final_state(g: &mut Graph<'_>, cfg: &ModelConfig, batch: &PaddedBatch) -> Result<NodeId> {
    let n = batch.batch_size();
    if batch.steps[0].cols() != cfg.input_dim {
        return Err(Error::Shape {
            op: "encode",
            detail: format!(
                "input dimension {} but model expects {}",
                batch.steps[0].cols(),
                cfg.input_dim
            ),
        });
    }
    let mut layer_in: Vec<NodeId> = batch.steps.iter().map(|s| g.input(s.clone())).collect();
    let full = |t: usize| batch.active(t) == n;
    let masks: Vec<Option<(NodeId, NodeId)>> = (0..batch.max_len())
        .map(|t| {
            if full(t) {
                None
            } else {
                let m = batch.mask(t, cfg.hidden);
                let mut inv = m.clone();
                inv.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
                Some((g.input(m), g.input(inv)))
            }
        })
        .collect();
    for l in 0..cfg.enc_layers {
        let prefix = format!("enc.{l}");
        let mut h = g.input(Matrix::zeros(n, cfg.hidden));
        let mut outputs = Vec::with_capacity(layer_in.len());
        for (t, &x) in layer_in.iter().enumerate() {
            let gi = gate_inputs(g, &prefix, x)?;
            let h_new = gru_update(g, &prefix, &gi, h)?;
            h = match masks[t] {
                None => h_new,
                Some((m, inv)) => {
                    let keep_new = g.mul(m, h_new)?;
                    let keep_old = g.mul(inv, h)?;
                    g.add(keep_new, keep_old)?
                }
            };
            outputs.push(h);
        }
        layer_in = outputs;
    }
    Ok(*layer_in.last().expect("nonempty batch"))
}

fn head(g: &mut Graph<'_>, name: &str, h: NodeId) -> Result<NodeId> {
    let w = g.param(&format!("{name}.w"))?;
    let b = g.param(&format!("{name}.b"))?;
    g.affine(h, w, b)
}

/// Decoder top-layer outputs for `steps` steps, each `B×D`.
fn decoder_outputs(
    g: &mut Graph<'_>,
    cfg: &ModelConfig,
    z: NodeId,
    steps: usize,
) -> Result<Vec<NodeId>> {
    let n = g.value(z).rows();
    let mut hs = Vec::with_capacity(cfg.dec_layers);
    for _ in 0..cfg.dec_layers {
        hs.push(g.input(Matrix::zeros(n, cfg.hidden)));
    }
    // The first layer's input is z at every step, so its projection is shared.
    let first_inputs = gate_inputs(g, "dec.0", z)?;
    let mut outs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut below = None;
        for (l, h) in hs.iter_mut().enumerate() {
            let prefix = format!("dec.{l}");
            let gi = match below {
                None => GateInputs(first_inputs.0),
                Some(x) => gate_inputs(g, &prefix, x)?,
            };
            *h = gru_update(g, &prefix, &gi, *h)?;
            below = Some(*h);
        }
        outs.push(head(g, "dec.out", below.expect("at least one layer"))?);
    }
    Ok(outs)
}

/// What a batch is trained to do.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    /// Squared reconstruction error of the target frames (AE and CAE).
    Reconstruction,
    /// Reconstruction scaled by 1/(2σ²) plus the KL term once per target
    /// frame. `noise` is `B×M` standard-normal noise.
    Variational { vae: VaeConfig, noise: &'a Matrix },
}

/// One training example: encode `input`, reconstruct `target`.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub input: &'a Matrix,
    pub target: &'a Matrix,
}

/// Records the summed per-sequence loss of a batch on `g`.
pub fn build_batch_loss(
    g: &mut Graph<'_>,
    cfg: &ModelConfig,
    examples: &[Example<'_>],
    objective: Objective<'_>,
) -> Result<NodeId> {
    let inputs: Vec<&Matrix> = examples.iter().map(|e| e.input).collect();
    let targets: Vec<&Matrix> = examples.iter().map(|e| e.target).collect();
    let enc_batch = PaddedBatch::new(&inputs)?;
    let tgt_batch = PaddedBatch::new(&targets)?;
    if tgt_batch.steps[0].cols() != cfg.input_dim {
        return Err(Error::Shape {
            op: "loss",
            detail: format!(
                "target dimension {} but model outputs {}",
                tgt_batch.steps[0].cols(),
                cfg.input_dim
            ),
        });
    }
    let n = examples.len();
    let h = encoder_final_state(g, cfg, &enc_batch)?;

    let (z, kl) = match objective {
        Objective::Reconstruction => {
            if cfg.kind.is_variational() {
                return Err(Error::Usage(
                    "variational model needs the variational objective".into(),
                ));
            }
            (head(g, "enc.emb", h)?, None)
        }
        Objective::Variational { noise, .. } => {
            if !cfg.kind.is_variational() {
                return Err(Error::Usage(format!(
                    "{} model has no variational heads",
                    cfg.kind
                )));
            }
            let mu = head(g, "enc.mu", h)?;
            let lv = head(g, "enc.logvar", h)?;
            let eps = g.input(noise.clone());
            if g.value(eps).shape() != g.value(mu).shape() {
                return Err(Error::Shape {
                    op: "reparameterize",
                    detail: format!(
                        "noise {:?} vs mean {:?}",
                        noise.shape(),
                        g.value(mu).shape()
                    ),
                });
            }
            let half_lv = g.scale(lv, 0.5);
            let sd = g.exp(half_lv);
            let scaled = g.mul(sd, eps)?;
            let z = g.add(mu, scaled)?;

            // Σ_b T_b · ½ Σ_i (μ² + e^{lv} − lv − 1)
            let mu2 = g.mul(mu, mu)?;
            let var = g.exp(lv);
            let a = g.add(mu2, var)?;
            let per_elem = g.sub(a, lv)?;
            let mut weights = Matrix::zeros(n, cfg.embed_dim);
            for (b, &t) in tgt_batch.lengths().iter().enumerate() {
                weights.row_mut(b).iter_mut().for_each(|v| *v = 0.5 * t as f64);
            }
            let frames: usize = tgt_batch.lengths().iter().sum();
            let w = g.input(weights);
            let weighted = g.mul(per_elem, w)?;
            let s = g.sum(weighted);
            let kl = g.scale_shift(s, 1.0, -0.5 * (frames * cfg.embed_dim) as f64);
            (z, Some(kl))
        }
    };

    let outs = decoder_outputs(g, cfg, z, tgt_batch.max_len())?;
    let mut total: Option<NodeId> = None;
    for (t, &y) in outs.iter().enumerate() {
        let target = g.input(tgt_batch.steps[t].clone());
        let mut diff = g.sub(y, target)?;
        if tgt_batch.active(t) < n {
            let m = g.input(tgt_batch.mask(t, cfg.input_dim));
            diff = g.mul(diff, m)?;
        }
        let sq = g.sum_squares(diff);
        total = Some(match total {
            None => sq,
            Some(acc) => g.add(acc, sq)?,
        });
    }
    let recon = total.expect("at least one output step");
    match (objective, kl) {
        (Objective::Variational { vae, .. }, Some(kl)) => {
            let r = g.scale(recon, vae.reconstruction_weight());
            g.add(r, kl)
        }
        _ => Ok(recon),
    }
}

/// Mean per-sequence loss of a batch and its gradient.
pub fn batch_loss_and_grads(
    model: &EncDec,
    examples: &[Example<'_>],
    objective: Objective<'_>,
) -> Result<(f64, ParamCollection)> {
    let mut g = Graph::new(&model.params);
    let total = build_batch_loss(&mut g, &model.config, examples, objective)?;
    let mean = g.scale(total, 1.0 / examples.len() as f64);
    let grads = g.backward(mean)?;
    Ok((g.value(mean).data()[0], grads))
}

/// Summed per-sequence loss of a batch and its gradient.
pub fn batch_total_and_grads(
    model: &EncDec,
    examples: &[Example<'_>],
    objective: Objective<'_>,
) -> Result<(f64, ParamCollection)> {
    let mut g = Graph::new(&model.params);
    let total = build_batch_loss(&mut g, &model.config, examples, objective)?;
    let grads = g.backward(total)?;
    Ok((g.value(total).data()[0], grads))
}

fn forward_loss(model: &EncDec, example: Example<'_>, objective: Objective<'_>) -> Result<f64> {
    let mut g = Graph::new(&model.params);
    let l = build_batch_loss(&mut g, &model.config, &[example], objective)?;
    let v = g.value(l).data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss = {v}")));
    }
    Ok(v)
}

/// `Σ_t ‖x_t − f_t(X)‖²`.
pub fn ae_loss(model: &EncDec, x: &Matrix) -> Result<f64> {
    forward_loss(
        model,
        Example {
            input: x,
            target: x,
        },
        Objective::Reconstruction,
    )
}

/// `Σ_{t=1}^{T_b} ‖x^b_t − f_t(X^a)‖²`; the decoder runs for `T_b` steps.
pub fn cae_loss(model: &EncDec, x_a: &Matrix, x_b: &Matrix) -> Result<f64> {
    forward_loss(
        model,
        Example {
            input: x_a,
            target: x_b,
        },
        Objective::Reconstruction,
    )
}

/// `Σ_t [ ‖x_t − f_t(z')‖² / (2σ²) + KL(q(z|X) ‖ N(0, I)) ]` with
/// `z' = μ + exp(½ log σ²) ⊙ noise`.
pub fn vae_loss(model: &EncDec, vae: &VaeConfig, x: &Matrix, noise: &[f64]) -> Result<f64> {
    let noise = Matrix::row_vector(noise.to_vec());
    forward_loss(
        model,
        Example {
            input: x,
            target: x,
        },
        Objective::Variational { vae: *vae, noise: &noise },
    )
}

/// `½ Σ_i (μ_i² + exp(lv_i) − lv_i − 1)`.
pub fn kl_diag_gaussian_to_standard(mu: &[f64], log_var: &[f64]) -> f64 {
    assert_eq!(mu.len(), log_var.len(), "mean and log-variance lengths differ");
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// `μ + exp(½ lv) ⊙ noise`.
pub fn reparameterize(mu: &[f64], log_var: &[f64], noise: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

fn check_input(model: &EncDec, x: &Matrix) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Data("cannot encode an empty sequence".into()));
    }
    if x.cols() != model.config.input_dim {
        return Err(Error::Shape {
            op: "encode",
            detail: format!(
                "input dimension {} but model expects {}",
                x.cols(),
                model.config.input_dim
            ),
        });
    }
    Ok(())
}

/// Deterministic embedding from the final encoder state (AE/CAE kinds use
/// the embedding head; variational models are rejected, use
/// [`encode_variational`]).
pub fn encode(model: &EncDec, x: &Matrix) -> Result<Vec<f64>> {
    if model.config.kind.is_variational() {
        return Err(Error::Usage("variational model: use encode_variational".into()));
    }
    embed(model, x)
}

/// Mean and log-variance heads of a variational encoder.
pub fn encode_variational(model: &EncDec, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if !model.config.kind.is_variational() {
        return Err(Error::Usage(format!(
            "{} model has no variational heads",
            model.config.kind
        )));
    }
    check_input(model, x)?;
    let mut g = Graph::new(&model.params);
    let batch = PaddedBatch::new(&[x])?;
    let h = encoder_final_state(&mut g, &model.config, &batch)?;
    let mu = head(&mut g, "enc.mu", h)?;
    let lv = head(&mut g, "enc.logvar", h)?;
    Ok((g.value(mu).data().to_vec(), g.value(lv).data().to_vec()))
}

/// Runs the decoder for `steps` frames from embedding `z`.
pub fn decode(model: &EncDec, z: &[f64], steps: usize) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::Data("decode needs at least one output step".into()));
    }
    if z.len() != model.config.embed_dim {
        return Err(Error::Shape {
            op: "decode",
            detail: format!("z has {} values, embed_dim is {}", z.len(), model.config.embed_dim),
        });
    }
    let mut g = Graph::new(&model.params);
    let zn = g.input(Matrix::row_vector(z.to_vec()));
    let outs = decoder_outputs(&mut g, &model.config, zn, steps)?;
    let rows: Vec<Vec<f64>> = outs.iter().map(|&o| g.value(o).data().to_vec()).collect();
    Matrix::from_rows(&rows)
}

/// Embedding used for evaluation: the encoder output for AE/CAE, the mean
/// head for the variational model. Never samples.
pub fn embed(model: &EncDec, x: &Matrix) -> Result<Vec<f64>> {
    Ok(embed_batch(model, &[x])?.pop().expect("one embedding"))
}

/// [`embed`] for several sequences at once.
pub fn embed_batch(model: &EncDec, xs: &[&Matrix]) -> Result<Vec<Vec<f64>>> {
    for x in xs {
        check_input(model, x)?;
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = Graph::new(&model.params);
    let batch = PaddedBatch::new(xs)?;
    let h = encoder_final_state(&mut g, &model.config, &batch)?;
    let z = head(&mut g, model.embedding_head(), h)?;
    let zv = g.value(z);
    Ok((0..xs.len()).map(|b| zv.row(b).to_vec()).collect())
}

/// Embeds many sequences in chunks of `chunk` (sorted by length internally to
/// limit padding), returning embeddings in input order.
pub fn embed_all(model: &EncDec, xs: &[&Matrix], chunk: usize) -> Result<Vec<Vec<f64>>> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by_key(|&i| xs[i].rows());
    let mut out = vec![Vec::new(); xs.len()];
    for idx in order.chunks(chunk.max(1)) {
        let group: Vec<&Matrix> = idx.iter().map(|&i| xs[i]).collect();
        for (&i, e) in idx.iter().zip(embed_batch(model, &group)?) {
            out[i] = e;
        }
    }
    Ok(out)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AWEM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a model: `"AWEM" | u32 version | u32 meta_len | meta (key=value
/// lines) | u32 count | per matrix: u32 name_len, name, u32 rows, u32 cols,
/// rows*cols f32`.
pub fn encode_checkpoint(model: &EncDec, config_hash: &str) -> Vec<u8> {
    let c = &model.config;
    let meta = format!(
        "kind={}\ninput_dim={}\nhidden={}\nenc_layers={}\ndec_layers={}\nembed_dim={}\nconfig_hash={}\n",
        c.kind, c.input_dim, c.hidden, c.enc_layers, c.dec_layers, c.embed_dim, config_hash
    );
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, m) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for &v in m.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Parsed checkpoint: the model and its metadata block.
pub struct Checkpoint {
    pub model: EncDec,
    pub config_hash: String,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, not a model checkpoint".into()));
    }
    let u32_of = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let version = u32_of(take(4)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = u32_of(take(4)?) as usize;
    let meta = std::str::from_utf8(take(meta_len)?)
        .map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?
        .to_string();
    let mut kv = std::collections::HashMap::new();
    for line in meta.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad metadata line '{line}'")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks '{k}'")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("metadata '{k}' is not a count")))
    };
    let config = ModelConfig {
        kind: get("kind")?.parse()?,
        input_dim: num("input_dim")?,
        hidden: num("hidden")?,
        enc_layers: num("enc_layers")?,
        dec_layers: num("dec_layers")?,
        embed_dim: num("embed_dim")?,
    };
    let config_hash = get("config_hash")?;
    let mut model = EncDec::zeros(config)?;
    let count = u32_of(take(4)?) as usize;
    if count != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} matrices, layout expects {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let name_len = u32_of(take(4)?) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rows = u32_of(take(4)?) as usize;
        let cols = u32_of(take(4)?) as usize;
        let raw = take(rows * cols * 4)?;
        let dst = model
            .params
            .get_mut(&name)
            .ok_or_else(|| Error::Format(format!("unexpected parameter '{name}'")))?;
        if dst.shape() != (rows, cols) {
            return Err(Error::Format(format!(
                "parameter '{name}' is {rows}x{cols}, expected {:?}",
                dst.shape()
            )));
        }
        for (d, c) in dst.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        }
    }
    if !model.params.is_finite() {
        return Err(Error::Data("checkpoint contains non-finite weights".into()));
    }
    Ok(Checkpoint { model, config_hash })
}

pub fn save_checkpoint(model: &EncDec, config_hash: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(model, config_hash))
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

//! Flat `key=value` configuration covering every tunable.
//!
//! Unknown keys are rejected. The resolved configuration (defaults plus file
//! plus overrides) hashes to a short hex digest that is stamped into every
//! output so results can be traced to their settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::baselines::{DtwConfig, LocalDistance};
use crate::data_io::TimeUnit;
use crate::error::{Error, Result};
use crate::features::{CmvnMode, MfccConfig};
use crate::models::{ModelConfig, ModelKind, VaeConfig};
use crate::synth::SynthConfig;
use crate::training::{AdamConfig, EarlyStopping, TrainConfig};

/// Every key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("mfcc.window_ms", "25"),
    ("mfcc.hop_ms", "10"),
    ("mfcc.fft_size", "512"),
    ("mfcc.mel_filters", "24"),
    ("mfcc.num_ceps", "13"),
    ("mfcc.pre_emphasis", "0.97"),
    ("mfcc.log_floor", "1e-10"),
    ("features.cmvn", "none"),
    ("model.hidden", "400"),
    ("model.enc_layers", "3"),
    ("model.dec_layers", "3"),
    ("model.embed_dim", "130"),
    ("vae.sigma", "1e-5"),
    ("train.batch_size", "32"),
    ("train.max_epochs", "100"),
    // 0 disables early stopping
    ("train.patience", "5"),
    ("train.pretrain_epochs", "15"),
    ("train.lr", "0.001"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.eps", "1e-8"),
    // 0 disables clipping
    ("train.clip_norm", "5.0"),
    ("train.shuffle", "true"),
    ("train.seeds", "1,2,3,4,5"),
    ("train.random_segments", "10000"),
    ("train.min_frames", "20"),
    ("train.max_frames", "100"),
    ("pairs.time_unit", "frames"),
    // 0 disables the bound
    ("pairs.min_frames", "0"),
    ("pairs.max_frames", "0"),
    ("eval.time_unit", "frames"),
    ("dtw.distance", "cosine"),
    ("dtw.normalize", "true"),
    ("downsample.k", "10"),
    ("synth.vocab", "20"),
    ("synth.tokens_per_type", "40"),
    ("synth.train_tokens_per_type", "40"),
    ("synth.speakers", "5"),
    ("synth.phones", "10"),
    ("synth.phone_sd", "0.2"),
    ("synth.mean_sd", "1.0"),
    ("synth.min_phones_per_word", "3"),
    ("synth.max_phones_per_word", "5"),
    ("synth.frames_per_phone", "5"),
    ("synth.min_length_factor", "0.7"),
    ("synth.max_length_factor", "1.4"),
    ("synth.min_gain", "0.8"),
    ("synth.max_gain", "1.2"),
    ("synth.bias_sd", "0.1"),
    ("synth.noise_sd", "0.05"),
    ("synth.words_per_utterance", "5"),
    ("synth.pairs_per_type", "30"),
    // 0 uses every available core
    ("threads", "0"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: '{v}' is not a boolean"))),
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key '{key}'"))),
        }
    }

    /// Applies an override of the form `key=value`.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k, v)
    }

    /// Applies every `key=value` line of `text` (blank lines and `#`
    /// comments allowed).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            self.apply_override(content)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
    }

    fn get_bool(&self, key: &str) -> Result<bool> {
        parse_bool(key, self.raw(key)?)
    }

    /// Canonical `key=value` lines in sorted key order.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Config::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Parses every typed section, so bad values fail before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.mfcc()?;
        self.cmvn()?;
        self.model(ModelKind::Ae)?;
        self.vae()?;
        self.train()?;
        self.seeds()?;
        self.random_segments()?;
        self.pair_filter()?;
        self.time_unit("pairs.time_unit")?;
        self.time_unit("eval.time_unit")?;
        self.dtw()?;
        self.downsample_k()?;
        self.synth()?;
        self.threads()?;
        Ok(())
    }

    pub fn mfcc(&self) -> Result<MfccConfig> {
        Ok(MfccConfig {
            window_ms: self.get("mfcc.window_ms")?,
            hop_ms: self.get("mfcc.hop_ms")?,
            fft_size: self.get("mfcc.fft_size")?,
            mel_filters: self.get("mfcc.mel_filters")?,
            num_ceps: self.get("mfcc.num_ceps")?,
            pre_emphasis: self.get("mfcc.pre_emphasis")?,
            log_floor: self.get("mfcc.log_floor")?,
        })
    }

    pub fn cmvn(&self) -> Result<CmvnMode> {
        self.raw("features.cmvn")?.parse()
    }

    /// Model architecture; the input dimension follows the MFCC setting.
    pub fn model(&self, kind: ModelKind) -> Result<ModelConfig> {
        Ok(ModelConfig {
            kind,
            input_dim: self.get("mfcc.num_ceps")?,
            hidden: self.get("model.hidden")?,
            enc_layers: self.get("model.enc_layers")?,
            dec_layers: self.get("model.dec_layers")?,
            embed_dim: self.get("model.embed_dim")?,
        })
    }

    pub fn vae(&self) -> Result<VaeConfig> {
        let sigma: f64 = self.get("vae.sigma")?;
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::Config("vae.sigma must be positive".into()));
        }
        Ok(VaeConfig { sigma })
    }

    /// Training settings; the seed is taken from the first entry of
    /// `train.seeds` and is normally replaced per run.
    pub fn train(&self) -> Result<TrainConfig> {
        let batch_size: usize = self.get("train.batch_size")?;
        if batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        let patience: usize = self.get("train.patience")?;
        let clip: f64 = self.get("train.clip_norm")?;
        Ok(TrainConfig {
            batch_size,
            max_epochs: self.get("train.max_epochs")?,
            early_stopping: if patience == 0 {
                EarlyStopping::Off
            } else {
                EarlyStopping::Patience(patience)
            },
            pretrain_epochs: self.get("train.pretrain_epochs")?,
            seed: self.seeds()?[0],
            shuffle: self.get_bool("train.shuffle")?,
            adam: AdamConfig {
                lr: self.get("train.lr")?,
                beta1: self.get("train.beta1")?,
                beta2: self.get("train.beta2")?,
                eps: self.get("train.eps")?,
            },
            clip_norm: (clip > 0.0).then_some(clip),
            vae: self.vae()?,
        })
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let raw = self.raw("train.seeds")?;
        let seeds = raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("train.seeds: '{s}' is not a seed")))
            })
            .collect::<Result<Vec<_>>>()?;
        if seeds.is_empty() {
            return Err(Error::Config("train.seeds is empty".into()));
        }
        Ok(seeds)
    }

    /// `(count, min_frames, max_frames)` for random training segments.
    pub fn random_segments(&self) -> Result<(usize, usize, usize)> {
        let count = self.get("train.random_segments")?;
        let min: usize = self.get("train.min_frames")?;
        let max: usize = self.get("train.max_frames")?;
        if min == 0 || max < min {
            return Err(Error::Config(format!(
                "train.min_frames/max_frames: invalid range [{min}, {max}]"
            )));
        }
        Ok((count, min, max))
    }

    pub fn pair_filter(&self) -> Result<(Option<usize>, Option<usize>)> {
        let nz = |v: usize| (v > 0).then_some(v);
        Ok((
            nz(self.get("pairs.min_frames")?),
            nz(self.get("pairs.max_frames")?),
        ))
    }

    pub fn time_unit(&self, key: &str) -> Result<TimeUnit> {
        match self.raw(key)? {
            "frames" => Ok(TimeUnit::Frames),
            "seconds" => Ok(TimeUnit::Seconds),
            v => Err(Error::Config(format!("{key}: '{v}' is not frames|seconds"))),
        }
    }

    pub fn dtw(&self) -> Result<DtwConfig> {
        Ok(DtwConfig {
            local_distance: self.raw("dtw.distance")?.parse::<LocalDistance>()?,
            normalize_by_path_length: self.get_bool("dtw.normalize")?,
        })
    }

    pub fn downsample_k(&self) -> Result<usize> {
        let k: usize = self.get("downsample.k")?;
        if k == 0 {
            return Err(Error::Config("downsample.k must be at least 1".into()));
        }
        Ok(k)
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            vocab: self.get("synth.vocab")?,
            tokens_per_type: self.get("synth.tokens_per_type")?,
            train_tokens_per_type: self.get("synth.train_tokens_per_type")?,
            speakers: self.get("synth.speakers")?,
            dim: self.get("mfcc.num_ceps")?,
            phones: self.get("synth.phones")?,
            phone_sd: self.get("synth.phone_sd")?,
            mean_sd: self.get("synth.mean_sd")?,
            min_phones_per_word: self.get("synth.min_phones_per_word")?,
            max_phones_per_word: self.get("synth.max_phones_per_word")?,
            frames_per_phone: self.get("synth.frames_per_phone")?,
            min_length_factor: self.get("synth.min_length_factor")?,
            max_length_factor: self.get("synth.max_length_factor")?,
            min_gain: self.get("synth.min_gain")?,
            max_gain: self.get("synth.max_gain")?,
            bias_sd: self.get("synth.bias_sd")?,
            noise_sd: self.get("synth.noise_sd")?,
            words_per_utterance: self.get("synth.words_per_utterance")?,
            pairs_per_type: self.get("synth.pairs_per_type")?,
        })
    }

    pub fn threads(&self) -> Result<usize> {
        self.get("threads")
    }
}

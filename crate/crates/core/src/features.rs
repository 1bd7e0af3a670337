//! Static MFCC front end.
//!
//! Pipeline per frame: pre-emphasis, Hamming window, power spectrum, triangular
//! mel filterbank, floored natural log, orthonormal DCT-II keeping the first
//! `num_ceps` coefficients (c0 included). No dithering, no deltas.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data_io::FeatureSequence;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("waveform contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }
}

/// Reads a 16-bit signed PCM mono WAV file, scaling samples to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(Error::Data(format!(
            "{}: expected 16-bit mono PCM, found {} channel(s), {} bits, {:?}",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Waveform::new(samples, spec.sample_rate)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfccConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub mel_filters: usize,
    pub num_ceps: usize,
    pub pre_emphasis: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            mel_filters: 24,
            num_ceps: 13,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    fn validate(&self, sample_rate: u32) -> Result<()> {
        let win = self.window_samples(sample_rate);
        if self.num_ceps == 0 || self.num_ceps > self.mel_filters {
            return Err(Error::Config(format!(
                "num_ceps {} must be in 1..={}",
                self.num_ceps, self.mel_filters
            )));
        }
        if win == 0 || self.hop_samples(sample_rate) == 0 {
            return Err(Error::Config("window and hop must span at least one sample".into()));
        }
        if self.fft_size < win {
            return Err(Error::Config(format!(
                "fft_size {} is smaller than the {win}-sample window",
                self.fft_size
            )));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale between 0 Hz and
/// Nyquist. Row `m` holds the weights of filter `m` over the
/// `fft_size / 2 + 1` spectral bins; weights are evaluated at each bin's
/// exact frequency.
pub fn mel_filterbank(num_filters: usize, fft_size: usize, sample_rate: u32) -> Matrix {
    let bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let max_mel = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(max_mel * i as f64 / (num_filters + 1) as f64))
        .collect();
    let mut fb = Matrix::zeros(num_filters, bins);
    for m in 0..num_filters {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb.set(m, k, w);
        }
    }
    fb
}

/// Center frequencies (Hz) of the filters built by [`mel_filterbank`].
pub fn mel_centers(num_filters: usize, sample_rate: u32) -> Vec<f64> {
    let max_mel = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=num_filters)
        .map(|i| mel_to_hz(max_mel * i as f64 / (num_filters + 1) as f64))
        .collect()
}

/// Orthonormal DCT-II matrix (n×n); row k is basis function k.
pub fn dct_matrix(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m.set(k, i, scale * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos());
        }
    }
    m
}

fn frame_count(n: usize, win: usize, hop: usize) -> Result<usize> {
    if n < win {
        return Err(Error::Data(format!(
            "waveform has {n} samples, shorter than one {win}-sample window"
        )));
    }
    Ok(1 + (n - win) / hop)
}

/// Mel filterbank energies (before the log), one row per frame.
pub fn filterbank_energies(wav: &Waveform, cfg: &MfccConfig) -> Result<Matrix> {
    cfg.validate(wav.sample_rate)?;
    let win = cfg.window_samples(wav.sample_rate);
    let hop = cfg.hop_samples(wav.sample_rate);
    let frames = frame_count(wav.samples.len(), win, hop)?;

    let emphasized: Vec<f64> = wav
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i == 0 {
                s
            } else {
                s - cfg.pre_emphasis * wav.samples[i - 1]
            }
        })
        .collect();
    let hamming: Vec<f64> = (0..win)
        .map(|i| {
            if win == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * i as f64 / (win - 1) as f64).cos()
            }
        })
        .collect();
    let fb = mel_filterbank(cfg.mel_filters, cfg.fft_size, wav.sample_rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let bins = cfg.fft_size / 2 + 1;

    let mut out = Matrix::zeros(frames, cfg.mel_filters);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut power = vec![0.0; bins];
    for t in 0..frames {
        let off = t * hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..win {
            buf[i].re = emphasized[off + i] * hamming[i];
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf[..bins]) {
            *p = c.norm_sqr();
        }
        for m in 0..cfg.mel_filters {
            let e: f64 = fb.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            out.set(t, m, e);
        }
    }
    Ok(out)
}

pub fn compute_mfcc(wav: &Waveform, cfg: &MfccConfig) -> Result<Matrix> {
    let energies = filterbank_energies(wav, cfg)?;
    let dct = dct_matrix(cfg.mel_filters);
    let mut out = Matrix::zeros(energies.rows(), cfg.num_ceps);
    let mut logs = vec![0.0; cfg.mel_filters];
    for t in 0..energies.rows() {
        for (l, e) in logs.iter_mut().zip(energies.row(t)) {
            *l = e.max(cfg.log_floor).ln();
        }
        for k in 0..cfg.num_ceps {
            let c = dct.row(k).iter().zip(&logs).map(|(b, l)| b * l).sum();
            out.set(t, k, c);
        }
    }
    Ok(out)
}

/// [`compute_mfcc`] wrapped as a named sequence.
pub fn mfcc_sequence(
    id: impl Into<String>,
    wav: &Waveform,
    cfg: &MfccConfig,
) -> Result<FeatureSequence> {
    Ok(FeatureSequence::new(id, compute_mfcc(wav, cfg)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CmvnMode {
    #[default]
    None,
    Utterance,
}

impl std::str::FromStr for CmvnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CmvnMode::None),
            "utterance" => Ok(CmvnMode::Utterance),
            _ => Err(Error::Config(format!("unknown cmvn mode '{s}'"))),
        }
    }
}

/// Per-column mean and (population) variance normalization. Constant columns
/// are only mean-subtracted.
pub fn cmvn(frames: &Matrix, mode: CmvnMode) -> Matrix {
    let mut out = frames.clone();
    if mode == CmvnMode::None || frames.rows() == 0 {
        return out;
    }
    let n = frames.rows() as f64;
    for c in 0..frames.cols() {
        let mean = (0..frames.rows()).map(|r| frames.get(r, c)).sum::<f64>() / n;
        let var = (0..frames.rows())
            .map(|r| (frames.get(r, c) - mean).powi(2))
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        for r in 0..frames.rows() {
            let centered = frames.get(r, c) - mean;
            out.set(r, c, if sd > 0.0 { centered / sd } else { centered });
        }
    }
    out
}

//! MFCCs for a synthetic two-tone signal, written to and read back from WAV.
//!
//! cargo run --release --example mfcc_features

use awe::features::{compute_mfcc, mel_centers, read_wav, MfccConfig};

fn main() -> awe::Result<()> {
    let sr = 16_000u32;
    let dir = std::env::temp_dir().join("awe_mfcc_example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("tones.wav");

    // 0.5 s at 500 Hz, then 0.5 s at 2 kHz.
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sr,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).expect("create wav");
    for n in 0..sr {
        let f = if n < sr / 2 { 500.0 } else { 2000.0 };
        let v = 0.3 * (2.0 * std::f64::consts::PI * f * n as f64 / sr as f64).sin();
        w.write_sample((v * i16::MAX as f64) as i16).expect("write sample");
    }
    w.finalize().expect("finalize wav");

    let wav = read_wav(&path)?;
    let cfg = MfccConfig::default();
    let mfcc = compute_mfcc(&wav, &cfg)?;
    println!("{} samples -> {} frames x {} coefficients", wav.samples.len(), mfcc.rows(), mfcc.cols());

    let centers = mel_centers(cfg.mel_filters, sr);
    println!("mel filter centres (Hz): {:?}", centers.iter().map(|c| c.round()).collect::<Vec<_>>());

    for t in [10, 80] {
        let row: Vec<String> = mfcc.row(t).iter().map(|c| format!("{c:7.2}")).collect();
        println!("frame {t:3}: {}", row.join(" "));
    }
    Ok(())
}

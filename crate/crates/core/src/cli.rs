//! Command-line front end: `extract`, `synth`, `train`, `embed`, `eval`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical divergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::baselines::downsample_embed;
use crate::config::Config;
use crate::data_io::{
    extract_segment, filter_pairs, load_eval_list_in, load_pair_list_in, load_segment_list,
    read_feature_archive, sample_random_segments, validate_refs, write_eval_list,
    write_feature_archive, write_pair_list, FeatureArchive, FeatureSequence, SegmentRef,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    same_different_eval, same_different_from_embeddings, Embedder, SameDifferentResult,
};
use crate::features::{cmvn, mfcc_sequence, read_wav};
use crate::models::{embed_all, load_checkpoint, save_checkpoint, EncDec, ModelKind};
use crate::numerics::Matrix;
use crate::synth::generate;
use crate::training::{multi_seed_run, train_ae, train_cae, Validation};

#[derive(Parser, Debug)]
#[command(name = "awe", version, about = "Acoustic word embeddings")]
pub struct Cli {
    /// Configuration file of key=value lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one setting; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute MFCC features for every .wav file in a directory.
    Extract {
        #[arg(long)]
        wav_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus (train/test archives, pairs, eval list).
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train one model per seed.
    Train(TrainArgs),
    /// Embed the segments of a list with a checkpoint or by downsampling.
    Embed(EmbedArgs),
    /// Same-different evaluation.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Ae,
    Vae,
    Cae,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ae => ModelKind::Ae,
            ModelArg::Vae => ModelKind::Vae,
            ModelArg::Cae => ModelKind::Cae,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Training features.
    #[arg(long)]
    pub archive: PathBuf,
    /// Word pairs (required for cae).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Training segments for ae/vae; random segments are drawn when absent.
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Validation features; requires --val-list.
    #[arg(long, requires = "val_list")]
    pub val_archive: Option<PathBuf>,
    #[arg(long, requires = "val_archive")]
    pub val_list: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("embedder").required(true)))]
pub struct EmbedArgs {
    #[arg(long, group = "embedder")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, group = "embedder")]
    pub downsample: bool,
    #[arg(long)]
    pub archive: PathBuf,
    /// Segment list (`utt start end ...`).
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("method").required(true)))]
pub struct EvalArgs {
    /// Precomputed embeddings, one record per eval-list token in order.
    #[arg(long, group = "method")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, group = "method")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, group = "method")]
    pub downsample: bool,
    #[arg(long, group = "method")]
    pub dtw: bool,
    /// Features of the evaluation utterances (unused with --embeddings).
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub eval_list: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the precision-recall curve as TSV.
    #[arg(long)]
    pub pr_curve: Option<PathBuf>,
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for kv in &cli.set {
        cfg.apply_override(kv)?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", &t.to_string())?;
    }
    if let Command::Train(t) = &cli.command {
        if let Some(s) = &t.seeds {
            cfg.set("train.seeds", s)?;
        }
        if let Some(n) = t.pretrain_epochs {
            cfg.set("train.pretrain_epochs", &n.to_string())?;
        }
        if let Some(n) = t.max_epochs {
            cfg.set("train.max_epochs", &n.to_string())?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let threads = cfg.threads()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Extract { wav_dir, out } => cmd_extract(&cfg, wav_dir, out),
        Command::Synth { out_dir, seed } => cmd_synth(&cfg, out_dir, *seed),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Embed(a) => cmd_embed(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `FILE.config` next to a binary output: the hash plus the resolved settings.
fn write_config_sidecar(cfg: &Config, output: &Path) -> Result<()> {
    let mut name = output.as_os_str().to_owned();
    name.push(".config");
    write_text(
        Path::new(&name),
        &format!("# config_hash {}\n{}", cfg.hash(), cfg.to_text()),
    )
}

fn cmd_extract(cfg: &Config, wav_dir: &Path, out: &Path) -> Result<()> {
    let mfcc = cfg.mfcc()?;
    let mode = cfg.cmvn()?;
    let mut files: Vec<PathBuf> = fs::read_dir(wav_dir)
        .map_err(|e| Error::io(wav_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no input files in {}", wav_dir.display())));
    }
    let mut entries = Vec::with_capacity(files.len());
    for path in &files {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("{}: file name is not UTF-8", path.display())))?;
        let wav = read_wav(path)?;
        let mut seq = mfcc_sequence(id, &wav, &mfcc)?;
        seq.frames = cmvn(&seq.frames, mode);
        entries.push(seq);
    }
    write_feature_archive(&entries, out)?;
    write_config_sidecar(cfg, out)?;
    eprintln!("extracted {} utterances to {}", entries.len(), out.display());
    Ok(())
}

fn cmd_synth(cfg: &Config, out_dir: &Path, seed: u64) -> Result<()> {
    let corpus = generate(&cfg.synth()?, seed)?;
    create_dir(out_dir)?;
    let train: Vec<FeatureSequence> = corpus.train.iter().cloned().collect();
    let test: Vec<FeatureSequence> = corpus.test.iter().cloned().collect();
    write_feature_archive(&train, out_dir.join("train.awef"))?;
    write_feature_archive(&test, out_dir.join("test.awef"))?;
    write_pair_list(&corpus.pairs, out_dir.join("pairs.txt"))?;
    write_eval_list(&corpus.eval_tokens, out_dir.join("eval.txt"))?;
    write_eval_list(&corpus.train_tokens, out_dir.join("train_tokens.txt"))?;
    write_text(
        &out_dir.join("config.txt"),
        &format!("# config_hash {}\n# seed {seed}\n{}", cfg.hash(), cfg.to_text()),
    )?;
    eprintln!(
        "synthetic corpus: {} train / {} test utterances, {} pairs, {} eval tokens",
        corpus.train.len(),
        corpus.test.len(),
        corpus.pairs.len(),
        corpus.eval_tokens.len()
    );
    Ok(())
}

fn check_dim(archive: &FeatureArchive, expected: usize, what: &str) -> Result<()> {
    match archive.dim() {
        Some(d) if d != expected => Err(Error::Data(format!(
            "{what} has {d}-dimensional features, model expects {expected}"
        ))),
        _ => Ok(()),
    }
}

fn cmd_train(cfg: &Config, a: &TrainArgs) -> Result<()> {
    let kind: ModelKind = a.model.into();
    let archive = read_feature_archive(&a.archive)?;
    let model_cfg = cfg.model(kind)?;
    check_dim(&archive, model_cfg.input_dim, "training archive")?;
    let base = cfg.train()?;
    let seeds = cfg.seeds()?;

    let pairs = match (kind, &a.pairs) {
        (ModelKind::Cae, None) => {
            return Err(Error::Usage("--model cae requires --pairs".into()));
        }
        (ModelKind::Cae, Some(p)) => {
            let (lo, hi) = cfg.pair_filter()?;
            let pairs = filter_pairs(load_pair_list_in(p, cfg.time_unit("pairs.time_unit")?)?, lo, hi);
            validate_refs(&archive, pairs.iter().flat_map(|p| [&p.a, &p.b]))?;
            if pairs.is_empty() {
                return Err(Error::Data("no pairs left after length filtering".into()));
            }
            Some(pairs)
        }
        _ => None,
    };
    let fixed_segments = match &a.segments {
        Some(p) => {
            let segs = load_segment_list(p)?;
            validate_refs(&archive, segs.iter())?;
            Some(segs)
        }
        None => None,
    };
    let validation = match (&a.val_archive, &a.val_list) {
        (Some(va), Some(vl)) => {
            let v_archive = read_feature_archive(va)?;
            check_dim(&v_archive, model_cfg.input_dim, "validation archive")?;
            let tokens = load_eval_list_in(vl, cfg.time_unit("eval.time_unit")?)?;
            validate_refs(&v_archive, tokens.iter().map(|t| &t.segment))?;
            Some((v_archive, tokens))
        }
        _ => None,
    };
    let (seg_count, seg_min, seg_max) = cfg.random_segments()?;
    let hash = cfg.hash();
    create_dir(&a.out_dir)?;

    let report = multi_seed_run(&seeds, |seed| {
        let mut tcfg = base.clone();
        tcfg.seed = seed;
        let mut model = EncDec::init(model_cfg.clone(), seed)?;
        let val = validation.as_ref().map(|(archive, tokens)| Validation { archive, tokens });
        let report = match &pairs {
            Some(pairs) => train_cae(&archive, pairs, &mut model, &tcfg, val)?,
            None => {
                let segs = match &fixed_segments {
                    Some(s) => s.clone(),
                    None => sample_random_segments(&archive, seg_count, seg_min, seg_max, seed)?,
                };
                train_ae(&archive, &segs, &mut model, &tcfg, val)?
            }
        };
        let final_ap = match &validation {
            Some((archive, tokens)) => Some(Validation { archive, tokens }.ap(&model)?),
            None => None,
        };
        save_checkpoint(&model, &hash, a.out_dir.join(format!("model_seed{seed}.ckpt")))?;
        write_text(
            &a.out_dir.join(format!("train_seed{seed}.log")),
            &format!("# config_hash {hash}\n# epoch, mean_loss[, val_ap]\n{}", report.log_text()),
        )?;
        Ok((report, final_ap))
    })?;
    let text = format!("# model {kind}\n# config_hash {hash}\n{}", report.summary_text());
    write_text(&a.out_dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn segment_frames(archive: &FeatureArchive, segs: &[SegmentRef]) -> Result<Vec<Matrix>> {
    segs.iter()
        .map(|s| extract_segment(archive, s).map(|x| x.frames))
        .collect()
}

fn cmd_embed(cfg: &Config, a: &EmbedArgs) -> Result<()> {
    let archive = read_feature_archive(&a.archive)?;
    let segs = load_segment_list(&a.segments)?;
    validate_refs(&archive, segs.iter())?;
    let frames = segment_frames(&archive, &segs)?;
    let embeddings = match &a.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            check_dim(&archive, ckpt.model.config.input_dim, "archive")?;
            let refs: Vec<&Matrix> = frames.iter().collect();
            embed_all(&ckpt.model, &refs, 64)?
        }
        None => {
            let k = cfg.downsample_k()?;
            frames.iter().map(|x| downsample_embed(x, k)).collect()
        }
    };
    let entries = segs
        .iter()
        .zip(embeddings)
        .enumerate()
        .map(|(i, (s, e))| {
            let id = format!("{i:06}_{}_{}_{}", s.utterance_id, s.start, s.end);
            Ok(FeatureSequence::new(id, Matrix::row_vector(e)))
        })
        .collect::<Result<Vec<_>>>()?;
    write_feature_archive(&entries, &a.out)?;
    write_config_sidecar(cfg, &a.out)?;
    eprintln!("embedded {} segments to {}", entries.len(), a.out.display());
    Ok(())
}

/// Results file: a `#` header, then `name value` lines.
pub fn format_results(
    method: &str,
    config_hash: &str,
    r: &SameDifferentResult,
) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
    let mut s = String::new();
    let _ = writeln!(s, "# model {method}");
    let _ = writeln!(s, "# config_hash {config_hash}");
    let _ = writeln!(s, "# tokens {}", r.token_count);
    let _ = writeln!(s, "# pairs {} ({} same-type)", r.pair_count, r.positive_pairs);
    let _ = writeln!(s, "AP {:.6}", r.ap);
    let _ = writeln!(s, "AP_same_speaker {}", opt(r.ap_same_speaker));
    let _ = writeln!(s, "AP_different_speaker {}", opt(r.ap_different_speaker));
    let _ = writeln!(s, "embed_seconds {:.9}", r.embed_seconds);
    let _ = writeln!(s, "scoring_seconds {:.9}", r.scoring_seconds);
    s
}

fn cmd_eval(cfg: &Config, a: &EvalArgs) -> Result<()> {
    let tokens = load_eval_list_in(&a.eval_list, cfg.time_unit("eval.time_unit")?)?;
    let need_archive = || {
        a.archive
            .as_ref()
            .ok_or_else(|| Error::Usage("--archive is required unless --embeddings is given".into()))
    };

    let (result, method) = if let Some(path) = &a.embeddings {
        let load_start = Instant::now();
        let emb = read_feature_archive(path)?;
        if emb.len() != tokens.len() {
            return Err(Error::Data(format!(
                "{} embeddings for {} tokens",
                emb.len(),
                tokens.len()
            )));
        }
        let vectors: Vec<Vec<f64>> = emb.iter().map(|s| s.frames.data().to_vec()).collect();
        let loaded = load_start.elapsed().as_secs_f64();
        let mut r = same_different_from_embeddings(&tokens, &vectors)?;
        r.embed_seconds = loaded;
        (r, "embeddings".to_string())
    } else {
        let archive = read_feature_archive(need_archive()?)?;
        validate_refs(&archive, tokens.iter().map(|t| &t.segment))?;
        if let Some(path) = &a.checkpoint {
            let ckpt = load_checkpoint(path)?;
            check_dim(&archive, ckpt.model.config.input_dim, "archive")?;
            let embedder = Embedder::Model(&ckpt.model);
            let name = embedder.to_string();
            (same_different_eval(&archive, &tokens, &embedder)?, name)
        } else {
            let embedder = if a.downsample {
                Embedder::Downsample { k: cfg.downsample_k()? }
            } else {
                Embedder::Dtw(cfg.dtw()?)
            };
            let name = embedder.to_string();
            (same_different_eval(&archive, &tokens, &embedder)?, name)
        }
    };

    let text = format_results(&method, &cfg.hash(), &result);
    write_text(&a.out, &text)?;
    if let Some(path) = &a.pr_curve {
        let mut tsv = format!("# config_hash {}\nthreshold\tprecision\trecall\n", cfg.hash());
        for p in &result.curve.points {
            let _ = writeln!(tsv, "{:.9}\t{:.9}\t{:.9}", p.threshold, p.precision, p.recall);
        }
        write_text(path, &tsv)?;
    }
    print!("{text}");
    Ok(())
}

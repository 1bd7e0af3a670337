//! Feature archives, pair and evaluation lists, and random segment sampling.
//!
//! The AWEF archive is little-endian binary:
//!
//! ```text
//! "AWEF" | u32 version=1 | u32 record_count
//! per record: u32 id_len | id (UTF-8) | u32 T | u32 D | T*D f32, row-major
//! ```
//!
//! Pair lists hold one `utt_a start_a end_a utt_b start_b end_b` per line and
//! evaluation lists one `utt start end word_type speaker` per line. Both allow
//! `#` comments and blank lines. Frame indices are half-open `[start, end)`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"AWEF";
pub const ARCHIVE_VERSION: u32 = 1;

/// Frames per second assumed when pair or eval lists are given in seconds.
pub const FRAMES_PER_SECOND: f64 = 100.0;

/// A T×D matrix of frame-level features belonging to one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub utterance_id: String,
    pub frames: Matrix,
}

impl FeatureSequence {
    pub fn new(utterance_id: impl Into<String>, frames: Matrix) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            frames,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Half-open frame range `[start, end)` inside one utterance.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SegmentRef {
    pub utterance_id: String,
    pub start: usize,
    pub end: usize,
}

impl SegmentRef {
    pub fn new(utterance_id: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub a: SegmentRef,
    pub b: SegmentRef,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalToken {
    pub segment: SegmentRef,
    pub word_type: String,
    pub speaker: String,
}

/// Units of the start/end columns in list files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TimeUnit {
    #[default]
    Frames,
    /// Seconds, converted at [`FRAMES_PER_SECOND`] and rounded to the nearest frame.
    Seconds,
}

/// Utterance-keyed feature matrices, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureArchive {
    entries: Vec<FeatureSequence>,
    index: HashMap<String, usize>,
}

impl FeatureArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<FeatureSequence>) -> Result<Self> {
        let mut archive = Self::new();
        for e in entries {
            archive.insert(e)?;
        }
        Ok(archive)
    }

    pub fn insert(&mut self, seq: FeatureSequence) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Data(format!(
                "utterance '{}' has no frames",
                seq.utterance_id
            )));
        }
        if let Some(d) = self.dim() {
            if seq.dim() != d {
                return Err(Error::Data(format!(
                    "utterance '{}' has dimension {}, archive has {d}",
                    seq.utterance_id,
                    seq.dim()
                )));
            }
        }
        if self.index.contains_key(&seq.utterance_id) {
            return Err(Error::Data(format!(
                "duplicate utterance id '{}'",
                seq.utterance_id
            )));
        }
        self.index.insert(seq.utterance_id.clone(), self.entries.len());
        self.entries.push(seq);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FeatureSequence> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Feature dimension, or `None` for an empty archive.
    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(FeatureSequence::dim)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureSequence> {
        self.entries.iter()
    }

    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(FeatureSequence::len).sum()
    }
}

pub fn encode_feature_archive(entries: &[FeatureSequence]) -> Result<Vec<u8>> {
    let mut seen = HashMap::new();
    let dim = entries.first().map(FeatureSequence::dim);
    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        if seen.insert(e.utterance_id.as_str(), ()).is_some() {
            return Err(Error::Data(format!(
                "duplicate utterance id '{}'",
                e.utterance_id
            )));
        }
        if Some(e.dim()) != dim {
            return Err(Error::Data(format!(
                "utterance '{}' has dimension {}, expected {}",
                e.utterance_id,
                e.dim(),
                dim.unwrap_or(0)
            )));
        }
        let id = e.utterance_id.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(e.len() as u32).to_le_bytes());
        out.extend_from_slice(&(e.dim() as u32).to_le_bytes());
        for &v in e.frames.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes entries in the given order. Values are stored as 32-bit floats.
pub fn write_feature_archive(entries: &[FeatureSequence], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_archive(entries)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated archive while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_feature_archive(bytes: &[u8]) -> Result<FeatureArchive> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic").ok() != Some(ARCHIVE_MAGIC.as_slice()) {
        return Err(Error::Format("bad magic, not an AWEF archive".into()));
    }
    let version = cur.u32("version")?;
    if version != ARCHIVE_VERSION {
        return Err(Error::Format(format!("unsupported archive version {version}")));
    }
    let count = cur.u32("record count")?;
    let mut archive = FeatureArchive::new();
    for rec in 0..count {
        let id_len = cur.u32("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| Error::Format(format!("record {rec}: id is not UTF-8")))?
            .to_string();
        let t = cur.u32("frame count")? as usize;
        let d = cur.u32("dimension")? as usize;
        let n = t
            .checked_mul(d)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("record '{id}': size overflow")))?;
        let raw = cur.take(n, "frames")?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("record '{id}' contains NaN or Inf")));
        }
        archive.insert(FeatureSequence::new(id, Matrix::from_vec(t, d, data)?))?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last record",
            bytes.len() - cur.pos
        )));
    }
    Ok(archive)
}

pub fn read_feature_archive(path: impl AsRef<Path>) -> Result<FeatureArchive> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_archive(&bytes)
}

/// Rows `[start, end)` of the referenced utterance.
pub fn extract_segment(archive: &FeatureArchive, seg: &SegmentRef) -> Result<FeatureSequence> {
    let utt = archive
        .get(&seg.utterance_id)
        .ok_or_else(|| Error::Data(format!("unknown utterance '{}'", seg.utterance_id)))?;
    if seg.start >= seg.end || seg.end > utt.len() {
        return Err(Error::Data(format!(
            "segment [{}, {}) out of bounds for '{}' with {} frames",
            seg.start,
            seg.end,
            seg.utterance_id,
            utt.len()
        )));
    }
    Ok(FeatureSequence::new(
        seg.utterance_id.clone(),
        utt.frames.slice_rows(seg.start, seg.end),
    ))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let content = line.split('#').next().unwrap_or("");
        let fields: Vec<&str> = content.split_whitespace().collect();
        (!fields.is_empty()).then_some((i + 1, fields))
    })
}

fn parse_time(field: &str, unit: TimeUnit, file: &str, line: usize) -> Result<usize> {
    let err = |msg: String| Error::Parse {
        file: file.to_string(),
        line,
        msg,
    };
    match unit {
        TimeUnit::Frames => field
            .parse::<usize>()
            .map_err(|_| err(format!("'{field}' is not a frame index"))),
        TimeUnit::Seconds => {
            let s: f64 = field
                .parse()
                .map_err(|_| err(format!("'{field}' is not a time in seconds")))?;
            if !(s.is_finite() && s >= 0.0) {
                return Err(err(format!("invalid time '{field}'")));
            }
            Ok((s * FRAMES_PER_SECOND).round() as usize)
        }
    }
}

fn parse_ref(
    fields: &[&str],
    unit: TimeUnit,
    file: &str,
    line: usize,
) -> Result<SegmentRef> {
    let start = parse_time(fields[1], unit, file, line)?;
    let end = parse_time(fields[2], unit, file, line)?;
    if start >= end {
        return Err(Error::Parse {
            file: file.to_string(),
            line,
            msg: format!("start {start} must be less than end {end}"),
        });
    }
    Ok(SegmentRef::new(fields[0], start, end))
}

pub fn parse_pair_list(text: &str, file: &str, unit: TimeUnit) -> Result<Vec<PairEntry>> {
    data_lines(text)
        .map(|(line, f)| {
            if f.len() != 6 {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line,
                    msg: format!("expected 6 fields, found {}", f.len()),
                });
            }
            Ok(PairEntry {
                a: parse_ref(&f[0..3], unit, file, line)?,
                b: parse_ref(&f[3..6], unit, file, line)?,
            })
        })
        .collect()
}

pub fn load_pair_list(path: impl AsRef<Path>) -> Result<Vec<PairEntry>> {
    load_pair_list_in(path, TimeUnit::Frames)
}

pub fn load_pair_list_in(path: impl AsRef<Path>, unit: TimeUnit) -> Result<Vec<PairEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pair_list(&text, &path.display().to_string(), unit)
}

pub fn parse_eval_list(text: &str, file: &str, unit: TimeUnit) -> Result<Vec<EvalToken>> {
    data_lines(text)
        .map(|(line, f)| {
            if f.len() != 5 {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line,
                    msg: format!("expected 5 fields (utt start end word_type speaker), found {}", f.len()),
                });
            }
            Ok(EvalToken {
                segment: parse_ref(&f[0..3], unit, file, line)?,
                word_type: f[3].to_string(),
                speaker: f[4].to_string(),
            })
        })
        .collect()
}

pub fn load_eval_list(path: impl AsRef<Path>) -> Result<Vec<EvalToken>> {
    load_eval_list_in(path, TimeUnit::Frames)
}

pub fn load_eval_list_in(path: impl AsRef<Path>, unit: TimeUnit) -> Result<Vec<EvalToken>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_eval_list(&text, &path.display().to_string(), unit)
}

/// Segment lists take the first three columns (`utt start end`) of each line
/// and ignore the rest, so evaluation lists are valid segment lists.
pub fn parse_segment_list(text: &str, file: &str) -> Result<Vec<SegmentRef>> {
    data_lines(text)
        .map(|(line, f)| {
            if f.len() < 3 {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line,
                    msg: format!("expected at least 3 fields, found {}", f.len()),
                });
            }
            parse_ref(&f[0..3], TimeUnit::Frames, file, line)
        })
        .collect()
}

pub fn load_segment_list(path: impl AsRef<Path>) -> Result<Vec<SegmentRef>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_segment_list(&text, &path.display().to_string())
}

pub fn write_pair_list(pairs: &[PairEntry], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p.a.utterance_id, p.a.start, p.a.end, p.b.utterance_id, p.b.start, p.b.end
        ));
    }
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_eval_list(tokens: &[EvalToken], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    for t in tokens {
        s.push_str(&format!(
            "{} {} {} {} {}\n",
            t.segment.utterance_id, t.segment.start, t.segment.end, t.word_type, t.speaker
        ));
    }
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Checks that every referenced segment lies inside the archive.
pub fn validate_refs<'a>(
    archive: &FeatureArchive,
    refs: impl IntoIterator<Item = &'a SegmentRef>,
) -> Result<()> {
    for r in refs {
        let utt = archive
            .get(&r.utterance_id)
            .ok_or_else(|| Error::Data(format!("unknown utterance '{}'", r.utterance_id)))?;
        if r.end > utt.len() {
            return Err(Error::Data(format!(
                "segment [{}, {}) exceeds '{}' ({} frames)",
                r.start,
                r.end,
                r.utterance_id,
                utt.len()
            )));
        }
    }
    Ok(())
}

/// Keeps pairs whose two segments both have between `min_frames` and
/// `max_frames` frames (inclusive). `None` disables a bound.
pub fn filter_pairs(
    pairs: Vec<PairEntry>,
    min_frames: Option<usize>,
    max_frames: Option<usize>,
) -> Vec<PairEntry> {
    let ok = |s: &SegmentRef| {
        min_frames.is_none_or(|m| s.len() >= m) && max_frames.is_none_or(|m| s.len() <= m)
    };
    pairs.into_iter().filter(|p| ok(&p.a) && ok(&p.b)).collect()
}

/// Draws `count` random segments.
///
/// Utterances with at least `min_frames` frames are eligible and chosen with
/// probability proportional to their length. The segment length is uniform on
/// `[min_frames, min(max_frames, T)]` and the start uniform over valid offsets.
pub fn sample_random_segments(
    archive: &FeatureArchive,
    count: usize,
    min_frames: usize,
    max_frames: usize,
    seed: u64,
) -> Result<Vec<SegmentRef>> {
    if min_frames == 0 || max_frames < min_frames {
        return Err(Error::Usage(format!(
            "invalid segment length range [{min_frames}, {max_frames}]"
        )));
    }
    let eligible: Vec<&FeatureSequence> =
        archive.iter().filter(|u| u.len() >= min_frames).collect();
    if eligible.is_empty() {
        return Err(Error::Data(format!(
            "no utterance has at least {min_frames} frames"
        )));
    }
    let weights = WeightedIndex::new(eligible.iter().map(|u| u.len() as f64))
        .map_err(|e| Error::Data(format!("segment sampler: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let utt = eligible[weights.sample(&mut rng)];
            let longest = max_frames.min(utt.len());
            let len = rng.random_range(min_frames..=longest);
            let start = rng.random_range(0..=utt.len() - len);
            SegmentRef::new(utt.utterance_id.clone(), start, start + len)
        })
        .collect())
}

//! Feature archives, segment extraction and list files.
//!
//! cargo run --release --example feature_archive

use awe::data_io::{
    extract_segment, parse_eval_list, parse_pair_list, read_feature_archive,
    sample_random_segments, write_feature_archive, FeatureSequence, TimeUnit,
};
use awe::numerics::Matrix;

fn main() -> awe::Result<()> {
    let utt = |id: &str, t: usize| {
        let data = (0..t * 3).map(|v| v as f64 * 0.1).collect();
        FeatureSequence::new(id, Matrix::from_vec(t, 3, data).expect("shape"))
    };
    let entries = vec![utt("spk1_utt1", 120), utt("spk2_utt1", 80)];

    let path = std::env::temp_dir().join("awe_example.awef");
    write_feature_archive(&entries, &path)?;
    let archive = read_feature_archive(&path)?;
    println!(
        "{} utterances, {} frames total, dim {:?}",
        archive.len(),
        archive.total_frames(),
        archive.dim()
    );

    let pairs = parse_pair_list(
        "# utt_a start end utt_b start end\nspk1_utt1 0.10 0.45 spk2_utt1 0.20 0.61\n",
        "pairs.txt",
        TimeUnit::Seconds,
    )?;
    let p = &pairs[0];
    println!("pair in frames: {:?} / {:?}", p.a, p.b);
    let seg = extract_segment(&archive, &p.a)?;
    println!("segment {} has {} frames", seg.utterance_id, seg.len());

    let tokens = parse_eval_list("spk1_utt1 10 50 hello spk1\n", "eval.txt", TimeUnit::Frames)?;
    println!("token '{}' from {}", tokens[0].word_type, tokens[0].speaker);

    for s in sample_random_segments(&archive, 5, 20, 40, 7)? {
        println!("random segment {} [{}, {})", s.utterance_id, s.start, s.end);
    }
    Ok(())
}

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::corpus::SynthCorpus;
use super::PipelineError;
use crate::chem::{parse_sdf, write_sdf, FragmentVocab, Molecule};
use crate::codec::TokenSequence;
use crate::geom::{Pose, Quaternion, Vec3, VoxelGrid};

pub const CORPUS_SDF: &str = "corpus.sdf";
pub const VOCAB_DIR: &str = "vocab";
pub const TRAIN_KEYS: &str = "train_keys.txt";

/// Writes `corpus.sdf`, `vocab/`, `train_keys.txt` and `stats.json`.
pub fn write_corpus(dir: &Path, corpus: &SynthCorpus) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CORPUS_SDF), write_sdf(&corpus.molecules))?;
    corpus.vocab.save(dir.join(VOCAB_DIR))?;
    let keys: Vec<String> = corpus.molecules.iter().map(Molecule::canonical_key).collect();
    std::fs::write(dir.join(TRAIN_KEYS), keys.join("\n") + "\n")?;
    let stats = serde_json::json!({
        "molecules": corpus.molecules.len(),
        "rejected_attempts": corpus.rejected,
        "vocab_fragments": corpus.vocab.fragment_count(),
    });
    std::fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<(Vec<Molecule>, FragmentVocab), PipelineError> {
    let mols = parse_sdf(&std::fs::read_to_string(dir.join(CORPUS_SDF))?)?;
    Ok((mols, FragmentVocab::load(dir.join(VOCAB_DIR))?))
}

/// One canonical molecular key per line.
pub fn read_train_keys(path: &Path) -> Result<HashSet<String>, PipelineError> {
    Ok(std::fs::read_to_string(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// `shape_NNN.voxl` files of a directory, ordered by id.
pub fn read_shapes(dir: &Path) -> Result<Vec<(usize, VoxelGrid)>, PipelineError> {
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("shape_"))
            .and_then(|n| n.strip_suffix(".voxl"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(id) = id {
            files.push((id, path));
        }
    }
    files.sort();
    files.into_iter().map(|(id, p)| Ok((id, VoxelGrid::read_voxl_file(&p)?))).collect()
}

/// A sampled sequence with the shape it came from and the pose taking the
/// model frame back to that shape's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRow {
    pub shape: usize,
    pub frame: Pose,
    pub sequence: TokenSequence,
}

const SEQ_HEADER: &str = "shape_id\tqw\tqx\tqy\tqz\ttx\tty\ttz\ttokens";

/// `qw qx qy qz tx ty tz`, tab-separated.
pub fn pose_fields(p: &Pose) -> String {
    let (q, t) = (p.rotation, p.translation);
    format!("{}\t{}\t{}\t{}\t{}\t{}\t{}", q.w, q.x, q.y, q.z, t.x, t.y, t.z)
}

pub fn write_sequences(path: &Path, rows: &[SequenceRow]) -> Result<(), PipelineError> {
    let mut s = format!("{SEQ_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{}\n", r.shape, pose_fields(&r.frame), r.sequence.to_text()));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_sequences(path: &Path) -> Result<Vec<SequenceRow>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let bad = |n: usize| PipelineError::Config(format!("{}: malformed line {}", path.display(), n + 1));
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with("shape_id") {
            continue;
        }
        let cols: Vec<&str> = line.splitn(9, '\t').collect();
        if cols.len() != 9 {
            return Err(bad(n));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n));
        rows.push(SequenceRow {
            shape: cols[0].parse().map_err(|_| bad(n))?,
            frame: Pose::new(
                Quaternion { w: num(cols[1])?, x: num(cols[2])?, y: num(cols[3])?, z: num(cols[4])? }.normalized(),
                Vec3::new(num(cols[5])?, num(cols[6])?, num(cols[7])?),
            ),
            sequence: TokenSequence::from_text(cols[8])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Token;

    #[test]
    fn sequences_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.tsv");
        let rows = vec![
            SequenceRow { shape: 3, frame: Pose::new(Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.7), Vec3::new(1.25, -2.0, 0.5)), sequence: TokenSequence(vec![Token::Bos, Token::Eos]) },
            SequenceRow { shape: 0, frame: Pose::IDENTITY, sequence: TokenSequence(vec![Token::Bos]) },
        ];
        write_sequences(&path, &rows).unwrap();
        assert_eq!(read_sequences(&path).unwrap(), rows);
    }
}

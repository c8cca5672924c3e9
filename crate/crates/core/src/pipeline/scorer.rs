use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::metrics::molecule_tanimoto;
use super::PipelineError;
use crate::chem::{write_sdf, Molecule};
use crate::geom::VoxelGrid;

/// Scores molecules; lower is better. `None` marks an unscored molecule.
pub trait Scorer {
    fn score(&mut self, mols: &[Molecule]) -> Result<Vec<Option<f64>>, PipelineError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invocation {
    /// One process for the whole list.
    Batched,
    /// One process per molecule.
    PerMolecule,
}

/// External scorer run through `sh -c`. SDF records go to stdin; stdout must
/// hold one decimal score per line, one line per record, and the process
/// must exit 0.
#[derive(Debug, Clone)]
pub struct CommandScorer {
    pub command: String,
    pub invocation: Invocation,
    pub timeout: Duration,
}

enum Outcome {
    Output(String),
    Failed(String),
}

impl CommandScorer {
    pub fn new(command: impl Into<String>) -> Self {
        Self { command: command.into(), invocation: Invocation::Batched, timeout: Duration::from_secs(60) }
    }

    fn run(&self, input: String) -> Result<Outcome, PipelineError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let writer = thread::spawn(move || {
            // a scorer may exit without reading everything
            let _ = stdin.write_all(input.as_bytes());
        });
        let reader = thread::spawn(move || {
            let mut s = String::new();
            stdout.read_to_string(&mut s).map(|_| s)
        });
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            thread::sleep(Duration::from_millis(5));
        };
        let _ = writer.join();
        let text = reader.join().map_err(|_| PipelineError::Scorer("stdout reader panicked".into()))?;
        Ok(match status {
            None => Outcome::Failed(format!("timed out after {:?}", self.timeout)),
            Some(s) if !s.success() => Outcome::Failed(format!("exited with {s}")),
            Some(_) => Outcome::Output(text?),
        })
    }

    fn parse(text: &str, expected: usize) -> Result<Vec<f64>, PipelineError> {
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if lines.len() != expected {
            return Err(PipelineError::Scorer(format!("expected {expected} scores, got {}", lines.len())));
        }
        lines
            .iter()
            .map(|l| l.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| PipelineError::Scorer(format!("bad score line `{l}`"))))
            .collect()
    }

    fn score_batch(&self, mols: &[Molecule]) -> Result<Vec<Option<f64>>, PipelineError> {
        match self.run(write_sdf(mols))? {
            Outcome::Output(text) => Ok(Self::parse(&text, mols.len())?.into_iter().map(Some).collect()),
            Outcome::Failed(why) => {
                log::warn!("scorer failed on {} molecules: {why}", mols.len());
                Ok(vec![None; mols.len()])
            }
        }
    }
}

impl Scorer for CommandScorer {
    fn score(&mut self, mols: &[Molecule]) -> Result<Vec<Option<f64>>, PipelineError> {
        if mols.is_empty() {
            return Ok(Vec::new());
        }
        match self.invocation {
            Invocation::Batched => self.score_batch(mols),
            Invocation::PerMolecule => {
                let mut out = Vec::with_capacity(mols.len());
                for m in mols {
                    out.extend(self.score_batch(std::slice::from_ref(m))?);
                }
                Ok(out)
            }
        }
    }
}

/// Self-contained stand-in: negated shape Tanimoto against a target shape.
#[derive(Debug, Clone)]
pub struct ShapeScorer {
    pub shape: VoxelGrid,
}

impl Scorer for ShapeScorer {
    fn score(&mut self, mols: &[Molecule]) -> Result<Vec<Option<f64>>, PipelineError> {
        mols.iter().map(|m| molecule_tanimoto(&self.shape, m).map(|t| Some(-t))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub kept: Vec<Molecule>,
    /// One entry per input molecule.
    pub scores: Vec<Option<f64>>,
    pub unscored: usize,
}

/// Keeps molecules scoring at or below `threshold`. Unscored molecules are
/// dropped and counted.
pub fn score_filter(mols: &[Molecule], scorer: &mut dyn Scorer, threshold: f64) -> Result<Filtered, PipelineError> {
    let scores = scorer.score(mols)?;
    if scores.len() != mols.len() {
        return Err(PipelineError::Scorer(format!("{} scores for {} molecules", scores.len(), mols.len())));
    }
    let kept = mols.iter().zip(&scores).filter(|(_, s)| s.is_some_and(|v| v <= threshold)).map(|(m, _)| m.clone()).collect();
    let unscored = scores.iter().filter(|s| s.is_none()).count();
    Ok(Filtered { kept, scores, unscored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::base_library;

    fn mols() -> Vec<Molecule> {
        base_library().into_iter().take(6).collect()
    }

    // one score per record: -(atom count) read from the counts line
    const ATOMS: &str = "awk 'NR==1||prev==\"$$$$\"{n=0} {n++} n==4{print -($1+0)} {prev=$0}'";

    #[test]
    fn constant_stub_keeps_all() {
        let ms = mols();
        let mut s = CommandScorer::new("awk '/^\\$\\$\\$\\$/{print -10}'");
        let f = score_filter(&ms, &mut s, -5.0).unwrap();
        assert_eq!(f.kept, ms);
        assert!(f.scores.iter().all(|&v| v == Some(-10.0)));
        assert!(score_filter(&[], &mut s, -5.0).unwrap().kept.is_empty());
    }

    #[test]
    fn index_dependent_stub_matches_manual_threshold() {
        let ms = mols();
        let mut batched = CommandScorer::new(ATOMS);
        let f = score_filter(&ms, &mut batched, -7.5).unwrap();
        let expected: Vec<Option<f64>> = ms.iter().map(|m| Some(-(m.atoms.len() as f64))).collect();
        assert_eq!(f.scores, expected);
        let manual: Vec<Molecule> = ms.iter().filter(|m| m.atoms.len() as f64 >= 7.5).cloned().collect();
        assert_eq!(f.kept, manual);
        let mut single = CommandScorer { invocation: Invocation::PerMolecule, ..batched };
        assert_eq!(score_filter(&ms, &mut single, -7.5).unwrap(), f);
    }

    #[test]
    fn failures_and_protocol_errors() {
        let ms = mols();
        let mut failing = CommandScorer::new("cat >/dev/null; exit 3");
        let f = score_filter(&ms, &mut failing, 0.0).unwrap();
        assert_eq!((f.kept.len(), f.unscored), (0, ms.len()));
        let mut slow = CommandScorer { timeout: Duration::from_millis(200), ..CommandScorer::new("sleep 5") };
        assert_eq!(score_filter(&ms[..1], &mut slow, 0.0).unwrap().unscored, 1);
        let mut short = CommandScorer::new("cat >/dev/null; echo 1");
        assert!(matches!(score_filter(&ms, &mut short, 0.0), Err(PipelineError::Scorer(_))));
        let mut junk = CommandScorer::new("cat >/dev/null; echo x");
        assert!(score_filter(&ms[..1], &mut junk, 0.0).is_err());
    }
}

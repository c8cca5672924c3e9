use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::thread;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{dedup_indices, metrics, molecule_tanimoto, MetricsParams, MetricsReport};
use super::scorer::{score_filter, CommandScorer, Scorer, ShapeScorer};
use super::artifacts::pose_fields;
use super::frame::{grid_frame, ligand_spec, resample_posed};
use super::PipelineError;
use crate::assembler::{assemble, rejection_report, sanitize, RejectCode, Rejection};
use crate::chem::{write_record, FragmentVocab, Molecule};
use crate::codec::{delinearize, CodecParams, TokenSequence};
use crate::geom::{GridSpec, Pose, VoxelGrid};
use crate::model::{generate, load_checkpoint, ModelParams};
use crate::sketch::{sketch_from_ligand, sketch_from_pocket, stream, write_shapes, PocketShape, SketchParams};

/// What one sampled sequence became.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub shape: usize,
    pub sequence: TokenSequence,
    pub assembled: Option<Molecule>,
    pub outcome: Result<Molecule, Rejection>,
}

/// A target shape on the model grid, the pose taking model coordinates back
/// to input coordinates, and the input shape itself.
#[derive(Debug, Clone)]
pub struct ModelShape {
    pub grid: VoxelGrid,
    pub frame: Pose,
    pub source: VoxelGrid,
}

/// Places a shape on the model's grid in its own canonical frame.
pub fn to_model_frame(shape: &VoxelGrid, model_spec: &GridSpec) -> Option<ModelShape> {
    let frame = grid_frame(shape)?;
    Some(ModelShape { grid: resample_posed(shape, model_spec, &frame), frame, source: shape.clone() })
}

/// Samples `n` sequences for one shape and pushes each through delinearize,
/// assemble and sanitize. Molecules stay in the model frame.
pub fn design_shape(
    shape: &VoxelGrid,
    id: usize,
    params: &ModelParams,
    vocab: &FragmentVocab,
    codec: &CodecParams,
    n: usize,
    top_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Candidate>, PipelineError> {
    let generated = generate(shape, params, n, top_p, rng)?;
    let mut out = Vec::with_capacity(generated.sequences.len());
    for (k, seq) in generated.sequences.into_iter().enumerate() {
        let (assembled, outcome) = realize(&seq, vocab, codec, &format!("gen_{id:03}_{k:03}"));
        out.push(Candidate { shape: id, sequence: seq, assembled, outcome });
    }
    Ok(out)
}

/// Delinearises, assembles and sanitises one sequence.
pub fn realize(seq: &TokenSequence, vocab: &FragmentVocab, codec: &CodecParams, name: &str) -> (Option<Molecule>, Result<Molecule, Rejection>) {
    let assembled = delinearize(seq, Some(vocab), codec).ok().and_then(|tree| assemble(&tree, vocab, name).ok()).map(|a| a.molecule);
    let outcome = match &assembled {
        Some(m) => sanitize(m),
        None => Err(Rejection { code: RejectCode::Empty, detail: "sequence did not assemble".into() }),
    };
    (assembled, outcome)
}

/// Runs `f` over `0..n` on up to `workers` threads; results keep index order.
pub fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, workers: usize, f: F) -> Vec<T> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    thread::scope(|s| {
        for (w, chunk) in slots.chunks_mut(n.div_ceil(workers)).enumerate() {
            let f = &f;
            let start = w * n.div_ceil(workers);
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(start + k));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

#[derive(Debug, Clone)]
pub enum DesignInput {
    Pocket { pocket: PocketShape, path: Option<PathBuf> },
    Ligand { ligand: Molecule, path: Option<PathBuf> },
}

#[derive(Debug, Clone)]
pub enum ScoreSpec {
    Command(CommandScorer),
    /// Negated Tanimoto against each molecule's source shape.
    Shape,
}

#[derive(Debug, Clone)]
pub struct DesignParams {
    pub sketch: SketchParams,
    /// Molecules available to ligand-derived seeds.
    pub library: Vec<Molecule>,
    pub n_per_shape: usize,
    pub top_p: f64,
    pub scorer: Option<ScoreSpec>,
    /// Scores at or below pass the filter and count as successes.
    pub threshold: f64,
    pub train_keys: HashSet<String>,
    pub metrics: MetricsParams,
    pub workers: usize,
    pub seed: u64,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            sketch: SketchParams::default(),
            library: Vec::new(),
            n_per_shape: 10,
            top_p: 0.95,
            scorer: None,
            threshold: 0.0,
            train_keys: HashSet::new(),
            metrics: MetricsParams::default(),
            workers: thread::available_parallelism().map_or(1, |n| n.get()),
            seed: 0,
        }
    }
}

/// Sample counts per stage. `requested` is shapes × samples per shape.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    pub shapes: usize,
    pub requested: usize,
    pub generated: usize,
    pub assembled: usize,
    pub sanitized: usize,
    pub deduped: usize,
    pub scored: usize,
}

impl StageCounts {
    pub fn is_monotone(&self) -> bool {
        let c = [self.requested, self.generated, self.assembled, self.sanitized, self.deduped, self.scored];
        c.windows(2).all(|w| w[0] >= w[1])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub input: String,
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub seed: u64,
    pub sketch: String,
    pub n_per_shape: usize,
    pub top_p: f64,
    pub scorer: Option<String>,
    pub threshold: f64,
    pub outputs: Vec<PathBuf>,
    pub counts: StageCounts,
    pub metrics: Option<MetricsReport>,
    /// Set when a stage failed; counts then cover the finished stages only.
    pub error: Option<String>,
}

impl RunManifest {
    fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn emit(dir: &Path, manifest: &mut RunManifest, name: &str, body: String) -> Result<(), PipelineError> {
    std::fs::write(dir.join(name), body)?;
    manifest.outputs.push(PathBuf::from(name));
    Ok(())
}

pub(crate) fn sdf_with_shape(mols: &[(usize, Molecule)]) -> String {
    mols.iter().map(|(s, m)| write_record(m, &[("shape_id".into(), s.to_string())]) + "$$$$\n").collect()
}

/// Sketch → generate → delinearize → assemble → sanitize → dedup →
/// optional score filter → metrics, with every artifact under `run_dir`.
/// On a stage failure the manifest is still written, with `error` set.
pub fn run_design(
    input: &DesignInput,
    checkpoint: &Path,
    vocab_dir: &Path,
    codec: &CodecParams,
    params: &DesignParams,
    run_dir: &Path,
) -> Result<RunManifest, PipelineError> {
    let model = load_checkpoint(checkpoint)?;
    let vocab = FragmentVocab::load(vocab_dir)?;
    if vocab.len() != model.config.vocab_size {
        return Err(PipelineError::Config(format!("vocabulary has {} tokens, checkpoint expects {}", vocab.len(), model.config.vocab_size)));
    }
    std::fs::create_dir_all(run_dir)?;
    let (input_desc, path) = match input {
        DesignInput::Pocket { path, .. } => ("pocket", path),
        DesignInput::Ligand { path, .. } => ("ligand", path),
    };
    let mut manifest = RunManifest {
        run_id: run_dir.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned()),
        input: path.as_ref().map_or_else(|| input_desc.to_string(), |p| format!("{input_desc}:{}", p.display())),
        checkpoint: checkpoint.to_path_buf(),
        vocab: vocab_dir.to_path_buf(),
        seed: params.seed,
        sketch: format!("{:?}", params.sketch),
        n_per_shape: params.n_per_shape,
        top_p: params.top_p,
        scorer: params.scorer.as_ref().map(|s| match s {
            ScoreSpec::Command(c) => c.command.clone(),
            ScoreSpec::Shape => "shape".into(),
        }),
        threshold: params.threshold,
        outputs: Vec::new(),
        counts: StageCounts::default(),
        metrics: None,
        error: None,
    };
    let result = stages(input, &model, &vocab, codec, params, run_dir, &mut manifest);
    if let Err(e) = &result {
        manifest.error = Some(e.to_string());
    }
    manifest.write(run_dir)?;
    result.map(|()| manifest)
}

fn stages(
    input: &DesignInput,
    model: &ModelParams,
    vocab: &FragmentVocab,
    codec: &CodecParams,
    params: &DesignParams,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    let spec = model.config.grid_spec();

    let shapes: Vec<ModelShape> = match input {
        DesignInput::Pocket { pocket, .. } => {
            let sketched = sketch_from_pocket(pocket, &SketchParams { seed: params.seed, ..params.sketch.clone() }, &params.library)?;
            write_shapes(dir.join("shapes"), &sketched.shapes)?;
            sketched.shapes.iter().filter_map(|s| to_model_frame(&s.grid, &spec)).collect()
        }
        DesignInput::Ligand { ligand, .. } => {
            let grid = sketch_from_ligand(ligand, &ligand_spec(ligand))?;
            std::fs::create_dir_all(dir.join("shapes"))?;
            grid.write_voxl_file(dir.join("shapes").join("shape_000.voxl"))?;
            to_model_frame(&grid, &spec).into_iter().collect()
        }
    };
    manifest.outputs.push(PathBuf::from("shapes"));
    let mut model_shapes = String::new();
    for (i, s) in shapes.iter().enumerate() {
        model_shapes.push_str(&format!("{i}\t{}\n", pose_fields(&s.frame)));
    }
    emit(dir, manifest, "shape_frames.tsv", model_shapes)?;
    manifest.counts.shapes = shapes.len();
    manifest.counts.requested = shapes.len() * params.n_per_shape;

    let per_shape = parallel_map(shapes.len(), params.workers, |i| {
        let mut rng = stream(params.seed ^ 0x6765_6e65_7261_7465, i as u64);
        design_shape(&shapes[i].grid, i, model, vocab, codec, params.n_per_shape, params.top_p, &mut rng)
    });
    let candidates: Vec<Candidate> = per_shape.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect();
    manifest.counts.generated = candidates.len();
    emit(dir, manifest, "sequences.tsv", candidates.iter().map(|c| format!("{}\t{}\n", c.shape, c.sequence.to_text())).collect())?;

    let shifted = |c: &Candidate, m: &Molecule| m.transformed(&shapes[c.shape].frame);
    let assembled: Vec<(usize, Molecule)> = candidates.iter().filter_map(|c| c.assembled.as_ref().map(|m| (c.shape, shifted(c, m)))).collect();
    manifest.counts.assembled = assembled.len();
    emit(dir, manifest, "assembled.sdf", sdf_with_shape(&assembled))?;

    let rejections: Vec<(String, Rejection)> = candidates
        .iter()
        .filter_map(|c| match (&c.assembled, &c.outcome) {
            (Some(m), Err(r)) => Some((m.name.clone(), r.clone())),
            _ => None,
        })
        .collect();
    emit(dir, manifest, "rejections.tsv", rejection_report(&rejections))?;
    // model frame copies; metrics only need graphs
    let sanitized: Vec<(usize, Molecule)> = candidates.iter().filter_map(|c| c.outcome.as_ref().ok().map(|m| (c.shape, m.clone()))).collect();
    manifest.counts.sanitized = sanitized.len();
    let world = |list: &[(usize, Molecule)]| -> Vec<(usize, Molecule)> { list.iter().map(|(s, m)| (*s, m.transformed(&shapes[*s].frame))).collect() };
    emit(dir, manifest, "sanitized.sdf", sdf_with_shape(&world(&sanitized)))?;

    let mols: Vec<Molecule> = sanitized.iter().map(|p| p.1.clone()).collect();
    let keep = dedup_indices(&mols);
    let unique: Vec<(usize, Molecule)> = keep.iter().map(|&i| sanitized[i].clone()).collect();
    manifest.counts.deduped = unique.len();
    emit(dir, manifest, "deduped.sdf", sdf_with_shape(&world(&unique)))?;

    let mut unique_scores: Vec<Option<f64>> = vec![None; unique.len()];
    let kept: Vec<(usize, Molecule)> = match &params.scorer {
        None => {
            manifest.counts.scored = unique.len();
            unique.clone()
        }
        Some(spec) => {
            let threshold = params.threshold;
            let kept = match spec {
                ScoreSpec::Command(cmd) => {
                    let w: Vec<Molecule> = world(&unique).into_iter().map(|p| p.1).collect();
                    let f = score_filter(&w, &mut cmd.clone(), threshold)?;
                    unique_scores = f.scores;
                    unique.iter().zip(&unique_scores).filter(|(_, s)| s.is_some_and(|v| v <= threshold)).map(|(p, _)| p.clone()).collect::<Vec<_>>()
                }
                ScoreSpec::Shape => {
                    for (k, (s, m)) in world(&unique).iter().enumerate() {
                        let mut sc = ShapeScorer { shape: shapes[*s].source.clone() };
                        unique_scores[k] = sc.score(std::slice::from_ref(m))?[0];
                    }
                    unique.iter().zip(&unique_scores).filter(|(_, s)| s.is_some_and(|v| v <= threshold)).map(|(p, _)| p.clone()).collect()
                }
            };
            let rows: String = unique.iter().zip(&unique_scores).map(|((s, m), v)| format!("{}\t{s}\t{}\n", m.name, v.map_or_else(|| "NA".into(), |v| format!("{v:.6}")))).collect();
            emit(dir, manifest, "scores.tsv", format!("name\tshape_id\tscore\n{rows}"))?;
            manifest.counts.scored = kept.len();
            kept
        }
    };
    emit(dir, manifest, "kept.sdf", sdf_with_shape(&world(&kept)))?;

    if !mols.is_empty() {
        // duplicates inherit the score of their first occurrence
        let mut scores = vec![None; mols.len()];
        let key_of: std::collections::HashMap<String, usize> = keep.iter().enumerate().map(|(k, &i)| (mols[i].canonical_key(), k)).collect();
        for (i, m) in mols.iter().enumerate() {
            scores[i] = unique_scores[key_of[&m.canonical_key()]];
        }
        let mp = MetricsParams { success_threshold: params.scorer.as_ref().map(|_| params.threshold), ..params.metrics.clone() };
        let report = metrics(&mols, &scores, &params.train_keys, &mp)?;
        let tanimoto: Vec<f64> = world(&sanitized).iter().map(|(s, m)| molecule_tanimoto(&shapes[*s].source, m)).collect::<Result<_, _>>()?;
        let mean_t = tanimoto.iter().sum::<f64>() / tanimoto.len() as f64;
        emit(dir, manifest, "metrics.json", serde_json::to_string_pretty(&serde_json::json!({ "report": report, "mean_shape_tanimoto": mean_t }))? + "\n")?;
        manifest.metrics = Some(report);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        for workers in [1, 2, 3, 8] {
            assert_eq!(parallel_map(7, workers, |i| i * i), vec![0, 1, 4, 9, 16, 25, 36]);
        }
        assert!(parallel_map(0, 4, |i| i).is_empty());
    }

    #[test]
    fn model_frame_centres_and_maps_back() {
        let src = GridSpec::new(1.0, 30, crate::geom::Vec3::ZERO).unwrap();
        let mut g = VoxelGrid::empty(src);
        for x in 18..26 {
            for y in 5..8 {
                g.set(x, y, 10, true);
            }
        }
        g.set(18, 8, 10, true);
        let model = GridSpec::centered(crate::geom::Vec3::ZERO, 1.0, 16);
        let m = to_model_frame(&g, &model).unwrap();
        assert_eq!(m.grid.count(), g.count());
        // point sampling moves each cell by at most half a cell diagonal
        let half_diag = 3f64.sqrt() / 2.0;
        assert!(m.grid.centroid().unwrap().norm() <= half_diag);
        let back = m.frame.apply(m.grid.centroid().unwrap());
        assert!(back.distance(g.centroid().unwrap()) <= half_diag);
        assert!(to_model_frame(&VoxelGrid::empty(src), &model).is_none());
    }

    #[test]
    fn missing_checkpoint_fails_before_work() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let input = DesignInput::Ligand { ligand: crate::pipeline::base_library().remove(0), path: None };
        let r = run_design(&input, &dir.path().join("none.ckpt"), dir.path(), &CodecParams::default(), &DesignParams::default(), &run);
        assert!(r.is_err());
        assert!(!run.exists());
    }
}

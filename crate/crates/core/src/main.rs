use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sketchmol::assembler::rejection_report;
use sketchmol::chem::{parse_molecule, parse_sdf, parse_sdf_records, write_sdf, Molecule, RuleTable};
use sketchmol::codec::CodecParams;
use sketchmol::geom::{GridSpec, Vec3};
use sketchmol::model::{generate, load_checkpoint, train, ModelConfig, ModelParams, OptConfig};
use sketchmol::pipeline::{
    base_library, dedup_indices, histogram_csv, metrics, molecule_tanimoto, read_corpus, read_sequences, read_shapes, read_train_keys,
    realize, run_design, score_filter, synth_corpus, to_model_frame, training_items, write_corpus, write_sequences, CommandScorer, Config,
    DesignInput, DesignParams, Invocation, MetricsParams, PipelineError, ScoreSpec, SequenceRow, SynthParams, VOCAB_DIR,
};
use sketchmol::sketch::{box_pocket, pocket_from_atoms, sketch_from_ligand, sketch_from_pocket, stream, write_shapes, PocketShape, SketchParams};

#[derive(Parser)]
#[command(name = "sketchmol", version, about = "Sketch 3D molecular shapes and fill them with generated molecules")]
struct Cli {
    /// key=value settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesise a training corpus and its fragment vocabulary.
    Corpus(CorpusArgs),
    /// Train a shape-to-sequence model on a corpus.
    Train(TrainArgs),
    /// Sketch molecular shapes from a pocket or a ligand.
    Sketch(SketchArgs),
    /// Sample fragment sequences for sketched shapes.
    Generate(GenerateArgs),
    /// Turn sampled sequences into sanitised, deduplicated molecules.
    Assemble(AssembleArgs),
    /// Score molecules and report metrics.
    Eval(EvalArgs),
    /// Run sketch, generate, assemble and eval in one go.
    Design(DesignArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    size: Option<usize>,
    /// Base molecules to take fragments from (SDF); defaults to the built-in set.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Stop after this many minutes even if steps remain.
    #[arg(long)]
    minutes: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SketchArgs {
    /// Pocket atoms (SDF), a cavity grid (.voxl) or `box:SIDE` for a cubic cavity.
    #[arg(long, conflicts_with = "ligand", required_unless_present = "ligand")]
    pocket: Option<String>,
    #[arg(long)]
    ligand: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_shapes: Option<usize>,
    #[arg(long)]
    vmin: Option<f64>,
    #[arg(long)]
    vmax: Option<f64>,
    /// Grid pitch in Å.
    #[arg(long)]
    pitch: Option<f64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    shapes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AssembleArgs {
    #[arg(long)]
    sequences: PathBuf,
    /// Vocabulary directory written by `corpus`.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    molecules: PathBuf,
    /// Shell command following the scorer protocol, or `shape` for the
    /// built-in shape scorer (needs --shapes).
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    shapes: Option<PathBuf>,
    /// Scores at or below pass; required with a scorer.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long)]
    train_keys: Option<PathBuf>,
    /// Invoke the scorer once per molecule instead of once per file.
    #[arg(long)]
    per_molecule: bool,
    /// Write the score histogram as CSV.
    #[arg(long)]
    plot_histogram: Option<PathBuf>,
    #[arg(long)]
    prod: Option<String>,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, conflicts_with = "ligand", required_unless_present = "ligand")]
    pocket: Option<String>,
    #[arg(long)]
    ligand: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_shapes: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long)]
    train_keys: Option<PathBuf>,
}

/// Flag, then config key, then default.
fn pick<T: std::str::FromStr>(flag: Option<T>, cfg: &Config, key: &str, default: T) -> Result<T, PipelineError> {
    match flag {
        Some(v) => Ok(v),
        None => cfg.get_or(key, default),
    }
}

/// Environment override, then flag, then config, then 0.
fn seed(flag: Option<u64>, cfg: &Config) -> Result<u64, PipelineError> {
    let mut c = cfg.clone();
    if let Some(s) = flag {
        c.set("seed", s);
    }
    c.seed(0)
}

fn read_sdf_file(path: &Path) -> Result<Vec<Molecule>, PipelineError> {
    Ok(parse_sdf(&std::fs::read_to_string(path)?)?)
}

fn load_pocket(spec: &str, pitch: f64) -> Result<PocketShape, PipelineError> {
    if let Some(side) = spec.strip_prefix("box:") {
        let side: f64 = side.parse().map_err(|_| PipelineError::Config(format!("bad box side `{side}`")))?;
        return Ok(box_pocket(side, 2.0, pitch)?);
    }
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "voxl") {
        return Ok(PocketShape::new(sketchmol::geom::VoxelGrid::read_voxl_file(path)?)?);
    }
    let atoms = parse_molecule(&std::fs::read_to_string(path)?)?;
    let pos = atoms.positions();
    let lo = pos.iter().fold(Vec3::splat(f64::INFINITY), |a, p| Vec3::new(a.x.min(p.x), a.y.min(p.y), a.z.min(p.z)));
    let hi = pos.iter().fold(Vec3::splat(f64::NEG_INFINITY), |a, p| Vec3::new(a.x.max(p.x), a.y.max(p.y), a.z.max(p.z)));
    Ok(pocket_from_atoms(&atoms, lo, hi, pitch)?)
}

fn sketch_params(cfg: &Config, seed: u64, n: Option<usize>, vmin: Option<f64>, vmax: Option<f64>) -> Result<SketchParams, PipelineError> {
    let d = SketchParams::default();
    Ok(SketchParams {
        v_min: pick(vmin, cfg, "v_min", d.v_min)?,
        v_max: pick(vmax, cfg, "v_max", d.v_max)?,
        n_shapes: pick(n, cfg, "n_shapes", d.n_shapes)?,
        max_attempts: cfg.get_or("max_attempts", d.max_attempts)?,
        seed,
        ..d
    })
}

fn codec_for(model: &ModelConfig, cfg: &Config) -> Result<CodecParams, PipelineError> {
    Ok(CodecParams { length: cfg.get_or("codec_length", CodecParams::default().length)?, bins_t: model.bins_t, bins_r: model.bins_r })
}

fn corpus(a: CorpusArgs, cfg: &Config) -> Result<(), PipelineError> {
    let base = match &a.base {
        Some(p) => read_sdf_file(p)?,
        None => base_library(),
    };
    let size = pick(a.size, cfg, "corpus_size", 5000)?;
    let d = SynthParams::default();
    let params = SynthParams { max_nodes: cfg.get_or("max_nodes", d.max_nodes)?, min_nodes: cfg.get_or("min_nodes", d.min_nodes)?, ..d };
    let mut rng = ChaCha8Rng::seed_from_u64(seed(a.seed, cfg)?);
    let out = synth_corpus(&base, size, &params, &mut rng)?;
    write_corpus(&a.out, &out)?;
    println!("{} molecules, {} fragments, {} rejected attempts -> {}", out.molecules.len(), out.vocab.fragment_count(), out.rejected, a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs, cfg: &Config) -> Result<(), PipelineError> {
    let (mols, vocab) = read_corpus(&a.corpus)?;
    let d = ModelConfig::default();
    let model_cfg = ModelConfig {
        dim: pick(a.dim, cfg, "dim", d.dim)?,
        layers_enc: cfg.get_or("layers_enc", d.layers_enc)?,
        layers_dec: cfg.get_or("layers_dec", d.layers_dec)?,
        heads: cfg.get_or("heads", d.heads)?,
        ffn: cfg.get_or("ffn", d.ffn)?,
        max_len: cfg.get_or("max_len", d.max_len)?,
        dropout: cfg.get_or("dropout", d.dropout)?,
        vocab_size: vocab.len(),
        ..d
    };
    let o = OptConfig::default();
    let minutes: Option<f64> = match a.minutes {
        Some(m) => Some(m),
        None => cfg.get("minutes")?,
    };
    let opt = OptConfig {
        steps: pick(a.steps, cfg, "steps", o.steps)?,
        batch_size: pick(a.batch_size, cfg, "batch_size", o.batch_size)?,
        lr: pick(a.lr, cfg, "lr", o.lr)?,
        warmup: pick(a.warmup, cfg, "warmup", o.warmup)?,
        time_budget: minutes.map(|m| Duration::from_secs_f64(m * 60.0)),
        augment: cfg.get_or("augment", o.augment)?,
        rotate: cfg.get_or("augment_rotate", o.rotate)?,
        translate: cfg.get_or("augment_translate", o.translate)?,
        voxel_noise: cfg.get_or("voxel_noise", o.voxel_noise)?,
        ..o
    };
    let codec = codec_for(&model_cfg, cfg)?;
    let (items, skipped) = training_items(&mols, &vocab, &RuleTable::default(), &codec, model_cfg.max_len);
    if skipped > 0 {
        log::warn!("skipped {skipped} corpus molecules");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed(a.seed, cfg)?);
    let mut params = ModelParams::init(&model_cfg, &mut rng)?;
    let report = train(&mut params, &items, &opt, &codec, &mut rng, Some(&a.out))?;
    println!(
        "{} steps, loss {:.4} -> {:.4}, checkpoint {}",
        report.curve.len(),
        report.initial_loss().unwrap_or(f64::NAN),
        report.tail_loss(50).unwrap_or(f64::NAN),
        a.out.join("model.ckpt").display()
    );
    Ok(())
}

fn sketch_cmd(a: SketchArgs, cfg: &Config) -> Result<(), PipelineError> {
    let seed = seed(a.seed, cfg)?;
    let pitch = pick(a.pitch, cfg, "pitch", 1.0)?;
    if let Some(p) = &a.pocket {
        let pocket = load_pocket(p, pitch)?;
        let params = sketch_params(cfg, seed, a.n_shapes, a.vmin, a.vmax)?;
        let out = sketch_from_pocket(&pocket, &params, &base_library())?;
        write_shapes(&a.out, &out.shapes)?;
        println!("{} shapes ({} failed) -> {}", out.shapes.len(), out.failures, a.out.display());
    } else if let Some(l) = &a.ligand {
        let ligand = parse_molecule(&std::fs::read_to_string(l)?)?;
        let extent = pick(None, cfg, "ligand_extent", (24.0 / pitch).ceil() as usize)?;
        let grid = sketch_from_ligand(&ligand, &GridSpec::centered(ligand.centroid(), pitch, extent))?;
        std::fs::create_dir_all(&a.out)?;
        grid.write_voxl_file(a.out.join("shape_000.voxl"))?;
        println!("ligand shape of {:.1} Å³ -> {}", grid.volume(), a.out.display());
    }
    Ok(())
}

fn generate_cmd(a: GenerateArgs, cfg: &Config) -> Result<(), PipelineError> {
    let params = load_checkpoint(&a.checkpoint)?;
    let shapes = read_shapes(&a.shapes)?;
    let n = pick(a.n, cfg, "n", 10)?;
    let top_p = pick(a.top_p, cfg, "top_p", 0.95)?;
    let seed = seed(a.seed, cfg)?;
    let spec = params.config.grid_spec();
    let mut rows = Vec::new();
    let mut dropped = 0;
    for (id, grid) in &shapes {
        let Some(ms) = to_model_frame(grid, &spec) else { continue };
        let g = generate(&ms.grid, &params, n, top_p, &mut stream(seed, *id as u64))?;
        dropped += g.dropped;
        rows.extend(g.sequences.into_iter().map(|sequence| SequenceRow { shape: *id, frame: ms.frame, sequence }));
    }
    write_sequences(&a.out, &rows)?;
    println!("{} sequences for {} shapes ({dropped} malformed dropped) -> {}", rows.len(), shapes.len(), a.out.display());
    Ok(())
}

fn assemble_cmd(a: AssembleArgs, cfg: &Config) -> Result<(), PipelineError> {
    let rows = read_sequences(&a.sequences)?;
    let vocab = sketchmol::chem::FragmentVocab::load(&a.vocab)?;
    let codec = CodecParams { length: cfg.get_or("codec_length", CodecParams::default().length)?, ..CodecParams::default() };
    let mut assembled = Vec::new();
    let mut sanitized = Vec::new();
    let mut rejections = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let (asm, outcome) = realize(&r.sequence, &vocab, &codec, &format!("gen_{:03}_{k:04}", r.shape));
        if let Some(m) = asm {
            match outcome {
                Ok(s) => sanitized.push(s.transformed(&r.frame)),
                Err(e) => rejections.push((m.name.clone(), e)),
            }
            assembled.push(m.transformed(&r.frame));
        }
    }
    let unique: Vec<Molecule> = dedup_indices(&sanitized).into_iter().map(|i| sanitized[i].clone()).collect();
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("assembled.sdf"), write_sdf(&assembled))?;
    std::fs::write(a.out.join("sanitized.sdf"), write_sdf(&sanitized))?;
    std::fs::write(a.out.join("deduped.sdf"), write_sdf(&unique))?;
    std::fs::write(a.out.join("rejections.tsv"), rejection_report(&rejections))?;
    println!("{} sequences, {} assembled, {} sanitized, {} unique -> {}", rows.len(), assembled.len(), sanitized.len(), unique.len(), a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs, cfg: &Config) -> Result<(), PipelineError> {
    let text = std::fs::read_to_string(&a.molecules)?;
    let records = parse_sdf_records(&text)?;
    let mols: Vec<Molecule> = records.iter().map(|r| r.molecule.clone()).collect();
    let scorer: Option<String> = a.scorer.clone().or_else(|| cfg.get_str("scorer").map(String::from));
    let threshold: Option<f64> = match a.threshold {
        Some(t) => Some(t),
        None => cfg.get("threshold")?,
    };
    if scorer.is_some() && threshold.is_none() {
        return Err(PipelineError::Config("--threshold is required with a scorer".into()));
    }
    let scores: Vec<Option<f64>> = match scorer.as_deref() {
        None => vec![None; mols.len()],
        Some("shape") => {
            let dir = a.shapes.as_ref().ok_or_else(|| PipelineError::Config("the shape scorer needs --shapes".into()))?;
            let shapes = read_shapes(dir)?;
            records
                .iter()
                .map(|r| {
                    let id: usize = r.fields.iter().find(|f| f.0 == "shape_id").and_then(|f| f.1.trim().parse().ok()).unwrap_or(0);
                    let grid = &shapes.iter().find(|s| s.0 == id).ok_or_else(|| PipelineError::Config(format!("no shape {id}")))?.1;
                    Ok(Some(-molecule_tanimoto(grid, &r.molecule)?))
                })
                .collect::<Result<_, PipelineError>>()?
        }
        Some(cmd) => {
            let mut s = CommandScorer::new(cmd);
            if a.per_molecule {
                s.invocation = Invocation::PerMolecule;
            }
            if let Some(t) = cfg.get::<f64>("scorer_timeout")? {
                s.timeout = Duration::from_secs_f64(t);
            }
            score_filter(&mols, &mut s, threshold.unwrap_or(f64::INFINITY))?.scores
        }
    };
    let train_keys = match &a.train_keys {
        Some(p) => read_train_keys(p)?,
        None => HashSet::new(),
    };
    let prod = match a.prod.as_deref().or(cfg.get_str("prod")) {
        Some(p) => p.parse()?,
        None => Default::default(),
    };
    let params = MetricsParams { success_threshold: threshold, prod, ..MetricsParams::default() };
    let report = metrics(&mols, &scores, &train_keys, &params)?;
    if let Some(path) = &a.plot_histogram {
        let values: Vec<f64> = scores.iter().flatten().copied().collect();
        std::fs::write(path, histogram_csv(&values, cfg.get_or("histogram_bins", 20)?))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn design_cmd(a: DesignArgs, cfg: &Config) -> Result<(), PipelineError> {
    let seed = seed(a.seed, cfg)?;
    let input = match (&a.pocket, &a.ligand) {
        (Some(p), _) => DesignInput::Pocket { pocket: load_pocket(p, cfg.get_or("pitch", 1.0)?)?, path: Some(PathBuf::from(p)) },
        (None, Some(l)) => DesignInput::Ligand { ligand: parse_molecule(&std::fs::read_to_string(l)?)?, path: Some(l.clone()) },
        (None, None) => return Err(PipelineError::Config("need --pocket or --ligand".into())),
    };
    let model = load_checkpoint(&a.checkpoint)?;
    let scorer = match a.scorer.as_deref().or(cfg.get_str("scorer")) {
        None => None,
        Some("shape") => Some(ScoreSpec::Shape),
        Some(cmd) => Some(ScoreSpec::Command(CommandScorer::new(cmd))),
    };
    let threshold = match (a.threshold, cfg.get::<f64>("threshold")?, &scorer) {
        (Some(t), _, _) | (None, Some(t), _) => t,
        (None, None, Some(_)) => return Err(PipelineError::Config("--threshold is required with a scorer".into())),
        (None, None, None) => 0.0,
    };
    let params = DesignParams {
        sketch: sketch_params(cfg, seed, a.n_shapes, None, None)?,
        library: base_library(),
        n_per_shape: pick(a.n, cfg, "n", 10)?,
        top_p: pick(a.top_p, cfg, "top_p", 0.95)?,
        scorer,
        threshold,
        train_keys: match &a.train_keys {
            Some(p) => read_train_keys(p)?,
            None => HashSet::new(),
        },
        seed,
        ..DesignParams::default()
    };
    // accept the corpus directory as well as its vocabulary
    let vocab = if a.vocab.join(VOCAB_DIR).is_dir() { a.vocab.join(VOCAB_DIR) } else { a.vocab.clone() };
    let manifest = run_design(&input, &a.checkpoint, &vocab, &codec_for(&model.config, cfg)?, &params, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&manifest.counts)?);
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = (|| {
        let cfg = match &cli.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        match cli.command {
            Cmd::Corpus(a) => corpus(a, &cfg),
            Cmd::Train(a) => train_cmd(a, &cfg),
            Cmd::Sketch(a) => sketch_cmd(a, &cfg),
            Cmd::Generate(a) => generate_cmd(a, &cfg),
            Cmd::Assemble(a) => assemble_cmd(a, &cfg),
            Cmd::Eval(a) => eval_cmd(a, &cfg),
            Cmd::Design(a) => design_cmd(a, &cfg),
        }
    })();
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

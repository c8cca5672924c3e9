use std::path::Path;
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sketchmol::chem::{build_vocab, parse_sdf, FragmentVocab, Molecule, RuleTable};
use sketchmol::codec::CodecParams;
use sketchmol::geom::{Pose, Quaternion, Vec3};
use sketchmol::model::{save_checkpoint, train, ModelConfig, ModelParams, OptConfig};
use sketchmol::pipeline::{base_library, run_design, training_items, CommandScorer, DesignInput, DesignParams, ScoreSpec};
use sketchmol::sketch::{box_pocket, SketchParams};

fn memorised(dir: &Path, target: &Molecule) -> FragmentVocab {
    let rules = RuleTable::default();
    let vocab = build_vocab(&base_library(), &rules, usize::MAX).unwrap();
    let config = ModelConfig { dim: 32, layers_enc: 1, layers_dec: 2, heads: 2, ffn: 64, max_len: 32, dropout: 0.0, vocab_size: vocab.len(), ..ModelConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ModelParams::init(&config, &mut rng).unwrap();
    let opt = OptConfig { lr: 3e-3, warmup: 20, steps: 300, batch_size: 1, augment: false, log_every: 0, ..OptConfig::default() };
    let (items, skipped) = training_items(std::slice::from_ref(target), &vocab, &rules, &CodecParams::default(), config.max_len);
    assert_eq!((items.len(), skipped), (1, 0));
    train(&mut params, &items, &opt, &CodecParams::default(), &mut rng, None).unwrap();
    save_checkpoint(&params, dir.join("model.ckpt")).unwrap();
    vocab.save(dir.join("vocab")).unwrap();
    vocab
}

fn acetanilide() -> Molecule {
    let m = base_library().into_iter().find(|m| m.name == "acetanilide").unwrap();
    m.translated(-m.centroid())
}

#[test]
fn ligand_run_with_memorised_model_yields_molecules() {
    let dir = tempfile::tempdir().unwrap();
    let target = acetanilide();
    memorised(dir.path(), &target);
    let params = DesignParams { n_per_shape: 8, seed: 3, workers: 2, ..DesignParams::default() };
    let moved = target.translated(Vec3::new(5.0, -3.0, 2.0));
    let input = DesignInput::Ligand { ligand: moved.clone(), path: None };
    let run = dir.path().join("run");
    let m = run_design(&input, &dir.path().join("model.ckpt"), &dir.path().join("vocab"), &CodecParams::default(), &params, &run).unwrap();
    assert!(m.counts.sanitized >= 1, "{:?}", m.counts);
    assert!(m.counts.is_monotone());
    let out = parse_sdf(&std::fs::read_to_string(run.join("sanitized.sdf")).unwrap()).unwrap();
    assert_eq!(out.len(), m.counts.sanitized);
    // outputs sit where the ligand was
    assert!(out[0].centroid().distance(moved.centroid()) < 1.0);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["counts"]["sanitized"], m.counts.sanitized);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let t = report["mean_shape_tanimoto"].as_f64().unwrap();
    assert!(t > 0.6, "{t}");
}

#[test]
fn rotated_ligand_is_recovered_through_its_shape_frame() {
    let dir = tempfile::tempdir().unwrap();
    let target = acetanilide();
    memorised(dir.path(), &target);
    let motion = Pose::new(Quaternion::from_axis_angle(Vec3::new(1.0, 2.0, -0.5).normalized().unwrap(), 2.1), Vec3::new(-4.0, 1.0, 6.0));
    let input = DesignInput::Ligand { ligand: target.transformed(&motion), path: None };
    let params = DesignParams { n_per_shape: 8, seed: 5, ..DesignParams::default() };
    let run = dir.path().join("run");
    run_design(&input, &dir.path().join("model.ckpt"), &dir.path().join("vocab"), &CodecParams::default(), &params, &run).unwrap();
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let t = report["mean_shape_tanimoto"].as_f64().unwrap();
    assert!(t > 0.6, "{t}");
}

#[test]
fn pocket_run_is_reproducible_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    memorised(dir.path(), &acetanilide());
    let pocket = box_pocket(20.0, 2.0, 1.0).unwrap();
    let input = DesignInput::Pocket { pocket, path: None };
    let scorer = CommandScorer::new("awk '/^\\$\\$\\$\\$/{print -1}'");
    let params = DesignParams {
        sketch: SketchParams { n_shapes: 4, ..SketchParams::default() },
        n_per_shape: 5,
        seed: 9,
        workers: 3,
        scorer: Some(ScoreSpec::Command(scorer)),
        threshold: -0.5,
        ..DesignParams::default()
    };
    let run = |name: &str| {
        let out = dir.path().join(name);
        let m = run_design(&input, &dir.path().join("model.ckpt"), &dir.path().join("vocab"), &CodecParams::default(), &params, &out).unwrap();
        (m, std::fs::read_to_string(out.join("kept.sdf")).unwrap())
    };
    let (a, sdf_a) = run("a");
    let (b, sdf_b) = run("b");
    assert_eq!(a.counts, b.counts);
    assert_eq!(sdf_a, sdf_b);
    assert_eq!(a.counts.shapes, 4);
    assert_eq!(a.counts.requested, 20);
    assert!(a.counts.is_monotone(), "{:?}", a.counts);
    assert_eq!(a.counts.scored, a.counts.deduped);
    let single = DesignParams { workers: 1, ..params.clone() };
    let c = run_design(&input, &dir.path().join("model.ckpt"), &dir.path().join("vocab"), &CodecParams::default(), &single, &dir.path().join("c")).unwrap();
    assert_eq!(c.counts, a.counts);
}

#[test]
fn shape_scorer_filters_by_threshold() {
    let dir = tempfile::tempdir().unwrap();
    memorised(dir.path(), &acetanilide());
    let input = DesignInput::Ligand { ligand: acetanilide(), path: None };
    let go = |threshold: f64, name: &str| {
        let params = DesignParams { n_per_shape: 6, seed: 4, scorer: Some(ScoreSpec::Shape), threshold, ..DesignParams::default() };
        run_design(&input, &dir.path().join("model.ckpt"), &dir.path().join("vocab"), &CodecParams::default(), &params, &dir.path().join(name)).unwrap()
    };
    let all = go(0.0, "all");
    let none = go(-1.01, "none");
    assert_eq!(all.counts.scored, all.counts.deduped);
    assert_eq!(none.counts.scored, 0);
    let report = all.metrics.unwrap();
    assert_eq!(report.succ, report.succeeded as f64 / report.total as f64);
    assert!(report.median_score.is_some_and(|m| (-1.0..=0.0).contains(&m)));
}

fn cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_sketchmol")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn command_line_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    std::fs::write(d("run.conf"), "dim = 16\nlayers_enc = 1\nlayers_dec = 1\nheads = 2\nffn = 32\nmax_len = 64\nsteps = 3\nbatch_size = 2\n").unwrap();
    let conf = d("run.conf");
    cli(&["corpus", "--out", &d("corpus"), "--size", "12", "--seed", "1"]);
    cli(&["--config", &conf, "train", "--corpus", &d("corpus"), "--out", &d("model")]);
    cli(&["sketch", "--pocket", "box:20", "--out", &d("shapes"), "--n-shapes", "2", "--seed", "5"]);
    cli(&["generate", "--checkpoint", &d("model/model.ckpt"), "--shapes", &d("shapes"), "--out", &d("seq.tsv"), "--n", "3"]);
    cli(&["assemble", "--sequences", &d("seq.tsv"), "--vocab", &d("corpus/vocab"), "--out", &d("mols")]);
    let report = cli(&[
        "eval",
        "--molecules",
        &d("corpus/corpus.sdf"),
        "--scorer",
        "awk '/^\\$\\$\\$\\$/{print -7}'",
        "--threshold",
        "-5",
        "--train-keys",
        &d("corpus/train_keys.txt"),
        "--plot-histogram",
        &d("hist.csv"),
    ]);
    let r: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(r["succ"], 1.0);
    assert_eq!(r["nov"], 0.0);
    assert!(std::fs::read_to_string(d("hist.csv")).unwrap().starts_with("lo,hi,count\n"));
    let ligand = d("ligand.sdf");
    std::fs::write(&ligand, sketchmol::chem::write_molecule(&acetanilide())).unwrap();
    cli(&["sketch", "--ligand", &ligand, "--out", &d("lig_shapes")]);
    assert!(dir.path().join("lig_shapes/shape_000.voxl").exists());
    let a = std::fs::read_to_string(dir.path().join("shapes/shape_000.voxl")).unwrap();
    cli(&["sketch", "--pocket", "box:20", "--out", &d("shapes2"), "--n-shapes", "2", "--seed", "5"]);
    assert_eq!(a, std::fs::read_to_string(dir.path().join("shapes2/shape_000.voxl")).unwrap());
}

//! Full run: sketch shapes in a pocket, generate, assemble, filter and report.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sketchmol::chem::RuleTable;
use sketchmol::codec::CodecParams;
use sketchmol::model::{save_checkpoint, train, ModelConfig, ModelParams, OptConfig};
use sketchmol::pipeline::{base_library, run_design, synth_corpus, training_items, DesignInput, DesignParams, ScoreSpec, SynthParams};
use sketchmol::sketch::{box_pocket, SketchParams};

fn main() {
    let dir = std::env::temp_dir().join("sketchmol_example_design");
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let codec = CodecParams::default();
    let corpus = synth_corpus(&base_library(), 100, &SynthParams::default(), &mut rng).unwrap();
    let config = ModelConfig { dim: 32, layers_enc: 1, layers_dec: 2, heads: 2, ffn: 64, vocab_size: corpus.vocab.len(), ..ModelConfig::default() };
    let (items, _) = training_items(&corpus.molecules, &corpus.vocab, &RuleTable::default(), &codec, config.max_len);
    let mut params = ModelParams::init(&config, &mut rng).unwrap();
    let opt = OptConfig { steps: 20, batch_size: 4, warmup: 5, log_every: 0, ..OptConfig::default() };
    train(&mut params, &items, &opt, &codec, &mut rng, None).unwrap();
    save_checkpoint(&params, dir.join("model.ckpt")).unwrap();
    corpus.vocab.save(dir.join("vocab")).unwrap();

    let design = DesignParams {
        sketch: SketchParams { n_shapes: 4, ..SketchParams::default() },
        n_per_shape: 10,
        scorer: Some(ScoreSpec::Shape),
        threshold: -0.2,
        seed: 7,
        ..DesignParams::default()
    };
    let input = DesignInput::Pocket { pocket: box_pocket(20.0, 2.0, 1.0).unwrap(), path: None };
    let run = dir.join("run");
    let manifest = run_design(&input, &dir.join("model.ckpt"), &dir.join("vocab"), &codec, &design, &run).unwrap();
    println!("stage counts: {:?}", manifest.counts);
    if let Some(m) = &manifest.metrics {
        println!("uniq {:.3} nov {:.3} succ {:.3} div {:.3} prod {:.4}", m.uniq, m.nov, m.succ, m.div, m.prod);
    }
    println!("artifacts in {}", run.display());
}

//! Train a small model on a synthetic corpus for a few steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sketchmol::chem::RuleTable;
use sketchmol::codec::CodecParams;
use sketchmol::model::{save_checkpoint, train, ModelConfig, ModelParams, OptConfig};
use sketchmol::pipeline::{base_library, synth_corpus, training_items, SynthParams};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let corpus = synth_corpus(&base_library(), 200, &SynthParams::default(), &mut rng).unwrap();
    let codec = CodecParams::default();
    let config = ModelConfig { dim: 32, layers_enc: 1, layers_dec: 2, heads: 2, ffn: 64, vocab_size: corpus.vocab.len(), ..ModelConfig::default() };
    let (items, skipped) = training_items(&corpus.molecules, &corpus.vocab, &RuleTable::default(), &codec, config.max_len);
    println!("{} training items, {skipped} skipped, |V| = {}", items.len(), corpus.vocab.len());
    let mut params = ModelParams::init(&config, &mut rng).unwrap();
    let opt = OptConfig { steps: 30, batch_size: 4, lr: 1e-3, warmup: 10, log_every: 0, ..OptConfig::default() };
    let report = train(&mut params, &items, &opt, &codec, &mut rng, None).unwrap();
    println!("loss {:.3} -> {:.3} (uniform {:.3})", report.initial_loss().unwrap(), report.tail_loss(5).unwrap(), config.uniform_fragment_loss());
    let dir = std::env::temp_dir().join("sketchmol_example_train");
    std::fs::create_dir_all(&dir).unwrap();
    save_checkpoint(&params, dir.join("model.ckpt")).unwrap();
    corpus.vocab.save(dir.join("vocab")).unwrap();
    println!("checkpoint written to {}", dir.display());
}

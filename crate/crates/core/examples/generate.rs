//! Sample token sequences for a shape and turn them into molecules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sketchmol::codec::CodecParams;
use sketchmol::model::{generate, ModelConfig, ModelParams};
use sketchmol::pipeline::{base_library, ligand_shape, molecule_tanimoto, realize, synth_corpus, to_model_frame, SynthParams};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let corpus = synth_corpus(&base_library(), 20, &SynthParams::default(), &mut rng).unwrap();
    let config = ModelConfig { dim: 32, layers_enc: 1, layers_dec: 2, heads: 2, ffn: 64, vocab_size: corpus.vocab.len(), ..ModelConfig::default() };
    // an untrained model; see the train example for fitting one
    let params = ModelParams::init(&config, &mut rng).unwrap();
    let target = &corpus.molecules[0];
    let shape = ligand_shape(target).unwrap();
    // the model sees the shape in its own canonical frame
    let input = to_model_frame(&shape, &config.grid_spec()).unwrap();
    let out = generate(&input.grid, &params, 8, 0.95, &mut rng).unwrap();
    println!("{} well-formed sequences, {} dropped", out.sequences.len(), out.dropped);
    for (i, seq) in out.sequences.iter().enumerate() {
        match realize(seq, &corpus.vocab, &CodecParams::default(), &format!("gen{i}")) {
            (_, Ok(m)) => {
                let m = m.transformed(&input.frame);
                println!("gen{i}: {} atoms, shape Tanimoto {:.3}", m.atoms.len(), molecule_tanimoto(&shape, &m).unwrap())
            }
            (_, Err(e)) => println!("gen{i}: not realized ({e})"),
        }
    }
}

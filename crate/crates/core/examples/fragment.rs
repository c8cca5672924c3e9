//! Cut molecules into fragments and build a vocabulary.

use sketchmol::chem::{build_vocab, fragment, RuleTable};
use sketchmol::pipeline::base_library;

fn main() {
    let rules = RuleTable::default();
    let library = base_library();
    for m in library.iter().take(6) {
        let f = fragment(m, &rules).unwrap();
        println!("{:<16} {} fragments, {} cuts", m.name, f.instances.len(), f.cuts.len());
    }
    let vocab = build_vocab(&library, &rules, usize::MAX).unwrap();
    println!("vocabulary: {} fragments, {} tokens", vocab.fragment_count(), vocab.len());
}

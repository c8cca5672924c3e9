//! Fragment a molecule, quantize its tree and reassemble it in 3D.

use sketchmol::assembler::{assemble, sanitize};
use sketchmol::chem::{build_vocab, fragment, is_isomorphic, RuleTable};
use sketchmol::codec::{build_tree, delinearize, linearize, CodecParams};
use sketchmol::pipeline::base_library;

fn main() {
    let rules = RuleTable::default();
    let library = base_library();
    let vocab = build_vocab(&library, &rules, usize::MAX).unwrap();
    let codec = CodecParams::default();
    for m in library.iter().filter(|m| m.atoms.len() > 8).take(5) {
        let m = m.translated(-m.centroid());
        let (tree, _) = build_tree(&fragment(&m, &rules).unwrap(), &vocab).unwrap();
        let decoded = delinearize(&linearize(&tree, &codec).unwrap(), None, &codec).unwrap();
        let result = assemble(&decoded, &vocab, &m.name).unwrap();
        let status = match sanitize(&result.molecule) {
            Ok(s) => format!("sanitized, isomorphic to input: {}", is_isomorphic(&s.graph(), &m.graph())),
            Err(e) => format!("rejected: {e:?}"),
        };
        println!("{:<16} {} bonds formed, {} clashes, {status}", m.name, result.bonds_formed.len(), result.clashes.len());
    }
}

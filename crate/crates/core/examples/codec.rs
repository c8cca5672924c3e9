//! Encode a molecule's fragment tree as tokens and decode it back.

use sketchmol::chem::{build_vocab, fragment, RuleTable};
use sketchmol::codec::{build_tree, delinearize, linearize, CodecParams};
use sketchmol::pipeline::base_library;

fn main() {
    let rules = RuleTable::default();
    let library = base_library();
    let vocab = build_vocab(&library, &rules, usize::MAX).unwrap();
    let codec = CodecParams::default();
    let m = library.iter().find(|m| m.name == "acetanilide").unwrap();
    let m = m.translated(-m.centroid());
    let (tree, _) = build_tree(&fragment(&m, &rules).unwrap(), &vocab).unwrap();
    let seq = linearize(&tree, &codec).unwrap();
    println!("{} nodes -> {} tokens", tree.len(), seq.len());
    let back = delinearize(&seq, None, &codec).unwrap();
    let (t, r) = tree.pose_errors(&back);
    println!("structure preserved: {}", tree.structurally_equal(&back));
    println!("max axis error {t:.3} Å (tolerance {:.3}), max rotation error {:.2}°", codec.translation_tolerance(), r.to_degrees());
}

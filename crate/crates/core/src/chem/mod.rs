//! Molecules, SDF I/O, fragmentation and the fragment vocabulary.

mod align;
pub mod builder;
mod canon;
mod fragment;
mod iso;
mod molecule;
mod sdf;
mod vocab;

pub use align::{best_fit, frame_rotation, principal_axes};
pub use canon::{CanonicalForm, LabeledGraph};
pub use fragment::{fragment, Breakpoint, CutBond, Fragment, FragmentInstance, Fragmentation, RuleTable};
pub use iso::{for_each_isomorphism, is_isomorphic};
pub use molecule::{Atom, Bond, BondOrder, Molecule};
pub use sdf::{parse_molecule, parse_record, parse_sdf, parse_sdf_records, write_molecule, write_record, write_sdf, SdfRecord};
pub use vocab::{build_vocab, FragmentVocab, Placement, BOB, BOS, CONTROL_COUNT, CONTROL_NAMES, EOB, EOS, PAD};


use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChemError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported feature: {feature}")]
    Unsupported { line: usize, feature: String },
    #[error("atom {0} has an empty element or non-finite position")]
    InvalidAtom(usize),
    #[error("bond {bond} joins {a} and {b} in a molecule of {atoms} atoms")]
    InvalidBond { bond: usize, a: usize, b: usize, atoms: usize },
    #[error("duplicate bond between {a} and {b}")]
    DuplicateBond { a: usize, b: usize },
    #[error("molecule `{name}` has {components} components")]
    MultiComponent { name: String, components: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("fragment key not in vocabulary: {0}")]
    UnknownKey(String),
    #[error("vocabulary file: {0}")]
    VocabFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ChemError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        ChemError::Parse { line, message: message.into() }
    }
}

//! Fragment trees, pose binning and token sequences.

mod discretize;
mod sequence;
mod tree;

pub use discretize::{
    discretize_rotation, discretize_translation, undiscretize_rotation, undiscretize_translation, CodecParams,
};
pub use sequence::{decode_pose, delinearize, encode_pose, linearize, FragmentToken, Token, TokenSequence};
pub use tree::{build_tree, random_tree, FragmentTree, TreeNode, TreeSource};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("translation component {axis} = {value} outside [-{half}, {half})")]
    Range { axis: usize, value: f64, half: f64 },
    #[error("rotation quaternion is not unit norm (|q| = {norm})")]
    InvalidRotation { norm: f64 },
    #[error("sequence holds no fragment")]
    EmptyTree,
    #[error("malformed sequence at token {position}: {reason}")]
    Malformed { position: usize, reason: &'static str },
    #[error("token {position} has invalid fragment index or bins (C = {index})")]
    UnknownToken { position: usize, index: usize },
    #[error("{fragments} fragments joined by {links} links do not form a tree")]
    NotATree { fragments: usize, links: usize },
    #[error("cannot parse token `{0}`")]
    Text(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
}

//! Shape-to-sequence network: a 3D-patch transformer encoder over voxel
//! grids and an autoregressive decoder emitting fragment, translation-bin
//! and rotation-bin tokens, with a hand-written reverse-mode tape.

use thiserror::Error;

mod checkpoint;
mod net;
mod sample;
pub mod tensor;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC, VERSION};
pub use net::{
    decode_all, decode_step, encode, grid_patches, loss, loss_and_grad, Batch, DecoderState, Logits, LossParts, ModelConfig, ModelParams,
};
pub use sample::{argmax, generate, generate_with, greedy, nucleus, nucleus_sample, sample_tokens, well_formed, Generated, Sampling};
pub use train::{augment, augment_motion, prepare, train, AdamW, OptConfig, TrainItem, TrainReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence of {len} tokens exceeds the limit of {max}")]
    Overlength { len: usize, max: usize },
    #[error("non-finite loss {value} at batch {batch}")]
    Numeric { batch: usize, value: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

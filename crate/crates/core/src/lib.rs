//! Shape-conditioned fragment-based molecule generation.

pub mod chem;
pub mod geom;
pub mod codec;
pub mod assembler;
pub mod sketch;
pub mod model;
pub mod pipeline;

//! Vector and quaternion math, voxel grids, and shape comparison.

mod grid;
mod vector;
mod voxelize;

pub use grid::{shape_tanimoto, GridSpec, Patch, VoxelGrid};
pub use vector::{apply_rigid, Pose, Quaternion, Vec3, UNIT_TOLERANCE};
pub use voxelize::{max_vdw_radius, vdw_radius, voxelize, voxelize_with_offset};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("atom {atom} ({element}) does not fit inside the grid")]
    OutOfBounds { atom: usize, element: String },
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("grid specifications differ")]
    SpecMismatch,
    #[error("rotation quaternion is not unit norm (|q| = {norm})")]
    InvalidRotation { norm: f64 },
    #[error("grid extent {extent} is not divisible by patch edge {patch_edge}")]
    Patching { extent: usize, patch_edge: usize },
    #[error("invalid grid specification (pitch {pitch}, extent {extent})")]
    InvalidSpec { pitch: f64, extent: usize },
    #[error("expected {expected} cells, found {found}")]
    CellCount { expected: usize, found: usize },
    #[error("VOXL line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GeomError {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        GeomError::Format { line, message: message.into() }
    }
}

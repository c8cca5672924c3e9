use super::CodecError;
use crate::geom::{Quaternion, Vec3};

/// Binning of fragment poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecParams {
    /// Side of the translation box in Å, centred on the shape frame origin.
    pub length: f64,
    pub bins_t: usize,
    pub bins_r: usize,
}

impl Default for CodecParams {
    fn default() -> Self {
        Self { length: 32.0, bins_t: 64, bins_r: 64 }
    }
}

impl CodecParams {
    /// Worst-case per-axis translation error.
    pub fn translation_tolerance(&self) -> f64 {
        self.length / (2.0 * self.bins_t as f64)
    }

    /// Worst-case rotation angle after a roundtrip, in radians. Each of
    /// the four components moves by at most `1/b_r`, so the reconstructed
    /// point lies within `2/b_r` of `q` and subtends at most `asin(2/b_r)`.
    pub fn rotation_bound(&self) -> f64 {
        2.0 * (2.0 / self.bins_r as f64).asin()
    }
}

pub fn discretize_translation(p: Vec3, params: &CodecParams) -> Result<[usize; 3], CodecError> {
    let half = params.length / 2.0;
    let width = params.length / params.bins_t as f64;
    let mut out = [0usize; 3];
    for (k, v) in p.to_array().into_iter().enumerate() {
        if !(v >= -half && v < half) {
            return Err(CodecError::Range { axis: k, value: v, half });
        }
        out[k] = (((v + half) / width).floor() as usize).min(params.bins_t - 1);
    }
    Ok(out)
}

pub fn undiscretize_translation(bins: [usize; 3], params: &CodecParams) -> Vec3 {
    let half = params.length / 2.0;
    let width = params.length / params.bins_t as f64;
    let c = |i: usize| -half + (i as f64 + 0.5) * width;
    Vec3::new(c(bins[0]), c(bins[1]), c(bins[2]))
}

pub fn discretize_rotation(q: Quaternion, params: &CodecParams) -> Result<[usize; 4], CodecError> {
    let q = q.ensure_unit().map_err(|_| CodecError::InvalidRotation { norm: q.norm() })?.canonical();
    let b = params.bins_r as f64;
    let bin = |c: f64| ((((c + 1.0) / 2.0) * b).floor().max(0.0) as usize).min(params.bins_r - 1);
    Ok([bin(q.w), bin(q.x), bin(q.y), bin(q.z)])
}

pub fn undiscretize_rotation(bins: [usize; 4], params: &CodecParams) -> Quaternion {
    let width = 2.0 / params.bins_r as f64;
    let c = |i: usize| -1.0 + (i as f64 + 0.5) * width;
    Quaternion::new(c(bins[0]), c(bins[1]), c(bins[2]), c(bins[3])).normalized()
}

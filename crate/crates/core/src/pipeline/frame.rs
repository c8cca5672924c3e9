//! Orientation frames derived from shapes alone, so training targets and
//! inference inputs share one convention whatever the input orientation.

use rand_chacha::ChaCha8Rng;

use crate::chem::{frame_rotation, principal_axes, Molecule};
use crate::geom::{voxelize, GeomError, GridSpec, Pose, Vec3, VoxelGrid};

/// Pitch of the reference grid a molecule's frame is measured on, Å.
pub const FRAME_PITCH: f64 = 0.5;
/// Extent of the reference grid, cells per axis.
pub const FRAME_EXTENT: usize = 64;

/// Canonical frame of a point cloud, mapping canonical to world coordinates.
/// Origin at the centroid; axes along the principal directions, largest
/// spread first; the first two signed so the third moment along each is
/// non-negative.
pub fn point_frame(points: &[Vec3]) -> Option<Pose> {
    if points.is_empty() {
        return None;
    }
    let c = Vec3::centroid(points);
    let mut axes = principal_axes(points, &[]);
    for k in 0..2 {
        let skew: f64 = points.iter().map(|p| (*p - c).dot(axes[k]).powi(3)).sum();
        if skew < 0.0 {
            axes[k] = -axes[k];
        }
    }
    axes[2] = axes[0].cross(axes[1]);
    Some(Pose::new(frame_rotation(&axes), c))
}

/// Frame of the occupied cell centres; `None` for an empty grid.
pub fn grid_frame(grid: &VoxelGrid) -> Option<Pose> {
    let spec = grid.spec();
    let points: Vec<Vec3> = grid
        .occupied()
        .map(|i| {
            let [x, y, z] = spec.coords(i);
            spec.cell_center(x, y, z)
        })
        .collect();
    point_frame(&points)
}

/// Reference grid for a molecule's shape, centred on its centroid.
pub fn ligand_spec(m: &Molecule) -> GridSpec {
    GridSpec::centered(m.centroid(), FRAME_PITCH, FRAME_EXTENT)
}

/// Van der Waals shape of a molecule on its reference grid.
pub fn ligand_shape(m: &Molecule) -> Result<VoxelGrid, GeomError> {
    voxelize::<ChaCha8Rng>(m, &ligand_spec(m), 0.0, None)
}

/// Frame of a molecule's shape on its reference grid.
pub fn molecule_frame(m: &Molecule) -> Result<Pose, GeomError> {
    let shape = ligand_shape(m)?;
    Ok(grid_frame(&shape).unwrap_or(Pose::new(crate::geom::Quaternion::IDENTITY, m.centroid())))
}

/// Point-samples `shape` at the cell centres of `target` placed by `frame`.
pub fn resample_posed(shape: &VoxelGrid, target: &GridSpec, frame: &Pose) -> VoxelGrid {
    let src = shape.spec();
    let mut out = VoxelGrid::empty(*target);
    for z in 0..target.extent {
        for y in 0..target.extent {
            for x in 0..target.extent {
                if let Some([i, j, k]) = src.cell_of(frame.apply(target.cell_center(x, y, z))) {
                    if shape.get(i, j, k) {
                        out.set(x, y, z, true);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Quaternion;
    use crate::pipeline::base_library;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn cloud() -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..12 {
            pts.push(Vec3::new(i as f64 * 0.8, 0.1 * (i % 3) as f64, 0.0));
        }
        pts.push(Vec3::new(0.0, 2.0, 0.5));
        pts.push(Vec3::new(0.0, 2.5, -0.2));
        pts.push(Vec3::new(0.5, 0.0, 1.0));
        pts
    }

    #[test]
    fn frame_is_right_handed_and_centred() {
        let pts = cloud();
        let f = point_frame(&pts).unwrap();
        assert!(f.translation.distance(Vec3::centroid(&pts)) < 1e-12);
        let canon: Vec<Vec3> = pts.iter().map(|p| f.inverse().apply(*p)).collect();
        assert!(Vec3::centroid(&canon).norm() < 1e-9);
        let var = |k: usize| canon.iter().map(|p| [p.x, p.y, p.z][k].powi(2)).sum::<f64>();
        assert!(var(0) >= var(1) && var(1) >= var(2));
        assert!(point_frame(&[]).is_none());
    }

    proptest! {
        #[test]
        fn canonical_coordinates_ignore_input_pose(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let motion = Pose::new(Quaternion::random(&mut rng), Vec3::new(3.0, -1.0, 2.0));
            let pts = cloud();
            let moved: Vec<Vec3> = pts.iter().map(|p| motion.apply(*p)).collect();
            let a = point_frame(&pts).unwrap();
            let b = point_frame(&moved).unwrap();
            for (p, q) in pts.iter().zip(&moved) {
                prop_assert!(a.inverse().apply(*p).distance(b.inverse().apply(*q)) < 1e-6);
            }
        }
    }

    #[test]
    fn resampled_shape_matches_canonical_voxelization() {
        let m = base_library().into_iter().find(|m| m.name == "acetanilide").unwrap();
        let shape = ligand_shape(&m).unwrap();
        let frame = grid_frame(&shape).unwrap();
        let target = GridSpec::centered(Vec3::ZERO, FRAME_PITCH, 48);
        let posed = resample_posed(&shape, &target, &frame);
        let direct = voxelize::<ChaCha8Rng>(&m.transformed(&frame.inverse()), &target, 0.0, None).unwrap();
        let t = crate::geom::shape_tanimoto(&posed, &direct).unwrap();
        assert!(t > 0.8, "{t}");
        assert!(posed.centroid().unwrap().norm() < 0.5);
    }
}

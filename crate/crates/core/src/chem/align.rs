//! Rigid superposition and principal frames.

use nalgebra::{Matrix3, Matrix4, SymmetricEigen};

use crate::geom::{Pose, Quaternion, Vec3};

/// Least-squares rigid motion taking `src[i]` onto `dst[i]` (Horn's
/// quaternion method) together with the resulting RMSD.
pub fn best_fit(src: &[Vec3], dst: &[Vec3]) -> (Pose, f64) {
    assert_eq!(src.len(), dst.len());
    if src.is_empty() {
        return (Pose::IDENTITY, 0.0);
    }
    let cs = Vec3::centroid(src);
    let cd = Vec3::centroid(dst);
    let mut s = [[0.0f64; 3]; 3];
    for (a, b) in src.iter().zip(dst) {
        let a = (*a - cs).to_array();
        let b = (*b - cd).to_array();
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += a[i] * b[j];
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let k = (0..4).max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])).unwrap();
    let v = eig.eigenvectors.column(k);
    let q = Quaternion::new(v[0], v[1], v[2], v[3]).normalized().canonical();
    let pose = Pose::new(q, cd - q.rotate(cs));
    let sq: f64 = src.iter().zip(dst).map(|(a, b)| (pose.apply(*a) - *b).norm_squared()).sum();
    (pose, (sq / src.len() as f64).sqrt())
}

/// Right-handed principal axes (largest variance first) of `points` about
/// their centroid. Axis signs are fixed so that the given reference
/// directions, tried in order, have positive projections.
pub fn principal_axes(points: &[Vec3], references: &[Vec3]) -> [Vec3; 3] {
    let c = Vec3::centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = *p - c;
        let d = nalgebra::Vector3::new(d.x, d.y, d.z);
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let col = |i: usize| {
        let v = eig.eigenvectors.column(i);
        Vec3::new(v[0], v[1], v[2])
    };
    let mut axes = [col(idx[0]), col(idx[1]), col(idx[2])];
    for axis in axes.iter_mut().take(2) {
        if let Some(r) = references.iter().find(|r| axis.dot(**r).abs() > 1e-6) {
            if axis.dot(*r) < 0.0 {
                *axis = -*axis;
            }
        }
    }
    axes[2] = axes[0].cross(axes[1]);
    axes
}

/// Rotation whose columns are `axes`, i.e. mapping canonical x/y/z onto them.
pub fn frame_rotation(axes: &[Vec3; 3]) -> Quaternion {
    let m = [
        [axes[0].x, axes[1].x, axes[2].x],
        [axes[0].y, axes[1].y, axes[2].y],
        [axes[0].z, axes[1].z, axes[2].z],
    ];
    Quaternion::from_matrix(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_known_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let src: Vec<Vec3> = (0..6)
                .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let truth = Pose::new(Quaternion::random(&mut rng), Vec3::new(1.0, -2.0, 0.5));
            let dst: Vec<Vec3> = src.iter().map(|&p| truth.apply(p)).collect();
            let (fit, rmsd) = best_fit(&src, &dst);
            assert!(rmsd < 1e-9, "rmsd {rmsd}");
            assert!(fit.rotation.angle_to(truth.rotation) < 1e-6);
        }
    }

    #[test]
    fn principal_axes_are_right_handed() {
        let pts = [Vec3::new(3.0, 0.0, 0.0), Vec3::new(-3.0, 0.1, 0.0), Vec3::new(0.0, 1.0, 0.2), Vec3::new(0.0, -1.0, -0.1)];
        let axes = principal_axes(&pts, &[Vec3::new(1.0, 0.2, 0.3)]);
        assert!(axes[0].dot(Vec3::new(1.0, 0.0, 0.0)) > 0.99);
        assert!((axes[0].cross(axes[1]).dot(axes[2]) - 1.0).abs() < 1e-9);
        let q = frame_rotation(&axes);
        assert!(q.rotate(Vec3::new(1.0, 0.0, 0.0)).max_abs_diff(axes[0]) < 1e-9);
    }
}

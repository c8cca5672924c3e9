use rand::Rng;

use super::{GeomError, GridSpec, VoxelGrid};
use crate::chem::Molecule;

/// Van der Waals radii in Å from A. Bondi, "van der Waals Volumes and Radii",
/// J. Phys. Chem. 68 (1964) 441-451, Table I.
const BONDI_RADII: &[(&str, f64)] = &[
    ("H", 1.20),
    ("C", 1.70),
    ("N", 1.55),
    ("O", 1.52),
    ("F", 1.47),
    ("Si", 2.10),
    ("P", 1.80),
    ("S", 1.80),
    ("Cl", 1.75),
    ("Se", 1.90),
    ("Br", 1.85),
    ("I", 1.98),
];

pub fn vdw_radius(element: &str) -> Result<f64, GeomError> {
    BONDI_RADII
        .iter()
        .find(|(e, _)| *e == element)
        .map(|&(_, r)| r)
        .ok_or_else(|| GeomError::UnknownElement(element.to_string()))
}

/// Largest radius in the table, useful for sizing grids.
pub fn max_vdw_radius() -> f64 {
    BONDI_RADII.iter().map(|&(_, r)| r).fold(0.0, f64::max)
}

/// Occupancy of every cell whose centre lies within `r(atom) + ε` of an atom.
///
/// `ε` is zero without an RNG; otherwise a single value drawn uniformly from
/// `[-eps, eps]` for the whole call.
pub fn voxelize<R: Rng + ?Sized>(
    molecule: &Molecule,
    spec: &GridSpec,
    eps: f64,
    rng: Option<&mut R>,
) -> Result<VoxelGrid, GeomError> {
    let noise = match rng {
        Some(rng) if eps > 0.0 => rng.random_range(-eps..=eps),
        _ => 0.0,
    };
    voxelize_with_offset(molecule, spec, noise, eps.abs())
}

/// Voxelization with a fixed radius offset. `margin` is the offset magnitude
/// the bounds check must tolerate (at least `|offset|`).
pub fn voxelize_with_offset(molecule: &Molecule, spec: &GridSpec, offset: f64, margin: f64) -> Result<VoxelGrid, GeomError> {
    let margin = margin.max(offset.abs());
    let mut radii = Vec::with_capacity(molecule.atoms.len());
    for (i, atom) in molecule.atoms.iter().enumerate() {
        let r = vdw_radius(&atom.element)?;
        if !spec.contains_ball(atom.position, r + margin) {
            return Err(GeomError::OutOfBounds { atom: i, element: atom.element.clone() });
        }
        radii.push(r + offset);
    }
    let mut grid = VoxelGrid::empty(*spec);
    let last = spec.extent as isize - 1;
    let to_cell = |v: f64| ((v / spec.pitch) - 0.5).floor() as isize;
    for (atom, &r) in molecule.atoms.iter().zip(&radii) {
        if r < 0.0 {
            continue;
        }
        let c = atom.position;
        let lo = c - spec.origin - super::Vec3::splat(r);
        let hi = c - spec.origin + super::Vec3::splat(r);
        let range = |l: f64, h: f64| {
            let a = to_cell(l).clamp(0, last) as usize;
            let b = (to_cell(h) + 1).clamp(0, last) as usize;
            a..=b
        };
        for z in range(lo.z, hi.z) {
            for y in range(lo.y, hi.y) {
                for x in range(lo.x, hi.x) {
                    if (spec.cell_center(x, y, z) - c).norm() <= r {
                        grid.set(x, y, z, true);
                    }
                }
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{Atom, Molecule};
    use crate::geom::{shape_tanimoto, Vec3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mol(atoms: &[(&str, Vec3)]) -> Molecule {
        Molecule::new(
            "t",
            atoms.iter().map(|(e, p)| Atom::new(e, *p)).collect(),
            vec![],
        )
        .unwrap()
    }

    fn brute_force(m: &Molecule, spec: &GridSpec, eps: f64) -> Vec<bool> {
        let mut cells = Vec::new();
        for z in 0..spec.extent {
            for y in 0..spec.extent {
                for x in 0..spec.extent {
                    let c = spec.cell_center(x, y, z);
                    cells.push(m.atoms.iter().any(|a| (c - a.position).norm() <= vdw_radius(&a.element).unwrap() + eps));
                }
            }
        }
        cells
    }

    #[test]
    fn radii_table() {
        assert_eq!(vdw_radius("H").unwrap(), 1.20);
        assert_eq!(vdw_radius("C").unwrap(), 1.70);
        assert_eq!(vdw_radius("O").unwrap(), 1.52);
        assert!(matches!(vdw_radius("Xx"), Err(GeomError::UnknownElement(_))));
    }

    #[test]
    fn empty_molecule_gives_empty_grid() {
        let g = voxelize::<ChaCha8Rng>(&mol(&[]), &GridSpec::default(), 0.0, None).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn single_carbon_matches_distance_scan() {
        let spec = GridSpec::centered(Vec3::ZERO, 0.5, 16);
        let m = mol(&[("C", Vec3::ZERO)]);
        let g = voxelize::<ChaCha8Rng>(&m, &spec, 0.0, None).unwrap();
        let oracle = brute_force(&m, &spec, 0.0);
        assert_eq!(g.cells(), &oracle[..]);
        // 1.70 Å ball on a 0.5 Å lattice offset by half a cell
        assert_eq!(g.count(), oracle.iter().filter(|&&c| c).count());
        assert!(g.count() > 0);
    }

    #[test]
    fn two_atoms_are_union_of_singles() {
        let spec = GridSpec::centered(Vec3::ZERO, 0.5, 40);
        let a = Vec3::new(-5.0, 0.0, 0.0);
        let b = Vec3::new(5.0, 0.0, 0.0);
        let both = voxelize::<ChaCha8Rng>(&mol(&[("C", a), ("C", b)]), &spec, 0.0, None).unwrap();
        let ga = voxelize::<ChaCha8Rng>(&mol(&[("C", a)]), &spec, 0.0, None).unwrap();
        let gb = voxelize::<ChaCha8Rng>(&mol(&[("C", b)]), &spec, 0.0, None).unwrap();
        assert_eq!(both, ga.union(&gb).unwrap());
    }

    #[test]
    fn out_of_bounds_names_atom() {
        let spec = GridSpec::centered(Vec3::ZERO, 0.5, 8);
        let err = voxelize::<ChaCha8Rng>(&mol(&[("C", Vec3::ZERO), ("N", Vec3::new(1.5, 0.0, 0.0))]), &spec, 0.0, None)
            .unwrap_err();
        assert!(matches!(err, GeomError::OutOfBounds { atom: 1, .. }), "{err:?}");
        let err = voxelize::<ChaCha8Rng>(&mol(&[("Xe", Vec3::ZERO)]), &GridSpec::default(), 0.0, None).unwrap_err();
        assert!(matches!(err, GeomError::UnknownElement(_)));
    }

    #[test]
    fn noise_is_deterministic_and_monotone() {
        let spec = GridSpec::centered(Vec3::ZERO, 0.5, 24);
        let m = mol(&[("C", Vec3::new(0.3, -0.2, 0.1)), ("O", Vec3::new(1.4, 0.1, 0.0))]);
        let g1 = voxelize(&m, &spec, 0.1, Some(&mut ChaCha8Rng::seed_from_u64(4))).unwrap();
        let g2 = voxelize(&m, &spec, 0.1, Some(&mut ChaCha8Rng::seed_from_u64(4))).unwrap();
        assert_eq!(g1, g2);
        let mut prev = voxelize_with_offset(&m, &spec, 0.0, 0.5).unwrap();
        for k in 1..=5 {
            let next = voxelize_with_offset(&m, &spec, 0.1 * k as f64, 0.5).unwrap();
            assert!(prev.is_subset_of(&next).unwrap());
            prev = next;
        }
    }

    #[test]
    fn rigid_roundtrip_gives_identical_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = GridSpec::centered(Vec3::ZERO, 0.5, 32);
        for _ in 0..20 {
            let atoms: Vec<(&str, Vec3)> = (0..5)
                .map(|_| ("C", Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))))
                .collect();
            let m = mol(&atoms);
            let q = crate::geom::Quaternion::random(&mut rng);
            let t = Vec3::new(0.7, -1.1, 2.3);
            let moved = m.transformed(&crate::geom::Pose::new(q, t));
            let back = moved.transformed(&crate::geom::Pose::new(q, t).inverse());
            let a = voxelize::<ChaCha8Rng>(&m, &spec, 0.0, None).unwrap();
            let b = voxelize::<ChaCha8Rng>(&back, &spec, 0.0, None).unwrap();
            assert_eq!(shape_tanimoto(&a, &b).unwrap(), 1.0);
        }
    }
}

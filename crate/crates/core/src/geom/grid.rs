use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use super::{GeomError, Vec3};

/// Cubic lattice: `extent³` cells of edge `pitch` starting at `origin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub pitch: f64,
    pub extent: usize,
    pub origin: Vec3,
}

impl Default for GridSpec {
    /// 0.5 Å cells, 64 per axis, centred on the origin (a 32 Å cube).
    fn default() -> Self {
        Self::centered(Vec3::ZERO, 0.5, 64)
    }
}

impl GridSpec {
    pub fn new(pitch: f64, extent: usize, origin: Vec3) -> Result<Self, GeomError> {
        if !(pitch > 0.0 && pitch.is_finite()) || extent == 0 || !origin.is_finite() {
            return Err(GeomError::InvalidSpec { pitch, extent });
        }
        Ok(Self { pitch, extent, origin })
    }

    /// Grid of the given geometry whose centre is `center`.
    pub fn centered(center: Vec3, pitch: f64, extent: usize) -> Self {
        let half = pitch * extent as f64 * 0.5;
        Self { pitch, extent, origin: center - Vec3::splat(half) }
    }

    pub fn side(&self) -> f64 {
        self.pitch * self.extent as f64
    }

    pub fn center(&self) -> Vec3 {
        self.origin + Vec3::splat(self.side() * 0.5)
    }

    pub fn cell_count(&self) -> usize {
        self.extent * self.extent * self.extent
    }

    pub fn cell_volume(&self) -> f64 {
        self.pitch * self.pitch * self.pitch
    }

    /// Raster index; z is the slowest axis, x the fastest.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.extent + y) * self.extent + x
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let e = self.extent;
        [index % e, (index / e) % e, index / (e * e)]
    }

    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                (x as f64 + 0.5) * self.pitch,
                (y as f64 + 0.5) * self.pitch,
                (z as f64 + 0.5) * self.pitch,
            )
    }

    /// Whether the ball of radius `r` around `c` lies inside the grid box.
    pub fn contains_ball(&self, c: Vec3, r: f64) -> bool {
        let hi = self.origin + Vec3::splat(self.side());
        c.x - r >= self.origin.x
            && c.y - r >= self.origin.y
            && c.z - r >= self.origin.z
            && c.x + r <= hi.x
            && c.y + r <= hi.y
            && c.z + r <= hi.z
    }

    /// Cell containing the point, if inside the grid.
    pub fn cell_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let rel = (p - self.origin) * (1.0 / self.pitch);
        let e = self.extent as f64;
        if rel.x < 0.0 || rel.y < 0.0 || rel.z < 0.0 || rel.x >= e || rel.y >= e || rel.z >= e {
            return None;
        }
        Some([rel.x as usize, rel.y as usize, rel.z as usize])
    }
}

/// Binary occupancy image on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    spec: GridSpec,
    cells: Vec<bool>,
}

/// One cubic patch of a grid in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Lattice position of the patch (x, y, z) in patch units.
    pub position: [usize; 3],
    pub cells: Vec<bool>,
}

const NEIGHBORS6: [[isize; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

impl VoxelGrid {
    pub fn empty(spec: GridSpec) -> Self {
        Self { cells: vec![false; spec.cell_count()], spec }
    }

    pub fn from_cells(spec: GridSpec, cells: Vec<bool>) -> Result<Self, GeomError> {
        if cells.len() != spec.cell_count() {
            return Err(GeomError::CellCount { expected: spec.cell_count(), found: cells.len() });
        }
        Ok(Self { spec, cells })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.cells[self.spec.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.spec.index(x, y, z);
        self.cells[i] = value;
    }

    pub fn get_index(&self, i: usize) -> bool {
        self.cells[i]
    }

    pub fn set_index(&mut self, i: usize, value: bool) {
        self.cells[i] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    /// Occupied volume in Å³.
    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.spec.cell_volume()
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i)
    }

    /// Mean of occupied cell centres.
    pub fn centroid(&self) -> Option<Vec3> {
        let pts: Vec<Vec3> = self
            .occupied()
            .map(|i| {
                let [x, y, z] = self.spec.coords(i);
                self.spec.cell_center(x, y, z)
            })
            .collect();
        (!pts.is_empty()).then(|| Vec3::centroid(&pts))
    }

    /// In-grid 6-neighbours of cell `i` plus the number of faces on the grid border.
    pub fn neighbors6(&self, i: usize) -> (Vec<usize>, usize) {
        let e = self.spec.extent as isize;
        let [x, y, z] = self.spec.coords(i);
        let mut out = Vec::with_capacity(6);
        let mut border = 0;
        for d in NEIGHBORS6 {
            let (nx, ny, nz) = (x as isize + d[0], y as isize + d[1], z as isize + d[2]);
            if nx < 0 || ny < 0 || nz < 0 || nx >= e || ny >= e || nz >= e {
                border += 1;
            } else {
                out.push(self.spec.index(nx as usize, ny as usize, nz as usize));
            }
        }
        (out, border)
    }

    /// Number of 6-connected components of occupied cells.
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.cells.len()];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in self.occupied() {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                for n in self.neighbors6(i).0 {
                    if self.cells[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        components
    }

    /// Grows the occupied set by `steps` layers of 6-neighbours.
    pub fn dilate(&self, steps: usize) -> VoxelGrid {
        let mut cur = self.clone();
        for _ in 0..steps {
            let mut next = cur.clone();
            for i in cur.occupied() {
                for n in cur.neighbors6(i).0 {
                    next.cells[n] = true;
                }
            }
            cur = next;
        }
        cur
    }

    pub fn intersection(&self, other: &VoxelGrid) -> Result<VoxelGrid, GeomError> {
        self.check_spec(other)?;
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| a && b).collect();
        Ok(VoxelGrid { spec: self.spec, cells })
    }

    pub fn union(&self, other: &VoxelGrid) -> Result<VoxelGrid, GeomError> {
        self.check_spec(other)?;
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| a || b).collect();
        Ok(VoxelGrid { spec: self.spec, cells })
    }

    pub fn is_subset_of(&self, other: &VoxelGrid) -> Result<bool, GeomError> {
        self.check_spec(other)?;
        Ok(self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b))
    }

    fn check_spec(&self, other: &VoxelGrid) -> Result<(), GeomError> {
        if self.spec != other.spec {
            return Err(GeomError::SpecMismatch);
        }
        Ok(())
    }

    /// Samples this grid at the cell centres of `target` (nearest-cell lookup,
    /// no rotation). Cells of `target` outside this grid are empty.
    pub fn resample_onto(&self, target: &GridSpec) -> VoxelGrid {
        let mut out = VoxelGrid::empty(*target);
        for z in 0..target.extent {
            for y in 0..target.extent {
                for x in 0..target.extent {
                    if let Some([sx, sy, sz]) = self.spec.cell_of(target.cell_center(x, y, z)) {
                        if self.get(sx, sy, sz) {
                            out.set(x, y, z, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// Splits into `(extent / patch_edge)³` cubic patches, raster order
    /// (z-major, then y, then x) both across and inside patches.
    pub fn extract_patches(&self, patch_edge: usize) -> Result<Vec<Patch>, GeomError> {
        let e = self.spec.extent;
        if patch_edge == 0 || e % patch_edge != 0 {
            return Err(GeomError::Patching { extent: e, patch_edge });
        }
        let n = e / patch_edge;
        let mut patches = Vec::with_capacity(n * n * n);
        for pz in 0..n {
            for py in 0..n {
                for px in 0..n {
                    let mut cells = Vec::with_capacity(patch_edge.pow(3));
                    for z in 0..patch_edge {
                        for y in 0..patch_edge {
                            for x in 0..patch_edge {
                                cells.push(self.get(px * patch_edge + x, py * patch_edge + y, pz * patch_edge + z));
                            }
                        }
                    }
                    patches.push(Patch { position: [px, py, pz], cells });
                }
            }
        }
        Ok(patches)
    }

    /// Inverse of [`VoxelGrid::extract_patches`].
    pub fn from_patches(spec: GridSpec, patch_edge: usize, patches: &[Patch]) -> Result<VoxelGrid, GeomError> {
        let e = spec.extent;
        if patch_edge == 0 || e % patch_edge != 0 {
            return Err(GeomError::Patching { extent: e, patch_edge });
        }
        let mut grid = VoxelGrid::empty(spec);
        for patch in patches {
            if patch.cells.len() != patch_edge.pow(3) {
                return Err(GeomError::CellCount { expected: patch_edge.pow(3), found: patch.cells.len() });
            }
            let [px, py, pz] = patch.position;
            let mut k = 0;
            for z in 0..patch_edge {
                for y in 0..patch_edge {
                    for x in 0..patch_edge {
                        grid.set(px * patch_edge + x, py * patch_edge + y, pz * patch_edge + z, patch.cells[k]);
                        k += 1;
                    }
                }
            }
        }
        Ok(grid)
    }

    /// Serialises to VOXL text: a header line followed by `<bit> <run>` records.
    pub fn to_voxl(&self) -> String {
        let s = &self.spec;
        let mut out = format!("VOXL {} {} {} {} {}\n", s.extent, s.pitch, s.origin.x, s.origin.y, s.origin.z);
        let mut iter = self.cells.iter().peekable();
        while let Some(&bit) = iter.next() {
            let mut run = 1usize;
            while iter.peek() == Some(&&bit) {
                iter.next();
                run += 1;
            }
            let _ = writeln!(out, "{} {}", bit as u8, run);
        }
        out
    }

    pub fn from_voxl(text: &str) -> Result<VoxelGrid, GeomError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| GeomError::format(1, "missing VOXL header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "VOXL" {
            return Err(GeomError::format(1, "header must be `VOXL <extent> <pitch> <ox> <oy> <oz>`"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| GeomError::format(1, format!("bad number `{s}`")));
        let extent: usize = fields[1].parse().map_err(|_| GeomError::format(1, "bad extent"))?;
        let spec = GridSpec::new(num(fields[2])?, extent, Vec3::new(num(fields[3])?, num(fields[4])?, num(fields[5])?))?;
        let mut cells = Vec::with_capacity(spec.cell_count());
        for (lineno, line) in lines {
            let mut parts = line.split_whitespace();
            let bad = || GeomError::format(lineno + 1, "record must be `<0|1> <run>`");
            let bit = match parts.next() {
                Some("0") => false,
                Some("1") => true,
                _ => return Err(bad()),
            };
            let run: usize = parts.next().and_then(|r| r.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() || run == 0 {
                return Err(bad());
            }
            if cells.len() + run > spec.cell_count() {
                return Err(GeomError::format(lineno + 1, "run exceeds grid size"));
            }
            cells.extend(std::iter::repeat_n(bit, run));
        }
        VoxelGrid::from_cells(spec, cells)
    }

    pub fn write_voxl_file(&self, path: impl AsRef<Path>) -> Result<(), GeomError> {
        std::fs::write(path, self.to_voxl())?;
        Ok(())
    }

    pub fn read_voxl_file(path: impl AsRef<Path>) -> Result<VoxelGrid, GeomError> {
        VoxelGrid::from_voxl(&std::fs::read_to_string(path)?)
    }
}

/// Intersection-over-union of the occupied sets; 1.0 when both are empty.
pub fn shape_tanimoto(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64, GeomError> {
    a.check_spec(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.cells.iter().zip(&b.cells) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(extent: usize) -> GridSpec {
        GridSpec::new(0.5, extent, Vec3::ZERO).unwrap()
    }

    fn boxed(extent: usize, lo: [usize; 3], hi: [usize; 3]) -> VoxelGrid {
        let mut g = VoxelGrid::empty(spec(extent));
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    g.set(x, y, z, true);
                }
            }
        }
        g
    }

    #[test]
    fn tanimoto_basic_cases() {
        let a = boxed(8, [0, 0, 0], [4, 4, 4]);
        assert_eq!(shape_tanimoto(&a, &a).unwrap(), 1.0);
        let b = boxed(8, [4, 4, 4], [8, 8, 8]);
        assert_eq!(shape_tanimoto(&a, &b).unwrap(), 0.0);
        // nested boxes: a is the lower half of c along z
        let c = boxed(8, [0, 0, 0], [4, 4, 8]);
        assert_eq!(a.count() * 2, c.count());
        assert_eq!(shape_tanimoto(&a, &c).unwrap(), 0.5);
        let e = VoxelGrid::empty(spec(8));
        assert_eq!(shape_tanimoto(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn tanimoto_rejects_mismatched_specs() {
        let a = VoxelGrid::empty(spec(8));
        let b = VoxelGrid::empty(spec(4));
        assert!(matches!(shape_tanimoto(&a, &b), Err(GeomError::SpecMismatch)));
    }

    #[test]
    fn patch_counts() {
        let g = boxed(8, [1, 2, 3], [5, 6, 7]);
        assert_eq!(g.extract_patches(4).unwrap().len(), 8);
        let g4 = boxed(4, [0, 0, 0], [2, 2, 2]);
        let p = g4.extract_patches(4).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].cells, g4.cells);
        assert!(matches!(g.extract_patches(3), Err(GeomError::Patching { .. })));
    }

    #[test]
    fn voxl_detects_malformed_records() {
        assert!(VoxelGrid::from_voxl("VOXL 2 0.5 0 0 0\n1 3\n0 9\n").is_err());
        assert!(VoxelGrid::from_voxl("VOXEL 2 0.5 0 0 0\n").is_err());
        assert!(VoxelGrid::from_voxl("VOXL 2 0.5 0 0 0\n1 3\n").is_err());
        let g = VoxelGrid::from_voxl("VOXL 2 0.5 0 0 0\n1 3\n0 5\n").unwrap();
        assert_eq!(g.count(), 3);
    }

    #[test]
    fn components_and_dilation() {
        let mut g = VoxelGrid::empty(spec(6));
        g.set(0, 0, 0, true);
        g.set(3, 3, 3, true);
        assert_eq!(g.component_count(), 2);
        let d = g.dilate(1);
        assert_eq!(d.count(), 4 + 7);
        assert!(g.is_subset_of(&d).unwrap());
    }

    fn arb_grid() -> impl Strategy<Value = (usize, Vec<bool>)> {
        prop_oneof![Just(4usize), Just(6), Just(8)]
            .prop_flat_map(|e| (Just(e), proptest::collection::vec(any::<bool>(), e * e * e)))
    }

    proptest! {
        #[test]
        fn patches_reassemble_exactly((extent, cells) in arb_grid(), edge in prop_oneof![Just(1usize), Just(2)]) {
            let g = VoxelGrid::from_cells(spec(extent), cells).unwrap();
            let patches = g.extract_patches(edge).unwrap();
            let back = VoxelGrid::from_patches(*g.spec(), edge, &patches).unwrap();
            prop_assert_eq!(back, g);
        }

        #[test]
        fn voxl_roundtrip((extent, cells) in arb_grid()) {
            let g = VoxelGrid::from_cells(GridSpec::new(0.37, extent, Vec3::new(-1.25, 3.0, 0.1)).unwrap(), cells).unwrap();
            prop_assert_eq!(VoxelGrid::from_voxl(&g.to_voxl()).unwrap(), g);
        }

        #[test]
        fn tanimoto_symmetric_and_bounded((extent, a) in arb_grid(), seed in any::<u64>()) {
            let b: Vec<bool> = a.iter().enumerate().map(|(i, &v)| v ^ ((seed >> (i % 64)) & 1 == 1)).collect();
            let ga = VoxelGrid::from_cells(spec(extent), a).unwrap();
            let gb = VoxelGrid::from_cells(spec(extent), b).unwrap();
            let ab = shape_tanimoto(&ga, &gb).unwrap();
            let ba = shape_tanimoto(&gb, &ga).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}

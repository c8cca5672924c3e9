//! Molecular shape sketches: from a ligand, or carved from a pocket cavity
//! by intersecting it with seed bodies placed at its surface.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chem::Molecule;
use crate::geom::{voxelize, GeomError, GridSpec, Pose, Quaternion, Vec3, VoxelGrid};

#[derive(Debug, Error)]
pub enum SketchError {
    #[error("pocket cavity is empty")]
    EmptyPocket,
    #[error("invalid sketch parameters: {0}")]
    Params(String),
    #[error("ligand-derived seeds need a non-empty library")]
    EmptyLibrary,
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cavity grid: occupied cells are open space a ligand may fill.
#[derive(Debug, Clone, PartialEq)]
pub struct PocketShape {
    grid: VoxelGrid,
    boundary: Vec<usize>,
}

impl PocketShape {
    pub fn new(grid: VoxelGrid) -> Result<Self, SketchError> {
        if grid.is_empty() {
            return Err(SketchError::EmptyPocket);
        }
        let boundary = grid
            .occupied()
            .filter(|&i| {
                let (n, border) = grid.neighbors6(i);
                border > 0 || n.iter().any(|&j| !grid.get_index(j))
            })
            .collect();
        Ok(Self { grid, boundary })
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    /// Cavity cells with a 6-neighbour outside the cavity.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn boundary_grid(&self) -> VoxelGrid {
        let mut g = VoxelGrid::empty(*self.grid.spec());
        for &i in &self.boundary {
            g.set_index(i, true);
        }
        g
    }

    /// Unit vector from the cavity into the wall at a boundary cell, averaged
    /// over the surrounding 5×5×5 block.
    pub fn outward_normal(&self, cell: usize) -> Vec3 {
        let spec = self.grid.spec();
        let e = spec.extent as isize;
        let [x, y, z] = spec.coords(cell);
        let mut sum = Vec3::ZERO;
        for dz in -2isize..=2 {
            for dy in -2isize..=2 {
                for dx in -2isize..=2 {
                    let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    let inside = nx >= 0 && ny >= 0 && nz >= 0 && nx < e && ny < e && nz < e;
                    if !inside || !self.grid.get(nx as usize, ny as usize, nz as usize) {
                        sum += Vec3::new(dx as f64, dy as f64, dz as f64);
                    }
                }
            }
        }
        sum.normalized().unwrap_or(Vec3::new(0.0, 0.0, 1.0))
    }
}

/// Cavity = cells of the box `[lo, hi]` not covered by any atom sphere.
pub fn pocket_from_atoms(atoms: &Molecule, lo: Vec3, hi: Vec3, pitch: f64) -> Result<PocketShape, SketchError> {
    let side = (hi - lo).to_array().into_iter().fold(0.0f64, f64::max);
    if !(side > 0.0) || !(pitch > 0.0) {
        return Err(SketchError::Params("pocket box must have positive size".into()));
    }
    let extent = (side / pitch).ceil() as usize;
    let spec = GridSpec::new(pitch, extent, lo)?;
    let mut radii = Vec::with_capacity(atoms.atoms.len());
    for a in &atoms.atoms {
        radii.push(crate::geom::vdw_radius(&a.element)?);
    }
    let walls = rasterize_balls(&spec, &atoms.positions(), &radii);
    let mut cavity = VoxelGrid::empty(spec);
    for i in 0..spec.cell_count() {
        let [x, y, z] = spec.coords(i);
        let c = spec.cell_center(x, y, z);
        let in_box = c.x <= hi.x && c.y <= hi.y && c.z <= hi.z;
        cavity.set_index(i, in_box && !walls.get_index(i));
    }
    PocketShape::new(cavity)
}

/// Occupancy of the union of balls, clipped to the grid.
pub fn rasterize_balls(spec: &GridSpec, centers: &[Vec3], radii: &[f64]) -> VoxelGrid {
    let mut g = VoxelGrid::empty(*spec);
    for (c, &r) in centers.iter().zip(radii) {
        let range = |v: f64, o: f64| {
            let lo = ((v - r - o) / spec.pitch).floor().max(0.0) as usize;
            let hi = (((v + r - o) / spec.pitch).ceil().max(0.0) as usize).min(spec.extent);
            lo..hi
        };
        for z in range(c.z, spec.origin.z) {
            for y in range(c.y, spec.origin.y) {
                for x in range(c.x, spec.origin.x) {
                    if (spec.cell_center(x, y, z) - *c).norm() <= r {
                        g.set(x, y, z, true);
                    }
                }
            }
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedKindTag {
    Sphere,
    Ellipsoid,
    Ligand,
}

impl fmt::Display for SeedKindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeedKindTag::Sphere => "sphere",
            SeedKindTag::Ellipsoid => "ellipsoid",
            SeedKindTag::Ligand => "ligand",
        })
    }
}

impl std::str::FromStr for SeedKindTag {
    type Err = SketchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sphere" => Ok(SeedKindTag::Sphere),
            "ellipsoid" => Ok(SeedKindTag::Ellipsoid),
            "ligand" => Ok(SeedKindTag::Ligand),
            _ => Err(SketchError::Params(format!("unknown seed kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeedKind {
    Sphere { radius: f64 },
    Ellipsoid { semi_axes: [f64; 3] },
    /// Library molecule, posed by the seed pose about its centroid.
    Ligand { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedShape {
    pub kind: SeedKind,
    /// Body frame → pocket frame. The translation is the seed centre.
    pub pose: Pose,
    /// Boundary cell the centre was offset from.
    pub anchor: usize,
}

impl SeedShape {
    pub fn tag(&self) -> SeedKindTag {
        match self.kind {
            SeedKind::Sphere { .. } => SeedKindTag::Sphere,
            SeedKind::Ellipsoid { .. } => SeedKindTag::Ellipsoid,
            SeedKind::Ligand { .. } => SeedKindTag::Ligand,
        }
    }

    /// Occupancy of the seed body on `spec`; ligand seeds are dilated by one voxel.
    pub fn rasterize(&self, spec: &GridSpec, library: &[Molecule]) -> Result<VoxelGrid, SketchError> {
        match &self.kind {
            SeedKind::Sphere { radius } => Ok(rasterize_balls(spec, &[self.pose.translation], &[*radius])),
            SeedKind::Ellipsoid { semi_axes } => {
                let mut g = VoxelGrid::empty(*spec);
                let inv = self.pose.inverse();
                let reach = semi_axes.iter().cloned().fold(0.0, f64::max);
                let bound = rasterize_balls(spec, &[self.pose.translation], &[reach]);
                for i in bound.occupied() {
                    let [x, y, z] = spec.coords(i);
                    let local = inv.apply(spec.cell_center(x, y, z));
                    let s = (local.x / semi_axes[0]).powi(2) + (local.y / semi_axes[1]).powi(2) + (local.z / semi_axes[2]).powi(2);
                    if s <= 1.0 {
                        g.set_index(i, true);
                    }
                }
                Ok(g)
            }
            SeedKind::Ligand { index } => {
                let m = library.get(*index).ok_or(SketchError::EmptyLibrary)?;
                let posed = posed_ligand(m, &self.pose);
                let mut radii = Vec::with_capacity(posed.atoms.len());
                for a in &posed.atoms {
                    radii.push(crate::geom::vdw_radius(&a.element)?);
                }
                Ok(rasterize_balls(spec, &posed.positions(), &radii).dilate(1))
            }
        }
    }
}

/// `m` moved so that its centroid sits at the pose translation, rotated by the pose rotation.
pub fn posed_ligand(m: &Molecule, pose: &Pose) -> Molecule {
    let c = m.centroid();
    m.translated(-c).transformed(pose)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchParams {
    /// Accepted volume band in Å³.
    pub v_min: f64,
    pub v_max: f64,
    pub n_shapes: usize,
    pub seed: u64,
    /// Attempts per requested shape.
    pub max_attempts: usize,
    pub kinds: Vec<SeedKindTag>,
}

impl Default for SketchParams {
    fn default() -> Self {
        Self {
            v_min: 250.0,
            v_max: 500.0,
            n_shapes: 10,
            seed: 0,
            max_attempts: 200,
            kinds: vec![SeedKindTag::Sphere, SeedKindTag::Ellipsoid],
        }
    }
}

impl SketchParams {
    pub fn validate(&self) -> Result<(), SketchError> {
        if !(self.v_min > 0.0 && self.v_min < self.v_max) {
            return Err(SketchError::Params(format!("need 0 < v_min < v_max, got {} and {}", self.v_min, self.v_max)));
        }
        if self.n_shapes == 0 || self.max_attempts == 0 || self.kinds.is_empty() {
            return Err(SketchError::Params("n_shapes, max_attempts and kinds must be non-empty".into()));
        }
        Ok(())
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// RNG stream `i` of a master seed: `splitmix64(seed ⊕ splitmix64(i))`.
pub fn stream(seed: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(i)))
}

/// Draws a seed kind from `kinds`, its size parameters, and a pose centred
/// on a random boundary cell pushed outward by up to the body's radius.
pub fn sample_seed_shape<R: Rng + ?Sized>(
    rng: &mut R,
    pocket: &PocketShape,
    library: &[Molecule],
    kinds: &[SeedKindTag],
) -> Result<SeedShape, SketchError> {
    if kinds.is_empty() {
        return Err(SketchError::Params("no seed kinds enabled".into()));
    }
    let tag = kinds[rng.random_range(0..kinds.len())];
    let rotation = Quaternion::random(rng);
    let (kind, radius) = match tag {
        SeedKindTag::Sphere => {
            let r = rng.random_range(4.0..=8.0);
            (SeedKind::Sphere { radius: r }, r)
        }
        SeedKindTag::Ellipsoid => {
            let a = [rng.random_range(3.0..=8.0), rng.random_range(3.0..=8.0), rng.random_range(3.0..=8.0)];
            (SeedKind::Ellipsoid { semi_axes: a }, (a[0] + a[1] + a[2]) / 3.0)
        }
        SeedKindTag::Ligand => {
            if library.is_empty() {
                return Err(SketchError::EmptyLibrary);
            }
            let index = rng.random_range(0..library.len());
            let m = &library[index];
            let c = m.centroid();
            let r = m.atoms.iter().map(|a| a.position.distance(c)).fold(0.0, f64::max) + 1.7;
            (SeedKind::Ligand { index }, r)
        }
    };
    let boundary = pocket.boundary();
    let anchor = boundary[rng.random_range(0..boundary.len())];
    let spec = pocket.grid().spec();
    let [x, y, z] = spec.coords(anchor);
    let offset = rng.random_range(0.0..=radius);
    let center = spec.cell_center(x, y, z) + pocket.outward_normal(anchor) * offset;
    Ok(SeedShape { kind, pose: Pose::new(rotation, center), anchor })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchedShape {
    pub id: usize,
    pub grid: VoxelGrid,
    pub seed: SeedShape,
    pub volume: f64,
    /// Samples drawn for this shape, including the accepted one.
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchOutcome {
    pub shapes: Vec<SketchedShape>,
    /// Requested shapes that found no acceptable sample.
    pub failures: usize,
}

/// Why a candidate intersection was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Volume,
    Disconnected,
    NoContact,
}

/// Acceptance test for one candidate: volume band, 6-connectivity, and
/// contact with the cavity boundary.
pub fn judge(shape: &VoxelGrid, pocket: &PocketShape, params: &SketchParams) -> Verdict {
    let v = shape.volume();
    if v < params.v_min || v > params.v_max {
        return Verdict::Volume;
    }
    if shape.component_count() != 1 {
        return Verdict::Disconnected;
    }
    let near_wall = pocket.boundary().iter().any(|&b| {
        shape.get_index(b) || shape.neighbors6(b).0.iter().any(|&n| shape.get_index(n))
    });
    if !near_wall {
        return Verdict::NoContact;
    }
    Verdict::Accept
}

/// Up to `n_shapes` cavity sub-shapes. Shape `i` draws from its own stream
/// so results do not depend on evaluation order.
pub fn sketch_from_pocket(pocket: &PocketShape, params: &SketchParams, library: &[Molecule]) -> Result<SketchOutcome, SketchError> {
    params.validate()?;
    if params.kinds.contains(&SeedKindTag::Ligand) && library.is_empty() {
        return Err(SketchError::EmptyLibrary);
    }
    let spec = *pocket.grid().spec();
    let mut shapes = Vec::new();
    let mut failures = 0;
    for i in 0..params.n_shapes {
        let mut rng = stream(params.seed, i as u64);
        let mut accepted = None;
        for attempt in 1..=params.max_attempts {
            let seed = sample_seed_shape(&mut rng, pocket, library, &params.kinds)?;
            let body = seed.rasterize(&spec, library)?;
            let shape = body.intersection(pocket.grid())?;
            if judge(&shape, pocket, params) == Verdict::Accept {
                accepted = Some(SketchedShape { id: i, volume: shape.volume(), grid: shape, seed, attempts: attempt });
                break;
            }
        }
        match accepted {
            Some(s) => shapes.push(s),
            None => failures += 1,
        }
    }
    if failures > 0 {
        log::warn!("{failures} of {} requested shapes found no acceptable sample", params.n_shapes);
    }
    Ok(SketchOutcome { shapes, failures })
}

/// The ligand's own shape.
pub fn sketch_from_ligand(ligand: &Molecule, spec: &GridSpec) -> Result<VoxelGrid, SketchError> {
    Ok(voxelize::<ChaCha8Rng>(ligand, spec, 0.0, None)?)
}

/// Writes `shape_NNN.voxl` files and a tab-separated `manifest.tsv`.
pub fn write_shapes(dir: impl AsRef<Path>, shapes: &[SketchedShape]) -> Result<(), SketchError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("shape_id\tseed_kind\tvolume\tattempts\tfile\n");
    for s in shapes {
        let file = format!("shape_{:03}.voxl", s.id);
        s.grid.write_voxl_file(dir.join(&file))?;
        manifest.push_str(&format!("{}\t{}\t{:.3}\t{}\t{}\n", s.id, s.seed.tag(), s.volume, s.attempts, file));
    }
    std::fs::write(dir.join("manifest.tsv"), manifest)?;
    Ok(())
}

/// Cubic cavity of side `side` Å surrounded by a wall layer of `wall` Å.
pub fn box_pocket(side: f64, wall: f64, pitch: f64) -> Result<PocketShape, SketchError> {
    let extent = ((side + 2.0 * wall) / pitch).round() as usize;
    let spec = GridSpec::new(pitch, extent, Vec3::splat(-wall))?;
    let mut g = VoxelGrid::empty(spec);
    for i in 0..spec.cell_count() {
        let [x, y, z] = spec.coords(i);
        let c = spec.cell_center(x, y, z);
        let inside = [c.x, c.y, c.z].iter().all(|&v| v > 0.0 && v < side);
        g.set_index(i, inside);
    }
    PocketShape::new(g)
}

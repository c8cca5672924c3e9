//! Voxelize a library molecule and print occupancy statistics.

use sketchmol::geom::{voxelize, GridSpec};
use sketchmol::pipeline::base_library;

fn main() {
    let m = base_library().into_iter().find(|m| m.name == "acetanilide").unwrap();
    let m = m.translated(-m.centroid());
    let spec = GridSpec::centered(m.centroid(), 0.5, 48);
    let grid = voxelize::<rand_chacha::ChaCha8Rng>(&m, &spec, 0.0, None).unwrap();
    println!("{}: {} atoms", m.name, m.atoms.len());
    println!("occupied {} of {} cells, volume {:.1} Å^3", grid.count(), spec.cell_count(), grid.volume());
    println!("components {}", grid.component_count());
    println!("VOXL header: {}", grid.to_voxl().lines().next().unwrap_or(""));
}

//! Sketch candidate shapes inside a cubic pocket.

use sketchmol::sketch::{box_pocket, sketch_from_pocket, SketchParams};

fn main() {
    let pocket = box_pocket(20.0, 2.0, 1.0).unwrap();
    let params = SketchParams { n_shapes: 10, seed: 42, ..SketchParams::default() };
    let out = sketch_from_pocket(&pocket, &params, &[]).unwrap();
    println!("cavity volume {:.0} Å^3", pocket.grid().volume());
    for s in &out.shapes {
        println!("shape {:>2}: volume {:>5.0} Å^3 after {} attempts", s.id, s.volume, s.attempts);
    }
    println!("failures: {}", out.failures);
}

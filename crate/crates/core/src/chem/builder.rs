//! Approximate 3D construction of small molecules from rings and chains.
//!
//! Rings are regular planar polygons, chains zig-zag at 120°, and every
//! atom remembers the direction its next substituent should take. All
//! geometry lies in the plane of the first ring unless atoms are placed
//! explicitly.

use super::molecule::{Atom, Bond, BondOrder, Molecule};
use super::ChemError;
use crate::geom::{Quaternion, Vec3};

pub const SINGLE_BOND: f64 = 1.5;
pub const AROMATIC_BOND: f64 = 1.39;
/// Edge length of every ring built from scratch.
pub const RING_BOND: f64 = 1.4;

#[derive(Debug, Clone, Copy)]
struct Heading {
    axis: Vec3,
    /// Side of the zig-zag used to reach this atom; 0 for ring atoms.
    sign: f64,
}

#[derive(Debug, Clone)]
pub struct MolBuilder {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    headings: Vec<Heading>,
    ring_center: Vec<Option<Vec3>>,
    normal: Vec3,
}

impl Default for MolBuilder {
    fn default() -> Self {
        Self::new()
    }
}

fn bond_length(order: BondOrder) -> f64 {
    match order {
        BondOrder::Single => SINGLE_BOND,
        BondOrder::Aromatic => AROMATIC_BOND,
        BondOrder::Double => 1.3,
        BondOrder::Triple => 1.2,
    }
}

impl MolBuilder {
    pub fn new() -> Self {
        Self { atoms: Vec::new(), bonds: Vec::new(), headings: Vec::new(), ring_center: Vec::new(), normal: Vec3::new(0.0, 0.0, 1.0) }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn position(&self, atom: usize) -> Vec3 {
        self.atoms[atom].position
    }

    pub fn atom(&mut self, element: &str, position: Vec3) -> usize {
        self.push(element, position, Heading { axis: Vec3::new(1.0, 0.0, 0.0), sign: 1.0 }, None)
    }

    fn push(&mut self, element: &str, position: Vec3, heading: Heading, center: Option<Vec3>) -> usize {
        self.atoms.push(Atom::new(element, position));
        self.headings.push(heading);
        self.ring_center.push(center);
        self.atoms.len() - 1
    }

    pub fn bond(&mut self, a: usize, b: usize, order: BondOrder) {
        self.bonds.push(Bond::new(a, b, order));
    }

    fn turn(&self, v: Vec3, degrees: f64) -> Vec3 {
        Quaternion::from_axis_angle(self.normal, degrees.to_radians()).rotate(v)
    }

    /// Regular ring centred at the origin with uniform bond order.
    pub fn ring(&mut self, elements: &[&str], order: BondOrder) -> Vec<usize> {
        self.ring_with(elements, &vec![order; elements.len()])
    }

    pub fn benzene(&mut self) -> Vec<usize> {
        self.ring(&["C"; 6], BondOrder::Aromatic)
    }

    /// Ring centred at the origin; `orders[k]` joins atom k and k+1.
    pub fn ring_with(&mut self, elements: &[&str], orders: &[BondOrder]) -> Vec<usize> {
        self.ring_at(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), elements, orders)
    }

    /// Ring whose first atom sits at `center + radius·toward_first`.
    fn ring_at(&mut self, center: Vec3, toward_first: Vec3, elements: &[&str], orders: &[BondOrder]) -> Vec<usize> {
        let n = elements.len();
        assert!(n >= 3 && orders.len() == n);
        let radius = RING_BOND / (2.0 * (std::f64::consts::PI / n as f64).sin());
        let ids: Vec<usize> = (0..n)
            .map(|k| {
                let dir = self.turn(toward_first, 360.0 * k as f64 / n as f64);
                self.push(elements[k], center + dir * radius, Heading { axis: dir, sign: 0.0 }, Some(center))
            })
            .collect();
        for k in 0..n {
            self.bond(ids[k], ids[(k + 1) % n], orders[k]);
        }
        ids
    }

    /// New ring joined to `anchor` by a single bond along the anchor's heading.
    pub fn ring_on(&mut self, anchor: usize, elements: &[&str], order: BondOrder) -> Vec<usize> {
        self.ring_on_with(anchor, elements, &vec![order; elements.len()])
    }

    pub fn ring_on_with(&mut self, anchor: usize, elements: &[&str], orders: &[BondOrder]) -> Vec<usize> {
        let dir = self.next_direction(anchor);
        let n = elements.len();
        let radius = RING_BOND / (2.0 * (std::f64::consts::PI / n as f64).sin());
        let center = self.atoms[anchor].position + dir * (SINGLE_BOND + radius);
        let ids = self.ring_at(center, -dir, elements, orders);
        self.bond(anchor, ids[0], BondOrder::Single);
        ids
    }

    /// Ring fused onto the bond `a`–`b`, on the side away from `a`'s ring.
    /// `orders` run b→new₁→…→newₖ→a.
    pub fn fuse(&mut self, a: usize, b: usize, elements: &[&str], orders: &[BondOrder]) -> Vec<usize> {
        let n = elements.len() + 2;
        assert_eq!(orders.len(), n - 1);
        let pa = self.atoms[a].position;
        let pb = self.atoms[b].position;
        let edge = pa.distance(pb);
        let mid = (pa + pb) * 0.5;
        let old = self.ring_center[a].unwrap_or(mid);
        let away = {
            let along = (pb - pa) * (1.0 / edge);
            let d = mid - old;
            (d - along * d.dot(along)).normalized().unwrap_or_else(|| along.cross(self.normal))
        };
        let apothem = edge / (2.0 * (std::f64::consts::PI / n as f64).tan());
        let center = mid + away * apothem;
        let radius = (pa - center).norm();
        let e1 = (pa - center) * (1.0 / radius);
        let to_b = pb - center;
        let e2 = (to_b - e1 * to_b.dot(e1)).normalized().expect("non-degenerate edge");
        let phi = 2.0 * std::f64::consts::PI / n as f64;
        let mut ring = vec![a, b];
        for (k, el) in elements.iter().enumerate() {
            let t = phi * (k + 2) as f64;
            let dir = e1 * t.cos() + e2 * t.sin();
            let id = self.push(el, center + dir * radius, Heading { axis: dir, sign: 0.0 }, Some(center));
            ring.push(id);
        }
        for k in 1..n {
            let (x, y) = (ring[k], ring[(k + 1) % n]);
            self.bond(x, y, orders[k - 1]);
        }
        ring
    }

    fn next_direction(&self, from: usize) -> Vec3 {
        let h = self.headings[from];
        if h.sign == 0.0 {
            h.axis
        } else {
            self.turn(h.axis, -h.sign * 30.0)
        }
    }

    /// Atom bonded to a ring atom, pointing radially outward.
    pub fn substituent(&mut self, from: usize, element: &str, order: BondOrder) -> usize {
        self.chain(from, element, order)
    }

    /// Next atom of a zig-zag chain.
    pub fn chain(&mut self, from: usize, element: &str, order: BondOrder) -> usize {
        let h = self.headings[from];
        let dir = self.next_direction(from);
        let (axis, sign) = if h.sign == 0.0 { (h.axis, 1.0) } else { (h.axis, -h.sign) };
        let p = self.atoms[from].position + dir * bond_length(order);
        let id = self.push(element, p, Heading { axis, sign }, None);
        self.bond(from, id, order);
        id
    }

    /// Branch at the third trigonal position of a chain atom.
    pub fn side(&mut self, from: usize, element: &str, order: BondOrder) -> usize {
        let h = self.headings[from];
        let dir = if h.sign == 0.0 { h.axis } else { self.turn(h.axis, h.sign * 90.0) };
        let p = self.atoms[from].position + dir * bond_length(order);
        let id = self.push(element, p, Heading { axis: dir, sign: 1.0 }, None);
        self.bond(from, id, order);
        id
    }

    pub fn build(self, name: &str) -> Result<Molecule, ChemError> {
        Molecule::new(name, self.atoms, self.bonds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn min_nonbonded(m: &Molecule) -> f64 {
        let bonded: std::collections::HashSet<(usize, usize)> =
            m.bonds.iter().flat_map(|b| [(b.a, b.b), (b.b, b.a)]).collect();
        let mut best = f64::INFINITY;
        for i in 0..m.atoms.len() {
            for j in i + 1..m.atoms.len() {
                if !bonded.contains(&(i, j)) {
                    best = best.min(m.atoms[i].position.distance(m.atoms[j].position));
                }
            }
        }
        best
    }

    #[test]
    fn benzene_geometry() {
        let mut b = MolBuilder::new();
        let r = b.benzene();
        let m = b.build("bz").unwrap();
        for k in 0..6 {
            let d = m.atoms[r[k]].position.distance(m.atoms[r[(k + 1) % 6]].position);
            assert!((d - RING_BOND).abs() < 1e-9);
        }
        assert!(m.bonds.iter().all(|b| b.in_ring));
    }

    #[test]
    fn chains_and_fused_rings_do_not_overlap() {
        let mut b = MolBuilder::new();
        let r = b.ring_with(&["C"; 6], &[BondOrder::Double, BondOrder::Single, BondOrder::Double, BondOrder::Single, BondOrder::Double, BondOrder::Single]);
        let f = b.fuse(r[1], r[2], &["C", "C", "N", "C"], &[BondOrder::Single, BondOrder::Double, BondOrder::Single, BondOrder::Double, BondOrder::Single]);
        assert_eq!(f.len(), 6);
        let c = b.substituent(r[4], "C", BondOrder::Single);
        let o = b.chain(c, "C", BondOrder::Single);
        b.side(o, "O", BondOrder::Double);
        b.chain(o, "N", BondOrder::Single);
        let m = b.build("x").unwrap();
        assert!(min_nonbonded(&m) > 2.0, "{}", min_nonbonded(&m));
        let ring_bonds = m.bonds.iter().filter(|b| b.in_ring).count();
        assert_eq!(ring_bonds, 11);
        for bond in m.bonds.iter().filter(|b| b.in_ring) {
            let d = m.atoms[bond.a].position.distance(m.atoms[bond.b].position);
            assert!((d - RING_BOND).abs() < 1e-9, "{d}");
        }
    }
}

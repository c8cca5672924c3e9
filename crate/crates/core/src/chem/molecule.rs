use std::collections::HashSet;

use super::canon::LabeledGraph;
use super::ChemError;
use crate::geom::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// MDL bond type code.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            4 => Some(BondOrder::Aromatic),
            _ => None,
        }
    }

    /// Contribution to the valence of each endpoint.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

/// Heavy atom. Its id is its index in [`Molecule::atoms`].
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: String,
    pub position: Vec3,
}

impl Atom {
    pub fn new(element: &str, position: Vec3) -> Self {
        Self { element: element.to_string(), position }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    /// Set by ring perception: the bond lies on a cycle.
    pub in_ring: bool,
}

impl Bond {
    pub fn new(a: usize, b: usize, order: BondOrder) -> Self {
        Self { a, b, order, in_ring: false }
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub name: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl Molecule {
    /// Validates the graph and perceives ring bonds.
    pub fn new(name: impl Into<String>, atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, ChemError> {
        let mut m = Molecule { name: name.into(), atoms, bonds };
        m.validate()?;
        m.perceive_rings();
        Ok(m)
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Molecule { name: name.into(), atoms: Vec::new(), bonds: Vec::new() }
    }

    fn validate(&self) -> Result<(), ChemError> {
        for (i, a) in self.atoms.iter().enumerate() {
            if a.element.is_empty() || !a.position.is_finite() {
                return Err(ChemError::InvalidAtom(i));
            }
        }
        let mut seen = HashSet::new();
        for (i, b) in self.bonds.iter().enumerate() {
            if b.a == b.b || b.a >= self.atoms.len() || b.b >= self.atoms.len() {
                return Err(ChemError::InvalidBond { bond: i, a: b.a, b: b.b, atoms: self.atoms.len() });
            }
            if !seen.insert((b.a.min(b.b), b.a.max(b.b))) {
                return Err(ChemError::DuplicateBond { a: b.a, b: b.b });
            }
        }
        Ok(())
    }

    /// Marks every bond that lies on a cycle (i.e. is not a bridge).
    pub fn perceive_rings(&mut self) {
        let bridges = self.bridges();
        for (i, b) in self.bonds.iter_mut().enumerate() {
            b.in_ring = !bridges[i];
        }
    }

    /// Bridge flags per bond, via iterative Tarjan low-link.
    fn bridges(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let adj = self.adjacency();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut is_bridge = vec![false; self.bonds.len()];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // (atom, bond used to enter, next adjacency slot)
            let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(top) = stack.len().checked_sub(1) {
                let (v, via, slot) = stack[top];
                if slot < adj[v].len() {
                    let (w, bond) = adj[v][slot];
                    stack[top].2 += 1;
                    if Some(bond) == via {
                        continue;
                    }
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        stack.push((w, Some(bond), 0));
                    } else {
                        low[v] = low[v].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if let (Some(bond), Some(&(parent, _, _))) = (via, stack.last()) {
                        low[parent] = low[parent].min(low[v]);
                        if low[v] > disc[parent] {
                            is_bridge[bond] = true;
                        }
                    }
                }
            }
        }
        is_bridge
    }

    /// Per atom: `(neighbour, bond index)` pairs.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (i, b) in self.bonds.iter().enumerate() {
            adj[b.a].push((b.b, i));
            adj[b.b].push((b.a, i));
        }
        adj
    }

    pub fn atom_in_ring(&self) -> Vec<bool> {
        let mut flags = vec![false; self.atoms.len()];
        for b in self.bonds.iter().filter(|b| b.in_ring) {
            flags[b.a] = true;
            flags[b.b] = true;
        }
        flags
    }

    /// Sum of bond valence contributions per atom.
    pub fn valences(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.atoms.len()];
        for b in &self.bonds {
            v[b.a] += b.order.valence();
            v[b.b] += b.order.valence();
        }
        v
    }

    /// Component label per atom and the number of components, ignoring the
    /// bonds for which `skip` returns true.
    pub fn components_without(&self, skip: impl Fn(usize) -> bool) -> (Vec<usize>, usize) {
        let adj = self.adjacency();
        let mut label = vec![usize::MAX; self.atoms.len()];
        let mut count = 0;
        for start in 0..self.atoms.len() {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &(w, bond) in &adj[v] {
                    if !skip(bond) && label[w] == usize::MAX {
                        label[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    pub fn component_count(&self) -> usize {
        self.components_without(|_| false).1
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() <= 1
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn centroid(&self) -> Vec3 {
        Vec3::centroid(&self.positions())
    }

    pub fn transformed(&self, pose: &Pose) -> Molecule {
        let mut m = self.clone();
        for a in &mut m.atoms {
            a.position = pose.apply(a.position);
        }
        m
    }

    pub fn translated(&self, by: Vec3) -> Molecule {
        self.transformed(&Pose::new(crate::geom::Quaternion::IDENTITY, by))
    }

    /// Element-labelled graph with bond-order edge labels.
    pub fn graph(&self) -> LabeledGraph {
        LabeledGraph {
            labels: self.atoms.iter().map(|a| a.element.clone()).collect(),
            edges: self.bonds.iter().map(|b| (b.a, b.b, b.order.code())).collect(),
        }
    }

    /// Canonical identifier of the molecular graph (geometry ignored).
    pub fn canonical_key(&self) -> String {
        self.graph().canonical_form().code
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ring_plus_tail() -> Molecule {
        // 6-ring (0..6) with a two-atom tail 6-7 on atom 0
        let atoms = (0..8).map(|i| Atom::new("C", Vec3::new(i as f64, 0.0, 0.0))).collect();
        let mut bonds: Vec<Bond> = (0..6).map(|i| Bond::new(i, (i + 1) % 6, BondOrder::Aromatic)).collect();
        bonds.push(Bond::new(0, 6, BondOrder::Single));
        bonds.push(Bond::new(6, 7, BondOrder::Single));
        Molecule::new("etb", atoms, bonds).unwrap()
    }

    #[test]
    fn ring_perception_marks_cycle_bonds() {
        let m = ring_plus_tail();
        let flags: Vec<bool> = m.bonds.iter().map(|b| b.in_ring).collect();
        assert_eq!(flags, vec![true, true, true, true, true, true, false, false]);
        let in_ring = m.atom_in_ring();
        assert!(in_ring[..6].iter().all(|&f| f));
        assert!(!in_ring[6] && !in_ring[7]);
    }

    #[test]
    fn fused_rings_and_bridges() {
        // two squares sharing an edge, plus a pendant atom
        let atoms = (0..7).map(|_| Atom::new("C", Vec3::ZERO)).collect();
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (1, 4), (4, 5), (5, 2), (5, 6)];
        let bonds = pairs.iter().map(|&(a, b)| Bond::new(a, b, BondOrder::Single)).collect();
        let m = Molecule::new("f", atoms, bonds).unwrap();
        let ring: Vec<bool> = m.bonds.iter().map(|b| b.in_ring).collect();
        assert_eq!(ring, vec![true, true, true, true, true, true, true, false]);
    }

    #[test]
    fn invalid_graphs_rejected() {
        let atoms = vec![Atom::new("C", Vec3::ZERO), Atom::new("C", Vec3::ZERO)];
        assert!(matches!(
            Molecule::new("x", atoms.clone(), vec![Bond::new(0, 0, BondOrder::Single)]),
            Err(ChemError::InvalidBond { .. })
        ));
        assert!(matches!(
            Molecule::new("x", atoms.clone(), vec![Bond::new(0, 5, BondOrder::Single)]),
            Err(ChemError::InvalidBond { .. })
        ));
        assert!(matches!(
            Molecule::new("x", atoms, vec![Bond::new(0, 1, BondOrder::Single), Bond::new(1, 0, BondOrder::Double)]),
            Err(ChemError::DuplicateBond { .. })
        ));
    }

    #[test]
    fn connectivity() {
        let m = ring_plus_tail();
        assert!(m.is_connected());
        let (_, n) = m.components_without(|b| b == 6);
        assert_eq!(n, 2);
    }
}

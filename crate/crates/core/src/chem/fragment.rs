//! Cutting molecules into vocabulary fragments.

use std::collections::BTreeMap;

use super::align::{frame_rotation, principal_axes};
use super::canon::LabeledGraph;
use super::molecule::{Atom, Bond, BondOrder, Molecule};
use super::ChemError;
use crate::geom::{Pose, Vec3};

/// Which acyclic single bonds are cut, beyond the always-on rule that cuts
/// every acyclic single bond touching a ring atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleTable {
    /// Cut single bonds from a carbonyl carbon (amide, ester, ketone links).
    pub carbonyl: bool,
    /// Cut C–O and C–N single bonds.
    pub hetero_linker: bool,
    /// Heavy atoms required on each side of a hetero-linker cut.
    pub min_side_heavy: usize,
}

impl Default for RuleTable {
    fn default() -> Self {
        Self { carbonyl: true, hetero_linker: true, min_side_heavy: 2 }
    }
}

impl RuleTable {
    /// Only the ring-attachment rule.
    pub fn ring_only() -> Self {
        Self { carbonyl: false, hetero_linker: false, min_side_heavy: 2 }
    }

    /// Flags per bond of `m`: true when the bond is cut.
    pub fn cut_flags(&self, m: &Molecule) -> Vec<bool> {
        let in_ring = m.atom_in_ring();
        let adj = m.adjacency();
        let carbonyl: Vec<bool> = (0..m.atoms.len())
            .map(|i| {
                m.atoms[i].element == "C"
                    && adj[i].iter().any(|&(j, b)| m.bonds[b].order == BondOrder::Double && m.atoms[j].element == "O")
            })
            .collect();
        m.bonds
            .iter()
            .enumerate()
            .map(|(i, b)| {
                if b.in_ring || b.order != BondOrder::Single {
                    return false;
                }
                if in_ring[b.a] || in_ring[b.b] {
                    return true;
                }
                if self.carbonyl && (carbonyl[b.a] || carbonyl[b.b]) {
                    return true;
                }
                if self.hetero_linker && is_hetero_linker(&m.atoms[b.a].element, &m.atoms[b.b].element) {
                    let (label, _) = m.components_without(|k| k == i);
                    let side = label.iter().filter(|&&l| l == label[b.a]).count();
                    let other = m.atoms.len() - side;
                    return side >= self.min_side_heavy && other >= self.min_side_heavy;
                }
                false
            })
            .collect()
    }
}

fn is_hetero_linker(x: &str, y: &str) -> bool {
    matches!((x, y), ("C", "O") | ("O", "C") | ("C", "N") | ("N", "C"))
}

/// Attachment site: the fragment atom that lost a bond, and where the atom
/// across the cut sat (in the fragment's frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Breakpoint {
    pub atom: usize,
    pub exit: Vec3,
}

/// A connected piece of a molecule in its canonical local frame. Atoms are
/// stored in canonical labelling order.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub key: String,
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub breakpoints: Vec<Breakpoint>,
}

impl Fragment {
    /// Canonicalises a sub-molecule given in world coordinates. Returns the
    /// fragment, the pose taking its frame to the input coordinates, and
    /// `order[k]` = input index of canonical atom `k`.
    pub fn canonicalize(atoms: &[Atom], bonds: &[Bond], breakpoints: &[Breakpoint]) -> (Fragment, Pose, Vec<usize>) {
        let graph = annotated_graph(atoms, bonds, breakpoints);
        let form = graph.canonical_form();
        let order = form.order;
        let mut new_id = vec![0usize; atoms.len()];
        for (k, &v) in order.iter().enumerate() {
            new_id[v] = k;
        }
        let mut bps: Vec<(usize, usize, Vec3)> =
            breakpoints.iter().enumerate().map(|(i, bp)| (new_id[bp.atom], i, bp.exit)).collect();
        bps.sort_by_key(|&(a, i, _)| (a, i));

        let world: Vec<Vec3> = order.iter().map(|&v| atoms[v].position).collect();
        let center = Vec3::centroid(&world);
        let mut cloud = world.clone();
        cloud.extend(bps.iter().map(|b| b.2));
        let refs: Vec<Vec3> = bps.iter().map(|b| b.2 - center).chain(world.iter().map(|&p| p - center)).collect();
        let rotation = frame_rotation(&principal_axes(&cloud, &refs));
        let pose = Pose::new(rotation, center);
        let inv = pose.inverse();

        let fragment = Fragment {
            key: form.code,
            atoms: order.iter().map(|&v| Atom::new(&atoms[v].element, inv.apply(atoms[v].position))).collect(),
            bonds: {
                let mut bs: Vec<Bond> = bonds
                    .iter()
                    .map(|b| {
                        let (x, y) = (new_id[b.a], new_id[b.b]);
                        Bond { a: x.min(y), b: x.max(y), order: b.order, in_ring: b.in_ring }
                    })
                    .collect();
                bs.sort_by_key(|b| (b.a, b.b));
                bs
            },
            breakpoints: bps.iter().map(|&(a, _, e)| Breakpoint { atom: a, exit: inv.apply(e) }).collect(),
        };
        (fragment, pose, order)
    }

    /// Graph whose vertex labels carry the element and breakpoint count.
    pub fn graph(&self) -> LabeledGraph {
        annotated_graph(&self.atoms, &self.bonds, &self.breakpoints)
    }

    /// Key invariant to atom relabelling and rigid motion.
    pub fn canonical_key(&self) -> String {
        self.graph().canonical_form().code
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn exits(&self) -> Vec<Vec3> {
        self.breakpoints.iter().map(|b| b.exit).collect()
    }

    pub fn heavy_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// The fragment as a standalone molecule (breakpoints dropped).
    pub fn to_molecule(&self, name: &str) -> Molecule {
        let mut m = Molecule::empty(name);
        m.atoms = self.atoms.clone();
        m.bonds = self.bonds.clone();
        m
    }
}

fn annotated_graph(atoms: &[Atom], bonds: &[Bond], breakpoints: &[Breakpoint]) -> LabeledGraph {
    let mut counts = vec![0usize; atoms.len()];
    for bp in breakpoints {
        counts[bp.atom] += 1;
    }
    LabeledGraph {
        labels: atoms
            .iter()
            .zip(&counts)
            .map(|(a, &c)| if c == 0 { a.element.clone() } else { format!("{}*{}", a.element, c) })
            .collect(),
        edges: bonds.iter().map(|b| (b.a, b.b, b.order.code())).collect(),
    }
}

/// A fragment as it occurs in a particular molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentInstance {
    pub fragment: Fragment,
    /// Canonical frame → molecule frame.
    pub pose: Pose,
    /// Molecule atom id of each fragment atom.
    pub atom_ids: Vec<usize>,
    /// Index into [`Fragmentation::cuts`] of each breakpoint.
    pub cuts: Vec<usize>,
}

impl FragmentInstance {
    pub fn world_positions(&self) -> Vec<Vec3> {
        self.fragment.atoms.iter().map(|a| self.pose.apply(a.position)).collect()
    }

    pub fn world_exits(&self) -> Vec<Vec3> {
        self.fragment.breakpoints.iter().map(|b| self.pose.apply(b.exit)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutBond {
    /// Index of the bond in the source molecule.
    pub bond: usize,
    pub atoms: [usize; 2],
    /// Fragment instance on each side, aligned with `atoms`.
    pub fragments: [usize; 2],
    /// Breakpoint index within each fragment, aligned with `atoms`.
    pub breakpoints: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fragmentation {
    pub instances: Vec<FragmentInstance>,
    pub cuts: Vec<CutBond>,
}

/// Cuts `m` into fragments. Fragments are numbered by their lowest atom id.
pub fn fragment(m: &Molecule, rules: &RuleTable) -> Result<Fragmentation, ChemError> {
    let components = m.component_count();
    if components > 1 {
        return Err(ChemError::MultiComponent { name: m.name.clone(), components });
    }
    let flags = rules.cut_flags(m);
    let (label, count) = m.components_without(|b| flags[b]);
    let cut_ids: Vec<usize> = (0..m.bonds.len()).filter(|&b| flags[b]).collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (atom, &l) in label.iter().enumerate() {
        members[l].push(atom);
    }
    let mut local = vec![0usize; m.atoms.len()];
    for mem in &members {
        for (k, &a) in mem.iter().enumerate() {
            local[a] = k;
        }
    }
    let mut inner_bonds: Vec<Vec<Bond>> = vec![Vec::new(); count];
    for (i, b) in m.bonds.iter().enumerate() {
        if !flags[i] {
            inner_bonds[label[b.a]].push(Bond { a: local[b.a], b: local[b.b], order: b.order, in_ring: b.in_ring });
        }
    }
    // per fragment: (local atom, cut index, exit position)
    let mut raw_bps: Vec<Vec<(usize, usize, Vec3)>> = vec![Vec::new(); count];
    for (ci, &bi) in cut_ids.iter().enumerate() {
        let b = &m.bonds[bi];
        raw_bps[label[b.a]].push((local[b.a], ci, m.atoms[b.b].position));
        raw_bps[label[b.b]].push((local[b.b], ci, m.atoms[b.a].position));
    }

    let mut cuts: Vec<CutBond> = cut_ids
        .iter()
        .map(|&bi| {
            let b = &m.bonds[bi];
            CutBond { bond: bi, atoms: [b.a, b.b], fragments: [label[b.a], label[b.b]], breakpoints: [0, 0] }
        })
        .collect();
    let mut instances = Vec::with_capacity(count);
    for f in 0..count {
        let atoms: Vec<Atom> = members[f].iter().map(|&a| m.atoms[a].clone()).collect();
        let bps: Vec<Breakpoint> = raw_bps[f].iter().map(|&(a, _, e)| Breakpoint { atom: a, exit: e }).collect();
        let (fragment, pose, order) = Fragment::canonicalize(&atoms, &inner_bonds[f], &bps);
        let atom_ids: Vec<usize> = order.iter().map(|&k| members[f][k]).collect();
        // recover which cut each canonical breakpoint came from
        let mut pending: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(a, ci, _) in &raw_bps[f] {
            pending.entry(members[f][a]).or_default().push(ci);
        }
        let mut bp_cuts = Vec::with_capacity(fragment.breakpoints.len());
        for (bi, bp) in fragment.breakpoints.iter().enumerate() {
            let list = pending.get_mut(&atom_ids[bp.atom]).expect("breakpoint atom has a cut");
            let ci = list.remove(0);
            let side = usize::from(cuts[ci].atoms[0] != atom_ids[bp.atom]);
            cuts[ci].breakpoints[side] = bi;
            bp_cuts.push(ci);
        }
        instances.push(FragmentInstance { fragment, pose, atom_ids, cuts: bp_cuts });
    }
    Ok(Fragmentation { instances, cuts })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::chem::builder::MolBuilder;
    use crate::chem::is_isomorphic;
    use crate::geom::Quaternion;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn ethylbenzene() -> Molecule {
        let mut b = MolBuilder::new();
        let ring = b.benzene();
        let c1 = b.substituent(ring[0], "C", BondOrder::Single);
        b.chain(c1, "C", BondOrder::Single);
        b.build("ethylbenzene").unwrap()
    }

    pub(crate) fn biphenyl() -> Molecule {
        let mut b = MolBuilder::new();
        let r1 = b.benzene();
        let r2 = b.ring_on(r1[0], &["C"; 6], BondOrder::Aromatic);
        assert_eq!(r2.len(), 6);
        b.build("biphenyl").unwrap()
    }

    fn pyridyl_methyl() -> Molecule {
        let mut b = MolBuilder::new();
        let ring = b.ring(&["N", "C", "C", "C", "C", "C"], BondOrder::Aromatic);
        b.substituent(ring[3], "C", BondOrder::Single);
        b.build("picoline").unwrap()
    }

    fn methyl_acetamide_phenyl() -> Molecule {
        // Ph-NH-C(=O)-CH2-O-CH2-CH3
        let mut b = MolBuilder::new();
        let ring = b.benzene();
        let n = b.substituent(ring[0], "N", BondOrder::Single);
        let c = b.chain(n, "C", BondOrder::Single);
        b.side(c, "O", BondOrder::Double);
        let c2 = b.chain(c, "C", BondOrder::Single);
        let o = b.chain(c2, "O", BondOrder::Single);
        let c3 = b.chain(o, "C", BondOrder::Single);
        b.chain(c3, "C", BondOrder::Single);
        b.build("amide").unwrap()
    }

    fn keys(fr: &Fragmentation) -> Vec<String> {
        let mut k: Vec<String> = fr.instances.iter().map(|i| i.fragment.key.clone()).collect();
        k.sort();
        k
    }

    /// Re-adds every cut bond to the union of the fragments.
    fn regraft(m: &Molecule, fr: &Fragmentation) -> Molecule {
        let mut atoms = vec![Atom::new("?", Vec3::ZERO); m.atoms.len()];
        let mut bonds = Vec::new();
        for inst in &fr.instances {
            let world = inst.world_positions();
            for (k, &id) in inst.atom_ids.iter().enumerate() {
                atoms[id] = Atom::new(&inst.fragment.atoms[k].element, world[k]);
            }
            for b in &inst.fragment.bonds {
                bonds.push(Bond::new(inst.atom_ids[b.a], inst.atom_ids[b.b], b.order));
            }
        }
        for c in &fr.cuts {
            bonds.push(Bond::new(c.atoms[0], c.atoms[1], BondOrder::Single));
        }
        Molecule::new("regraft", atoms, bonds).unwrap()
    }

    #[test]
    fn ethylbenzene_splits_into_phenyl_and_ethyl() {
        let m = ethylbenzene();
        let fr = fragment(&m, &RuleTable::default()).unwrap();
        assert_eq!(fr.instances.len(), 2);
        assert_eq!(fr.cuts.len(), 1);
        for inst in &fr.instances {
            assert_eq!(inst.fragment.breakpoints.len(), 1);
        }
        let sizes: Vec<usize> = fr.instances.iter().map(|i| i.fragment.atoms.len()).collect();
        assert_eq!(sizes, vec![6, 2]);
    }

    #[test]
    fn benzene_is_one_fragment() {
        let mut b = MolBuilder::new();
        b.benzene();
        let fr = fragment(&b.build("benzene").unwrap(), &RuleTable::default()).unwrap();
        assert_eq!(fr.instances.len(), 1);
        assert!(fr.cuts.is_empty());
        assert!(fr.instances[0].fragment.breakpoints.is_empty());
    }

    #[test]
    fn biphenyl_halves_share_a_key() {
        let fr = fragment(&biphenyl(), &RuleTable::default()).unwrap();
        assert_eq!(fr.instances.len(), 2);
        assert_eq!(fr.instances[0].fragment.key, fr.instances[1].fragment.key);
    }

    #[test]
    fn phenyl_and_pyridyl_differ() {
        let ph = fragment(&ethylbenzene(), &RuleTable::default()).unwrap();
        let py = fragment(&pyridyl_methyl(), &RuleTable::default()).unwrap();
        assert_ne!(ph.instances[0].fragment.key, py.instances[0].fragment.key);
    }

    #[test]
    fn carbonyl_and_linker_rules() {
        let m = methyl_acetamide_phenyl();
        let fr = fragment(&m, &RuleTable::default()).unwrap();
        // Ph | N | C=O | CH2 | O | CH2-CH3
        let sizes: Vec<usize> = fr.instances.iter().map(|i| i.fragment.atoms.len()).collect();
        assert_eq!(sizes, vec![6, 1, 2, 1, 1, 2]);
        let ring_only = fragment(&m, &RuleTable::ring_only()).unwrap();
        assert_eq!(ring_only.instances.len(), 2);
    }

    #[test]
    fn ethyl_ether_side_too_small() {
        // CH3-O-CH2-CH3: the methyl side has a single heavy atom
        let mut b = MolBuilder::new();
        let c0 = b.atom("C", Vec3::ZERO);
        let o = b.chain(c0, "O", BondOrder::Single);
        let c1 = b.chain(o, "C", BondOrder::Single);
        b.chain(c1, "C", BondOrder::Single);
        let m = b.build("ether").unwrap();
        let fr = fragment(&m, &RuleTable::default()).unwrap();
        assert_eq!(fr.cuts.len(), 1);
        assert_eq!(fr.cuts[0].atoms, [1, 2]);
    }

    #[test]
    fn pose_reproduces_world_coordinates() {
        let m = methyl_acetamide_phenyl();
        let fr = fragment(&m, &RuleTable::default()).unwrap();
        for (fi, inst) in fr.instances.iter().enumerate() {
            for (k, p) in inst.world_positions().iter().enumerate() {
                assert!(p.max_abs_diff(m.atoms[inst.atom_ids[k]].position) < 1e-9);
            }
            assert!(Vec3::centroid(&inst.fragment.positions()).norm() < 1e-9);
            for (bi, &ci) in inst.cuts.iter().enumerate() {
                let c = &fr.cuts[ci];
                let side = c.fragments.iter().position(|&f| f == fi).unwrap();
                assert_eq!(c.breakpoints[side], bi);
                let across = m.atoms[c.atoms[1 - side]].position;
                assert!(inst.pose.apply(inst.fragment.breakpoints[bi].exit).max_abs_diff(across) < 1e-9);
            }
        }
    }

    #[test]
    fn disconnected_input_rejected() {
        let atoms = vec![Atom::new("C", Vec3::ZERO), Atom::new("C", Vec3::new(5.0, 0.0, 0.0))];
        let m = Molecule::new("two", atoms, vec![]).unwrap();
        assert!(matches!(fragment(&m, &RuleTable::default()), Err(ChemError::MultiComponent { .. })));
    }

    fn shuffled(m: &Molecule, rng: &mut ChaCha8Rng) -> Molecule {
        let mut perm: Vec<usize> = (0..m.atoms.len()).collect();
        perm.shuffle(rng);
        let pose = Pose::new(Quaternion::random(rng), Vec3::new(1.5, -3.0, 2.0));
        let mut atoms = vec![Atom::new("?", Vec3::ZERO); m.atoms.len()];
        for (i, a) in m.atoms.iter().enumerate() {
            atoms[perm[i]] = Atom::new(&a.element, pose.apply(a.position));
        }
        let mut bonds: Vec<Bond> = m.bonds.iter().map(|b| Bond::new(perm[b.b], perm[b.a], b.order)).collect();
        bonds.shuffle(rng);
        Molecule::new(&m.name, atoms, bonds).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn keys_invariant_under_relabeling_and_motion(seed in any::<u64>(), which in 0usize..4) {
            let m = [ethylbenzene(), biphenyl(), pyridyl_methyl(), methyl_acetamide_phenyl()][which].clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = fragment(&m, &RuleTable::default()).unwrap();
            let s = shuffled(&m, &mut rng);
            let b = fragment(&s, &RuleTable::default()).unwrap();
            prop_assert_eq!(keys(&a), keys(&b));
            prop_assert_eq!(a.instances.len(), a.cuts.len() + 1);
            for c in &b.cuts {
                prop_assert!(!s.bonds[c.bond].in_ring);
            }
            prop_assert!(is_isomorphic(&regraft(&s, &b).graph(), &s.graph()));
        }
    }
}

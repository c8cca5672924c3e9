//! Indexed fragment vocabulary with reserved control symbols.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::align::best_fit;
use super::fragment::{fragment, Breakpoint, Fragment, FragmentInstance, RuleTable};
use super::iso::for_each_isomorphism;
use super::molecule::Molecule;
use super::sdf::{parse_record, split_records, write_record};
use super::ChemError;
use crate::geom::{Pose, Vec3};

pub const BOB: usize = 0;
pub const EOB: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const PAD: usize = 4;
pub const CONTROL_COUNT: usize = 5;
pub const CONTROL_NAMES: [&str; CONTROL_COUNT] = ["BOB", "EOB", "BOS", "EOS", "PAD"];

const MAX_ISOMORPHISMS: usize = 64;
const MAX_ALIGNMENTS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentVocab {
    entries: Vec<Fragment>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

/// Pose of a vocabulary representative fitted onto observed coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// Representative frame → observed frame.
    pub pose: Pose,
    pub rmsd: f64,
    /// Observed atom index of each representative atom.
    pub atom_map: Vec<usize>,
    /// Observed breakpoint index of each representative breakpoint.
    pub breakpoint_map: Vec<usize>,
}

impl FragmentVocab {
    pub fn from_entries(entries: Vec<Fragment>, counts: Vec<usize>) -> Result<Self, ChemError> {
        if entries.len() != counts.len() {
            return Err(ChemError::VocabFormat("entry and count lists differ in length".into()));
        }
        let mut index = HashMap::new();
        for (i, f) in entries.iter().enumerate() {
            if index.insert(f.key.clone(), i + CONTROL_COUNT).is_some() {
                return Err(ChemError::VocabFormat(format!("duplicate key {}", f.key)));
            }
        }
        Ok(Self { entries, counts, index })
    }

    /// Token count including control symbols.
    pub fn len(&self) -> usize {
        CONTROL_COUNT + self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fragment_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Fragment] {
        &self.entries
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn is_control(token: usize) -> bool {
        token < CONTROL_COUNT
    }

    /// Fragment for a non-control token.
    pub fn get(&self, token: usize) -> Option<&Fragment> {
        token.checked_sub(CONTROL_COUNT).and_then(|i| self.entries.get(i))
    }

    pub fn name(&self, token: usize) -> String {
        if token < CONTROL_COUNT {
            CONTROL_NAMES[token].to_string()
        } else {
            format!("F{token}")
        }
    }

    /// Fits the representative of `token` onto observed atoms/exits of a
    /// fragment with the same key. Among the label-preserving atom
    /// correspondences (and exit assignments on atoms carrying several
    /// breakpoints) the one with the lowest RMSD wins.
    pub fn place(&self, token: usize, observed: &Fragment, atoms: &[Vec3], exits: &[Vec3]) -> Result<Placement, ChemError> {
        let rep = self.get(token).ok_or_else(|| ChemError::UnknownKey(format!("token {token}")))?;
        if rep.key != observed.key {
            return Err(ChemError::UnknownKey(observed.key.clone()));
        }
        let rep_points: Vec<Vec3> = rep.positions().into_iter().chain(rep.exits()).collect();
        let g_rep = rep.graph();
        let g_obs = observed.graph();
        let mut best: Option<Placement> = None;
        let mut budget = MAX_ALIGNMENTS;
        for_each_isomorphism(&g_rep, &g_obs, MAX_ISOMORPHISMS, |map| {
            for bp_map in exit_assignments(rep, observed, map, &mut budget) {
                let dst: Vec<Vec3> = map.iter().map(|&j| atoms[j]).chain(bp_map.iter().map(|&j| exits[j])).collect();
                let (pose, rmsd) = best_fit(&rep_points, &dst);
                if best.as_ref().is_none_or(|b| rmsd < b.rmsd - 1e-12) {
                    best = Some(Placement { pose, rmsd, atom_map: map.to_vec(), breakpoint_map: bp_map });
                }
            }
            budget > 0
        });
        best.ok_or_else(|| ChemError::UnknownKey(observed.key.clone()))
    }

    /// Token and placement of a fragment instance in its molecule frame.
    pub fn place_instance(&self, inst: &FragmentInstance) -> Result<(usize, Placement), ChemError> {
        let token = self.index_of(&inst.fragment.key).ok_or_else(|| ChemError::UnknownKey(inst.fragment.key.clone()))?;
        let placement = self.place(token, &inst.fragment, &inst.world_positions(), &inst.world_exits())?;
        Ok((token, placement))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), ChemError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut index = String::from("token\tcount\tkey\n");
        let mut sdf = String::new();
        for (i, f) in self.entries.iter().enumerate() {
            let token = i + CONTROL_COUNT;
            let _ = writeln!(index, "{token}\t{}\t{}", self.counts[i], f.key);
            let mut bps = String::new();
            for b in &f.breakpoints {
                let _ = writeln!(bps, "{} {:.6} {:.6} {:.6}", b.atom, b.exit.x, b.exit.y, b.exit.z);
            }
            let mut m = f.to_molecule(&format!("F{token}"));
            // full precision for the canonical geometry; the atom block holds 4 decimals
            let coords: String = m
                .atoms
                .iter()
                .map(|a| format!("{:.9} {:.9} {:.9}\n", a.position.x, a.position.y, a.position.z))
                .collect();
            m.name = format!("F{token}");
            let fields = vec![
                ("key".to_string(), f.key.clone()),
                ("breakpoints".to_string(), if bps.is_empty() { "none\n".into() } else { bps }),
                ("coordinates".to_string(), coords),
            ];
            sdf.push_str(&write_record(&m, &fields));
            sdf.push_str("$$$$\n");
        }
        std::fs::write(dir.join("index.tsv"), index)?;
        std::fs::write(dir.join("fragments.sdf"), sdf)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ChemError> {
        let dir = dir.as_ref();
        let index = std::fs::read_to_string(dir.join("index.tsv"))?;
        let sdf = std::fs::read_to_string(dir.join("fragments.sdf"))?;
        let mut rows = Vec::new();
        for (n, line) in index.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.splitn(3, '\t').collect();
            let bad = || ChemError::VocabFormat(format!("index.tsv line {}", n + 1));
            if cols.len() != 3 {
                return Err(bad());
            }
            let token: usize = cols[0].parse().map_err(|_| bad())?;
            let count: usize = cols[1].parse().map_err(|_| bad())?;
            if token != rows.len() + CONTROL_COUNT {
                return Err(bad());
            }
            rows.push((count, cols[2].to_string()));
        }
        let records: Vec<String> = split_records(&sdf).collect();
        if records.len() != rows.len() {
            return Err(ChemError::VocabFormat(format!("{} index rows but {} fragment records", rows.len(), records.len())));
        }
        let mut entries = Vec::with_capacity(rows.len());
        let mut counts = Vec::with_capacity(rows.len());
        for ((count, key), text) in rows.into_iter().zip(records) {
            let rec = parse_record(&text)?;
            let field = |name: &str| rec.fields.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str());
            let mut atoms = rec.molecule.atoms.clone();
            if let Some(coords) = field("coordinates") {
                for (a, line) in atoms.iter_mut().zip(coords.lines()) {
                    let v: Vec<f64> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
                    if v.len() == 3 {
                        a.position = Vec3::new(v[0], v[1], v[2]);
                    }
                }
            }
            let mut breakpoints = Vec::new();
            for line in field("breakpoints").unwrap_or("").lines() {
                let t: Vec<&str> = line.split_whitespace().collect();
                if t.len() == 4 {
                    let bad = || ChemError::VocabFormat(format!("breakpoint line `{line}`"));
                    let atom: usize = t[0].parse().map_err(|_| bad())?;
                    let xyz: Result<Vec<f64>, _> = t[1..].iter().map(|s| s.parse::<f64>()).collect();
                    let xyz = xyz.map_err(|_| bad())?;
                    if atom >= atoms.len() {
                        return Err(bad());
                    }
                    breakpoints.push(Breakpoint { atom, exit: Vec3::new(xyz[0], xyz[1], xyz[2]) });
                }
            }
            let f = Fragment { key: key.clone(), atoms, bonds: rec.molecule.bonds.clone(), breakpoints };
            if f.canonical_key() != key {
                return Err(ChemError::VocabFormat(format!("stored key does not match fragment {}", rec.molecule.name)));
            }
            entries.push(f);
            counts.push(count);
        }
        Self::from_entries(entries, counts)
    }
}

/// Candidate breakpoint correspondences for one atom mapping.
fn exit_assignments(rep: &Fragment, obs: &Fragment, map: &[usize], budget: &mut usize) -> Vec<Vec<usize>> {
    let mut by_atom: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, b) in obs.breakpoints.iter().enumerate() {
        by_atom.entry(b.atom).or_default().push(i);
    }
    let mut partial: Vec<Vec<usize>> = vec![Vec::new()];
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, b) in rep.breakpoints.iter().enumerate() {
        match groups.last_mut() {
            Some((a, list)) if *a == b.atom => list.push(i),
            _ => groups.push((b.atom, vec![i])),
        }
    }
    for (atom, _) in &groups {
        let obs_list = by_atom.get(&map[*atom]).cloned().unwrap_or_default();
        let perms = permutations(&obs_list);
        let mut next = Vec::new();
        for p in &partial {
            for perm in &perms {
                if next.len() >= (*budget).max(1) {
                    break;
                }
                let mut q = p.clone();
                q.extend(perm.iter().copied());
                next.push(q);
            }
        }
        partial = next;
    }
    *budget = budget.saturating_sub(partial.len());
    // rep breakpoints are sorted by atom, so concatenated groups follow rep order
    partial
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Vocabulary of the `max_size` most frequent fragment keys in `corpus`,
/// ties broken by key. Representatives are first occurrences.
pub fn build_vocab(corpus: &[Molecule], rules: &RuleTable, max_size: usize) -> Result<FragmentVocab, ChemError> {
    if corpus.is_empty() {
        return Err(ChemError::EmptyCorpus);
    }
    let mut counts: HashMap<String, (usize, Fragment)> = HashMap::new();
    for m in corpus {
        for inst in fragment(m, rules)?.instances {
            counts.entry(inst.fragment.key.clone()).or_insert_with(|| (0, inst.fragment.clone())).0 += 1;
        }
    }
    let mut ranked: Vec<(String, usize, Fragment)> = counts.into_iter().map(|(k, (c, f))| (k, c, f)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    let (entries, counts) = ranked.into_iter().map(|(_, c, f)| (f, c)).unzip();
    FragmentVocab::from_entries(entries, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::builder::MolBuilder;
    use crate::chem::fragment::tests::{biphenyl, ethylbenzene};
    use crate::chem::BondOrder;
    use crate::geom::Quaternion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toluene() -> Molecule {
        let mut b = MolBuilder::new();
        let r = b.benzene();
        b.substituent(r[0], "C", BondOrder::Single);
        b.build("toluene").unwrap()
    }

    #[test]
    fn copies_of_ethylbenzene() {
        let corpus = vec![ethylbenzene(); 4];
        let v = build_vocab(&corpus, &RuleTable::default(), 4096).unwrap();
        assert_eq!(v.len(), CONTROL_COUNT + 2);
        assert_eq!(v.counts(), &[4, 4]);
        assert!(v.get(BOS).is_none());
        assert!(v.get(CONTROL_COUNT).is_some());
    }

    #[test]
    fn truncation_keeps_most_frequent() {
        // biphenyl gives two phenyls, ethylbenzene one phenyl and one ethyl
        let corpus = vec![biphenyl(), ethylbenzene()];
        let v = build_vocab(&corpus, &RuleTable::default(), 1).unwrap();
        assert_eq!(v.fragment_count(), 1);
        assert_eq!(v.counts(), &[3]);
        assert_eq!(v.get(CONTROL_COUNT).unwrap().atoms.len(), 6);
    }

    #[test]
    fn order_matches_counting_oracle() {
        let corpus = vec![biphenyl(), ethylbenzene(), toluene(), toluene(), toluene()];
        let v = build_vocab(&corpus, &RuleTable::default(), 10).unwrap();
        let mut oracle: HashMap<String, usize> = HashMap::new();
        for m in &corpus {
            for inst in fragment(m, &RuleTable::default()).unwrap().instances {
                *oracle.entry(inst.fragment.key).or_default() += 1;
            }
        }
        let mut expected: Vec<(usize, String)> = oracle.into_iter().map(|(k, c)| (c, k)).collect();
        expected.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let got: Vec<(usize, String)> = v.entries().iter().zip(v.counts()).map(|(f, &c)| (c, f.key.clone())).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(build_vocab(&[], &RuleTable::default(), 8), Err(ChemError::EmptyCorpus)));
    }

    #[test]
    fn placement_recovers_rigid_motion() {
        let v = build_vocab(&[ethylbenzene()], &RuleTable::default(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let motion = Pose::new(Quaternion::random(&mut rng), Vec3::new(2.0, 1.0, -1.0));
            let moved = ethylbenzene().transformed(&motion);
            for inst in fragment(&moved, &RuleTable::default()).unwrap().instances {
                let (token, p) = v.place_instance(&inst).unwrap();
                assert!(p.rmsd < 1e-6, "rmsd {}", p.rmsd);
                let rep = v.get(token).unwrap();
                let world = inst.world_positions();
                for (k, a) in rep.atoms.iter().enumerate() {
                    assert!(p.pose.apply(a.position).max_abs_diff(world[p.atom_map[k]]) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let corpus = vec![biphenyl(), ethylbenzene(), toluene()];
        let v = build_vocab(&corpus, &RuleTable::default(), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        v.save(dir.path()).unwrap();
        let w = FragmentVocab::load(dir.path()).unwrap();
        assert_eq!(w.len(), v.len());
        for (a, b) in v.entries().iter().zip(w.entries()) {
            assert_eq!(a.key, b.key);
            assert_eq!(a.bonds, b.bonds);
            for (x, y) in a.atoms.iter().zip(&b.atoms) {
                assert!(x.position.max_abs_diff(y.position) < 1e-8);
            }
            assert_eq!(a.breakpoints.len(), b.breakpoints.len());
        }
        assert_eq!(v.counts(), w.counts());
    }
}

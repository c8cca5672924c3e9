use rand::seq::IndexedRandom;
use rand::Rng;

use super::frame::molecule_frame;
use super::PipelineError;
use crate::assembler::{assemble, sanitize};
use crate::chem::builder::SINGLE_BOND;
use crate::chem::{build_vocab, fragment, is_isomorphic, Atom, Bond, BondOrder, Fragment, FragmentVocab, Molecule, RuleTable};
use crate::codec::{build_tree, delinearize, linearize, CodecParams, FragmentTree};
use crate::geom::{Pose, Quaternion, Vec3};
use crate::model::TrainItem;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub rules: RuleTable,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Upper bound on any atom's distance from the centroid, Å.
    pub max_radius: f64,
    /// Smallest allowed distance between non-bonded atoms, Å.
    pub clash: f64,
    /// Torsions tried per junction.
    pub torsions: usize,
    /// Give up after this many rejected attempts per requested molecule.
    pub attempts_per_molecule: usize,
    /// Smallest acceptable vocabulary, in fragments.
    pub min_vocab: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            rules: RuleTable::default(),
            min_nodes: 2,
            max_nodes: 8,
            max_radius: 8.0,
            clash: 2.0,
            torsions: 8,
            attempts_per_molecule: 200,
            min_vocab: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub molecules: Vec<Molecule>,
    /// Fragment vocabulary of the base set; every output refragments into it.
    pub vocab: FragmentVocab,
    /// Rejected attempts.
    pub rejected: usize,
}

struct Site {
    atom: usize,
    dir: Vec3,
    ring: bool,
    carbonyl: bool,
    element: String,
}

/// Per breakpoint of each fragment: the chemistry that decides whether a
/// junction there would be cut again.
fn site_table(f: &Fragment) -> Vec<Site> {
    let m = f.to_molecule("site");
    let ring = m.atom_in_ring();
    let adj = m.adjacency();
    f.breakpoints
        .iter()
        .map(|bp| {
            let a = bp.atom;
            let carbonyl = m.atoms[a].element == "C"
                && adj[a].iter().any(|&(j, b)| m.bonds[b].order == BondOrder::Double && m.atoms[j].element == "O");
            let dir = (bp.exit - f.atoms[a].position).normalized().unwrap_or(Vec3::new(1.0, 0.0, 0.0));
            Site { atom: a, dir, ring: ring[a], carbonyl, element: m.atoms[a].element.clone() }
        })
        .collect()
}

fn junction_is_cut(a: &Site, b: &Site, rules: &RuleTable) -> bool {
    let hetero = matches!((a.element.as_str(), b.element.as_str()), ("C", "O") | ("O", "C") | ("C", "N") | ("N", "C"));
    a.ring || b.ring || (rules.carbonyl && (a.carbonyl || b.carbonyl)) || (rules.hetero_linker && hetero)
}

struct Open {
    token: usize,
    site: usize,
    atom: usize,
    dir: Vec3,
}

/// Grows one molecule from random fragments, or `None` when the attempt fails.
fn grow<R: Rng + ?Sized>(vocab: &FragmentVocab, sites: &[Vec<Site>], target: usize, params: &SynthParams, rng: &mut R) -> Option<(Molecule, usize)> {
    let tokens: Vec<usize> = (crate::chem::CONTROL_COUNT..vocab.len()).filter(|&t| !sites[t].is_empty()).collect();
    let mut atoms: Vec<Atom> = Vec::new();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut open: Vec<Open> = Vec::new();
    let place = |token: usize, pose: &Pose, atoms: &mut Vec<Atom>, bonds: &mut Vec<Bond>, open: &mut Vec<Open>, skip: Option<usize>| {
        let f = vocab.get(token).expect("fragment token");
        let base = atoms.len();
        atoms.extend(f.atoms.iter().map(|a| Atom::new(&a.element, pose.apply(a.position))));
        bonds.extend(f.bonds.iter().map(|b| Bond::new(base + b.a, base + b.b, b.order)));
        for (i, s) in sites[token].iter().enumerate() {
            if Some(i) != skip {
                open.push(Open { token, site: i, atom: base + s.atom, dir: pose.rotation.rotate(s.dir) });
            }
        }
        base
    };
    let root = *tokens.choose(rng)?;
    if sites[root].len() > target - 1 || target < 2 {
        return None;
    }
    place(root, &Pose::IDENTITY, &mut atoms, &mut bonds, &mut open, None);
    let mut nodes = 1;
    while !open.is_empty() {
        let remaining = target - nodes;
        let pick = rng.random_range(0..open.len());
        let slot = open.swap_remove(pick);
        let parent_site = &sites[slot.token][slot.site];
        // fragments whose extra breakpoints still fit in the node budget
        let candidates: Vec<(usize, usize)> = tokens
            .iter()
            .flat_map(|&t| (0..sites[t].len()).map(move |s| (t, s)))
            .filter(|&(t, s)| open.len() + sites[t].len() - 1 < remaining.max(1) && junction_is_cut(parent_site, &sites[t][s], &params.rules))
            .filter(|&(t, _)| open.len() + sites[t].len() - 1 <= remaining - 1)
            .collect();
        let &(token, s) = candidates.choose(rng)?;
        let site = &sites[token][s];
        let frag = vocab.get(token).expect("fragment token");
        let w = slot.dir;
        let anchor = atoms[slot.atom].position + w * SINGLE_BOND;
        let align = Quaternion::rotation_between(site.dir, -w);
        let mut placed = false;
        for _ in 0..params.torsions {
            let spin = Quaternion::from_axis_angle(w, rng.random_range(0.0..std::f64::consts::TAU));
            let rotation = align.then(spin);
            let pose = Pose::new(rotation, anchor - rotation.rotate(frag.atoms[site.atom].position));
            let clear = frag.atoms.iter().enumerate().all(|(i, a)| {
                let p = pose.apply(a.position);
                atoms.iter().enumerate().all(|(j, b)| (i == site.atom && j == slot.atom) || p.distance(b.position) >= params.clash)
            });
            if clear {
                let base = place(token, &pose, &mut atoms, &mut bonds, &mut open, Some(s));
                bonds.push(Bond::new(slot.atom, base + site.atom, BondOrder::Single));
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
        nodes += 1;
    }
    let m = Molecule::new("synth", atoms, bonds).ok()?;
    Some((m, nodes))
}

/// Whether `m` fragments into exactly `nodes` fragments, all in `vocab`.
fn refragments_into(m: &Molecule, nodes: usize, vocab: &FragmentVocab, rules: &RuleTable) -> bool {
    match fragment(m, rules) {
        Ok(fr) => fr.instances.len() == nodes && fr.instances.iter().all(|i| vocab.contains(&i.fragment.key)),
        Err(_) => false,
    }
}

/// `size` molecules built from random fragment trees over the base set's
/// vocabulary, centred on their centroids. Every output passes sanitize and
/// refragments into vocabulary fragments.
pub fn synth_corpus<R: Rng + ?Sized>(base: &[Molecule], size: usize, params: &SynthParams, rng: &mut R) -> Result<SynthCorpus, PipelineError> {
    let vocab = build_vocab(base, &params.rules, usize::MAX)?;
    if vocab.fragment_count() < params.min_vocab {
        return Err(PipelineError::VocabTooSmall { found: vocab.fragment_count(), needed: params.min_vocab });
    }
    if params.min_nodes < 2 || params.max_nodes < params.min_nodes {
        return Err(PipelineError::Config(format!("bad node range {}..={}", params.min_nodes, params.max_nodes)));
    }
    let sites: Vec<Vec<Site>> = (0..vocab.len()).map(|t| vocab.get(t).map(site_table).unwrap_or_default()).collect();
    let mut molecules = Vec::with_capacity(size);
    let mut rejected = 0;
    while molecules.len() < size {
        let mut found = None;
        for _ in 0..params.attempts_per_molecule {
            let target = rng.random_range(params.min_nodes..=params.max_nodes);
            let Some((m, nodes)) = grow(&vocab, &sites, target, params, rng) else {
                rejected += 1;
                continue;
            };
            let m = m.translated(-m.centroid());
            let radius = m.atoms.iter().map(|a| a.position.norm()).fold(0.0, f64::max);
            if nodes < params.min_nodes || radius > params.max_radius || sanitize(&m).is_err() || !refragments_into(&m, nodes, &vocab, &params.rules) {
                rejected += 1;
                continue;
            }
            found = Some(m);
            break;
        }
        let mut m = found.ok_or_else(|| PipelineError::Config(format!("no valid molecule after {} attempts", params.attempts_per_molecule)))?;
        m.name = format!("synth_{:05}", molecules.len());
        molecules.push(m);
    }
    Ok(SynthCorpus { molecules, vocab, rejected })
}

/// Fragment trees of corpus molecules as training items, each molecule moved
/// into the canonical frame of its own shape. Molecules whose fragments are
/// not all in `vocab`, or whose sequences exceed `max_len`, are skipped and
/// counted.
pub fn training_items(corpus: &[Molecule], vocab: &FragmentVocab, rules: &RuleTable, codec: &CodecParams, max_len: usize) -> (Vec<TrainItem>, usize) {
    let mut items = Vec::with_capacity(corpus.len());
    let mut skipped = 0;
    for m in corpus {
        let Ok(frame) = molecule_frame(m) else {
            skipped += 1;
            continue;
        };
        let m = m.transformed(&frame.inverse());
        let tree = fragment(&m, rules).map_err(|e| e.to_string()).and_then(|fr| build_tree(&fr, vocab).map_err(|e| e.to_string()));
        match tree {
            Ok((tree, _)) if linearize(&tree, codec).is_ok_and(|s| s.len() <= max_len) => items.push(TrainItem::Molecule { molecule: m, tree }),
            _ => skipped += 1,
        }
    }
    (items, skipped)
}

/// Result of pushing one molecule through the whole codec and assembler.
#[derive(Debug, Clone, PartialEq)]
pub struct Roundtrip {
    pub ok: bool,
    /// Whether the undiscretised tree reassembles correctly.
    pub exact_ok: bool,
    pub diagnosis: String,
}

fn reassembles(tree: &FragmentTree, original: &Molecule, vocab: &FragmentVocab) -> Result<(), String> {
    let asm = assemble(tree, vocab, &original.name).map_err(|e| format!("assembly: {e}"))?;
    let m = sanitize(&asm.molecule).map_err(|e| format!("sanitize: {e}"))?;
    if is_isomorphic(&original.graph(), &m.graph()) {
        Ok(())
    } else {
        Err("reassembled graph differs".into())
    }
}

/// fragment → tree → tokens → tree → assemble → sanitize, compared to `m`
/// by graph isomorphism. Failures say whether pose quantisation or the
/// junction pairing order is at fault.
pub fn roundtrip(m: &Molecule, vocab: &FragmentVocab, rules: &RuleTable, codec: &CodecParams) -> Roundtrip {
    let fail = |diagnosis: String| Roundtrip { ok: false, exact_ok: false, diagnosis };
    let fr = match fragment(m, rules) {
        Ok(f) => f,
        Err(e) => return fail(format!("fragment: {e}")),
    };
    let tree = match build_tree(&fr, vocab) {
        Ok((t, _)) => t,
        Err(e) => return fail(format!("tree: {e}")),
    };
    let exact = reassembles(&tree, m, vocab);
    let decoded = linearize(&tree, codec).and_then(|s| delinearize(&s, Some(vocab), codec));
    let decoded = match decoded {
        Ok(t) => t,
        Err(e) => return Roundtrip { ok: false, exact_ok: exact.is_ok(), diagnosis: format!("codec: {e}") },
    };
    match (reassembles(&decoded, m, vocab), exact) {
        (Ok(()), _) => Roundtrip { ok: true, exact_ok: true, diagnosis: String::new() },
        (Err(e), Ok(())) => Roundtrip { ok: false, exact_ok: true, diagnosis: format!("discretization: exact poses reassemble, binned poses fail ({e})") },
        (Err(e), Err(x)) => Roundtrip { ok: false, exact_ok: false, diagnosis: format!("order: fails even with exact poses ({x}; binned: {e})") },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::base_library;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn synthesis_oracles() {
        let lib = base_library();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(synth_corpus(&lib, 0, &SynthParams::default(), &mut rng).unwrap().molecules.is_empty());
        let out = synth_corpus(&lib, 60, &SynthParams::default(), &mut rng).unwrap();
        assert_eq!(out.molecules.len(), 60);
        let mut sizes = std::collections::BTreeSet::new();
        for m in &out.molecules {
            assert!(sanitize(m).is_ok());
            assert!(m.centroid().norm() < 1e-9);
            let fr = fragment(m, &RuleTable::default()).unwrap();
            assert!(fr.instances.iter().all(|i| out.vocab.contains(&i.fragment.key)));
            assert!((2..=8).contains(&fr.instances.len()));
            sizes.insert(fr.instances.len());
        }
        assert!(sizes.len() >= 4, "{sizes:?}");
        let strict = SynthParams { min_vocab: 10_000, ..SynthParams::default() };
        assert!(matches!(synth_corpus(&lib, 1, &strict, &mut rng), Err(PipelineError::VocabTooSmall { .. })));
    }

    #[test]
    fn roundtrip_on_synthetic_molecules() {
        let lib = base_library();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = synth_corpus(&lib, 40, &SynthParams::default(), &mut rng).unwrap();
        let codec = CodecParams::default();
        let ok = out.molecules.iter().filter(|m| roundtrip(m, &out.vocab, &RuleTable::default(), &codec).ok).count();
        assert!(ok >= 38, "{ok}/40");
        let (items, skipped) = training_items(&out.molecules, &out.vocab, &RuleTable::default(), &codec, 96);
        assert_eq!((items.len(), skipped), (40, 0));
    }
}

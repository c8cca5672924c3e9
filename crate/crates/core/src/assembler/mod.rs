//! Turning decoded fragment trees back into molecules.

use std::fmt;

use thiserror::Error;

use crate::chem::{Atom, Bond, BondOrder, FragmentVocab, Molecule};
use crate::codec::FragmentTree;

/// Heavy atoms closer than this are a clash.
pub const CLASH_DISTANCE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("node {node} has token {token}, which is not a vocabulary fragment")]
    UnknownToken { node: usize, token: usize },
    #[error("node {node} has a non-finite pose")]
    BadPose { node: usize },
    #[error("no free breakpoint to join node {parent} and node {child}")]
    NoBreakpoint { parent: usize, child: usize },
    #[error("assembled graph is invalid: {0}")]
    Graph(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormedBond {
    pub nodes: (usize, usize),
    /// Representative breakpoint indices on each side.
    pub breakpoints: (usize, usize),
    /// Atom ids in the assembled molecule.
    pub atoms: (usize, usize),
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clash {
    pub atoms: (usize, usize),
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyResult {
    pub molecule: Molecule,
    pub bonds_formed: Vec<FormedBond>,
    pub leftover_breakpoints: usize,
    pub clashes: Vec<Clash>,
    /// First atom id of each node's fragment.
    pub atom_offsets: Vec<usize>,
}

/// Places every fragment at its pose and, for each tree edge in depth-first
/// order, bonds the nearest pair of still-unused breakpoint atoms.
pub fn assemble(tree: &FragmentTree, vocab: &FragmentVocab, name: &str) -> Result<AssemblyResult, AssemblyError> {
    let mut atoms = Vec::new();
    let mut bonds = Vec::new();
    let mut offsets = vec![0usize; tree.len()];
    // per node: (atom id, representative breakpoint index, used)
    let mut free: Vec<Vec<(usize, usize, bool)>> = vec![Vec::new(); tree.len()];
    let order = tree.preorder();
    for &v in &order {
        let node = &tree.nodes[v];
        let frag = vocab.get(node.token).ok_or(AssemblyError::UnknownToken { node: v, token: node.token })?;
        if !node.pose.translation.is_finite() || !node.pose.rotation.is_finite() {
            return Err(AssemblyError::BadPose { node: v });
        }
        let rotation = node.pose.rotation.normalized();
        let base = atoms.len();
        offsets[v] = base;
        for a in &frag.atoms {
            atoms.push(Atom::new(&a.element, rotation.rotate(a.position) + node.pose.translation));
        }
        for b in &frag.bonds {
            bonds.push(Bond::new(base + b.a, base + b.b, b.order));
        }
        free[v] = frag.breakpoints.iter().enumerate().map(|(i, bp)| (base + bp.atom, i, false)).collect();
    }

    let mut formed = Vec::new();
    for &u in &order {
        for &c in &tree.nodes[u].children {
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, &(au, _, used_u)) in free[u].iter().enumerate() {
                if used_u {
                    continue;
                }
                for (j, &(ac, _, used_c)) in free[c].iter().enumerate() {
                    if used_c {
                        continue;
                    }
                    let d = atoms[au].position.distance(atoms[ac].position);
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, i, j));
                    }
                }
            }
            let (d, i, j) = best.ok_or(AssemblyError::NoBreakpoint { parent: u, child: c })?;
            free[u][i].2 = true;
            free[c][j].2 = true;
            let (au, bu, _) = free[u][i];
            let (ac, bc, _) = free[c][j];
            bonds.push(Bond::new(au, ac, BondOrder::Single));
            formed.push(FormedBond { nodes: (u, c), breakpoints: (bu, bc), atoms: (au, ac), length: d });
        }
    }
    let leftover = free.iter().flatten().filter(|f| !f.2).count();
    let molecule = Molecule::new(name, atoms, bonds).map_err(|e| AssemblyError::Graph(e.to_string()))?;
    let clashes = find_clashes(&molecule);
    for c in &clashes {
        log::debug!("{name}: atoms {} and {} only {:.2} Å apart", c.atoms.0, c.atoms.1, c.distance);
    }
    Ok(AssemblyResult { molecule, bonds_formed: formed, leftover_breakpoints: leftover, clashes, atom_offsets: offsets })
}

/// Non-bonded heavy-atom pairs closer than [`CLASH_DISTANCE`].
pub fn find_clashes(m: &Molecule) -> Vec<Clash> {
    let bonded: std::collections::HashSet<(usize, usize)> =
        m.bonds.iter().map(|b| (b.a.min(b.b), b.a.max(b.b))).collect();
    let mut out = Vec::new();
    for i in 0..m.atoms.len() {
        for j in i + 1..m.atoms.len() {
            let d = m.atoms[i].position.distance(m.atoms[j].position);
            if d < CLASH_DISTANCE && !bonded.contains(&(i, j)) {
                out.push(Clash { atoms: (i, j), distance: d });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectCode {
    Empty,
    Valence,
    UnknownElement,
    Clash,
    Disconnected,
}

impl fmt::Display for RejectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectCode::Empty => "empty",
            RejectCode::Valence => "valence",
            RejectCode::UnknownElement => "unknown-element",
            RejectCode::Clash => "clash",
            RejectCode::Disconnected => "disconnected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{code}: {detail}")]
pub struct Rejection {
    pub code: RejectCode,
    pub detail: String,
}

pub fn max_valence(element: &str) -> Option<f64> {
    Some(match element {
        "C" | "Si" => 4.0,
        "N" | "B" => 3.0,
        "O" | "Se" => 2.0,
        "F" | "Cl" | "Br" | "I" => 1.0,
        "S" => 6.0,
        "P" => 5.0,
        _ => return None,
    })
}

/// Accepts connected molecules with element-compatible valences and no
/// heavy-atom pair closer than [`CLASH_DISTANCE`]. Aromatic bonds count 1.5.
pub fn sanitize(m: &Molecule) -> Result<Molecule, Rejection> {
    if m.atoms.is_empty() {
        return Err(Rejection { code: RejectCode::Empty, detail: "no atoms".into() });
    }
    let valences = m.valences();
    for (i, a) in m.atoms.iter().enumerate() {
        let limit = max_valence(&a.element)
            .ok_or_else(|| Rejection { code: RejectCode::UnknownElement, detail: format!("atom {i} is {}", a.element) })?;
        if valences[i] > limit + 1e-9 {
            return Err(Rejection {
                code: RejectCode::Valence,
                detail: format!("atom {i} ({}) has valence {} > {}", a.element, valences[i], limit),
            });
        }
    }
    for i in 0..m.atoms.len() {
        for j in i + 1..m.atoms.len() {
            let d = m.atoms[i].position.distance(m.atoms[j].position);
            if d < CLASH_DISTANCE {
                return Err(Rejection { code: RejectCode::Clash, detail: format!("atoms {i} and {j} are {d:.3} Å apart") });
            }
        }
    }
    let components = m.component_count();
    if components > 1 {
        return Err(Rejection { code: RejectCode::Disconnected, detail: format!("{components} components") });
    }
    Ok(m.clone())
}

/// Tab-separated rejection report: `id`, `code`, `detail`.
pub fn rejection_report(rows: &[(String, Rejection)]) -> String {
    let mut out = String::from("id\tcode\tdetail\n");
    for (id, r) in rows {
        out.push_str(&format!("{id}\t{}\t{}\n", r.code, r.detail.replace(['\t', '\n'], " ")));
    }
    out
}

/// Mean of the formed bond lengths, if any.
pub fn mean_junction_length(r: &AssemblyResult) -> Option<f64> {
    if r.bonds_formed.is_empty() {
        None
    } else {
        Some(r.bonds_formed.iter().map(|b| b.length).sum::<f64>() / r.bonds_formed.len() as f64)
    }
}

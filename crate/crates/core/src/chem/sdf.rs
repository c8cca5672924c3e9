//! MDL MOL/SDF V2000 subset.
//!
//! Supported: the three header lines, the counts line, the atom block (x, y, z,
//! element symbol), the bond block (atom indices and bond types 1-4) and the
//! `M  END` terminator. Property lines and data items are skipped by
//! [`parse_molecule`]; data items are available through [`parse_record`].
//! Hydrogens are dropped on input. V3000 records, atom lists, query atoms and
//! query bond types are rejected as unsupported.

use std::fmt::Write as _;

use super::{Atom, Bond, BondOrder, ChemError, Molecule};
use crate::geom::Vec3;

/// One parsed record plus its `> <name>` data items.
#[derive(Debug, Clone)]
pub struct SdfRecord {
    pub molecule: Molecule,
    pub fields: Vec<(String, String)>,
}

pub fn parse_molecule(text: &str) -> Result<Molecule, ChemError> {
    parse_record(text).map(|r| r.molecule)
}

/// Parses every `$$$$`-separated record.
pub fn parse_sdf(text: &str) -> Result<Vec<Molecule>, ChemError> {
    split_records(text).map(|r| parse_molecule(&r)).collect()
}

/// Every record with its data items.
pub fn parse_sdf_records(text: &str) -> Result<Vec<SdfRecord>, ChemError> {
    split_records(text).map(|r| parse_record(&r)).collect()
}

pub fn write_molecule(m: &Molecule) -> String {
    write_record(m, &[])
}

pub fn write_sdf(mols: &[Molecule]) -> String {
    let mut out = String::new();
    for m in mols {
        out.push_str(&write_molecule(m));
        out.push_str("$$$$\n");
    }
    out
}

pub(crate) fn split_records(text: &str) -> impl Iterator<Item = String> + '_ {
    let mut records = Vec::new();
    let mut cur = String::new();
    for line in text.lines() {
        if line.trim_end() == "$$$$" {
            records.push(std::mem::take(&mut cur));
        } else {
            cur.push_str(line);
            cur.push('\n');
        }
    }
    if !cur.trim().is_empty() {
        records.push(cur);
    }
    records.into_iter()
}

pub fn write_record(m: &Molecule, fields: &[(String, String)]) -> String {
    let mut out = String::new();
    let name = m.name.replace(['\n', '\r'], " ");
    let _ = writeln!(out, "{name}");
    let _ = writeln!(out, "  sketchmol          3D");
    let _ = writeln!(out);
    let _ = writeln!(out, "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000", m.atoms.len(), m.bonds.len());
    for a in &m.atoms {
        let p = a.position;
        let _ = writeln!(out, "{:>10.4}{:>10.4}{:>10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0", p.x, p.y, p.z, a.element);
    }
    for b in &m.bonds {
        let _ = writeln!(out, "{:>3}{:>3}{:>3}  0  0  0  0", b.a + 1, b.b + 1, b.order.code());
    }
    out.push_str("M  END\n");
    for (k, v) in fields {
        let _ = writeln!(out, "> <{k}>");
        out.push_str(v);
        if !v.ends_with('\n') {
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

fn field<'a>(line: &'a str, start: usize, end: usize) -> Option<&'a str> {
    line.get(start..end.min(line.len())).map(str::trim)
}

pub fn parse_record(text: &str) -> Result<SdfRecord, ChemError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 4 {
        return Err(ChemError::parse(lines.len().max(1), "record shorter than header + counts line"));
    }
    let name = lines[0].trim().to_string();
    let counts = lines[3];
    if counts.contains("V3000") {
        return Err(ChemError::Unsupported { line: 4, feature: "V3000 connection table".into() });
    }
    let (natoms, nbonds) = parse_counts(counts)?;
    if lines.len() < 4 + natoms + nbonds {
        return Err(ChemError::parse(lines.len(), format!("expected {natoms} atom and {nbonds} bond lines")));
    }
    let mut atoms = Vec::with_capacity(natoms);
    for k in 0..natoms {
        atoms.push(parse_atom(lines[4 + k], 5 + k)?);
    }
    let mut bonds = Vec::with_capacity(nbonds);
    for k in 0..nbonds {
        let lineno = 5 + natoms + k;
        let (a, b, order) = parse_bond(lines[4 + natoms + k], lineno)?;
        if a == 0 || b == 0 || a > natoms || b > natoms {
            return Err(ChemError::parse(lineno, format!("bond references atom {} of {natoms}", if a == 0 || a > natoms { a } else { b })));
        }
        if a == b {
            return Err(ChemError::parse(lineno, "bond joins an atom to itself"));
        }
        bonds.push(Bond::new(a - 1, b - 1, order));
    }
    let mut fields = Vec::new();
    let mut i = 4 + natoms + nbonds;
    while i < lines.len() {
        let line = lines[i];
        if let Some(rest) = line.strip_prefix('>') {
            let name = rest.split('<').nth(1).and_then(|s| s.split('>').next()).unwrap_or("").to_string();
            let mut value = String::new();
            i += 1;
            while i < lines.len() && !lines[i].trim().is_empty() {
                value.push_str(lines[i]);
                value.push('\n');
                i += 1;
            }
            fields.push((name, value));
        }
        i += 1;
    }
    let molecule = strip_hydrogens(&name, atoms, bonds)?;
    Ok(SdfRecord { molecule, fields })
}

fn parse_counts(line: &str) -> Result<(usize, usize), ChemError> {
    let fixed = (field(line, 0, 3), field(line, 3, 6));
    if let (Some(a), Some(b)) = fixed {
        if let (Ok(a), Ok(b)) = (a.parse(), b.parse()) {
            return Ok((a, b));
        }
    }
    let mut parts = line.split_whitespace();
    match (parts.next().map(str::parse), parts.next().map(str::parse)) {
        (Some(Ok(a)), Some(Ok(b))) => Ok((a, b)),
        _ => Err(ChemError::parse(4, "malformed counts line")),
    }
}

fn parse_atom(line: &str, lineno: usize) -> Result<Atom, ChemError> {
    let parsed = if line.len() >= 34 {
        let num = |s: Option<&str>| s.and_then(|s| s.parse::<f64>().ok());
        match (num(field(line, 0, 10)), num(field(line, 10, 20)), num(field(line, 20, 30)), field(line, 31, 34)) {
            (Some(x), Some(y), Some(z), Some(sym)) if !sym.is_empty() => Some((x, y, z, sym.to_string())),
            _ => None,
        }
    } else {
        None
    };
    let (x, y, z, symbol) = match parsed {
        Some(p) => p,
        None => {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 4 {
                return Err(ChemError::parse(lineno, "atom line needs x, y, z and an element symbol"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| ChemError::parse(lineno, format!("bad coordinate `{s}`")));
            (num(parts[0])?, num(parts[1])?, num(parts[2])?, parts[3].to_string())
        }
    };
    if matches!(symbol.as_str(), "L" | "A" | "Q" | "*" | "LP") || symbol.starts_with("R#") {
        return Err(ChemError::Unsupported { line: lineno, feature: format!("query atom `{symbol}`") });
    }
    let mut chars = symbol.chars();
    let symbol: String = match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => c.to_ascii_uppercase().to_string() + &chars.as_str().to_ascii_lowercase(),
        _ => return Err(ChemError::parse(lineno, format!("bad element symbol `{symbol}`"))),
    };
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(ChemError::parse(lineno, "non-finite coordinate"));
    }
    Ok(Atom::new(&symbol, Vec3::new(x, y, z)))
}

fn parse_bond(line: &str, lineno: usize) -> Result<(usize, usize, BondOrder), ChemError> {
    let fixed = (field(line, 0, 3), field(line, 3, 6), field(line, 6, 9));
    let parsed = match fixed {
        (Some(a), Some(b), Some(t)) => match (a.parse::<usize>(), b.parse::<usize>(), t.parse::<u8>()) {
            (Ok(a), Ok(b), Ok(t)) => Some((a, b, t)),
            _ => None,
        },
        _ => None,
    };
    let (a, b, t) = match parsed {
        Some(p) => p,
        None => {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || ChemError::parse(lineno, "bond line needs two atom indices and a bond type");
            if parts.len() < 3 {
                return Err(bad());
            }
            (
                parts[0].parse().map_err(|_| bad())?,
                parts[1].parse().map_err(|_| bad())?,
                parts[2].parse().map_err(|_| bad())?,
            )
        }
    };
    let order = BondOrder::from_code(t)
        .ok_or_else(|| ChemError::Unsupported { line: lineno, feature: format!("bond type {t}") })?;
    Ok((a, b, order))
}

fn strip_hydrogens(name: &str, atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Molecule, ChemError> {
    let mut remap = vec![usize::MAX; atoms.len()];
    let mut kept = Vec::with_capacity(atoms.len());
    for (i, a) in atoms.into_iter().enumerate() {
        if a.element != "H" {
            remap[i] = kept.len();
            kept.push(a);
        }
    }
    let bonds = bonds
        .into_iter()
        .filter(|b| remap[b.a] != usize::MAX && remap[b.b] != usize::MAX)
        .map(|b| Bond::new(remap[b.a], remap[b.b], b.order))
        .collect();
    Molecule::new(name, kept, bonds)
}

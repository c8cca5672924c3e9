use crate::chem::builder::MolBuilder;
use crate::chem::BondOrder::{self, Aromatic as Ar, Double as D, Single as S, Triple as T};
use crate::chem::Molecule;

type Recipe = fn(&mut MolBuilder);

fn arene(b: &mut MolBuilder, el: &[&str]) -> Vec<usize> {
    b.ring(el, Ar)
}

fn kekule5(b: &mut MolBuilder, anchor: Option<usize>, el: &[&str; 5]) -> Vec<usize> {
    let orders = [S, D, S, D, S];
    match anchor {
        Some(a) => b.ring_on_with(a, el, &orders),
        None => b.ring_with(el, &orders),
    }
}

fn carbonyl(b: &mut MolBuilder, from: usize) -> usize {
    let c = b.chain(from, "C", S);
    b.side(c, "O", D);
    c
}

fn sub(b: &mut MolBuilder, from: usize, chain: &[(&str, BondOrder)]) -> usize {
    chain.iter().fold(from, |at, &(el, o)| b.chain(at, el, o))
}

const RECIPES: &[(&str, Recipe)] = &[
    ("toluene", |b| {
        let r = b.benzene();
        sub(b, r[0], &[("C", S)]);
    }),
    ("phenol", |b| {
        let r = b.benzene();
        sub(b, r[0], &[("O", S)]);
    }),
    ("aniline", |b| {
        let r = b.benzene();
        sub(b, r[0], &[("N", S)]);
    }),
    ("dichlorobenzene", |b| {
        let r = b.benzene();
        sub(b, r[0], &[("Cl", S)]);
        sub(b, r[3], &[("Cl", S)]);
    }),
    ("fluoropyridine", |b| {
        let r = arene(b, &["C", "C", "N", "C", "C", "C"]);
        sub(b, r[0], &[("F", S)]);
    }),
    ("biphenyl", |b| {
        let r = b.benzene();
        b.ring_on(r[0], &["C"; 6], Ar);
    }),
    ("diphenyl ether", |b| {
        let r = b.benzene();
        let o = sub(b, r[0], &[("O", S)]);
        b.ring_on(o, &["C"; 6], Ar);
    }),
    ("benzamide", |b| {
        let r = b.benzene();
        let c = carbonyl(b, r[0]);
        sub(b, c, &[("N", S)]);
    }),
    ("acetanilide", |b| {
        let r = b.benzene();
        let n = sub(b, r[0], &[("N", S)]);
        let c = carbonyl(b, n);
        sub(b, c, &[("C", S)]);
    }),
    ("methyl benzoate", |b| {
        let r = b.benzene();
        let c = carbonyl(b, r[0]);
        sub(b, c, &[("O", S), ("C", S)]);
    }),
    ("phenylpiperidine", |b| {
        let r = b.benzene();
        b.ring_on(r[0], &["N", "C", "C", "C", "C", "C"], S);
    }),
    ("morpholinopyridine", |b| {
        let r = arene(b, &["C", "C", "C", "N", "C", "C"]);
        b.ring_on(r[0], &["N", "C", "C", "O", "C", "C"], S);
    }),
    ("cyclohexylethanol", |b| {
        let r = b.ring(&["C"; 6], S);
        sub(b, r[0], &[("C", S), ("C", S), ("O", S)]);
    }),
    ("thenylamine", |b| {
        let r = kekule5(b, None, &["S", "C", "C", "C", "C"]);
        sub(b, r[1], &[("C", S), ("N", S)]);
    }),
    ("furamide", |b| {
        let r = kekule5(b, None, &["O", "C", "C", "C", "C"]);
        let c = carbonyl(b, r[1]);
        sub(b, c, &[("N", S)]);
    }),
    ("methylpyrrole", |b| {
        let r = kekule5(b, None, &["N", "C", "C", "C", "C"]);
        sub(b, r[1], &[("C", S)]);
    }),
    ("naphthol", |b| {
        let r = b.ring_with(&["C"; 6], &[D, S, D, S, D, S]);
        let f = b.fuse(r[1], r[0], &["C"; 4], &[S, D, S, D, S]);
        sub(b, f[3], &[("O", S)]);
    }),
    ("methylindole", |b| {
        let r = b.benzene();
        let f = b.fuse(r[1], r[0], &["C", "C", "N"], &[S, D, S, S]);
        sub(b, f[4], &[("C", S)]);
    }),
    ("aminopyrimidine", |b| {
        let r = arene(b, &["C", "N", "C", "N", "C", "C"]);
        sub(b, r[0], &[("N", S)]);
    }),
    ("methylphenylpiperazine", |b| {
        let r = b.benzene();
        let p = b.ring_on(r[0], &["N", "C", "C", "N", "C", "C"], S);
        sub(b, p[3], &[("C", S)]);
    }),
    ("cyclopentylbenzene", |b| {
        let r = b.benzene();
        b.ring_on(r[0], &["C"; 5], S);
    }),
    ("phenethylamine", |b| {
        let r = b.benzene();
        sub(b, r[0], &[("C", S), ("C", S), ("N", S)]);
    }),
    ("benzyl ethyl ether", |b| {
        let r = b.benzene();
        sub(b, r[0], &[("C", S), ("O", S), ("C", S), ("C", S)]);
    }),
    ("acetophenone", |b| {
        let r = b.benzene();
        let c = carbonyl(b, r[0]);
        sub(b, c, &[("C", S)]);
    }),
    ("phenylimidazole", |b| {
        let r = b.benzene();
        kekule5(b, Some(r[0]), &["N", "C", "N", "C", "C"]);
    }),
    ("benzonitrile", |b| {
        let r = b.benzene();
        sub(b, r[0], &[("C", S), ("N", T)]);
    }),
    ("chlorothiophene amide", |b| {
        let r = kekule5(b, None, &["S", "C", "C", "C", "C"]);
        sub(b, r[4], &[("Cl", S)]);
        let c = carbonyl(b, r[1]);
        let n = sub(b, c, &[("N", S)]);
        b.ring_on(n, &["C"; 6], Ar);
    }),
    ("methoxypyridine", |b| {
        let r = arene(b, &["C", "C", "N", "C", "C", "C"]);
        sub(b, r[0], &[("O", S), ("C", S)]);
    }),
];

/// Small drug-like molecules with approximate coordinates. Fragmenting
/// them with the default rules yields a few dozen distinct fragments.
pub fn base_library() -> Vec<Molecule> {
    RECIPES
        .iter()
        .map(|(name, recipe)| {
            let mut b = MolBuilder::new();
            recipe(&mut b);
            b.build(name).expect("library recipes are valid graphs")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembler::sanitize;
    use crate::chem::{build_vocab, RuleTable};

    #[test]
    fn library_is_clean_and_diverse() {
        let lib = base_library();
        assert!(lib.len() >= 25);
        for m in &lib {
            sanitize(m).unwrap_or_else(|e| panic!("{}: {e}", m.name));
            let adj = m.adjacency();
            for i in 0..m.atoms.len() {
                for j in i + 1..m.atoms.len() {
                    let near = |a: usize| adj[a].iter().any(|&(k, _)| k == j);
                    if near(i) || adj[i].iter().any(|&(k, _)| near(k)) {
                        continue;
                    }
                    let d = m.atoms[i].position.distance(m.atoms[j].position);
                    assert!(d > 2.0, "{}: atoms {i} {j} at {d:.2}", m.name);
                }
            }
        }
        let vocab = build_vocab(&lib, &RuleTable::default(), 1000).unwrap();
        assert!(vocab.fragment_count() >= 20, "{}", vocab.fragment_count());
    }
}

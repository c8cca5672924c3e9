use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::chem::{fragment, Molecule, RuleTable};
use crate::geom::{shape_tanimoto, vdw_radius, GridSpec, VoxelGrid};
use crate::sketch::rasterize_balls;

/// First occurrence of each molecular graph, ignoring geometry.
pub fn dedup(mols: &[Molecule]) -> Vec<Molecule> {
    let mut seen = HashSet::new();
    mols.iter().filter(|m| seen.insert(m.canonical_key())).cloned().collect()
}

/// Indices kept by [`dedup`].
pub fn dedup_indices(mols: &[Molecule]) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..mols.len()).filter(|&i| seen.insert(mols[i].canonical_key())).collect()
}

/// Jaccard similarity of two multisets: Σ min / Σ max over counts.
pub fn multiset_jaccard(a: &[String], b: &[String]) -> f64 {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for k in a {
        counts.entry(k).or_default().0 += 1;
    }
    for k in b {
        counts.entry(k).or_default().1 += 1;
    }
    let (min, max) = counts.values().fold((0, 0), |(lo, hi), &(x, y)| (lo + x.min(y), hi + x.max(y)));
    if max == 0 {
        1.0
    } else {
        min as f64 / max as f64
    }
}

/// `1 − mean pairwise similarity`; zero with fewer than two sets.
pub fn diversity(sets: &[Vec<String>]) -> f64 {
    let n = sets.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += multiset_jaccard(&sets[i], &sets[j]);
        }
    }
    1.0 - sum / (n * (n - 1) / 2) as f64
}

/// Fragment keys of `m`, or the whole-molecule key when it cannot be cut.
pub fn fragment_keys(m: &Molecule, rules: &RuleTable) -> Vec<String> {
    match fragment(m, rules) {
        Ok(fr) => fr.instances.into_iter().map(|i| i.fragment.key).collect(),
        Err(_) => vec![m.canonical_key()],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Uniq,
    Nov,
    Succ,
    Div,
}

/// Which metrics multiply into `prod`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProdFormula(pub Vec<Term>);

impl Default for ProdFormula {
    fn default() -> Self {
        ProdFormula(vec![Term::Uniq, Term::Nov, Term::Succ, Term::Div])
    }
}

impl FromStr for ProdFormula {
    type Err = PipelineError;

    /// Parses `uniq*nov*succ*div` style products.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split('*')
            .map(|t| match t.trim().to_ascii_lowercase().as_str() {
                "uniq" => Ok(Term::Uniq),
                "nov" => Ok(Term::Nov),
                "succ" => Ok(Term::Succ),
                "div" => Ok(Term::Div),
                other => Err(PipelineError::Config(format!("unknown prod term `{other}`"))),
            })
            .collect::<Result<_, _>>()
            .map(ProdFormula)
    }
}

impl fmt::Display for ProdFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|t| match t {
            Term::Uniq => "uniq",
            Term::Nov => "nov",
            Term::Succ => "succ",
            Term::Div => "div",
        }).collect();
        f.write_str(&names.join("*"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub uniq: f64,
    pub nov: f64,
    pub succ: f64,
    pub div: f64,
    pub prod: f64,
    /// Median over scored molecules; `None` when nothing was scored.
    pub median_score: Option<f64>,
    pub total: usize,
    pub unique: usize,
    pub novel: usize,
    pub succeeded: usize,
    pub scored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsParams {
    pub rules: RuleTable,
    /// Scores at or below this count as successes. Without one, `succ` is 0.
    pub success_threshold: Option<f64>,
    pub prod: ProdFormula,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self { rules: RuleTable::default(), success_threshold: None, prod: ProdFormula::default() }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Metrics over all generated molecules. `scores` aligns with `generated`;
/// unscored molecules never count as successes.
pub fn metrics(generated: &[Molecule], scores: &[Option<f64>], train_keys: &HashSet<String>, params: &MetricsParams) -> Result<MetricsReport, PipelineError> {
    if generated.is_empty() {
        return Err(PipelineError::Config("metrics need at least one molecule".into()));
    }
    if scores.len() != generated.len() {
        return Err(PipelineError::Config(format!("{} scores for {} molecules", scores.len(), generated.len())));
    }
    let total = generated.len();
    let unique_idx = dedup_indices(generated);
    let unique = unique_idx.len();
    let novel = unique_idx.iter().filter(|&&i| !train_keys.contains(&generated[i].canonical_key())).count();
    let succeeded = match params.success_threshold {
        Some(t) => scores.iter().filter(|s| s.is_some_and(|v| v <= t)).count(),
        None => 0,
    };
    let scored_values: Vec<f64> = scores.iter().flatten().copied().collect();
    let sets: Vec<Vec<String>> = unique_idx.iter().map(|&i| fragment_keys(&generated[i], &params.rules)).collect();
    let uniq = unique as f64 / total as f64;
    let nov = novel as f64 / unique as f64;
    let succ = succeeded as f64 / total as f64;
    let div = diversity(&sets);
    let prod = params.prod.0.iter().map(|t| match t {
        Term::Uniq => uniq,
        Term::Nov => nov,
        Term::Succ => succ,
        Term::Div => div,
    }).product();
    Ok(MetricsReport {
        uniq,
        nov,
        succ,
        div,
        prod,
        median_score: median(&scored_values),
        total,
        unique,
        novel,
        succeeded,
        scored: scored_values.len(),
    })
}

/// Van der Waals occupancy of `m` on `spec`, clipped to the grid.
pub fn molecule_shape(m: &Molecule, spec: &GridSpec) -> Result<VoxelGrid, PipelineError> {
    let radii = m.atoms.iter().map(|a| vdw_radius(&a.element)).collect::<Result<Vec<_>, _>>()?;
    Ok(rasterize_balls(spec, &m.positions(), &radii))
}

/// Shape Tanimoto between a target shape and a molecule placed on its grid.
pub fn molecule_tanimoto(shape: &VoxelGrid, m: &Molecule) -> Result<f64, PipelineError> {
    Ok(shape_tanimoto(shape, &molecule_shape(m, shape.spec())?)?)
}

/// `lo,hi,count` rows of an equal-width histogram over `values`.
pub fn histogram_csv(values: &[f64], bins: usize) -> String {
    let mut out = String::from("lo,hi,count\n");
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return out;
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in finite {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{:.4},{:.4},{c}\n", lo + i as f64 * width, lo + (i + 1) as f64 * width));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::is_isomorphic;
    use crate::geom::{Pose, Quaternion, Vec3};
    use crate::pipeline::base_library;
    use proptest::prelude::*;

    fn keys(s: &[&str]) -> Vec<String> {
        s.iter().map(|k| k.to_string()).collect()
    }

    #[test]
    fn hand_computed_diversity() {
        let sets = [keys(&["A", "A", "B"]), keys(&["A", "B"]), keys(&["C"])];
        assert_eq!(multiset_jaccard(&sets[0], &sets[1]), 2.0 / 3.0);
        assert_eq!(multiset_jaccard(&sets[0], &sets[2]), 0.0);
        assert!((diversity(&sets) - 7.0 / 9.0).abs() < 1e-15);
        assert_eq!(diversity(&sets[..1]), 0.0);
    }

    #[test]
    fn dedup_is_graph_keyed() {
        let lib = base_library();
        let tol = lib[0].clone();
        let moved = tol.transformed(&Pose::new(Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 1.0), Vec3::new(3.0, 0.0, 0.0)));
        assert!(is_isomorphic(&tol.graph(), &moved.graph()));
        let mols = vec![tol.clone(), lib[1].clone(), tol.clone(), moved, lib[2].clone()];
        let d = dedup(&mols);
        assert_eq!(d.iter().map(|m| m.name.as_str()).collect::<Vec<_>>(), vec!["toluene", "phenol", "aniline"]);
        assert_eq!(dedup(&d), d);
        assert_eq!(dedup(&lib).len(), lib.len());
    }

    #[test]
    fn three_molecule_report() {
        let lib = base_library();
        let (tol, phenol) = (lib[0].clone(), lib[1].clone());
        let rules = RuleTable::default();
        let mols = vec![tol.clone(), tol.clone(), phenol.clone()];
        let train: HashSet<String> = [tol.canonical_key()].into();
        let scores = vec![Some(-6.0), None, Some(-4.0)];
        let params = MetricsParams { success_threshold: Some(-5.0), ..MetricsParams::default() };
        let r = metrics(&mols, &scores, &train, &params).unwrap();
        let j = multiset_jaccard(&fragment_keys(&tol, &rules), &fragment_keys(&phenol, &rules));
        // toluene = ring + methyl, phenol = ring + hydroxyl: one shared key of three
        assert_eq!(j, 1.0 / 3.0);
        let div = 1.0 - 1.0 / 3.0;
        assert_eq!((r.uniq, r.nov, r.succ, r.div), (2.0 / 3.0, 0.5, 1.0 / 3.0, div));
        assert_eq!(r.prod, (2.0 / 3.0) * 0.5 * (1.0 / 3.0) * div);
        assert_eq!(r.median_score, Some(-5.0));
        let same = metrics(&[tol.clone(), tol.clone(), tol.clone()], &[None, None, None], &HashSet::new(), &MetricsParams::default()).unwrap();
        assert_eq!((same.uniq, same.div, same.nov, same.succ), (1.0 / 3.0, 0.0, 1.0, 0.0));
        assert!(metrics(&[], &[], &HashSet::new(), &MetricsParams::default()).is_err());
        let partial = MetricsParams { prod: "uniq*div".parse().unwrap(), ..params };
        assert_eq!(metrics(&mols, &scores, &train, &partial).unwrap().prod, (2.0 / 3.0) * div);
    }

    #[test]
    fn histogram_rows() {
        let csv = histogram_csv(&[0.0, 0.1, 0.9, 1.0], 2);
        assert_eq!(csv, "lo,hi,count\n0.0000,0.5000,2\n0.5000,1.0000,2\n");
    }

    proptest! {
        #[test]
        fn metric_bounds(picks in proptest::collection::vec((0usize..28, proptest::option::of(-10.0f64..0.0)), 1..12), thr in -10.0f64..0.0) {
            let lib = base_library();
            let mols: Vec<Molecule> = picks.iter().map(|p| lib[p.0].clone()).collect();
            let scores: Vec<Option<f64>> = picks.iter().map(|p| p.1).collect();
            let train: HashSet<String> = lib[..5].iter().map(|m| m.canonical_key()).collect();
            let r = metrics(&mols, &scores, &train, &MetricsParams { success_threshold: Some(thr), ..MetricsParams::default() }).unwrap();
            for v in [r.uniq, r.nov, r.succ, r.div] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(r.prod <= r.uniq.min(r.nov).min(r.succ).min(r.div) + 1e-12);
            let once = dedup(&mols);
            prop_assert_eq!(dedup(&once), once);
        }
    }
}

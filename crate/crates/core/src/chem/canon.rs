//! Canonical labelling of small vertex- and edge-labelled graphs.
//!
//! Colour refinement followed by an exhaustive individualisation search; the
//! canonical form is the lexicographically smallest encoding over all leaves.
//! Adequate for fragments and lead-sized molecules, where symmetric
//! substituents only multiply the leaf count by small factors.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    pub labels: Vec<String>,
    /// `(a, b, label)`, undirected.
    pub edges: Vec<(usize, usize, u8)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalForm {
    /// `order[k]` is the vertex placed at canonical position `k`.
    pub order: Vec<usize>,
    pub code: String,
}

const MAX_LEAVES: usize = 1 << 16;

impl LabeledGraph {
    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, u8)>> {
        let mut adj = vec![Vec::new(); self.labels.len()];
        for &(a, b, l) in &self.edges {
            adj[a].push((b, l));
            adj[b].push((a, l));
        }
        adj
    }

    pub fn canonical_form(&self) -> CanonicalForm {
        let n = self.labels.len();
        if n == 0 {
            return CanonicalForm { order: Vec::new(), code: String::from("|") };
        }
        let adj = self.adjacency();
        let mut distinct: Vec<&String> = self.labels.iter().collect();
        distinct.sort();
        distinct.dedup();
        let colors: Vec<usize> = self.labels.iter().map(|l| distinct.binary_search(&l).unwrap()).collect();
        let mut best: Option<CanonicalForm> = None;
        let mut leaves = 0usize;
        self.search(&adj, colors, &mut best, &mut leaves);
        best.expect("search visits at least one leaf")
    }

    fn search(&self, adj: &[Vec<(usize, u8)>], mut colors: Vec<usize>, best: &mut Option<CanonicalForm>, leaves: &mut usize) {
        refine(adj, &mut colors);
        let n = colors.len();
        let mut cell_sizes = BTreeMap::new();
        for &c in &colors {
            *cell_sizes.entry(c).or_insert(0usize) += 1;
        }
        let target = cell_sizes.iter().find(|(_, &s)| s > 1).map(|(&c, _)| c);
        match target {
            None => {
                *leaves += 1;
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by_key(|&v| colors[v]);
                let code = self.encode(&order);
                if best.as_ref().is_none_or(|b| code < b.code) {
                    *best = Some(CanonicalForm { order, code });
                }
            }
            Some(cell) => {
                for v in (0..n).filter(|&v| colors[v] == cell) {
                    if *leaves >= MAX_LEAVES && best.is_some() {
                        return;
                    }
                    let split: Vec<usize> = colors
                        .iter()
                        .enumerate()
                        .map(|(u, &c)| 2 * c + usize::from(c == cell && u != v))
                        .collect();
                    self.search(adj, split, best, leaves);
                }
            }
        }
    }

    fn encode(&self, order: &[usize]) -> String {
        let mut pos = vec![0usize; order.len()];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let mut code = order.iter().map(|&v| self.labels[v].as_str()).collect::<Vec<_>>().join(".");
        let mut edges: Vec<(usize, usize, u8)> = self
            .edges
            .iter()
            .map(|&(a, b, l)| {
                let (x, y) = (pos[a], pos[b]);
                (x.min(y), x.max(y), l)
            })
            .collect();
        edges.sort_unstable();
        code.push('|');
        let parts: Vec<String> = edges.iter().map(|(a, b, l)| format!("{a}-{b}:{l}")).collect();
        code.push_str(&parts.join(","));
        code
    }
}

/// Iterated neighbourhood refinement until the partition stops splitting.
/// Colours stay consistent with the previous ordering of cells.
fn refine(adj: &[Vec<(usize, u8)>], colors: &mut Vec<usize>) {
    let mut cells = count_distinct(colors);
    loop {
        let sigs: Vec<(usize, Vec<(u8, usize)>)> = (0..colors.len())
            .map(|v| {
                let mut s: Vec<(u8, usize)> = adj[v].iter().map(|&(w, l)| (l, colors[w])).collect();
                s.sort_unstable();
                (colors[v], s)
            })
            .collect();
        let mut sorted: Vec<&(usize, Vec<(u8, usize)>)> = sigs.iter().collect();
        sorted.sort();
        sorted.dedup();
        *colors = sigs.iter().map(|s| sorted.binary_search(&s).unwrap()).collect();
        let next = sorted.len();
        if next == cells {
            break;
        }
        cells = next;
    }
}

fn count_distinct(colors: &[usize]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(labels: &[&str], edges: &[(usize, usize, u8)]) -> LabeledGraph {
        LabeledGraph { labels: labels.iter().map(|s| s.to_string()).collect(), edges: edges.to_vec() }
    }

    fn permuted(g: &LabeledGraph, perm: &[usize]) -> LabeledGraph {
        // vertex v of g becomes perm[v]
        let mut labels = vec![String::new(); g.labels.len()];
        for (v, l) in g.labels.iter().enumerate() {
            labels[perm[v]] = l.clone();
        }
        let edges = g.edges.iter().map(|&(a, b, l)| (perm[b], perm[a], l)).collect();
        LabeledGraph { labels, edges }
    }

    #[test]
    fn invariant_under_relabeling() {
        let g = graph(
            &["C", "C", "N", "C", "O", "C", "C"],
            &[(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 4, 1), (3, 5, 4), (5, 0, 4), (4, 6, 1)],
        );
        let base = g.canonical_form().code;
        let perms = [[6, 5, 4, 3, 2, 1, 0], [1, 2, 3, 4, 5, 6, 0], [3, 0, 6, 1, 5, 2, 4]];
        for p in perms {
            assert_eq!(permuted(&g, &p).canonical_form().code, base);
        }
    }

    #[test]
    fn distinguishes_labels_and_edges() {
        let ring = |l: &str| {
            graph(&["C", "C", "C", "C", "C", l], &[(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 4, 4), (4, 5, 4), (5, 0, 4)])
        };
        assert_ne!(ring("C").canonical_form().code, ring("N").canonical_form().code);
        let a = graph(&["C", "C", "O"], &[(0, 1, 1), (1, 2, 2)]);
        let b = graph(&["C", "C", "O"], &[(0, 1, 2), (1, 2, 1)]);
        assert_ne!(a.canonical_form().code, b.canonical_form().code);
    }

    #[test]
    fn regular_graphs_need_individualisation() {
        // 6-cycle vs two triangles: refinement alone cannot tell them apart
        let hex = graph(&["C"; 6], &[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 4, 1), (4, 5, 1), (5, 0, 1)]);
        let tri = graph(&["C"; 6], &[(0, 1, 1), (1, 2, 1), (2, 0, 1), (3, 4, 1), (4, 5, 1), (5, 3, 1)]);
        assert_ne!(hex.canonical_form().code, tri.canonical_form().code);
        let hex2 = permuted(&hex, &[2, 4, 0, 5, 1, 3]);
        assert_eq!(hex.canonical_form().code, hex2.canonical_form().code);
    }
}

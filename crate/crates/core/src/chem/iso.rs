//! Backtracking enumeration of label-preserving graph isomorphisms.

use super::canon::LabeledGraph;

/// Calls `visit(mapping)` for each isomorphism `a → b` (`mapping[va] = vb`)
/// until `visit` returns false or `limit` mappings have been produced.
/// Returns the number of mappings visited.
pub fn for_each_isomorphism(
    a: &LabeledGraph,
    b: &LabeledGraph,
    limit: usize,
    mut visit: impl FnMut(&[usize]) -> bool,
) -> usize {
    let n = a.vertex_count();
    if n != b.vertex_count() || a.edges.len() != b.edges.len() {
        return 0;
    }
    let adj_a = a.adjacency();
    let adj_b = b.adjacency();
    let edge_b = edge_lookup(b);
    // visit order: BFS over each component so most vertices have a mapped neighbour
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut head = order.len();
        order.push(s);
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &(w, _) in &adj_a[v] {
                if !seen[w] {
                    seen[w] = true;
                    order.push(w);
                }
            }
        }
    }
    let mut state = Search {
        a,
        b,
        adj_a: &adj_a,
        adj_b: &adj_b,
        edge_b: &edge_b,
        order: &order,
        map: vec![usize::MAX; n],
        used: vec![false; n],
        count: 0,
        limit,
        stop: false,
    };
    state.extend(0, &mut visit);
    state.count
}

pub fn is_isomorphic(a: &LabeledGraph, b: &LabeledGraph) -> bool {
    for_each_isomorphism(a, b, 1, |_| false) > 0
}

fn edge_lookup(g: &LabeledGraph) -> std::collections::HashMap<(usize, usize), u8> {
    g.edges.iter().flat_map(|&(x, y, l)| [((x, y), l), ((y, x), l)]).collect()
}

struct Search<'a> {
    a: &'a LabeledGraph,
    b: &'a LabeledGraph,
    adj_a: &'a [Vec<(usize, u8)>],
    adj_b: &'a [Vec<(usize, u8)>],
    edge_b: &'a std::collections::HashMap<(usize, usize), u8>,
    order: &'a [usize],
    map: Vec<usize>,
    used: Vec<bool>,
    count: usize,
    limit: usize,
    stop: bool,
}

impl Search<'_> {
    fn extend(&mut self, depth: usize, visit: &mut impl FnMut(&[usize]) -> bool) {
        if self.stop {
            return;
        }
        if depth == self.order.len() {
            self.count += 1;
            if !visit(&self.map) || self.count >= self.limit {
                self.stop = true;
            }
            return;
        }
        let va = self.order[depth];
        for vb in 0..self.b.vertex_count() {
            if self.used[vb] || self.a.labels[va] != self.b.labels[vb] || self.adj_a[va].len() != self.adj_b[vb].len() {
                continue;
            }
            let consistent = self.adj_a[va].iter().all(|&(wa, l)| {
                let wb = self.map[wa];
                wb == usize::MAX || self.edge_b.get(&(vb, wb)) == Some(&l)
            });
            if !consistent {
                continue;
            }
            self.map[va] = vb;
            self.used[vb] = true;
            self.extend(depth + 1, visit);
            self.map[va] = usize::MAX;
            self.used[vb] = false;
            if self.stop {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize, label: &str) -> LabeledGraph {
        LabeledGraph {
            labels: vec![label.to_string(); n],
            edges: (0..n).map(|i| (i, (i + 1) % n, 4)).collect(),
        }
    }

    #[test]
    fn hexagon_has_twelve_automorphisms() {
        let g = ring(6, "C");
        assert_eq!(for_each_isomorphism(&g, &g, usize::MAX, |_| true), 12);
    }

    #[test]
    fn label_mismatch_is_not_isomorphic() {
        let mut h = ring(6, "C");
        h.labels[2] = "N".into();
        assert!(!is_isomorphic(&ring(6, "C"), &h));
        assert!(is_isomorphic(&h, &h));
    }
}

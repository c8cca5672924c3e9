use std::collections::VecDeque;

use rand::Rng;

use super::discretize::CodecParams;
use super::CodecError;
use crate::chem::{FragmentVocab, Fragmentation, Placement, CONTROL_COUNT};
use crate::geom::{Pose, Quaternion, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Vocabulary token.
    pub token: usize,
    /// Vocabulary frame → shape frame.
    pub pose: Pose,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Representative breakpoint indices `(parent side, this side)` of the
    /// bond to the parent, when known.
    pub link: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
}

/// Build-time details kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSource {
    /// Fragment instance behind each node.
    pub instance: Vec<usize>,
    pub placements: Vec<Placement>,
}

impl FragmentTree {
    pub fn single(token: usize, pose: Pose) -> Self {
        FragmentTree { nodes: vec![TreeNode { token, pose, parent: None, children: Vec::new(), link: None }], root: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_child(&mut self, parent: usize, token: usize, pose: Pose) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode { token, pose, parent: Some(parent), children: Vec::new(), link: None });
        self.nodes[parent].children.push(id);
        id
    }

    /// Node ids in depth-first pre-order.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend(self.nodes[v].children.iter().rev());
        }
        out
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(self.root, 0usize)];
        while let Some((v, d)) = stack.pop() {
            best = best.max(d);
            stack.extend(self.nodes[v].children.iter().map(|&c| (c, d + 1)));
        }
        best
    }

    /// Children of multi-child nodes.
    pub fn branch_children(&self) -> usize {
        self.nodes.iter().map(|n| if n.children.len() >= 2 { n.children.len() } else { 0 }).sum()
    }

    /// Same tokens and same ordered shape (poses ignored).
    pub fn structurally_equal(&self, other: &FragmentTree) -> bool {
        if self.nodes.len() != other.nodes.len() {
            return false;
        }
        let mut stack = vec![(self.root, other.root)];
        while let Some((a, b)) = stack.pop() {
            let (na, nb) = (&self.nodes[a], &other.nodes[b]);
            if na.token != nb.token || na.children.len() != nb.children.len() {
                return false;
            }
            stack.extend(na.children.iter().copied().zip(nb.children.iter().copied()));
        }
        true
    }

    /// Maximum per-axis translation difference and rotation angle between
    /// corresponding nodes of structurally equal trees.
    pub fn pose_errors(&self, other: &FragmentTree) -> (f64, f64) {
        let (a, b) = (self.preorder(), other.preorder());
        a.iter().zip(&b).fold((0.0f64, 0.0f64), |(t, r), (&i, &j)| {
            let (p, q) = (self.nodes[i].pose, other.nodes[j].pose);
            (t.max(p.translation.max_abs_diff(q.translation)), r.max(p.rotation.angle_to(q.rotation)))
        })
    }

    /// Applies `motion` on top of every node pose.
    pub fn transformed(&self, motion: &Pose) -> FragmentTree {
        let mut t = self.clone();
        for n in &mut t.nodes {
            n.pose = n.pose.then(motion);
        }
        t
    }
}

/// Tree over the fragments of one molecule, with poses of the vocabulary
/// representatives fitted onto the molecule's coordinates.
///
/// The root is the degree-1 fragment with the smallest key (lowest instance
/// index on ties). Children are ordered by the distance of their connecting
/// breakpoint atom from the parent's centroid, then by key.
pub fn build_tree(fr: &Fragmentation, vocab: &FragmentVocab) -> Result<(FragmentTree, TreeSource), CodecError> {
    let n = fr.instances.len();
    if n == 0 {
        return Err(CodecError::EmptyTree);
    }
    if fr.cuts.len() != n - 1 {
        return Err(CodecError::NotATree { fragments: n, links: fr.cuts.len() });
    }
    let mut tokens = Vec::with_capacity(n);
    let mut placements = Vec::with_capacity(n);
    for inst in &fr.instances {
        let (token, placement) = vocab.place_instance(inst).map_err(|e| CodecError::Vocab(e.to_string()))?;
        tokens.push(token);
        placements.push(placement);
    }
    // adjacency: (neighbour, cut index)
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (ci, c) in fr.cuts.iter().enumerate() {
        adj[c.fragments[0]].push((c.fragments[1], ci));
        adj[c.fragments[1]].push((c.fragments[0], ci));
    }
    let key = |i: usize| fr.instances[i].fragment.key.as_str();
    let root = (0..n)
        .filter(|&i| adj[i].len() == 1)
        .min_by(|&a, &b| key(a).cmp(key(b)).then(a.cmp(&b)))
        .unwrap_or(0);

    // rep breakpoint index of an observed breakpoint
    let rep_bp = |inst: usize, observed: usize| {
        placements[inst].breakpoint_map.iter().position(|&o| o == observed).expect("breakpoint mapped")
    };
    let mut node_of = vec![usize::MAX; n];
    let mut tree = FragmentTree::single(tokens[root], placements[root].pose);
    let mut instance = vec![root];
    node_of[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let centroid = placements[u].pose.translation;
        let world = fr.instances[u].world_positions();
        let mut kids: Vec<(f64, usize, usize)> = Vec::new();
        for &(w, ci) in &adj[u] {
            if node_of[w] != usize::MAX {
                continue;
            }
            let c = &fr.cuts[ci];
            let side = usize::from(c.fragments[0] != u);
            let bp_atom = fr.instances[u].fragment.breakpoints[c.breakpoints[side]].atom;
            kids.push((world[bp_atom].distance(centroid), w, ci));
        }
        kids.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| key(a.1).cmp(key(b.1))).then(a.1.cmp(&b.1)));
        for (_, w, ci) in kids {
            if node_of[w] != usize::MAX {
                return Err(CodecError::NotATree { fragments: n, links: fr.cuts.len() });
            }
            let c = &fr.cuts[ci];
            let (su, sw) = if c.fragments[0] == u { (0, 1) } else { (1, 0) };
            let id = tree.add_child(node_of[u], tokens[w], placements[w].pose);
            tree.nodes[id].link = Some((rep_bp(u, c.breakpoints[su]), rep_bp(w, c.breakpoints[sw])));
            node_of[w] = id;
            instance.push(w);
            queue.push_back(w);
        }
    }
    if instance.len() != n {
        return Err(CodecError::NotATree { fragments: n, links: fr.cuts.len() });
    }
    Ok((tree, TreeSource { instance, placements }))
}

/// Random tree for codec testing: `nodes` nodes, depth at most `max_depth`,
/// tokens drawn from the fragment range of a vocabulary of `vocab_size`, and
/// poses uniform inside the translation box.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, nodes: usize, max_depth: usize, vocab_size: usize, params: &CodecParams) -> FragmentTree {
    assert!(nodes >= 1 && vocab_size > CONTROL_COUNT);
    let half = params.length / 2.0;
    let pose = |rng: &mut R| {
        let t = Vec3::new(rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-half..half));
        Pose::new(Quaternion::random(rng), t)
    };
    let p = pose(rng);
    let mut tree = FragmentTree::single(rng.random_range(CONTROL_COUNT..vocab_size), p);
    let mut depth = vec![0usize];
    while tree.len() < nodes {
        let open: Vec<usize> = (0..tree.len()).filter(|&v| depth[v] < max_depth).collect();
        let parent = open[rng.random_range(0..open.len())];
        let p = pose(rng);
        tree.add_child(parent, rng.random_range(CONTROL_COUNT..vocab_size), p);
        depth.push(depth[parent] + 1);
    }
    tree
}

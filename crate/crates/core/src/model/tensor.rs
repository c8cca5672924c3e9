//! Row-major matrices and a reverse-mode tape over the operations the
//! network needs.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Self { rows, cols, data }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scalar(&self) -> f64 {
        self.data[0]
    }

    fn add_assign(&mut self, o: &Tensor) {
        debug_assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }
}

/// `C = A·B + beta·C` on strided views; `A` is `m×k`, `B` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cdim: usize, rs: usize, cs: usize| if r == 0 || cdim == 0 { 0 } else { (r - 1) * rs + (cdim - 1) * cs + 1 };
    assert!(a.len() >= last(m, k, rsa, csa) && b.len() >= last(k, n, rsb, csb) && c.len() >= last(m, n, rsc, csc));
    // SAFETY: the assertion above keeps every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub(crate) fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    assert_eq!(x.cols, w.rows, "linear input width");
    let mut y = Tensor::zeros(x.rows, w.cols);
    if let Some(b) = b {
        for r in 0..y.rows {
            y.row_mut(r).copy_from_slice(&b.data);
        }
    }
    let beta = if b.is_some() { 1.0 } else { 0.0 };
    gemm(x.rows, x.cols, w.cols, &x.data, (x.cols, 1), &w.data, (w.cols, 1), beta, &mut y.data, (w.cols, 1));
    y
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Returns the output, the normalised input and the per-row inverse std.
pub(crate) fn layer_norm(x: &Tensor, g: &Tensor, b: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let d = x.cols;
    let mut y = Tensor::zeros(x.rows, d);
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; x.rows];
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for j in 0..d {
            let h = (row[j] - mean) * s;
            xhat[r * d + j] = h;
            y.data[r * d + j] = h * g.data[j] + b.data[j];
        }
    }
    (y, xhat, rstd)
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh())
}

fn gelu_grad(v: f64) -> f64 {
    let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
}

/// Contiguous row ranges `(start, len)` of one sample inside a packed batch.
pub type Segments = Vec<(usize, usize)>;

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Multi-head scaled dot-product attention of packed queries against packed
/// keys/values, segment by segment. Returns the output and the attention
/// weights laid out per segment, head, query, key.
pub(crate) fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, qseg: &Segments, kseg: &Segments, causal: bool) -> (Tensor, Vec<f64>) {
    let d = q.cols;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(q.rows, d);
    let total: usize = qseg.iter().zip(kseg).map(|(a, b)| a.1 * b.1 * heads).sum();
    let mut probs = vec![0.0; total];
    let mut off = 0;
    for (&(q0, nq), &(k0, nk)) in qseg.iter().zip(kseg) {
        for h in 0..heads {
            let p = &mut probs[off..off + nq * nk];
            let qh = &q.data[q0 * d + h * dh..];
            let kh = &k.data[k0 * d + h * dh..];
            // S = Q K^T
            gemm(nq, dh, nk, qh, (d, 1), kh, (1, d), 0.0, p, (nk, 1));
            for i in 0..nq {
                let row = &mut p[i * nk..(i + 1) * nk];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = if causal && j > i { f64::NEG_INFINITY } else { *s * scale };
                }
                softmax_in_place(row);
            }
            let vh = &v.data[k0 * d + h * dh..];
            let oh = &mut out.data[q0 * d + h * dh..];
            gemm(nq, nk, dh, p, (nk, 1), vh, (d, 1), 0.0, oh, (d, 1));
            off += nq * nk;
        }
    }
    (out, probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(usize),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Gather { table: Var, idx: Vec<Vec<usize>> },
    Attention { q: Var, k: Var, v: Var, heads: usize, qseg: Segments, kseg: Segments, probs: Vec<f64> },
    CrossEntropy { logits: Var, group: usize, targets: Vec<Option<usize>>, scale: f64, probs: Vec<f64> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Computation tape. Parameters are borrowed, never copied.
pub struct Graph<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self { params, nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0] {
            Node { op: Op::Param(i), .. } => &self.params[*i],
            Node { value: Some(t), .. } => t,
            Node { value: None, .. } => unreachable!("non-parameter node without value"),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, index: usize) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(index) });
        Var(self.nodes.len() - 1)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = linear(self.value(x), self.value(w), b.map(|b| self.value(b)));
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        self.push(y, Op::Add(a, b))
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (y, xhat, rstd) = layer_norm(self.value(x), self.value(g), self.value(b));
        self.push(y, Op::LayerNorm { x, g, b, xhat, rstd })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        y.data.iter_mut().for_each(|v| *v = gelu(*v));
        self.push(y, Op::Gelu(x))
    }

    /// Inverted dropout; identity when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let mut y = self.value(x).clone();
        y.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.push(y, Op::Dropout { x, mask })
    }

    /// Row `i` of the output is the sum of `table` rows `idx[i]`.
    pub fn gather(&mut self, table: Var, idx: Vec<Vec<usize>>) -> Var {
        let t = self.value(table);
        let mut y = Tensor::zeros(idx.len(), t.cols);
        for (i, rows) in idx.iter().enumerate() {
            let out = &mut y.data[i * t.cols..(i + 1) * t.cols];
            for &r in rows {
                out.iter_mut().zip(t.row(r)).for_each(|(o, v)| *o += v);
            }
        }
        self.push(y, Op::Gather { table, idx })
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, qseg: Segments, kseg: Segments, causal: bool) -> Var {
        let (y, probs) = attention(self.value(q), self.value(k), self.value(v), heads, &qseg, &kseg, causal);
        self.push(y, Op::Attention { q, k, v, heads, qseg, kseg, probs })
    }

    /// `scale · Σ −log softmax(logits[row, group])[target]` over rows split
    /// into column groups of width `group`. `targets` has one entry per
    /// (row, group); `None` entries contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, group: usize, targets: Vec<Option<usize>>, scale: f64) -> Var {
        let l = self.value(logits);
        let groups = l.cols / group;
        assert_eq!(targets.len(), l.rows * groups, "one target per row and group");
        let mut probs = l.data.clone();
        let mut total = 0.0;
        for (gi, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let (r, g) = (gi / groups, gi % groups);
                let s = &mut probs[r * l.cols + g * group..r * l.cols + (g + 1) * group];
                softmax_in_place(s);
                total -= s[t].max(f64::MIN_POSITIVE).ln();
            }
        }
        self.push(Tensor::from_vec(1, 1, vec![total * scale]), Op::CrossEntropy { logits, group, targets, scale, probs })
    }

    /// Gradients of the scalar `out` with respect to every parameter.
    pub fn backward(&self, out: Var) -> Vec<Tensor> {
        let mut pgrads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        for id in (0..=out.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let acc = |v: Var, g: Tensor, grads: &mut Vec<Option<Tensor>>, pgrads: &mut Vec<Tensor>| {
                if let Op::Param(i) = self.nodes[v.0].op {
                    pgrads[i].add_assign(&g);
                } else if let Op::Input = self.nodes[v.0].op {
                } else {
                    match &mut grads[v.0] {
                        Some(t) => t.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            };
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    gemm(dy.rows, dy.cols, wv.rows, &dy.data, (dy.cols, 1), &wv.data, (1, wv.cols), 0.0, &mut dx.data, (dx.cols, 1));
                    let mut dw = Tensor::zeros(wv.rows, wv.cols);
                    gemm(xv.cols, xv.rows, dy.cols, &xv.data, (1, xv.cols), &dy.data, (dy.cols, 1), 0.0, &mut dw.data, (dw.cols, 1));
                    if let Some(b) = b {
                        let mut db = Tensor::zeros(1, dy.cols);
                        for r in 0..dy.rows {
                            db.data.iter_mut().zip(dy.row(r)).for_each(|(a, v)| *a += v);
                        }
                        acc(*b, db, &mut grads, &mut pgrads);
                    }
                    acc(*x, dx, &mut grads, &mut pgrads);
                    acc(*w, dw, &mut grads, &mut pgrads);
                }
                Op::Add(a, b) => {
                    acc(*a, dy.clone(), &mut grads, &mut pgrads);
                    acc(*b, dy, &mut grads, &mut pgrads);
                }
                Op::LayerNorm { x, g, b, xhat, rstd } => {
                    let gv = self.value(*g);
                    let d = dy.cols;
                    let mut dg = Tensor::zeros(1, d);
                    let mut db = Tensor::zeros(1, d);
                    let mut dx = Tensor::zeros(dy.rows, d);
                    for r in 0..dy.rows {
                        let (dyr, xh) = (dy.row(r), &xhat[r * d..(r + 1) * d]);
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            dg.data[j] += dyr[j] * xh[j];
                            db.data[j] += dyr[j];
                            let dxh = dyr[j] * gv.data[j];
                            m1 += dxh;
                            m2 += dxh * xh[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        let out = dx.row_mut(r);
                        for j in 0..d {
                            out[j] = rstd[r] * (dyr[j] * gv.data[j] - m1 - xh[j] * m2);
                        }
                    }
                    acc(*x, dx, &mut grads, &mut pgrads);
                    acc(*g, dg, &mut grads, &mut pgrads);
                    acc(*b, db, &mut grads, &mut pgrads);
                }
                Op::Gelu(x) => {
                    let mut dx = dy;
                    dx.data.iter_mut().zip(&self.value(*x).data).for_each(|(g, v)| *g *= gelu_grad(*v));
                    acc(*x, dx, &mut grads, &mut pgrads);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = dy;
                    dx.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                    acc(*x, dx, &mut grads, &mut pgrads);
                }
                Op::Gather { table, idx } => {
                    let t = self.value(*table);
                    let mut dt = Tensor::zeros(t.rows, t.cols);
                    for (i, rows) in idx.iter().enumerate() {
                        for &r in rows {
                            dt.row_mut(r).iter_mut().zip(dy.row(i)).for_each(|(a, v)| *a += v);
                        }
                    }
                    acc(*table, dt, &mut grads, &mut pgrads);
                }
                Op::Attention { q, k, v, heads, qseg, kseg, probs } => {
                    let (dq, dk, dv) = attention_backward(self.value(*q), self.value(*k), self.value(*v), &dy, *heads, qseg, kseg, probs);
                    acc(*q, dq, &mut grads, &mut pgrads);
                    acc(*k, dk, &mut grads, &mut pgrads);
                    acc(*v, dv, &mut grads, &mut pgrads);
                }
                Op::CrossEntropy { logits, group, targets, scale, probs } => {
                    let l = self.value(*logits);
                    let groups = l.cols / group;
                    let s = dy.scalar() * scale;
                    let mut dl = Tensor::zeros(l.rows, l.cols);
                    for (gi, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let base = (gi / groups) * l.cols + (gi % groups) * group;
                            for j in 0..*group {
                                dl.data[base + j] = s * probs[base + j];
                            }
                            dl.data[base + t] -= s;
                        }
                    }
                    acc(*logits, dl, &mut grads, &mut pgrads);
                }
            }
        }
        pgrads
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    dout: &Tensor,
    heads: usize,
    qseg: &Segments,
    kseg: &Segments,
    probs: &[f64],
) -> (Tensor, Tensor, Tensor) {
    let d = q.cols;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Tensor::zeros(q.rows, d);
    let mut dk = Tensor::zeros(k.rows, d);
    let mut dv = Tensor::zeros(v.rows, d);
    let mut off = 0;
    for (&(q0, nq), &(k0, nk)) in qseg.iter().zip(kseg) {
        let mut ds = vec![0.0; nq * nk];
        for h in 0..heads {
            let p = &probs[off..off + nq * nk];
            let col = h * dh;
            let doh = &dout.data[q0 * d + col..];
            // dV = P^T dO
            gemm(nk, nq, dh, p, (1, nk), doh, (d, 1), 1.0, &mut dv.data[k0 * d + col..], (d, 1));
            // dP = dO V^T
            gemm(nq, dh, nk, doh, (d, 1), &v.data[k0 * d + col..], (1, d), 0.0, &mut ds, (nk, 1));
            for i in 0..nq {
                let pr = &p[i * nk..(i + 1) * nk];
                let dr = &mut ds[i * nk..(i + 1) * nk];
                let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                dr.iter_mut().zip(pr).for_each(|(g, p)| *g = p * (*g - dot) * scale);
            }
            // dQ = dS K, dK = dS^T Q
            gemm(nq, nk, dh, &ds, (nk, 1), &k.data[k0 * d + col..], (d, 1), 1.0, &mut dq.data[q0 * d + col..], (d, 1));
            gemm(nk, nq, dh, &ds, (1, nk), &q.data[q0 * d + col..], (d, 1), 1.0, &mut dk.data[k0 * d + col..], (d, 1));
            off += nq * nk;
        }
    }
    (dq, dk, dv)
}

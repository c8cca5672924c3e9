use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{attention, gelu, layer_norm, linear, Graph, Segments, Tensor, Var};
use super::ModelError;
use crate::codec::{Token, TokenSequence};
use crate::geom::{GridSpec, Vec3, VoxelGrid};

/// Network and input-grid hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward blocks.
    pub ffn: usize,
    pub patch_edge: usize,
    /// Input grid: `grid_extent³` cells of `grid_pitch` Å centred on the origin.
    pub grid_extent: usize,
    pub grid_pitch: f64,
    pub vocab_size: usize,
    pub bins_t: usize,
    pub bins_r: usize,
    /// Longest token sequence, BOS and EOS included.
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers_enc: 4,
            layers_dec: 4,
            heads: 4,
            ffn: 512,
            patch_edge: 4,
            grid_extent: 16,
            grid_pitch: 1.5,
            vocab_size: 261,
            bins_t: 64,
            bins_r: 64,
            max_len: 96,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.patch_edge == 0 || self.grid_extent % self.patch_edge != 0 {
            return bad(format!("grid extent {} not divisible by patch edge {}", self.grid_extent, self.patch_edge));
        }
        if self.vocab_size <= crate::chem::CONTROL_COUNT || self.bins_t == 0 || self.bins_r == 0 || self.max_len < 3 || self.ffn == 0 {
            return bad("vocab, bins, ffn and max_len must be positive (vocab above the control symbols, max_len ≥ 3)".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.grid_pitch > 0.0) {
            return bad(format!("dropout {} or pitch {} out of range", self.dropout, self.grid_pitch));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::centered(Vec3::ZERO, self.grid_pitch, self.grid_extent)
    }

    pub fn patch_count(&self) -> usize {
        (self.grid_extent / self.patch_edge).pow(3)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_edge.pow(3)
    }

    /// Analytic loss of uniform predictions at a fragment position.
    pub fn uniform_fragment_loss(&self) -> f64 {
        (self.vocab_size as f64).ln() + 3.0 * (self.bins_t as f64).ln() + 4.0 * (self.bins_r as f64).ln()
    }

    pub fn to_kv(&self) -> String {
        format!(
            "dim={}\nlayers_enc={}\nlayers_dec={}\nheads={}\nffn={}\npatch_edge={}\ngrid_extent={}\ngrid_pitch={}\nvocab_size={}\nbins_t={}\nbins_r={}\nmax_len={}\ndropout={}\n",
            self.dim,
            self.layers_enc,
            self.layers_dec,
            self.heads,
            self.ffn,
            self.patch_edge,
            self.grid_extent,
            self.grid_pitch,
            self.vocab_size,
            self.bins_t,
            self.bins_r,
            self.max_len,
            self.dropout
        )
    }

    /// Applies `key=value` pairs on top of `self`; unknown keys are errors.
    pub fn apply_kv<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<(), ModelError> {
        for (k, v) in pairs {
            let bad = || ModelError::Config(format!("bad value `{v}` for `{k}`"));
            let int = || v.parse::<usize>().map_err(|_| bad());
            let real = || v.parse::<f64>().map_err(|_| bad());
            match k {
                "dim" => self.dim = int()?,
                "layers_enc" => self.layers_enc = int()?,
                "layers_dec" => self.layers_dec = int()?,
                "heads" => self.heads = int()?,
                "ffn" => self.ffn = int()?,
                "patch_edge" => self.patch_edge = int()?,
                "grid_extent" => self.grid_extent = int()?,
                "grid_pitch" => self.grid_pitch = real()?,
                "vocab_size" => self.vocab_size = int()?,
                "bins_t" => self.bins_t = int()?,
                "bins_r" => self.bins_r = int()?,
                "max_len" => self.max_len = int()?,
                "dropout" => self.dropout = real()?,
                _ => return Err(ModelError::Config(format!("unknown model key `{k}`"))),
            }
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let mut c = ModelConfig::default();
        let pairs: Vec<(&str, &str)> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| l.split_once('=').map(|(a, b)| (a.trim(), b.trim())).ok_or_else(|| ModelError::Config(format!("expected key=value, got `{l}`"))))
            .collect::<Result<_, _>>()?;
        c.apply_kv(pairs)?;
        c.validate()?;
        Ok(c)
    }
}

/// Named parameter tensors of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

const INIT_STD: f64 = 0.02;

/// Parameter names and shapes in storage order.
fn layout(c: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = c.dim;
    let mut out: Vec<(String, usize, usize)> = Vec::new();
    let lin = |out: &mut Vec<_>, name: String, i: usize, o: usize| {
        out.push((format!("{name}.w"), i, o));
        out.push((format!("{name}.b"), 1, o));
    };
    let ln = |out: &mut Vec<_>, name: String| {
        out.push((format!("{name}.g"), 1, d));
        out.push((format!("{name}.b"), 1, d));
    };
    let block = |out: &mut Vec<_>, pre: String, cross: bool| {
        ln(out, format!("{pre}.ln1"));
        for p in ["q", "k", "v", "o"] {
            lin(out, format!("{pre}.attn.{p}"), d, d);
        }
        if cross {
            ln(out, format!("{pre}.lnc"));
            for p in ["q", "k", "v", "o"] {
                lin(out, format!("{pre}.cross.{p}"), d, d);
            }
        }
        ln(out, format!("{pre}.ln2"));
        lin(out, format!("{pre}.ff1"), d, c.ffn);
        lin(out, format!("{pre}.ff2"), c.ffn, d);
    };
    lin(&mut out, "enc.patch".into(), c.patch_dim(), d);
    out.push(("enc.pos".into(), c.patch_count(), d));
    for l in 0..c.layers_enc {
        block(&mut out, format!("enc.{l}"), false);
    }
    ln(&mut out, "enc.ln".into());
    out.push(("dec.tok".into(), c.vocab_size, d));
    out.push(("dec.pose".into(), 3 * c.bins_t + 4 * c.bins_r, d));
    out.push(("dec.pos".into(), c.max_len, d));
    for l in 0..c.layers_dec {
        block(&mut out, format!("dec.{l}"), true);
    }
    ln(&mut out, "dec.ln".into());
    lin(&mut out, "head.c".into(), d, c.vocab_size);
    lin(&mut out, "head.p".into(), d, 3 * c.bins_t);
    lin(&mut out, "head.r".into(), d, 4 * c.bins_r);
    out
}

impl ModelParams {
    /// Normal(0, 0.02) weights and embeddings, residual output projections
    /// scaled by `1/√(2·layers)`, zero biases, unit layer-norm gains.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let layers = (config.layers_enc + config.layers_dec).max(1) as f64;
        let mut tensors = Vec::new();
        let mut names = Vec::new();
        for (name, r, c) in layout(config) {
            let t = if name.ends_with(".g") {
                Tensor::full(r, c, 1.0)
            } else if name.ends_with(".b") {
                Tensor::zeros(r, c)
            } else {
                let residual = name.ends_with(".o.w") || name.ends_with("ff2.w");
                let std = if residual { INIT_STD / (2.0 * layers).sqrt() } else { INIT_STD };
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_vec(r, c, (0..r * c).map(|_| normal.sample(rng)).collect())
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self::assemble(config.clone(), names, tensors))
    }

    fn assemble(config: ModelConfig, names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { config, names, tensors, index }
    }

    /// Rebuilds from named tensors, checking names and shapes against the layout.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != named.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, found {}", expected.len(), named.len())));
        }
        for ((n, r, c), (m, t)) in expected.iter().zip(&named) {
            if n != m || t.rows != *r || t.cols != *c {
                return Err(ModelError::Checkpoint(format!("tensor `{m}` ({}×{}) where `{n}` ({r}×{c}) was expected", t.rows, t.cols)));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Checkpoint(format!("tensor `{m}` holds non-finite values")));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self::assemble(config, names, tensors))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn id(&self, name: &str) -> usize {
        self.index[name]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zeroes the output heads so every head predicts the uniform distribution.
    pub fn zero_heads(&mut self) {
        for name in ["head.c.w", "head.c.b", "head.p.w", "head.p.b", "head.r.w", "head.r.b"] {
            let i = self.id(name);
            self.tensors[i].data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Encoder input: one row of 0/1 cells per patch.
pub fn grid_patches(grid: &VoxelGrid, config: &ModelConfig) -> Result<Tensor, ModelError> {
    let spec = grid.spec();
    if spec.extent != config.grid_extent {
        return Err(ModelError::Shape(format!("grid extent {} but the model expects {}", spec.extent, config.grid_extent)));
    }
    let patches = grid.extract_patches(config.patch_edge).map_err(|e| ModelError::Shape(e.to_string()))?;
    let dim = config.patch_dim();
    let mut t = Tensor::zeros(patches.len(), dim);
    for (i, p) in patches.iter().enumerate() {
        for (j, &c) in p.cells.iter().enumerate() {
            t.data[i * dim + j] = if c { 1.0 } else { 0.0 };
        }
    }
    Ok(t)
}

/// Teacher-forced training batch. Position `t` of sample `s` reads
/// `inputs[s][t]` and predicts `targets[s][t]`; `None` is padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Stacked patch rows of every sample.
    pub patches: Tensor,
    pub inputs: Vec<Vec<Option<Token>>>,
    pub targets: Vec<Vec<Option<Token>>>,
}

impl Batch {
    pub fn new(items: &[(Tensor, TokenSequence)], config: &ModelConfig) -> Result<Self, ModelError> {
        let p = config.patch_count();
        let mut patches = Tensor::zeros(items.len() * p, config.patch_dim());
        let longest = items.iter().map(|(_, s)| s.len().saturating_sub(1)).max().unwrap_or(0);
        let mut inputs = Vec::with_capacity(items.len());
        let mut targets = Vec::with_capacity(items.len());
        for (i, (grid, seq)) in items.iter().enumerate() {
            if grid.rows != p || grid.cols != config.patch_dim() {
                return Err(ModelError::Shape(format!("sample {i}: {}×{} patches, expected {p}×{}", grid.rows, grid.cols, config.patch_dim())));
            }
            let toks = seq.tokens();
            if toks.len() < 2 || toks[0] != Token::Bos {
                return Err(ModelError::Shape(format!("sample {i}: sequence must start with BOS and hold a target")));
            }
            if toks.len() > config.max_len {
                return Err(ModelError::Overlength { len: toks.len(), max: config.max_len });
            }
            patches.data[i * p * config.patch_dim()..(i + 1) * p * config.patch_dim()].copy_from_slice(&grid.data);
            let n = toks.len() - 1;
            let mut inp: Vec<Option<Token>> = toks[..n].iter().copied().map(Some).collect();
            let mut tgt: Vec<Option<Token>> = toks[1..].iter().copied().map(Some).collect();
            inp.resize(longest, None);
            tgt.resize(longest, None);
            inputs.push(inp);
            targets.push(tgt);
        }
        Ok(Self { patches, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Non-padding positions per sample; padding only ever trails.
    pub fn lengths(&self) -> Vec<usize> {
        self.targets.iter().map(|t| t.iter().take_while(|x| x.is_some()).count()).collect()
    }

    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.targets.iter().map(|t| t.iter().map(Option::is_some).collect()).collect()
    }

    /// The same batch with `extra` padding positions appended to every sample.
    pub fn padded(mut self, extra: usize) -> Self {
        for v in self.inputs.iter_mut().chain(self.targets.iter_mut()) {
            v.extend(std::iter::repeat_n(None, extra));
        }
        self
    }
}

/// Embedding-table rows summed into the decoder input for `t`.
pub(crate) fn token_rows(t: &Token, config: &ModelConfig) -> (usize, Vec<usize>) {
    match t {
        Token::Frag(f) => {
            let (bt, br) = (config.bins_t, config.bins_r);
            let mut rows: Vec<usize> = (0..3).map(|a| a * bt + f.p[a]).collect();
            rows.extend((0..4).map(|c| 3 * bt + c * br + f.r[c]));
            (f.c, rows)
        }
        other => (other.index(), Vec::new()),
    }
}

struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) => g.dropout(x, self.rate, rng),
            None => x,
        }
    }
}

struct Net<'a, 'p> {
    g: Graph<'p>,
    p: &'a ModelParams,
    drop: Dropout<'a>,
}

impl Net<'_, '_> {
    fn w(&mut self, name: &str) -> Var {
        let i = self.p.id(name);
        self.g.param(i)
    }

    fn lin(&mut self, x: Var, name: &str) -> Var {
        let (w, b) = (self.w(&format!("{name}.w")), self.w(&format!("{name}.b")));
        self.g.linear(x, w, Some(b))
    }

    fn ln(&mut self, x: Var, name: &str) -> Var {
        let (gn, bn) = (self.w(&format!("{name}.g")), self.w(&format!("{name}.b")));
        self.g.layer_norm(x, gn, bn)
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(&mut self, x: Var, kv: Var, name: &str, qseg: &Segments, kseg: &Segments, causal: bool) -> Var {
        let q = self.lin(x, &format!("{name}.q"));
        let k = self.lin(kv, &format!("{name}.k"));
        let v = self.lin(kv, &format!("{name}.v"));
        let a = self.g.attention(q, k, v, self.p.config.heads, qseg.clone(), kseg.clone(), causal);
        let o = self.lin(a, &format!("{name}.o"));
        self.drop.apply(&mut self.g, o)
    }

    fn ffn(&mut self, x: Var, pre: &str) -> Var {
        let h = self.ln(x, &format!("{pre}.ln2"));
        let h = self.lin(h, &format!("{pre}.ff1"));
        let h = self.g.gelu(h);
        let h = self.lin(h, &format!("{pre}.ff2"));
        let h = self.drop.apply(&mut self.g, h);
        self.g.add(x, h)
    }

    fn encode(&mut self, patches: Tensor, samples: usize) -> (Var, Segments) {
        let n = self.p.config.patch_count();
        let segs: Segments = (0..samples).map(|s| (s * n, n)).collect();
        let x = self.g.input(patches);
        let x = self.lin(x, "enc.patch");
        let pos = self.w("enc.pos");
        let pos = self.g.gather(pos, (0..samples * n).map(|i| vec![i % n]).collect());
        let x = self.g.add(x, pos);
        let mut x = self.drop.apply(&mut self.g, x);
        for l in 0..self.p.config.layers_enc {
            let pre = format!("enc.{l}");
            let h = self.ln(x, &format!("{pre}.ln1"));
            let a = self.attend(h, h, &format!("{pre}.attn"), &segs, &segs, false);
            x = self.g.add(x, a);
            x = self.ffn(x, &pre);
        }
        (self.ln(x, "enc.ln"), segs)
    }

    /// Decoder trunk over packed input tokens; returns the final hidden rows.
    fn decode(&mut self, memory: Var, mem_segs: &Segments, inputs: &[&[Token]]) -> (Var, Segments) {
        let c = &self.p.config;
        let mut segs = Segments::new();
        let (mut tok, mut pose, mut pos) = (Vec::new(), Vec::new(), Vec::new());
        for seq in inputs {
            segs.push((tok.len(), seq.len()));
            for (t, token) in seq.iter().enumerate() {
                let (c_row, p_rows) = token_rows(token, c);
                tok.push(vec![c_row]);
                pose.push(p_rows);
                pos.push(vec![t]);
            }
        }
        let layers = c.layers_dec;
        let (wt, wp, wpos) = (self.w("dec.tok"), self.w("dec.pose"), self.w("dec.pos"));
        let a = self.g.gather(wt, tok);
        let b = self.g.gather(wp, pose);
        let e = self.g.gather(wpos, pos);
        let x = self.g.add(a, b);
        let x = self.g.add(x, e);
        let mut x = self.drop.apply(&mut self.g, x);
        for l in 0..layers {
            let pre = format!("dec.{l}");
            let h = self.ln(x, &format!("{pre}.ln1"));
            let a = self.attend(h, h, &format!("{pre}.attn"), &segs, &segs, true);
            x = self.g.add(x, a);
            let h = self.ln(x, &format!("{pre}.lnc"));
            let a = self.attend(h, memory, &format!("{pre}.cross"), &segs, mem_segs, false);
            x = self.g.add(x, a);
            x = self.ffn(x, &pre);
        }
        (self.ln(x, "dec.ln"), segs)
    }
}

/// Loss totals of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// Mean per-position loss.
    pub loss: f64,
    pub positions: usize,
    pub fragment_positions: usize,
    /// Summed cross-entropies of each head.
    pub c: f64,
    pub p: f64,
    pub r: f64,
}

impl LossParts {
    /// Mean loss over fragment positions only.
    pub fn fragment_mean(&self, control_c: f64) -> f64 {
        (self.c - control_c + self.p + self.r) / self.fragment_positions.max(1) as f64
    }
}

fn run_loss(params: &ModelParams, batch: &Batch, rng: Option<&mut ChaCha8Rng>, want_grad: bool) -> Result<(LossParts, Option<Vec<Tensor>>), ModelError> {
    let c = &params.config;
    let rate = c.dropout;
    let mut net = Net { g: Graph::new(params.tensors()), p: params, drop: Dropout { rate, rng } };
    let (memory, mem_segs) = net.encode(batch.patches.clone(), batch.len());
    let lengths = batch.lengths();
    let inputs: Vec<Vec<Token>> = batch.inputs.iter().zip(&lengths).map(|(s, &n)| s[..n].iter().map(|t| t.expect("masked input")).collect()).collect();
    let views: Vec<&[Token]> = inputs.iter().map(Vec::as_slice).collect();
    let (h, _) = net.decode(memory, &mem_segs, &views);
    let targets: Vec<Token> = batch.targets.iter().zip(&lengths).flat_map(|(t, &n)| t[..n].iter().map(|x| x.expect("masked target"))).collect();
    let positions = targets.len();
    if positions == 0 {
        return Err(ModelError::Shape("batch has no target positions".into()));
    }
    let scale = 1.0 / positions as f64;
    let lc = net.lin(h, "head.c");
    let lp = net.lin(h, "head.p");
    let lr = net.lin(h, "head.r");
    let tc: Vec<Option<usize>> = targets.iter().map(|t| Some(t.index())).collect();
    let frag = |t: &Token| if let Token::Frag(f) = t { Some(*f) } else { None };
    let tp: Vec<Option<usize>> = targets.iter().flat_map(|t| (0..3).map(move |a| frag(t).map(|f| f.p[a]))).collect();
    let tr: Vec<Option<usize>> = targets.iter().flat_map(|t| (0..4).map(move |a| frag(t).map(|f| f.r[a]))).collect();
    let fragment_positions = targets.iter().filter(|t| frag(t).is_some()).count();
    let ce_c = net.g.cross_entropy(lc, c.vocab_size, tc, scale);
    let ce_p = net.g.cross_entropy(lp, c.bins_t, tp, scale);
    let ce_r = net.g.cross_entropy(lr, c.bins_r, tr, scale);
    let s = net.g.add(ce_c, ce_p);
    let total = net.g.add(s, ce_r);
    let g = &net.g;
    let parts = LossParts {
        loss: g.value(total).scalar(),
        positions,
        fragment_positions,
        c: g.value(ce_c).scalar() / scale,
        p: g.value(ce_p).scalar() / scale,
        r: g.value(ce_r).scalar() / scale,
    };
    if !parts.loss.is_finite() {
        return Err(ModelError::Numeric { batch: 0, value: parts.loss });
    }
    let grads = want_grad.then(|| g.backward(total));
    Ok((parts, grads))
}

/// Evaluation-mode loss (no dropout).
pub fn loss(params: &ModelParams, batch: &Batch) -> Result<LossParts, ModelError> {
    Ok(run_loss(params, batch, None, false)?.0)
}

/// Loss and parameter gradients; dropout is active when `rng` is given.
pub fn loss_and_grad(params: &ModelParams, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> Result<(LossParts, Vec<Tensor>), ModelError> {
    let (parts, grads) = run_loss(params, batch, rng, true)?;
    Ok((parts, grads.expect("gradients requested")))
}

/// Encoder output for one grid: one row per patch.
pub fn encode(grid: &VoxelGrid, params: &ModelParams) -> Result<Tensor, ModelError> {
    let patches = grid_patches(grid, &params.config)?;
    let mut net = Net { g: Graph::new(params.tensors()), p: params, drop: Dropout { rate: 0.0, rng: None } };
    let (m, _) = net.encode(patches, 1);
    Ok(net.g.value(m).clone())
}

/// Head outputs at one decoder position.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub c: Vec<f64>,
    /// Three consecutive groups of `bins_t`.
    pub p: Vec<f64>,
    /// Four consecutive groups of `bins_r`.
    pub r: Vec<f64>,
}

/// Full-recompute logits at every position of `prefix`.
pub fn decode_all(memory: &Tensor, prefix: &[Token], params: &ModelParams) -> Result<Vec<Logits>, ModelError> {
    let c = &params.config;
    if prefix.is_empty() || prefix.len() >= c.max_len {
        return Err(ModelError::Overlength { len: prefix.len(), max: c.max_len - 1 });
    }
    let mut net = Net { g: Graph::new(params.tensors()), p: params, drop: Dropout { rate: 0.0, rng: None } };
    let m = net.g.input(memory.clone());
    let (h, _) = net.decode(m, &vec![(0, memory.rows)], &[prefix]);
    let lc = net.lin(h, "head.c");
    let lp = net.lin(h, "head.p");
    let lr = net.lin(h, "head.r");
    let (lc, lp, lr) = (net.g.value(lc), net.g.value(lp), net.g.value(lr));
    Ok((0..prefix.len()).map(|t| Logits { c: lc.row(t).to_vec(), p: lp.row(t).to_vec(), r: lr.row(t).to_vec() }).collect())
}

/// Logits for the token following `prefix`.
pub fn decode_step(memory: &Tensor, prefix: &[Token], params: &ModelParams) -> Result<Logits, ModelError> {
    Ok(decode_all(memory, prefix, params)?.pop().expect("non-empty prefix"))
}

/// Incremental decoder with cached keys and values for generation.
pub struct DecoderState<'a> {
    params: &'a ModelParams,
    cross: Vec<(Tensor, Tensor)>,
    keys: Vec<Tensor>,
    values: Vec<Tensor>,
    len: usize,
}

impl<'a> DecoderState<'a> {
    pub fn new(memory: &Tensor, params: &'a ModelParams) -> Self {
        let c = &params.config;
        let t = |n: &str| params.get(n).expect("parameter present");
        let cross = (0..c.layers_dec)
            .map(|l| {
                let k = linear(memory, t(&format!("dec.{l}.cross.k.w")), Some(t(&format!("dec.{l}.cross.k.b"))));
                let v = linear(memory, t(&format!("dec.{l}.cross.v.w")), Some(t(&format!("dec.{l}.cross.v.b"))));
                (k, v)
            })
            .collect();
        let empty = || (0..c.layers_dec).map(|_| Tensor::zeros(0, c.dim)).collect::<Vec<_>>();
        Self { params, cross, keys: empty(), values: empty(), len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds one token and returns the logits for the next.
    pub fn step(&mut self, token: &Token) -> Result<Logits, ModelError> {
        let c = &self.params.config;
        if self.len + 1 >= c.max_len {
            return Err(ModelError::Overlength { len: self.len + 1, max: c.max_len - 1 });
        }
        let t = |n: &str| self.params.get(n).expect("parameter present");
        let lin = |x: &Tensor, n: &str| linear(x, t(&format!("{n}.w")), Some(t(&format!("{n}.b"))));
        let ln = |x: &Tensor, n: &str| layer_norm(x, t(&format!("{n}.g")), t(&format!("{n}.b"))).0;
        let add = |a: &mut Tensor, b: &Tensor| a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        let (c_row, p_rows) = token_rows(token, c);
        let mut x = Tensor::from_vec(1, c.dim, t("dec.tok").row(c_row).to_vec());
        let pose = t("dec.pose");
        for r in p_rows {
            x.data.iter_mut().zip(pose.row(r)).for_each(|(a, b)| *a += b);
        }
        x.data.iter_mut().zip(t("dec.pos").row(self.len)).for_each(|(a, b)| *a += b);
        let one: Segments = vec![(0, 1)];
        for l in 0..c.layers_dec {
            let pre = format!("dec.{l}");
            let h = ln(&x, &format!("{pre}.ln1"));
            let q = lin(&h, &format!("{pre}.attn.q"));
            let k = lin(&h, &format!("{pre}.attn.k"));
            let v = lin(&h, &format!("{pre}.attn.v"));
            self.keys[l].data.extend_from_slice(&k.data);
            self.keys[l].rows += 1;
            self.values[l].data.extend_from_slice(&v.data);
            self.values[l].rows += 1;
            let n = self.keys[l].rows;
            let (a, _) = attention(&q, &self.keys[l], &self.values[l], c.heads, &one, &vec![(0, n)], false);
            add(&mut x, &lin(&a, &format!("{pre}.attn.o")));
            let h = ln(&x, &format!("{pre}.lnc"));
            let q = lin(&h, &format!("{pre}.cross.q"));
            let (mk, mv) = &self.cross[l];
            let (a, _) = attention(&q, mk, mv, c.heads, &one, &vec![(0, mk.rows)], false);
            add(&mut x, &lin(&a, &format!("{pre}.cross.o")));
            let h = ln(&x, &format!("{pre}.ln2"));
            let mut h = lin(&h, &format!("{pre}.ff1"));
            h.data.iter_mut().for_each(|v| *v = gelu(*v));
            add(&mut x, &lin(&h, &format!("{pre}.ff2")));
        }
        let h = ln(&x, "dec.ln");
        self.len += 1;
        Ok(Logits { c: lin(&h, "head.c").data, p: lin(&h, "head.p").data, r: lin(&h, "head.r").data })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::codec::FragmentToken;
    use rand::SeedableRng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            dim: 16,
            layers_enc: 2,
            layers_dec: 2,
            heads: 2,
            ffn: 32,
            patch_edge: 4,
            grid_extent: 8,
            grid_pitch: 1.5,
            vocab_size: 12,
            bins_t: 8,
            bins_r: 8,
            max_len: 16,
            dropout: 0.0,
        }
    }

    pub(crate) fn frag(rng: &mut ChaCha8Rng, c: &ModelConfig) -> Token {
        Token::Frag(FragmentToken {
            c: rng.random_range(crate::chem::CONTROL_COUNT..c.vocab_size),
            p: [0; 3].map(|_| rng.random_range(0..c.bins_t)),
            r: [0; 4].map(|_| rng.random_range(0..c.bins_r)),
        })
    }

    pub(crate) fn random_grid(rng: &mut ChaCha8Rng, c: &ModelConfig) -> VoxelGrid {
        let spec = c.grid_spec();
        VoxelGrid::from_cells(spec, (0..spec.cell_count()).map(|_| rng.random_bool(0.3)).collect()).unwrap()
    }

    pub(crate) fn sample(rng: &mut ChaCha8Rng, c: &ModelConfig, frags: usize) -> (Tensor, TokenSequence) {
        let mut toks = vec![Token::Bos, frag(rng, c)];
        if frags > 1 {
            toks.push(Token::Bob);
            toks.extend((1..frags).map(|_| frag(rng, c)));
            toks.push(Token::Eob);
        }
        toks.push(Token::Eos);
        (grid_patches(&random_grid(rng, c), c).unwrap(), TokenSequence(toks))
    }

    #[test]
    fn memory_shape_and_sensitivity() {
        let mut c = tiny_config();
        c.grid_extent = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(&c, &mut rng).unwrap();
        let empty = VoxelGrid::empty(c.grid_spec());
        let m = encode(&empty, &p).unwrap();
        assert_eq!((m.rows, m.cols), (512, 16));
        assert_eq!(m, encode(&empty, &p).unwrap());
        let mut one = empty.clone();
        one.set(3, 3, 3, true);
        assert_ne!(m, encode(&one, &p).unwrap());
        let wrong = VoxelGrid::empty(GridSpec::centered(Vec3::ZERO, 1.5, 16));
        assert!(matches!(encode(&wrong, &p), Err(ModelError::Shape(_))));
    }

    #[test]
    fn causal_prefix_extension_and_cache() {
        let c = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(&c, &mut rng).unwrap();
        let mem = encode(&random_grid(&mut rng, &c), &p).unwrap();
        let toks: Vec<Token> = std::iter::once(Token::Bos).chain((0..6).map(|_| frag(&mut rng, &c))).collect();
        let full = decode_all(&mem, &toks, &p).unwrap();
        let short = decode_all(&mem, &toks[..3], &p).unwrap();
        assert_eq!(full[0].c.len(), c.vocab_size);
        for (a, b) in full[2].c.iter().chain(&full[2].r).zip(short[2].c.iter().chain(&short[2].r)) {
            assert!((a - b).abs() < 1e-5);
        }
        let mut state = DecoderState::new(&mem, &p);
        for (t, tok) in toks.iter().enumerate() {
            let l = state.step(tok).unwrap();
            for (a, b) in l.c.iter().chain(&l.p).chain(&l.r).zip(full[t].c.iter().chain(&full[t].p).chain(&full[t].r)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let long = vec![Token::Bos; c.max_len];
        assert!(matches!(decode_all(&mem, &long, &p), Err(ModelError::Overlength { .. })));
    }

    #[test]
    fn init_entropy_near_uniform() {
        let c = ModelConfig { dropout: 0.0, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(&c, &mut rng).unwrap();
        let mem = encode(&VoxelGrid::empty(c.grid_spec()), &p).unwrap();
        let l = decode_step(&mem, &[Token::Bos], &p).unwrap();
        let entropy = |z: &[f64]| {
            let mut s = z.to_vec();
            super::super::tensor::softmax_in_place(&mut s);
            -s.iter().map(|p| p * p.ln()).sum::<f64>()
        };
        let ln = |n: usize| (n as f64).ln();
        assert!((entropy(&l.c) / ln(c.vocab_size) - 1.0).abs() < 0.05);
        for a in 0..3 {
            assert!((entropy(&l.p[a * c.bins_t..(a + 1) * c.bins_t]) / ln(c.bins_t) - 1.0).abs() < 0.05);
        }
        for k in 0..4 {
            assert!((entropy(&l.r[k * c.bins_r..(k + 1) * c.bins_r]) / ln(c.bins_r) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn uniform_loss_and_padding() {
        let c = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ModelParams::init(&c, &mut rng).unwrap();
        p.zero_heads();
        let items = vec![sample(&mut rng, &c, 3), sample(&mut rng, &c, 1)];
        let batch = Batch::new(&items, &c).unwrap();
        let parts = loss(&p, &batch).unwrap();
        let lnv = (c.vocab_size as f64).ln();
        let control = parts.positions - parts.fragment_positions;
        assert!((parts.fragment_mean(control as f64 * lnv) - c.uniform_fragment_loss()).abs() < 1e-9);
        let lengths = batch.lengths();
        let padded = batch.padded(5);
        assert_eq!(padded.mask()[1].iter().filter(|m| **m).count(), lengths[1]);
        assert_eq!(loss(&p, &padded).unwrap(), parts);
    }

    #[test]
    fn padding_rows_get_no_gradient() {
        let c = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ModelParams::init(&c, &mut rng).unwrap();
        p.zero_heads();
        let batch = Batch::new(&[sample(&mut rng, &c, 2)], &c).unwrap().padded(3);
        let (_, g) = loss_and_grad(&p, &batch, None).unwrap();
        let tok = &g[p.id("dec.tok")];
        assert!(tok.row(crate::chem::PAD).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn config_kv_roundtrip() {
        let c = tiny_config();
        assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!(ModelConfig::from_kv("dim=15\nheads=2").is_err());
        assert!(ModelConfig::from_kv("colour=blue").is_err());
    }
}

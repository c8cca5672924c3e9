use rand::Rng;

use super::net::{encode, DecoderState, Logits, ModelParams};
use super::tensor::softmax_in_place;
use super::ModelError;
use crate::chem::{BOS, EOS, PAD};
use crate::codec::{delinearize, CodecParams, FragmentToken, Token, TokenSequence};
use crate::geom::VoxelGrid;

/// Indices of the smallest most-probable prefix whose mass reaches `p`,
/// with their probabilities. Ties keep the lower index first.
pub fn nucleus(logits: &[f64], p: f64) -> Vec<(usize, f64)> {
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push((i, probs[i]));
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    kept
}

/// Draws from the renormalised nucleus of `softmax(logits)`.
pub fn nucleus_sample<R: Rng + ?Sized>(logits: &[f64], p: f64, rng: &mut R) -> usize {
    let kept = nucleus(logits, p);
    let mass: f64 = kept.iter().map(|k| k.1).sum();
    let mut u = rng.random::<f64>() * mass;
    for &(i, q) in &kept {
        if u < q {
            return i;
        }
        u -= q;
    }
    kept.last().expect("non-empty nucleus").0
}

pub fn argmax(logits: &[f64]) -> usize {
    logits.iter().enumerate().fold(0, |best, (i, v)| if *v > logits[best] { i } else { best })
}

/// How each head picks its index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    Nucleus(f64),
}

fn pick<R: Rng + ?Sized>(logits: &[f64], mode: Sampling, rng: &mut R) -> usize {
    match mode {
        Sampling::Greedy => argmax(logits),
        Sampling::Nucleus(p) => nucleus_sample(logits, p, rng),
    }
}

/// Next token from one set of head outputs. BOS and PAD are never emitted.
fn next_token<R: Rng + ?Sized>(l: &Logits, params: &ModelParams, mode: Sampling, rng: &mut R) -> Token {
    let c = &params.config;
    let mut cl = l.c.clone();
    cl[BOS] = f64::NEG_INFINITY;
    cl[PAD] = f64::NEG_INFINITY;
    let idx = pick(&cl, mode, rng);
    if let Some(t) = Token::control(idx) {
        return t;
    }
    let (bt, br) = (c.bins_t, c.bins_r);
    let p = [0, 1, 2].map(|a| pick(&l.p[a * bt..(a + 1) * bt], mode, rng));
    let r = [0, 1, 2, 3].map(|k| pick(&l.r[k * br..(k + 1) * br], mode, rng));
    Token::Frag(FragmentToken { c: idx, p, r })
}

/// One autoregressive sample, stopping at EOS or `max_len` tokens.
pub fn sample_tokens<R: Rng + ?Sized>(memory: &super::tensor::Tensor, params: &ModelParams, mode: Sampling, rng: &mut R) -> Result<TokenSequence, ModelError> {
    let mut state = DecoderState::new(memory, params);
    let mut toks = vec![Token::Bos];
    while toks.len() < params.config.max_len {
        let logits = state.step(toks.last().expect("non-empty"))?;
        let t = next_token(&logits, params, mode, rng);
        toks.push(t);
        if t.index() == EOS {
            break;
        }
    }
    Ok(TokenSequence(toks))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub sequences: Vec<TokenSequence>,
    /// Samples that did not parse as a fragment tree.
    pub dropped: usize,
}

/// Well-formed means it parses as a tree with in-range bins.
pub fn well_formed(seq: &TokenSequence, params: &ModelParams) -> bool {
    let codec = CodecParams { length: 1.0, bins_t: params.config.bins_t, bins_r: params.config.bins_r };
    seq.is_balanced() && delinearize(seq, None, &codec).is_ok()
}

/// `n` samples for one shape with per-head nucleus sampling at threshold `p`.
pub fn generate<R: Rng + ?Sized>(grid: &VoxelGrid, params: &ModelParams, n: usize, p: f64, rng: &mut R) -> Result<Generated, ModelError> {
    generate_with(grid, params, n, Sampling::Nucleus(p), rng)
}

pub fn generate_with<R: Rng + ?Sized>(grid: &VoxelGrid, params: &ModelParams, n: usize, mode: Sampling, rng: &mut R) -> Result<Generated, ModelError> {
    if let Sampling::Nucleus(p) = mode {
        if !(p > 0.0 && p <= 1.0) {
            return Err(ModelError::Config(format!("nucleus threshold {p} outside (0, 1]")));
        }
    }
    let mut out = Generated { sequences: Vec::with_capacity(n), dropped: 0 };
    if n == 0 {
        return Ok(out);
    }
    let memory = encode(grid, params)?;
    for _ in 0..n {
        let seq = sample_tokens(&memory, params, mode, rng)?;
        if well_formed(&seq, params) {
            out.sequences.push(seq);
        } else {
            out.dropped += 1;
        }
    }
    Ok(out)
}

/// Argmax decoding of a single sequence, returned even when malformed.
pub fn greedy(grid: &VoxelGrid, params: &ModelParams) -> Result<TokenSequence, ModelError> {
    let memory = encode(grid, params)?;
    sample_tokens(&memory, params, Sampling::Greedy, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))
}

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::save_checkpoint;
use super::net::{grid_patches, loss_and_grad, Batch, ModelParams};
use super::tensor::Tensor;
use super::ModelError;
use crate::chem::Molecule;
use crate::codec::{linearize, CodecParams, FragmentTree, TokenSequence};
use crate::geom::{voxelize_with_offset, Pose, Quaternion, Vec3, VoxelGrid};

/// Optimiser, schedule and augmentation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub augment: bool,
    /// Random rotation about the origin as part of augmentation. Off by
    /// default: training items come in the canonical frame of their shape.
    pub rotate: bool,
    /// Half-width of the uniform per-axis augmentation shift, Å.
    pub translate: f64,
    /// Radius noise ε bound for augmented voxelizations, Å.
    pub voxel_noise: f64,
    /// Steps between checkpoints written during training (0 = only at the end).
    pub checkpoint_every: usize,
    pub log_every: usize,
    /// Wall-clock limit; training stops after the step that crosses it.
    pub time_budget: Option<Duration>,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-2,
            warmup: 4000,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            batch_size: 16,
            steps: 1000,
            clip_norm: Some(1.0),
            augment: true,
            rotate: false,
            translate: 0.75,
            voxel_noise: 0.1,
            checkpoint_every: 0,
            log_every: 50,
            time_budget: None,
        }
    }
}

impl OptConfig {
    /// Linear warmup to `lr` over `warmup` steps, then `lr·√(warmup/step)`.
    /// Steps count from 1.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        if s <= w {
            self.lr * s / w
        } else {
            self.lr * (w / s).sqrt()
        }
    }
}

/// AdamW with decoupled weight decay. Biases, layer-norm parameters and
/// embedding tables are not decayed.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    decay: Vec<bool>,
    t: usize,
}

impl AdamW {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect::<Vec<_>>();
        let decay = params.names().iter().map(|n| n.ends_with(".w")).collect();
        Self { m: zeros(), v: zeros(), decay, t: 0 }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64, opt: &OptConfig) {
        self.t += 1;
        let b1t = 1.0 - opt.beta1.powi(self.t as i32);
        let b2t = 1.0 - opt.beta2.powi(self.t as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i].data, &mut self.v[i].data, &grads[i].data);
            let wd = if self.decay[i] { opt.weight_decay } else { 0.0 };
            for j in 0..p.data.len() {
                m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
                v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
                let update = (m[j] / b1t) / ((v[j] / b2t).sqrt() + opt.eps);
                p.data[j] -= lr * (update + wd * p.data[j]);
            }
        }
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainItem {
    /// Fixed input and target; never augmented.
    Fixed { grid: VoxelGrid, sequence: TokenSequence },
    /// Source molecule and its fragment tree in the same frame; augmented
    /// and voxelised afresh at every visit.
    Molecule { molecule: Molecule, tree: FragmentTree },
}

/// Uniform random rotation (when `rotate`) and a shift uniform in
/// `[-translate, translate]` per axis. No rotation and zero range give the identity.
pub fn augment_motion<R: Rng + ?Sized>(rng: &mut R, rotate: bool, translate: f64) -> Pose {
    let rotation = if rotate { Quaternion::random(rng) } else { Quaternion::IDENTITY };
    let t = if translate > 0.0 {
        Vec3::new(rng.random_range(-translate..=translate), rng.random_range(-translate..=translate), rng.random_range(-translate..=translate))
    } else {
        Vec3::ZERO
    };
    Pose::new(rotation, t)
}

/// Rotates the molecule about the origin and shifts it by up to ±2 Å per axis.
pub fn augment<R: Rng + ?Sized>(molecule: &Molecule, rng: &mut R) -> Molecule {
    molecule.transformed(&augment_motion(rng, true, 2.0))
}

/// Input patches and target tokens for one visit of `item`.
pub fn prepare<R: Rng + ?Sized>(
    item: &TrainItem,
    params: &ModelParams,
    codec: &CodecParams,
    opt: &OptConfig,
    rng: &mut R,
) -> Result<(Tensor, TokenSequence), ModelError> {
    let config = &params.config;
    match item {
        TrainItem::Fixed { grid, sequence } => Ok((grid_patches(grid, config)?, sequence.clone())),
        TrainItem::Molecule { molecule, tree } => {
            let spec = config.grid_spec();
            let build = |motion: &Pose, noise: f64, margin: f64| -> Result<(Tensor, TokenSequence), ModelError> {
                let grid = voxelize_with_offset(&molecule.transformed(motion), &spec, noise, margin)?;
                let seq = linearize(&tree.transformed(motion), codec)?;
                Ok((grid_patches(&grid, config)?, seq))
            };
            if opt.augment {
                let motion = augment_motion(rng, opt.rotate, opt.translate);
                let e = opt.voxel_noise.abs();
                let noise = if e > 0.0 { rng.random_range(-e..=e) } else { 0.0 };
                if let Ok(out) = build(&motion, noise, e) {
                    return Ok(out);
                }
            }
            build(&Pose::IDENTITY, 0.0, 0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `(step, loss, lr)` per optimiser step.
    pub curve: Vec<(usize, f64, f64)>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.curve.first().map(|c| c.1)
    }

    /// Mean of the last `k` recorded losses.
    pub fn tail_loss(&self, k: usize) -> Option<f64> {
        let k = k.min(self.curve.len());
        (k > 0).then(|| self.curve[self.curve.len() - k..].iter().map(|c| c.1).sum::<f64>() / k as f64)
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("step,loss,lr\n");
        for (step, loss, lr) in &self.curve {
            s.push_str(&format!("{step},{loss:.6},{lr:.8}\n"));
        }
        s
    }
}

fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().flat_map(|t| t.data.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Trains `params` in place for `opt.steps` optimiser steps, or until the
/// time budget runs out, over shuffled epochs of `corpus`. With `out_dir`,
/// the final parameters go to `model.ckpt` and the loss curve to
/// `loss.csv`; a non-finite loss writes the last good parameters before
/// returning the error.
pub fn train(
    params: &mut ModelParams,
    corpus: &[TrainItem],
    opt: &OptConfig,
    codec: &CodecParams,
    rng: &mut ChaCha8Rng,
    out_dir: Option<&Path>,
) -> Result<TrainReport, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::Config("training corpus is empty".into()));
    }
    if opt.batch_size == 0 {
        return Err(ModelError::Config("batch size must be positive".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut adam = AdamW::new(params);
    let mut report = TrainReport { curve: Vec::with_capacity(opt.steps.min(1 << 16)), checkpoint: None };
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let started = Instant::now();
    for step in 1..=opt.steps {
        if opt.time_budget.is_some_and(|b| started.elapsed() >= b) {
            log::info!("time budget reached after {} steps", step - 1);
            break;
        }
        let mut items = Vec::with_capacity(opt.batch_size);
        while items.len() < opt.batch_size.min(corpus.len()) {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            items.push(prepare(&corpus[order[cursor]], params, codec, opt, rng)?);
            cursor += 1;
        }
        let batch = Batch::new(&items, &params.config)?;
        let (parts, mut grads) = match loss_and_grad(params, &batch, Some(&mut drop_rng)) {
            Ok(r) => r,
            Err(ModelError::Numeric { value, .. }) => {
                if let Some(dir) = out_dir {
                    save_checkpoint(params, dir.join("model.ckpt"))?;
                    std::fs::write(dir.join("loss.csv"), report.curve_csv())?;
                }
                return Err(ModelError::Numeric { batch: step, value });
            }
            Err(e) => return Err(e),
        };
        if let Some(clip) = opt.clip_norm {
            let n = global_norm(&grads);
            if n > clip {
                let s = clip / n;
                grads.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v *= s));
            }
        }
        let lr = opt.lr_at(step);
        adam.step(params, &grads, lr, opt);
        report.curve.push((step, parts.loss, lr));
        if opt.log_every > 0 && step % opt.log_every == 0 {
            log::info!("step {step} loss {:.4} lr {lr:.2e}", parts.loss);
        }
        if let Some(dir) = out_dir {
            if opt.checkpoint_every > 0 && step % opt.checkpoint_every == 0 {
                save_checkpoint(params, dir.join("model.ckpt"))?;
                std::fs::write(dir.join("loss.csv"), report.curve_csv())?;
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join("model.ckpt");
        save_checkpoint(params, &path)?;
        std::fs::write(dir.join("loss.csv"), report.curve_csv())?;
        report.checkpoint = Some(path);
    }
    Ok(report)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sketchmol::codec::{linearize, random_tree, CodecParams, TokenSequence};
use sketchmol::geom::VoxelGrid;
use sketchmol::model::{grid_patches, greedy, loss, loss_and_grad, train, Batch, ModelConfig, ModelParams, OptConfig, TrainItem};

fn small(vocab: usize, bins: usize) -> ModelConfig {
    ModelConfig {
        dim: 16,
        layers_enc: 2,
        layers_dec: 2,
        heads: 2,
        ffn: 32,
        patch_edge: 4,
        grid_extent: 8,
        grid_pitch: 1.5,
        vocab_size: vocab,
        bins_t: bins,
        bins_r: bins,
        max_len: 32,
        dropout: 0.0,
    }
}

fn random_grid(rng: &mut ChaCha8Rng, c: &ModelConfig) -> VoxelGrid {
    let spec = c.grid_spec();
    VoxelGrid::from_cells(spec, (0..spec.cell_count()).map(|_| rng.random_bool(0.3)).collect()).unwrap()
}

fn random_sequence(rng: &mut ChaCha8Rng, c: &ModelConfig, nodes: usize) -> TokenSequence {
    let codec = CodecParams { length: 32.0, bins_t: c.bins_t, bins_r: c.bins_r };
    linearize(&random_tree(rng, nodes, 3, c.vocab_size, &codec), &codec).unwrap()
}

fn batch(rng: &mut ChaCha8Rng, c: &ModelConfig, sizes: &[usize]) -> Batch {
    let items: Vec<_> = sizes.iter().map(|&n| (grid_patches(&random_grid(rng, c), c).unwrap(), random_sequence(rng, c, n))).collect();
    Batch::new(&items, c).unwrap()
}

#[test]
fn analytic_gradients_match_central_differences() {
    let c = small(12, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ModelParams::init(&c, &mut rng).unwrap();
    // push weights off the symmetric init so every path carries signal
    for t in params.tensors_mut() {
        for v in &mut t.data {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let b = batch(&mut rng, &c, &[3, 2]);
    let (_, grads) = loss_and_grad(&params, &b, None).unwrap();
    let n_tensors = params.tensors().len();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 0..240 {
        let ti = k % n_tensors;
        let len = params.tensors()[ti].data.len();
        let j = rng.random_range(0..len);
        let orig = params.tensors()[ti].data[j];
        params.tensors_mut()[ti].data[j] = orig + h;
        let up = loss(&params, &b).unwrap().loss;
        params.tensors_mut()[ti].data[j] = orig - h;
        let down = loss(&params, &b).unwrap().loss;
        params.tensors_mut()[ti].data[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[ti].data[j];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    assert!(checked >= 200);
    assert!(worst < 1e-3, "worst relative error {worst:e}");
}

#[test]
fn untrained_uniform_model_hits_analytic_loss() {
    let c = ModelConfig { vocab_size: 37, bins_t: 64, bins_r: 64, ..small(37, 64) };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ModelParams::init(&c, &mut rng).unwrap();
    params.zero_heads();
    let b = batch(&mut rng, &c, &[4, 6, 1]);
    let parts = loss(&params, &b).unwrap();
    // control positions only pay the C term
    let per_fragment = parts.fragment_mean((parts.positions - parts.fragment_positions) as f64 * (c.vocab_size as f64).ln());
    let expected = (37f64).ln() + 3.0 * (64f64).ln() + 4.0 * (64f64).ln();
    assert!((per_fragment - expected).abs() / expected < 0.01, "{per_fragment} vs {expected}");
    assert_eq!(expected, c.uniform_fragment_loss());
}

#[test]
fn single_pair_is_memorised() {
    let c = ModelConfig { dim: 32, ffn: 64, ..small(20, 64) };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = random_grid(&mut rng, &c);
    let seq = random_sequence(&mut rng, &c, 4);
    let mut params = ModelParams::init(&c, &mut rng).unwrap();
    let eval = |p: &ModelParams| loss(p, &Batch::new(&[(grid_patches(&grid, &c).unwrap(), seq.clone())], &c).unwrap()).unwrap().loss;
    let initial = eval(&params);
    let opt = OptConfig { lr: 3e-3, warmup: 20, steps: 400, batch_size: 1, augment: false, log_every: 0, ..OptConfig::default() };
    let item = TrainItem::Fixed { grid: grid.clone(), sequence: seq.clone() };
    train(&mut params, &[item], &opt, &CodecParams::default(), &mut rng, None).unwrap();
    let last = eval(&params);
    assert!(last < 0.1 * initial, "{initial} -> {last}");
    assert_eq!(greedy(&grid, &params).unwrap(), seq);
}

//! Gradient checks over every differentiable operator on random inputs.
//!
//! ```
//! use matting::selfcheck::{run, SelfCheckConfig};
//!
//! let cfg = SelfCheckConfig { seeds: 1, ..SelfCheckConfig::default() };
//! for check in run(&cfg).unwrap() {
//!     assert!(check.max_relative_error <= 1e-4, "{}", check.name);
//! }
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    guided_pool_node, guided_unpool_node, normalize_decoder_node, normalize_encoder_node, AttentionBlockParams,
};
use crate::error::Result;
use crate::gradcheck::{grad_check_report, Coord, GradCheckReport, DEFAULT_EPS};
use crate::graph::{Graph, NodeId};
use crate::net::{init_params, NetConfig};
use crate::ops::ConvGeometry;
use crate::params::Bound;
use crate::tensor::{Shape, Tensor};
use crate::trimap::Trimap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfCheckConfig {
    /// Seeds `0..seeds` are checked for every operator.
    pub seeds: u64,
    pub eps: f64,
    /// Network used for the whole-forward check.
    pub stages: usize,
    pub base_channels: usize,
    pub convs_per_stage: usize,
    /// Side of the square network input.
    pub input_size: usize,
    /// Coordinates sampled per input array in the whole-forward check.
    pub forward_coords: usize,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        SelfCheckConfig {
            seeds: 10,
            eps: DEFAULT_EPS,
            stages: 2,
            base_channels: 4,
            convs_per_stage: 1,
            input_size: 16,
            forward_coords: 3,
        }
    }
}

/// Worst result for one operator over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorCheck {
    pub name: &'static str,
    pub max_relative_error: f64,
    pub worst_seed: u64,
    pub checked: usize,
    pub skipped: usize,
}

type Case = fn(&SelfCheckConfig, u64) -> Result<GradCheckReport>;

const CASES: &[(&str, Case)] = &[
    ("conv2d", conv2d),
    ("group_norm", group_norm),
    ("relu", relu),
    ("sigmoid", sigmoid),
    ("window_softmax", window_softmax),
    ("attention_block", attention_block),
    ("guided_pool", guided_pool),
    ("guided_unpool", guided_unpool),
    ("forward", |c, s| forward(c, s, true)),
    ("forward_no_attention", |c, s| forward(c, s, false)),
    ("alpha_loss", alpha_loss),
    ("comp_loss", comp_loss),
];

/// Names of the checked operators, in the order [`run`] reports them.
pub fn operator_names() -> Vec<&'static str> {
    CASES.iter().map(|(n, _)| *n).collect()
}

pub fn run(cfg: &SelfCheckConfig) -> Result<Vec<OperatorCheck>> {
    CASES
        .iter()
        .map(|&(name, case)| {
            let mut out = OperatorCheck {
                name,
                max_relative_error: 0.0,
                worst_seed: 0,
                checked: 0,
                skipped: 0,
            };
            for seed in 0..cfg.seeds {
                let r = case(cfg, seed)?;
                if r.max_relative_error > out.max_relative_error {
                    out.max_relative_error = r.max_relative_error;
                    out.worst_seed = seed;
                }
                out.checked += r.checked;
                out.skipped += r.skipped.len();
            }
            Ok(out)
        })
        .collect()
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

fn uniform(r: &mut impl Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_, _, _| r.random_range(lo..hi))
}

fn uniform_vec(r: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::vector((0..n).map(|_| r.random_range(lo..hi)).collect())
}

/// Reduce a node to a scalar with fixed random weights.
fn project(g: &mut Graph, x: NodeId, seed: u64) -> Result<NodeId> {
    let n = g.value(x).len();
    let mut r = rng(seed, 1);
    g.sum_product(x, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
}

fn conv2d(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 2);
    let groups = 1 + seed as usize % 2;
    let geo = ConvGeometry::new(2 * groups, 2 * groups, 3)
        .with_stride(1 + seed as usize % 2)
        .with_groups(groups);
    let inputs = [
        uniform(&mut r, Shape::new(6, 5, geo.in_channels), -1.0, 1.0),
        uniform_vec(&mut r, geo.weight_len(), -1.0, 1.0),
        uniform_vec(&mut r, geo.out_channels, -1.0, 1.0),
    ];
    grad_check_report(
        |g, ids| {
            let y = g.conv2d(ids[0], ids[1], ids[2], geo)?;
            project(g, y, seed)
        },
        &inputs,
        cfg.eps,
        None,
    )
}

fn group_norm(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 3);
    let inputs = [
        uniform(&mut r, Shape::new(4, 3, 4), -2.0, 2.0),
        uniform_vec(&mut r, 4, 0.5, 1.5),
        uniform_vec(&mut r, 4, -0.5, 0.5),
    ];
    grad_check_report(
        |g, ids| {
            let y = g.group_norm(ids[0], ids[1], ids[2], 2, 1e-5)?;
            project(g, y, seed)
        },
        &inputs,
        cfg.eps,
        None,
    )
}

fn relu(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let x = uniform(&mut rng(seed, 4), Shape::new(4, 4, 2), -1.0, 1.0);
    grad_check_report(
        |g, ids| {
            let y = g.relu(ids[0]);
            project(g, y, seed)
        },
        &[x],
        cfg.eps,
        None,
    )
}

fn sigmoid(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let x = uniform(&mut rng(seed, 5), Shape::new(4, 4, 2), -4.0, 4.0);
    grad_check_report(
        |g, ids| {
            let y = g.sigmoid(ids[0]);
            project(g, y, seed)
        },
        &[x],
        cfg.eps,
        None,
    )
}

fn window_softmax(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let x = uniform(&mut rng(seed, 6), Shape::new(4, 6, 1), -3.0, 3.0);
    grad_check_report(
        |g, ids| {
            let y = g.window_softmax(ids[0], 2)?;
            project(g, y, seed)
        },
        &[x],
        cfg.eps,
        None,
    )
}

/// Replace all-zero arrays (fresh biases and shifts) with small random
/// values so no unit starts exactly at a kink.
fn perturb_zeros(r: &mut impl Rng, tensors: &[Tensor], scale: f64) -> Vec<Tensor> {
    tensors
        .iter()
        .map(|t| {
            if t.data().iter().all(|&v| v == 0.0) {
                uniform(r, t.shape(), -scale, scale)
            } else {
                t.clone()
            }
        })
        .collect()
}

fn attention_block(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 7);
    let block = AttentionBlockParams::init(4, &mut r)?;
    let mut inputs = vec![uniform(&mut r, Shape::new(6, 8, 4), -1.0, 1.0)];
    inputs.extend(perturb_zeros(&mut r, block.store.tensors(), 0.3));
    grad_check_report(
        |g, ids| {
            let bound = Bound::from_nodes(ids[1..].to_vec());
            let raw = block.block.forward(g, &bound, ids[0])?;
            project(g, raw, seed)
        },
        &inputs,
        cfg.eps,
        None,
    )
}

fn guided_pool(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 8);
    let inputs = [
        uniform(&mut r, Shape::new(4, 6, 3), -1.0, 1.0),
        uniform(&mut r, Shape::new(4, 6, 1), -2.0, 2.0),
    ];
    grad_check_report(
        |g, ids| {
            let enc = normalize_encoder_node(g, ids[1])?;
            let y = guided_pool_node(g, ids[0], enc)?;
            project(g, y, seed)
        },
        &inputs,
        cfg.eps,
        None,
    )
}

fn guided_unpool(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 9);
    let inputs = [
        uniform(&mut r, Shape::new(2, 3, 3), -1.0, 1.0),
        uniform(&mut r, Shape::new(4, 6, 1), -2.0, 2.0),
    ];
    grad_check_report(
        |g, ids| {
            let dec = normalize_decoder_node(g, ids[1]);
            let y = guided_unpool_node(g, ids[0], dec)?;
            project(g, y, seed)
        },
        &inputs,
        cfg.eps,
        None,
    )
}

fn forward(cfg: &SelfCheckConfig, seed: u64, attention: bool) -> Result<GradCheckReport> {
    let mut r = rng(seed, 10);
    let params = init_params(&NetConfig {
        stages: cfg.stages,
        base_channels: cfg.base_channels,
        convs_per_stage: cfg.convs_per_stage,
        seed,
        attention,
        skip_connections: true,
    })?;
    let mut inputs = vec![uniform(&mut r, Shape::new(cfg.input_size, cfg.input_size, 4), 0.0, 1.0)];
    inputs.extend(perturb_zeros(&mut r, params.store.tensors(), 0.1));
    let coords: Vec<Coord> = inputs
        .iter()
        .enumerate()
        .flat_map(|(input, t)| {
            (0..cfg.forward_coords.min(t.len()))
                .map(|_| Coord {
                    input,
                    index: r.random_range(0..t.len()),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    grad_check_report(
        |g, ids| {
            let bound = Bound::from_nodes(ids[1..].to_vec());
            let out = params.forward_graph(g, &bound, ids[0])?;
            project(g, out.raw_alpha, seed)
        },
        &inputs,
        cfg.eps,
        Some(&coords),
    )
}

fn alpha_loss(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 11);
    let pred = uniform(&mut r, Shape::new(5, 5, 1), 0.0, 1.0);
    let gt = uniform(&mut r, Shape::new(5, 5, 1), 0.0, 1.0);
    grad_check_report(|g, ids| g.charbonnier(ids[0], &gt, 1e-6), &[pred], cfg.eps, None)
}

fn comp_loss(cfg: &SelfCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed, 12);
    let raw = uniform(&mut r, Shape::new(5, 5, 1), 0.0, 1.0);
    let fg = uniform(&mut r, Shape::new(5, 5, 3), 0.0, 1.0);
    let bg = uniform(&mut r, Shape::new(5, 5, 3), 0.0, 1.0);
    let observed = uniform(&mut r, Shape::new(5, 5, 3), 0.0, 1.0);
    let trimap = Trimap::new(Tensor::from_fn(Shape::new(5, 5, 1), |_, _, _| {
        [0.0, 0.5, 0.5, 1.0][r.random_range(0..4)]
    }))?;
    grad_check_report(
        |g, ids| {
            let fused = g.fuse_trimap(ids[0], &trimap)?;
            let comp = g.composite(fused, &fg, &bg)?;
            g.charbonnier(comp, &observed, 1e-6)
        },
        &[raw],
        cfg.eps,
        None,
    )
}

//! Attention-guided pooling and unpooling.
//!
//! An attention block projects an encoder feature map `F` (`H × W × C`) onto
//! a single-channel raw map of the same spatial size. Four independent
//! branches each run
//!
//! ```text
//! 4×4 grouped conv (stride 2, pad 1, 2 groups, C → 2C)
//!   → group norm → ReLU
//!   → 1×1 conv (2C → bottleneck) → ReLU
//!   → 1×1 conv (bottleneck → 1)
//! ```
//!
//! producing `H/2 × W/2 × 1` maps that pixel-shuffle back to `H × W × 1`.
//!
//! The raw map is normalized twice:
//!
//! * encoder map: sigmoid, then softmax inside each 2×2 pooling window, so
//!   pooling with it is a convex combination of the window;
//! * decoder map: sigmoid only, applied after nearest upsampling at the
//!   mirrored decoder stage.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops::{self, ConvGeometry};
use crate::params::{Bound, ConvLayer, NormLayer, ParamStore};
use crate::tensor::Tensor;

/// Number of groups in the branch convolution and its group norm.
pub const BRANCH_GROUPS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionBranch {
    pub conv: ConvLayer,
    pub norm: NormLayer,
    pub point1: ConvLayer,
    pub point2: ConvLayer,
}

impl AttentionBranch {
    fn forward(&self, g: &mut Graph, p: &Bound, f: NodeId) -> Result<NodeId> {
        let h = self.conv.forward(g, p, f)?;
        let h = self.norm.forward(g, p, h)?;
        let h = g.relu(h);
        let h = self.point1.forward(g, p, h)?;
        let h = g.relu(h);
        self.point2.forward(g, p, h)
    }
}

/// Layout of one attention block inside a [`ParamStore`]. The four branches
/// never share parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionBlock {
    pub channels: usize,
    pub bottleneck: usize,
    pub branches: [AttentionBranch; 4],
}

impl AttentionBlock {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        bottleneck: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(BRANCH_GROUPS) || bottleneck == 0 {
            return Err(Error::InvalidArgument(format!(
                "attention block needs even channels and a positive bottleneck, got C={channels}, bottleneck={bottleneck}"
            )));
        }
        let wide = 2 * channels;
        let mut branch = |b: usize| -> Result<AttentionBranch> {
            let prefix = format!("{name}.branch{b}");
            let conv = ConvLayer::init(
                store,
                &format!("{prefix}.conv"),
                ConvGeometry::new(channels, wide, 4)
                    .with_stride(2)
                    .with_padding(1)
                    .with_groups(BRANCH_GROUPS),
                rng,
            )?;
            let norm = NormLayer::init(store, &format!("{prefix}.norm"), wide, BRANCH_GROUPS);
            let point1 = ConvLayer::init(
                store,
                &format!("{prefix}.point1"),
                ConvGeometry::pointwise(wide, bottleneck),
                rng,
            )?;
            let point2 = ConvLayer::init(
                store,
                &format!("{prefix}.point2"),
                ConvGeometry::pointwise(bottleneck, 1),
                rng,
            )?;
            Ok(AttentionBranch {
                conv,
                norm,
                point1,
                point2,
            })
        };
        let branches = [branch(0)?, branch(1)?, branch(2)?, branch(3)?];
        Ok(AttentionBlock {
            channels,
            bottleneck,
            branches,
        })
    }

    /// Raw (unnormalized) attention map for feature node `f`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, f: NodeId) -> Result<NodeId> {
        let shape = g.value(f).shape();
        if !shape.height.is_multiple_of(2) || !shape.width.is_multiple_of(2) {
            return Err(Error::shape(
                "attention_block",
                format!("feature map {shape} has odd spatial dims; pad before pooling"),
            ));
        }
        if shape.channels != self.channels {
            return Err(Error::shape(
                "attention_block",
                format!("block expects {} channels, got {shape}", self.channels),
            ));
        }
        let maps = [
            self.branches[0].forward(g, p, f)?,
            self.branches[1].forward(g, p, f)?,
            self.branches[2].forward(g, p, f)?,
            self.branches[3].forward(g, p, f)?,
        ];
        g.pixel_shuffle(maps)
    }
}

/// A standalone attention block with its own parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlockParams {
    pub block: AttentionBlock,
    pub store: ParamStore,
}

impl AttentionBlockParams {
    /// Bottleneck width defaults to `channels / 2`.
    pub fn init(channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let block = AttentionBlock::init(&mut store, "attention", channels, (channels / 2).max(1), rng)?;
        Ok(AttentionBlockParams { block, store })
    }
}

/// Encoder and decoder attention maps of one pooling stage.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPair {
    pub enc: Tensor,
    pub dec: Tensor,
}

pub fn attention_block_forward(f: &Tensor, params: &AttentionBlockParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = params.store.bind(&mut g, false, &[]);
    let x = g.constant(f.clone());
    let raw = params.block.forward(&mut g, &bound, x)?;
    Ok(g.value(raw).clone())
}

/// Sigmoid followed by a softmax over every 2×2 pooling window.
pub fn normalize_encoder(raw: &Tensor) -> Result<Tensor> {
    ops::window_softmax(&ops::activation(raw, ops::Activation::Sigmoid), 2)
}

pub fn normalize_decoder(raw: &Tensor) -> Tensor {
    ops::activation(raw, ops::Activation::Sigmoid)
}

pub fn attention_pair(raw: &Tensor) -> Result<AttentionPair> {
    Ok(AttentionPair {
        enc: normalize_encoder(raw)?,
        dec: normalize_decoder(raw),
    })
}

/// `sum_pool(F ⊙ enc, 2, 2)`.
pub fn guided_pool(f: &Tensor, enc: &Tensor) -> Result<Tensor> {
    ops::sum_pool(&ops::mul_broadcast(f, enc)?, 2, 2)
}

/// `nearest_upsample(D, 2) ⊙ dec`.
pub fn guided_unpool(d: &Tensor, dec: &Tensor) -> Result<Tensor> {
    if dec.height() != 2 * d.height() || dec.width() != 2 * d.width() {
        return Err(Error::shape(
            "guided_unpool",
            format!("decoder map {} is not twice {}", dec.shape(), d.shape()),
        ));
    }
    ops::mul_broadcast(&ops::nearest_upsample(d, 2)?, dec)
}

/// Graph form of [`normalize_encoder`].
pub fn normalize_encoder_node(g: &mut Graph, raw: NodeId) -> Result<NodeId> {
    let s = g.sigmoid(raw);
    g.window_softmax(s, 2)
}

pub fn normalize_decoder_node(g: &mut Graph, raw: NodeId) -> NodeId {
    g.sigmoid(raw)
}

pub fn guided_pool_node(g: &mut Graph, f: NodeId, enc: NodeId) -> Result<NodeId> {
    let m = g.mul_broadcast(f, enc)?;
    g.sum_pool(m, 2, 2)
}

pub fn guided_unpool_node(g: &mut Graph, d: NodeId, dec: NodeId) -> Result<NodeId> {
    let (dv, mv) = (g.value(d).shape(), g.value(dec).shape());
    if mv.height != 2 * dv.height || mv.width != 2 * dv.width {
        return Err(Error::shape(
            "guided_unpool",
            format!("decoder map {mv} is not twice {dv}"),
        ));
    }
    let up = g.nearest_upsample(d, 2)?;
    g.mul_broadcast(up, dec)
}

/// Plain 2×2 average pooling, the attention-free baseline.
pub fn average_pool_node(g: &mut Graph, f: NodeId) -> Result<NodeId> {
    let s = g.sum_pool(f, 2, 2)?;
    Ok(g.scale(s, 0.25))
}

//! Compact encoder–decoder matting network with attention-guided
//! pooling/unpooling at every stage.
//!
//! Input is `H × W × 4` (RGB plus trimap). Each encoder stage runs
//! `convs_per_stage` 3×3 conv+ReLU layers, then pools by 2. With attention
//! enabled the stage's attention block drives the pooling (encoder map) and
//! the mirrored decoder unpooling (decoder map); without it pooling is a
//! plain 2×2 average and unpooling a plain nearest upsample. Decoder stages
//! concatenate the same-resolution encoder features before their convs.
//! A 1×1 head and a sigmoid give the raw alpha.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    average_pool_node, guided_pool_node, guided_unpool_node, normalize_decoder_node,
    normalize_encoder_node, AttentionBlock, AttentionPair,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops::ConvGeometry;
use crate::params::{Bound, ConvLayer, ParamStore};
use crate::tensor::{AlphaMatte, Image, Tensor};
use crate::trimap::{Trimap, BACKGROUND, FOREGROUND, UNKNOWN};

pub const INPUT_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub stages: usize,
    pub base_channels: usize,
    pub convs_per_stage: usize,
    pub seed: u64,
    /// `false` gives the attention-free ablation baseline.
    pub attention: bool,
    /// Concatenate encoder features into the decoder.
    pub skip_connections: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            stages: 3,
            base_channels: 16,
            convs_per_stage: 2,
            seed: 0,
            attention: true,
            skip_connections: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.convs_per_stage == 0 {
            return Err(Error::InvalidArgument(
                "network needs at least one stage and one conv per stage".into(),
            ));
        }
        if self.base_channels < 2 || !self.base_channels.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "base_channels must be even and at least 2, got {}",
                self.base_channels
            )));
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.stages
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    encoder: Vec<Vec<ConvLayer>>,
    attention: Vec<AttentionBlock>,
    bottleneck: Vec<ConvLayer>,
    decoder: Vec<Vec<ConvLayer>>,
    head: ConvLayer,
}

/// Network parameters together with the layout that indexes them.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub store: ParamStore,
    layout: Layout,
}

/// Nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub raw_alpha: NodeId,
    /// `(encoder map, decoder map)` per stage, shallowest first. Empty for
    /// the attention-free variant.
    pub attention: Vec<(NodeId, NodeId)>,
}

/// Initialize every convolution with zero-mean Gaussian weights of variance
/// `2 / fan_in` and zero biases; deterministic in `cfg.seed`.
pub fn init_params(cfg: &NetConfig) -> Result<NetParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let conv3 = |cin, cout| ConvGeometry::new(cin, cout, 3);

    let mut encoder = Vec::with_capacity(cfg.stages);
    let mut attention = Vec::new();
    let mut cin = INPUT_CHANNELS;
    for s in 0..cfg.stages {
        let c = cfg.stage_channels(s);
        let mut layers = Vec::with_capacity(cfg.convs_per_stage);
        for j in 0..cfg.convs_per_stage {
            layers.push(ConvLayer::init(
                &mut store,
                &format!("enc{s}.conv{j}"),
                conv3(if j == 0 { cin } else { c }, c),
                &mut rng,
            )?);
        }
        encoder.push(layers);
        if cfg.attention {
            attention.push(AttentionBlock::init(
                &mut store,
                &format!("enc{s}.attention"),
                c,
                c / 2,
                &mut rng,
            )?);
        }
        cin = c;
    }

    let cb = cfg.bottleneck_channels();
    let mut bottleneck = Vec::with_capacity(cfg.convs_per_stage);
    for j in 0..cfg.convs_per_stage {
        bottleneck.push(ConvLayer::init(
            &mut store,
            &format!("bottleneck.conv{j}"),
            conv3(if j == 0 { cin } else { cb }, cb),
            &mut rng,
        )?);
    }

    let mut decoder = vec![Vec::new(); cfg.stages];
    let mut cup = cb;
    for s in (0..cfg.stages).rev() {
        let c = cfg.stage_channels(s);
        let first_in = if cfg.skip_connections { cup + c } else { cup };
        for j in 0..cfg.convs_per_stage {
            decoder[s].push(ConvLayer::init(
                &mut store,
                &format!("dec{s}.conv{j}"),
                conv3(if j == 0 { first_in } else { c }, c),
                &mut rng,
            )?);
        }
        cup = c;
    }

    let head = ConvLayer::init(
        &mut store,
        "head",
        ConvGeometry::pointwise(cfg.base_channels, 1),
        &mut rng,
    )?;

    Ok(NetParams {
        config: cfg.clone(),
        store,
        layout: Layout {
            encoder,
            attention,
            bottleneck,
            decoder,
            head,
        },
    })
}

impl NetParams {
    pub fn scalar_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Indices (into the store) of the attention blocks' group-norm affine
    /// parameters.
    pub fn norm_param_indices(&self) -> Vec<usize> {
        self.layout
            .attention
            .iter()
            .flat_map(|b| b.branches.iter())
            .flat_map(|br| [br.norm.gamma.0, br.norm.beta.0])
            .collect()
    }

    /// Record the network on `g`, starting from input node `input`.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, input: NodeId) -> Result<ForwardNodes> {
        let shape = g.value(input).shape();
        if shape.channels != INPUT_CHANNELS {
            return Err(Error::shape(
                "matting forward",
                format!("expected {INPUT_CHANNELS} input channels, got {shape}"),
            ));
        }
        let l = &self.layout;
        let mut h = input;
        let mut skips = Vec::with_capacity(self.config.stages);
        let mut decs = Vec::with_capacity(self.config.stages);
        let mut maps = Vec::new();
        for s in 0..self.config.stages {
            for layer in &l.encoder[s] {
                let c = layer.forward(g, p, h)?;
                h = g.relu(c);
            }
            let sh = g.value(h).shape();
            skips.push((h, sh.height, sh.width));
            let (ph, pw) = (sh.height + sh.height % 2, sh.width + sh.width % 2);
            let padded = if (ph, pw) != (sh.height, sh.width) {
                g.pad_to(h, ph, pw)?
            } else {
                h
            };
            h = if let Some(block) = l.attention.get(s) {
                let raw = block.forward(g, p, padded)?;
                let enc = normalize_encoder_node(g, raw)?;
                let dec = normalize_decoder_node(g, raw);
                maps.push((enc, dec));
                decs.push(dec);
                guided_pool_node(g, padded, enc)?
            } else {
                average_pool_node(g, padded)?
            };
        }
        for layer in &l.bottleneck {
            let c = layer.forward(g, p, h)?;
            h = g.relu(c);
        }
        for s in (0..self.config.stages).rev() {
            let (skip, sh, sw) = skips[s];
            let up = match decs.get(s) {
                Some(&dec) => guided_unpool_node(g, h, dec)?,
                None => g.nearest_upsample(h, 2)?,
            };
            let up_shape = g.value(up).shape();
            let up = if (up_shape.height, up_shape.width) != (sh, sw) {
                g.crop_to(up, sh, sw)?
            } else {
                up
            };
            h = if self.config.skip_connections {
                g.concat(&[up, skip])?
            } else {
                up
            };
            for layer in &l.decoder[s] {
                let c = layer.forward(g, p, h)?;
                h = g.relu(c);
            }
        }
        let logits = l.head.forward(g, p, h)?;
        let raw_alpha = g.sigmoid(logits);
        Ok(ForwardNodes {
            raw_alpha,
            attention: maps,
        })
    }

    /// Raw alpha in (0, 1) for a `H × W × 4` input.
    pub fn forward(&self, input: &Tensor) -> Result<AlphaMatte> {
        let mut g = Graph::new();
        let bound = self.store.bind(&mut g, false, &[]);
        let x = g.constant(input.clone());
        let out = self.forward_graph(&mut g, &bound, x)?;
        Ok(g.value(out.raw_alpha).clone())
    }

    /// Per-stage attention maps for `input` (empty without attention).
    pub fn attention_maps(&self, input: &Tensor) -> Result<Vec<AttentionPair>> {
        let mut g = Graph::new();
        let bound = self.store.bind(&mut g, false, &[]);
        let x = g.constant(input.clone());
        let out = self.forward_graph(&mut g, &bound, x)?;
        Ok(out
            .attention
            .iter()
            .map(|&(e, d)| AttentionPair {
                enc: g.value(e).clone(),
                dec: g.value(d).clone(),
            })
            .collect())
    }

    /// Final matte for an RGB image and trimap: forward, then fuse.
    pub fn predict(&self, image: &Image, trimap: &Trimap) -> Result<AlphaMatte> {
        let input = network_input(image, trimap)?;
        let raw = self.forward(&input)?;
        fuse_with_trimap(&raw, trimap)
    }

    /// [`predict`](Self::predict) with the longer edge of the network input
    /// capped at `max_edge`; the raw alpha is resized back before fusion.
    pub fn predict_capped(&self, image: &Image, trimap: &Trimap, max_edge: usize) -> Result<AlphaMatte> {
        let (small, scale) = crate::data::resize_cap(image, max_edge)?;
        if scale == 1.0 {
            return self.predict(image, trimap);
        }
        let small_trimap = crate::data::resize_trimap(trimap, small.height(), small.width())?;
        let raw = self.forward(&network_input(&small, &small_trimap)?)?;
        let raw = crate::data::resize_bilinear(&raw, image.height(), image.width())?;
        fuse_with_trimap(&raw, trimap)
    }
}

/// Stack an RGB image and its trimap into the 4-channel network input.
pub fn network_input(image: &Image, trimap: &Trimap) -> Result<Tensor> {
    if image.channels() != 3 {
        return Err(Error::shape(
            "network_input",
            format!("expected an RGB image, got {}", image.shape()),
        ));
    }
    Tensor::concat_channels(&[image, trimap.as_tensor()])
}

/// Known trimap pixels take the trimap level; unknown pixels keep the
/// network's prediction.
pub fn fuse_with_trimap(raw_alpha: &AlphaMatte, trimap: &Trimap) -> Result<AlphaMatte> {
    raw_alpha.check_single_channel("fuse_with_trimap")?;
    raw_alpha.check_same_shape(trimap.as_tensor(), "fuse_with_trimap")?;
    let data = raw_alpha
        .data()
        .iter()
        .zip(trimap.as_tensor().data())
        .map(|(&a, &t)| match t {
            t if t == FOREGROUND => FOREGROUND,
            t if t == BACKGROUND => BACKGROUND,
            t if t == UNKNOWN => a,
            _ => unreachable!("trimap levels are validated"),
        })
        .collect();
    Tensor::from_vec(raw_alpha.shape(), data)
}

/// Load parameter tensors into a freshly laid-out network, checking names
/// and shapes.
pub(crate) fn params_from_tensors(
    config: NetConfig,
    tensors: Vec<(String, Tensor)>,
) -> Result<NetParams> {
    let mut params = init_params(&config)?;
    if tensors.len() != params.store.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter arrays, found {}",
            params.store.len(),
            tensors.len()
        )));
    }
    let names = params.store.names().to_vec();
    for ((expected, slot), (name, t)) in names
        .iter()
        .zip(params.store.tensors_mut())
        .zip(tensors)
    {
        if *expected != name || slot.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} {} does not match layout entry {expected} {}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(params)
}

//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards from
//! the loss visits every node after all of its consumers. Only nodes that
//! transitively depend on a gradient-requiring leaf receive gradients.

use crate::error::{Error, Result};
use crate::loss;
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::ops::elementwise::{activation_backward, window_softmax_backward};
use crate::ops::norm::{group_norm_backward, group_norm_forward, GroupNormCache};
use crate::ops::spatial::{mul_broadcast_backward, nearest_upsample_backward, sum_pool_backward};
use crate::ops::{self, Activation};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geo: ConvGeometry,
    },
    GroupNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        cache: GroupNormCache,
    },
    Act {
        x: NodeId,
        kind: Activation,
    },
    WindowSoftmax {
        x: NodeId,
        window: usize,
    },
    SumPool {
        x: NodeId,
        k: usize,
        s: usize,
    },
    Upsample {
        x: NodeId,
        factor: usize,
    },
    Shuffle {
        maps: [NodeId; 4],
    },
    MulBroadcast {
        x: NodeId,
        map: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Pad {
        x: NodeId,
    },
    Crop {
        x: NodeId,
    },
    Sum {
        x: NodeId,
    },
    SumProduct {
        x: NodeId,
        weights: Vec<f64>,
    },
    Charbonnier {
        x: NodeId,
        target: Vec<f64>,
        eps: f64,
    },
    Composite {
        alpha: NodeId,
        fg: Tensor,
        bg: Tensor,
    },
    Fuse {
        raw: NodeId,
        unknown: Vec<bool>,
    },
    WeightedSum {
        terms: Vec<(NodeId, f64)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is wanted (inputs under test, parameters).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `id`. Nodes that
    /// the root does not depend on report all zeros.
    pub fn grad(&self, id: NodeId) -> Result<&[f64]> {
        if !self.backward_done {
            return Err(Error::Graph("gradient requested before backward".into()));
        }
        let node = self
            .nodes
            .get(id.0)
            .ok_or_else(|| Error::Graph(format!("unknown node {}", id.0)))?;
        node.value
            .grad
            .as_deref()
            .ok_or_else(|| Error::Graph(format!("node {} does not require grad", id.0)))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.nodes[id.0].requires_grad)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "node {} was not recorded on this graph",
                id.0
            )));
        }
        Ok(())
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, geo: ConvGeometry) -> Result<NodeId> {
        let value = conv2d_forward(
            self.value(x),
            &geo,
            self.value(w).data(),
            self.value(b).data(),
        )?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Conv { x, w, b, geo }, rg))
    }

    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let (value, cache) = group_norm_forward(
            self.value(x),
            groups,
            eps,
            self.value(gamma).data(),
            self.value(beta).data(),
        )?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                cache,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> NodeId {
        let value = ops::activation(self.value(x), kind);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Act { x, kind }, rg)
    }

    /// Which side of its kink every ReLU input and every smoothed-L1
    /// residual lies on, in tape order. Two evaluations with equal patterns
    /// sit on the same smooth piece of the recorded function.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::Act { kind: Activation::Relu, .. } => {
                    bits.extend(n.value.data().iter().map(|&v| v > 0.0));
                }
                Op::Charbonnier { x, target, .. } => {
                    let xs = self.nodes[x.0].value.data();
                    bits.extend(xs.iter().zip(target).map(|(a, b)| a > b));
                }
                _ => {}
            }
        }
        bits
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn window_softmax(&mut self, x: NodeId, window: usize) -> Result<NodeId> {
        let value = ops::window_softmax(self.value(x), window)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::WindowSoftmax { x, window }, rg))
    }

    pub fn sum_pool(&mut self, x: NodeId, k: usize, s: usize) -> Result<NodeId> {
        let value = ops::sum_pool(self.value(x), k, s)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SumPool { x, k, s }, rg))
    }

    pub fn nearest_upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let value = ops::nearest_upsample(self.value(x), factor)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Upsample { x, factor }, rg))
    }

    pub fn pixel_shuffle(&mut self, maps: [NodeId; 4]) -> Result<NodeId> {
        let value = ops::pixel_shuffle_compose(maps.map(|m| self.value(m)))?;
        let rg = self.any_grad(&maps);
        Ok(self.push(value, Op::Shuffle { maps }, rg))
    }

    pub fn mul_broadcast(&mut self, x: NodeId, map: NodeId) -> Result<NodeId> {
        let value = ops::mul_broadcast(self.value(x), self.value(map))?;
        let rg = self.any_grad(&[x, map]);
        Ok(self.push(value, Op::MulBroadcast { x, map }, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same_shape(vb, "mul")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        va.check_same_shape(vb, "add")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&values)?;
        let rg = self.any_grad(parts);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Zero-extend at the bottom/right edges to `height × width`.
    pub fn pad_to(&mut self, x: NodeId, height: usize, width: usize) -> Result<NodeId> {
        let value = self.value(x).pad_to(height, width)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Pad { x }, rg))
    }

    /// Keep the top-left `height × width` window.
    pub fn crop_to(&mut self, x: NodeId, height: usize, width: usize) -> Result<NodeId> {
        let value = self.value(x).crop(0, 0, height, width)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Crop { x }, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sum { x }, rg)
    }

    /// `Σ x ⊙ weights` for a constant weight field.
    pub fn sum_product(&mut self, x: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        let vx = self.value(x);
        if weights.len() != vx.len() {
            return Err(Error::shape(
                "sum_product",
                format!("{} weights for tensor {}", weights.len(), vx.shape()),
            ));
        }
        let value = Tensor::scalar(vx.data().iter().zip(&weights).map(|(a, b)| a * b).sum());
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SumProduct { x, weights }, rg))
    }

    /// Mean smoothed absolute difference against a constant target.
    pub fn charbonnier(&mut self, x: NodeId, target: &Tensor, eps: f64) -> Result<NodeId> {
        let vx = self.value(x);
        vx.check_same_shape(target, "charbonnier")?;
        let value = Tensor::scalar(loss::charbonnier_mean(vx.data(), target.data(), eps));
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::Charbonnier {
                x,
                target: target.data().to_vec(),
                eps,
            },
            rg,
        ))
    }

    /// `alpha · fg + (1 − alpha) · bg` with constant layers.
    pub fn composite(&mut self, alpha: NodeId, fg: &Tensor, bg: &Tensor) -> Result<NodeId> {
        let value = loss::blend(self.value(alpha), fg, bg)?;
        let rg = self.any_grad(&[alpha]);
        Ok(self.push(
            value,
            Op::Composite {
                alpha,
                fg: fg.clone(),
                bg: bg.clone(),
            },
            rg,
        ))
    }

    /// Replace known trimap pixels by their trimap level.
    pub fn fuse_trimap(&mut self, raw: NodeId, trimap: &crate::trimap::Trimap) -> Result<NodeId> {
        let value = crate::net::fuse_with_trimap(self.value(raw), trimap)?;
        let unknown = trimap
            .as_tensor()
            .data()
            .iter()
            .map(|&v| v == crate::trimap::UNKNOWN)
            .collect();
        let rg = self.any_grad(&[raw]);
        Ok(self.push(value, Op::Fuse { raw, unknown }, rg))
    }

    /// `Σ wᵢ · xᵢ` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let (first, _) = *terms
            .first()
            .ok_or_else(|| Error::Graph("weighted_sum needs at least one term".into()))?;
        let shape = self.value(first).shape();
        let mut data = vec![0.0; shape.len()];
        for &(id, w) in terms {
            let v = self.value(id);
            v.check_same_shape(self.value(first), "weighted_sum")?;
            for (d, &a) in data.iter_mut().zip(v.data()) {
                *d += w * a;
            }
        }
        let ids: Vec<NodeId> = terms.iter().map(|t| t.0).collect();
        let rg = self.any_grad(&ids);
        Ok(self.push(
            Tensor::from_vec(shape, data)?,
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            rg,
        ))
    }

    /// Back-propagate from a scalar `root`, populating the gradient of every
    /// gradient-requiring node.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        self.check(root)?;
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar root, got shape {}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.grad = if node.requires_grad {
                Some(g.unwrap_or_else(|| vec![0.0; node.value.len()]))
            } else {
                None
            };
        }
        self.backward_done = true;
        Ok(())
    }

    fn backprop_node(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |id: NodeId| nodes[id.0].requires_grad;
        let mut acc = |id: NodeId, g: Vec<f64>| accumulate(grads, id, g);
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geo } => {
                let (dx, dw, db) = conv2d_backward(
                    &nodes[x.0].value,
                    geo,
                    nodes[w.0].value.data(),
                    dy,
                    wants(*x),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if wants(*w) {
                    acc(*w, dw);
                }
                if wants(*b) {
                    acc(*b, db);
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                cache,
            } => {
                let (dx, dgamma, dbeta) = group_norm_backward(
                    cache,
                    out.channels(),
                    *groups,
                    nodes[gamma.0].value.data(),
                    dy,
                );
                if wants(*x) {
                    acc(*x, dx);
                }
                if wants(*gamma) {
                    acc(*gamma, dgamma);
                }
                if wants(*beta) {
                    acc(*beta, dbeta);
                }
            }
            Op::Act { x, kind } => acc(*x, activation_backward(*kind, out.data(), dy)),
            Op::WindowSoftmax { x, window } => acc(*x, window_softmax_backward(out, *window, dy)),
            Op::SumPool { x, k, s } => {
                let dy_t = Tensor::from_vec(out.shape(), dy.to_vec()).expect("grad shape");
                acc(*x, sum_pool_backward(nodes[x.0].value.shape(), *k, *s, &dy_t));
            }
            Op::Upsample { x, factor } => {
                let dy_t = Tensor::from_vec(out.shape(), dy.to_vec()).expect("grad shape");
                acc(
                    *x,
                    nearest_upsample_backward(nodes[x.0].value.shape(), *factor, &dy_t),
                );
            }
            Op::Shuffle { maps } => {
                let dy_t = Tensor::from_vec(out.shape(), dy.to_vec()).expect("grad shape");
                let parts = ops::pixel_shuffle_decompose(&dy_t).expect("even dims");
                for (m, part) in maps.iter().zip(parts) {
                    if wants(*m) {
                        acc(*m, part.into_data());
                    }
                }
            }
            Op::MulBroadcast { x, map } => {
                let (dx, dmap) =
                    mul_broadcast_backward(&nodes[x.0].value, &nodes[map.0].value, dy);
                if wants(*x) {
                    acc(*x, dx);
                }
                if wants(*map) {
                    acc(*map, dmap);
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if wants(*a) {
                    acc(*a, dy.iter().zip(vb).map(|(d, v)| d * v).collect());
                }
                if wants(*b) {
                    acc(*b, dy.iter().zip(va).map(|(d, v)| d * v).collect());
                }
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    if wants(*id) {
                        acc(*id, dy.to_vec());
                    }
                }
            }
            Op::Scale { x, factor } => acc(*x, dy.iter().map(|d| d * factor).collect()),
            Op::Concat { parts } => {
                let c_total = out.channels();
                let mut offset = 0;
                for p in parts {
                    let c = nodes[p.0].value.channels();
                    if wants(*p) {
                        let g = dy
                            .chunks_exact(c_total)
                            .flat_map(|px| px[offset..offset + c].iter().copied())
                            .collect();
                        acc(*p, g);
                    }
                    offset += c;
                }
            }
            Op::Pad { x } => {
                let src = nodes[x.0].value.shape();
                let dy_t = Tensor::from_vec(out.shape(), dy.to_vec()).expect("grad shape");
                let g = dy_t
                    .crop(0, 0, src.height, src.width)
                    .expect("pad source fits");
                acc(*x, g.into_data());
            }
            Op::Crop { x } => {
                let src = nodes[x.0].value.shape();
                let dy_t = Tensor::from_vec(out.shape(), dy.to_vec()).expect("grad shape");
                let g = dy_t.pad_to(src.height, src.width).expect("crop source");
                acc(*x, g.into_data());
            }
            Op::Sum { x } => acc(*x, vec![dy[0]; nodes[x.0].value.len()]),
            Op::SumProduct { x, weights } => acc(*x, weights.iter().map(|w| w * dy[0]).collect()),
            Op::Charbonnier { x, target, eps } => {
                let mut g = loss::charbonnier_mean_grad(nodes[x.0].value.data(), target, *eps);
                g.iter_mut().for_each(|v| *v *= dy[0]);
                acc(*x, g);
            }
            Op::Composite { alpha, fg, bg } => {
                let c = fg.channels();
                let g = dy
                    .chunks_exact(c)
                    .zip(fg.data().chunks_exact(c).zip(bg.data().chunks_exact(c)))
                    .map(|(d, (f, b))| (0..c).map(|k| d[k] * (f[k] - b[k])).sum())
                    .collect();
                acc(*alpha, g);
            }
            Op::Fuse { raw, unknown } => {
                let g = dy
                    .iter()
                    .zip(unknown)
                    .map(|(&d, &u)| if u { d } else { 0.0 })
                    .collect();
                acc(*raw, g);
            }
            Op::WeightedSum { terms } => {
                for &(id, w) in terms {
                    if wants(id) {
                        acc(id, dy.iter().map(|d| d * w).collect());
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

//! Named parameter arrays and the layer descriptors that index into them.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::ops::ConvGeometry;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
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

    /// Record every parameter on `graph`. Frozen parameters become
    /// constants; with `trainable == false` all of them do.
    pub fn bind(&self, graph: &mut Graph, trainable: bool, frozen: &[bool]) -> Bound {
        let ids = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if trainable && !frozen.get(i).copied().unwrap_or(false) {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Bound { ids }
    }
}

/// Graph nodes for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    /// Bind parameters to nodes recorded elsewhere, in store order.
    pub fn from_nodes(ids: Vec<NodeId>) -> Self {
        Bound { ids }
    }

    pub fn node(&self, id: ParamId) -> NodeId {
        self.ids[id.0]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Gaussian weights with variance `2 / fan_in`, zero biases.
pub(crate) fn he_weights(rng: &mut impl Rng, geo: &ConvGeometry) -> Tensor {
    let std = (2.0 / geo.fan_in() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::vector((0..geo.weight_len()).map(|_| normal.sample(rng)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvLayer {
    pub geometry: ConvGeometry,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvLayer {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        geometry: ConvGeometry,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        geometry.validate()?;
        let weight = store.add(format!("{name}.weight"), he_weights(rng, &geometry));
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::zeros(Shape::new(1, 1, geometry.out_channels)),
        );
        Ok(ConvLayer {
            geometry,
            weight,
            bias,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<NodeId> {
        g.conv2d(x, p.node(self.weight), p.node(self.bias), self.geometry)
    }
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormLayer {
    pub groups: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormLayer {
    pub fn init(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            Tensor::full(Shape::new(1, 1, channels), 1.0),
        );
        let beta = store.add(
            format!("{name}.beta"),
            Tensor::zeros(Shape::new(1, 1, channels)),
        );
        NormLayer {
            groups,
            gamma,
            beta,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: NodeId) -> Result<NodeId> {
        g.group_norm(
            x,
            p.node(self.gamma),
            p.node(self.beta),
            self.groups,
            GROUP_NORM_EPS,
        )
    }
}

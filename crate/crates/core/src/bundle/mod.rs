//! The neutral weight bundle: named float32 tensors plus an architecture graph.
//!
//! A bundle is what every other module consumes. The on-disk layout is
//! implemented in [`format`]; structural checks live in [`validate`]; shape
//! inference over the graph lives in [`graph`].

pub mod format;
pub mod graph;
pub mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{decode_bundle, encode_bundle, read_bundle, read_bundle_unchecked, write_bundle};
pub use graph::{GraphIndex, Shape, ShapeMap};
pub use validate::validate_bundle;

/// Element type of a tensor. Only float32 exists in v1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
}

/// A named, row-major float32 tensor.
#[derive(Debug, Clone)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Length(format!("tensor {name}: zero-sized dimension in {shape:?}")));
        }
        if expected != data.len() {
            return Err(Error::Length(format!(
                "tensor {name}: shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { name, dtype: DType::F32, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), dtype: DType::F32, shape, data: vec![0.0; n] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn nbytes(&self) -> usize {
        self.data.len() * 4
    }

    /// Keep only `indices` (in the given order) along `axis`.
    pub fn select_axis(&self, axis: usize, indices: &[usize]) -> Result<TensorRecord> {
        if axis >= self.shape.len() {
            return Err(Error::Index(format!(
                "tensor {}: axis {axis} out of range for rank {}",
                self.name,
                self.shape.len()
            )));
        }
        let dim = self.shape[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::Index(format!(
                "tensor {}: index {bad} out of range for axis {axis} of size {dim}",
                self.name
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let start = (o * dim + i) * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        Ok(TensorRecord { name: self.name.clone(), dtype: self.dtype, shape, data })
    }
}

// Bit-level equality: bundles round-trip exactly, including NaN payloads and signed zeros.
impl PartialEq for TensorRecord {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.dtype == other.dtype
            && self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Layer kinds and their hyperparameters.
///
/// Conv kernels are stored `[out_channels, in_channels, k, k]`, linear weights
/// `[out_features, in_features]`, batch-norm vectors are 1-D of length `channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerOp {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default)]
        bias: bool,
    },
    Batchnorm {
        channels: usize,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Relu,
    Maxpool {
        window: usize,
        stride: usize,
    },
    Avgpool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        bias: bool,
    },
    Add,
    /// Identity shortcut that appends zero channels up to `out_channels`.
    ChannelPad {
        out_channels: usize,
    },
}

fn one() -> usize {
    1
}

pub const DEFAULT_BN_EPS: f64 = 1e-5;

fn default_eps() -> f64 {
    DEFAULT_BN_EPS
}

pub const KNOWN_KINDS: &[&str] =
    &["conv2d", "batchnorm", "relu", "maxpool", "avgpool", "flatten", "linear", "add", "channel_pad"];

impl LayerOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerOp::Conv2d { .. } => "conv2d",
            LayerOp::Batchnorm { .. } => "batchnorm",
            LayerOp::Relu => "relu",
            LayerOp::Maxpool { .. } => "maxpool",
            LayerOp::Avgpool { .. } => "avgpool",
            LayerOp::Flatten => "flatten",
            LayerOp::Linear { .. } => "linear",
            LayerOp::Add => "add",
            LayerOp::ChannelPad { .. } => "channel_pad",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerOp::Conv2d { .. })
    }

    /// Weight roles this op requires, with the tensor shape each must have.
    pub fn weight_roles(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerOp::Conv2d { in_channels, out_channels, kernel, bias, .. } => {
                let mut v = vec![("weight", vec![out_channels, in_channels, kernel, kernel])];
                if bias {
                    v.push(("bias", vec![out_channels]));
                }
                v
            }
            LayerOp::Batchnorm { channels, .. } => BN_ROLES.iter().map(|&r| (r, vec![channels])).collect(),
            LayerOp::Linear { in_features, out_features, bias } => {
                let mut v = vec![("weight", vec![out_features, in_features])];
                if bias {
                    v.push(("bias", vec![out_features]));
                }
                v
            }
            _ => Vec::new(),
        }
    }
}

pub const BN_ROLES: [&str; 4] = ["scale", "shift", "running_mean", "running_var"];

/// One node of the architecture graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(flatten)]
    pub op: LayerOp,
    /// Weight role (`weight`, `bias`, `scale`, ...) to tensor name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub weights: BTreeMap<String, String>,
    /// (height, width) of the incoming activation.
    pub in_spatial: [usize; 2],
    /// (height, width) of the produced activation.
    pub out_spatial: [usize; 2],
}

impl LayerSpec {
    pub fn weight_ref(&self, role: &str) -> Option<&str> {
        self.weights.get(role).map(String::as_str)
    }
}

/// Layers, directed edges, entry/exit designations and optional stage labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchGraph {
    /// `[channels, height, width]` of the network input.
    pub input_shape: [usize; 3],
    pub input: String,
    pub output: String,
    pub layers: Vec<LayerSpec>,
    pub edges: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stage_tags: BTreeMap<String, String>,
}

impl ArchGraph {
    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn layer_mut(&mut self, id: &str) -> Option<&mut LayerSpec> {
        self.layers.iter_mut().find(|l| l.id == id)
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.op.is_conv())
    }

    pub fn stage_of(&self, id: &str) -> Option<&str> {
        self.stage_tags.get(id).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub tensors: Vec<TensorRecord>,
    pub graph: ArchGraph,
    pub metadata: BTreeMap<String, String>,
}

impl ModelBundle {
    pub fn new(graph: ArchGraph) -> Self {
        Self { tensors: Vec::new(), graph, metadata: BTreeMap::new() }
    }

    /// Architecture-only bundles carry no tensors; only cost analysis applies.
    pub fn is_arch_only(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut TensorRecord> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Resolve a layer's weight role to its tensor.
    pub fn layer_tensor(&self, layer: &LayerSpec, role: &str) -> Result<&TensorRecord> {
        let name = layer
            .weight_ref(role)
            .ok_or_else(|| Error::Format(format!("layer {} has no '{role}' weight ref", layer.id)))?;
        self.tensor(name)
            .ok_or_else(|| Error::Format(format!("layer {}: tensor {name} not present", layer.id)))
    }

    /// SHA-256 of the canonical encoding, used as plan provenance.
    pub fn sha256(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(encode_bundle(self)))
    }
}

/// One structural problem found by [`validate_bundle`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Offending layer id or tensor name.
    pub subject: String,
    /// Short rule name, e.g. `shape mismatch`.
    pub rule: String,
    pub detail: String,
}

impl Diagnostic {
    pub fn new(subject: impl Into<String>, rule: &str, detail: impl Into<String>) -> Self {
        Self { subject: subject.into(), rule: rule.to_string(), detail: detail.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.subject, self.rule, self.detail)
    }
}

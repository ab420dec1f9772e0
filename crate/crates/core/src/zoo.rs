//! Architecture builders: the CIFAR VGG-16 and ResNet-56/110 graphs, plus small
//! toy networks used throughout the tests.
//!
//! Layer naming: convs are `conv1..convN` numbered in network order, counting the
//! ResNet stem as `conv1`; every conv is followed by a batch-norm with the same
//! number. This matches the conventional "Conv k" numbering used when listing
//! sensitive layers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bundle::graph::Shape;
use crate::bundle::{ArchGraph, LayerOp, LayerSpec, ModelBundle, TensorRecord, BN_ROLES, DEFAULT_BN_EPS};

/// VGG configuration entry: a conv width or a 2×2 max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VggItem {
    Conv(usize),
    Pool,
}

pub const VGG16_CFG: [VggItem; 18] = {
    use VggItem::{Conv as C, Pool as M};
    [C(64), C(64), M, C(128), C(128), M, C(256), C(256), C(256), M, C(512), C(512), C(512), M, C(512), C(512), C(512), M]
};

struct Builder {
    layers: Vec<LayerSpec>,
    edges: Vec<(String, String)>,
    stage_tags: BTreeMap<String, String>,
    shapes: BTreeMap<String, Shape>,
    input_shape: [usize; 3],
    tail: Option<String>,
    stage: Option<String>,
}

impl Builder {
    fn new(input_shape: [usize; 3]) -> Self {
        Self {
            layers: Vec::new(),
            edges: Vec::new(),
            stage_tags: BTreeMap::new(),
            shapes: BTreeMap::new(),
            input_shape,
            tail: None,
            stage: None,
        }
    }

    fn shape_of(&self, from: Option<&str>) -> Shape {
        match from {
            Some(id) => self.shapes[id],
            None => {
                let [c, h, w] = self.input_shape;
                Shape::Map { c, h, w }
            }
        }
    }

    /// Append a layer fed by `from` (the current tail when `None`).
    fn push_from(&mut self, from: Option<String>, id: String, op: LayerOp, out: Shape) -> String {
        let from = from.or_else(|| self.tail.clone());
        let in_shape = self.shape_of(from.as_deref());
        let mut weights = BTreeMap::new();
        for (role, _) in op.weight_roles() {
            weights.insert(role.to_string(), format!("{id}.{role}"));
        }
        if let Some(f) = &from {
            self.edges.push((f.clone(), id.clone()));
        }
        if let Some(s) = &self.stage {
            self.stage_tags.insert(id.clone(), s.clone());
        }
        self.layers.push(LayerSpec { id: id.clone(), op, weights, in_spatial: in_shape.spatial(), out_spatial: out.spatial() });
        self.shapes.insert(id.clone(), out);
        self.tail = Some(id.clone());
        id
    }

    fn current(&self, from: &Option<String>) -> Shape {
        self.shape_of(from.as_deref().or(self.tail.as_deref()))
    }

    fn conv(&mut self, from: Option<String>, id: String, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> String {
        let Shape::Map { c, h, w } = self.current(&from) else { panic!("conv needs a map input") };
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        let op = LayerOp::Conv2d { in_channels: c, out_channels, kernel, stride, padding, bias: false };
        self.push_from(from, id, op, Shape::Map { c: out_channels, h: oh, w: ow })
    }

    fn bn(&mut self, id: String) -> String {
        let s = self.current(&None);
        self.push_from(None, id, LayerOp::Batchnorm { channels: s.channels(), eps: DEFAULT_BN_EPS }, s)
    }

    fn relu(&mut self, from: Option<String>, id: String) -> String {
        let s = self.current(&from);
        self.push_from(from, id, LayerOp::Relu, s)
    }

    fn pool(&mut self, from: Option<String>, id: String, window: usize, stride: usize, max: bool) -> String {
        let Shape::Map { c, h, w } = self.current(&from) else { panic!("pool needs a map input") };
        let out = Shape::Map { c, h: (h - window) / stride + 1, w: (w - window) / stride + 1 };
        let op = if max { LayerOp::Maxpool { window, stride } } else { LayerOp::Avgpool { window, stride } };
        self.push_from(from, id, op, out)
    }

    fn flatten(&mut self) -> String {
        let s = self.current(&None);
        self.push_from(None, "flatten".into(), LayerOp::Flatten, Shape::Flat(s.numel()))
    }

    fn linear(&mut self, id: String, out_features: usize) -> String {
        let n = self.current(&None).numel();
        self.push_from(None, id, LayerOp::Linear { in_features: n, out_features, bias: true }, Shape::Flat(out_features))
    }

    fn add(&mut self, a: String, b: String, id: String) -> String {
        let s = self.shapes[&a];
        self.edges.push((a, id.clone()));
        self.edges.push((b, id.clone()));
        if let Some(st) = &self.stage {
            self.stage_tags.insert(id.clone(), st.clone());
        }
        self.layers.push(LayerSpec {
            id: id.clone(),
            op: LayerOp::Add,
            weights: BTreeMap::new(),
            in_spatial: s.spatial(),
            out_spatial: s.spatial(),
        });
        self.shapes.insert(id.clone(), s);
        self.tail = Some(id.clone());
        id
    }

    fn channel_pad(&mut self, from: String, id: String, out_channels: usize) -> String {
        let Shape::Map { h, w, .. } = self.shapes[&from] else { panic!() };
        self.push_from(Some(from), id, LayerOp::ChannelPad { out_channels }, Shape::Map { c: out_channels, h, w })
    }

    fn finish(self) -> ArchGraph {
        ArchGraph {
            input_shape: self.input_shape,
            input: self.layers.first().map(|l| l.id.clone()).unwrap_or_default(),
            output: self.tail.unwrap_or_default(),
            layers: self.layers,
            edges: self.edges,
            stage_tags: self.stage_tags,
        }
    }
}

/// Plain conv/BN/ReLU stack with max-pools, global flatten and one linear head.
pub fn vgg_like(cfg: &[VggItem], input_shape: [usize; 3], classes: usize) -> ArchGraph {
    let mut b = Builder::new(input_shape);
    let (mut conv_i, mut pool_i) = (0, 0);
    for item in cfg {
        match *item {
            VggItem::Conv(width) => {
                conv_i += 1;
                b.conv(None, format!("conv{conv_i}"), width, 3, 1, 1);
                b.bn(format!("bn{conv_i}"));
                b.relu(None, format!("relu{conv_i}"));
            }
            VggItem::Pool => {
                pool_i += 1;
                b.pool(None, format!("pool{pool_i}"), 2, 2, true);
            }
        }
    }
    b.flatten();
    b.linear("fc".into(), classes);
    b.finish()
}

/// CIFAR VGG-16 with batch-norm and a single 512→10 linear classifier.
pub fn vgg16() -> ArchGraph {
    vgg_like(&VGG16_CFG, [3, 32, 32], 10)
}

/// CIFAR-style ResNet: stem conv, `blocks_per_stage[s]` basic blocks per stage with
/// width `base_width·2^s`, identity shortcuts (stride-2 subsample plus zero channel
/// padding at stage transitions), global average pool, linear head.
///
/// Stage tags are `stage1`, `stage2`, ...; the stem carries no tag.
pub fn resnet_like(blocks_per_stage: &[usize], base_width: usize, input_shape: [usize; 3], classes: usize) -> ArchGraph {
    let mut b = Builder::new(input_shape);
    b.conv(None, "conv1".into(), base_width, 3, 1, 1);
    b.bn("bn1".into());
    let mut x = b.relu(None, "relu1".into());
    let mut conv_i = 1;
    let mut block_i = 0;
    let mut width = base_width;
    for (s, &nblocks) in blocks_per_stage.iter().enumerate() {
        b.stage = Some(format!("stage{}", s + 1));
        let stage_width = base_width << s;
        for blk in 0..nblocks {
            block_i += 1;
            let stride = if s > 0 && blk == 0 { 2 } else { 1 };
            conv_i += 1;
            b.conv(Some(x.clone()), format!("conv{conv_i}"), stage_width, 3, stride, 1);
            b.bn(format!("bn{conv_i}"));
            b.relu(None, format!("relu{conv_i}"));
            conv_i += 1;
            b.conv(None, format!("conv{conv_i}"), stage_width, 3, 1, 1);
            let main = b.bn(format!("bn{conv_i}"));
            let shortcut = if stride != 1 || width != stage_width {
                let p = b.pool(Some(x.clone()), format!("down{block_i}.pool"), 1, stride, false);
                b.channel_pad(p, format!("down{block_i}.pad"), stage_width)
            } else {
                x.clone()
            };
            b.add(main, shortcut, format!("add{block_i}"));
            x = b.relu(None, format!("block{block_i}.relu"));
            width = stage_width;
        }
    }
    b.stage = None;
    let Shape::Map { h, .. } = b.shapes[&x] else { unreachable!() };
    b.pool(Some(x), "gap".into(), h, h, false);
    b.flatten();
    b.linear("fc".into(), classes);
    b.finish()
}

/// ResNet-(6n+2) for CIFAR-10: `n = 9` gives ResNet-56, `n = 18` ResNet-110.
pub fn resnet_cifar(n: usize) -> ArchGraph {
    resnet_like(&[n, n, n], 16, [3, 32, 32], 10)
}

pub fn resnet56() -> ArchGraph {
    resnet_cifar(9)
}

pub fn resnet110() -> ArchGraph {
    resnet_cifar(18)
}

/// Small ResNet on a 3-channel `hw` input, for tests.
pub fn toy_resnet(blocks_per_stage: &[usize], base_width: usize, hw: [usize; 2], classes: usize) -> ArchGraph {
    resnet_like(blocks_per_stage, base_width, [3, hw[0], hw[1]], classes)
}

/// conv(3→4)–BN–ReLU–conv(4→2) on a 3×6×6 input; the second conv is the output.
pub fn toy_chain() -> ArchGraph {
    let mut b = Builder::new([3, 6, 6]);
    b.conv(None, "conv1".into(), 4, 3, 1, 1);
    b.bn("bn1".into());
    b.relu(None, "relu1".into());
    b.conv(None, "conv2".into(), 2, 3, 1, 1);
    b.finish()
}

/// Look up one of the named reference architectures.
pub fn by_name(name: &str) -> Option<ArchGraph> {
    match name {
        "vgg16" => Some(vgg16()),
        "resnet56" => Some(resnet56()),
        "resnet110" => Some(resnet110()),
        _ => None,
    }
}

/// Fill every weight ref of `graph` with seeded random values.
///
/// Conv and linear weights are He-normal; batch-norm scales and variances are
/// drawn from U(0.5, 1.5) so inference-mode BN stays well conditioned.
pub fn init_weights(graph: ArchGraph, seed: u64) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = Normal::new(0.0f32, 0.1).unwrap();
    let mut tensors = Vec::new();
    for layer in &graph.layers {
        for (role, shape) in layer.op.weight_roles() {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = match (&layer.op, role) {
                (LayerOp::Conv2d { .. } | LayerOp::Linear { .. }, "weight") => {
                    let fan_in: usize = shape[1..].iter().product();
                    let he = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).unwrap();
                    (0..n).map(|_| he.sample(&mut rng)).collect()
                }
                (LayerOp::Batchnorm { .. }, r) if r == BN_ROLES[0] || r == BN_ROLES[3] => {
                    (0..n).map(|_| rng.gen_range(0.5f32..1.5)).collect()
                }
                _ => (0..n).map(|_| small.sample(&mut rng)).collect(),
            };
            let name = layer.weight_ref(role).expect("builder declares all roles").to_string();
            tensors.push(TensorRecord::new(name, shape, data).expect("shape matches data"));
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("seed".to_string(), seed.to_string());
    ModelBundle { tensors, graph, metadata }
}

//! Adjacency, topological order and shape inference for an [`ArchGraph`].

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use super::{ArchGraph, Diagnostic, LayerOp, LayerSpec};
use crate::error::{Error, Result};

/// Activation shape flowing along an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Map { c, .. } => c,
            Shape::Flat(n) => n,
        }
    }

    pub fn spatial(&self) -> [usize; 2] {
        match *self {
            Shape::Map { h, w, .. } => [h, w],
            Shape::Flat(_) => [1, 1],
        }
    }

    pub fn numel(&self) -> usize {
        match *self {
            Shape::Map { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Map { c, h, w } => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Map { c, h, w } => write!(f, "[{c}, {h}, {w}]"),
            Shape::Flat(n) => write!(f, "[{n}]"),
        }
    }
}

/// Index-based adjacency over a graph's layers.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    ids: HashMap<String, usize>,
    pub preds: Vec<Vec<usize>>,
    pub succs: Vec<Vec<usize>>,
    /// Layers in a deterministic topological order (ties broken by list position).
    pub topo: Vec<usize>,
    pub input: usize,
    pub output: usize,
}

impl GraphIndex {
    pub fn build(g: &ArchGraph) -> std::result::Result<Self, Vec<Diagnostic>> {
        let mut diags = Vec::new();
        let mut ids = HashMap::new();
        for (i, l) in g.layers.iter().enumerate() {
            if ids.insert(l.id.clone(), i).is_some() {
                diags.push(Diagnostic::new(&l.id, "duplicate layer id", "layer id appears more than once"));
            }
        }
        let n = g.layers.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for (a, b) in &g.edges {
            match (ids.get(a), ids.get(b)) {
                (Some(&ia), Some(&ib)) => {
                    succs[ia].push(ib);
                    preds[ib].push(ia);
                }
                _ => diags.push(Diagnostic::new(
                    format!("{a}->{b}"),
                    "unknown edge endpoint",
                    "edge references a layer that does not exist",
                )),
            }
        }
        let input = ids.get(&g.input).copied();
        let output = ids.get(&g.output).copied();
        if input.is_none() {
            diags.push(Diagnostic::new(&g.input, "unknown input", "designated input layer does not exist"));
        }
        if output.is_none() {
            diags.push(Diagnostic::new(&g.output, "unknown output", "designated output layer does not exist"));
        }

        let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            topo.push(i);
            for &s in &succs[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        if topo.len() != n {
            diags.push(Diagnostic::new("graph", "cycle", "architecture graph is not acyclic"));
        }

        if let Some(inp) = input {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([inp]);
            seen[inp] = true;
            while let Some(i) = queue.pop_front() {
                for &s in &succs[i] {
                    if !seen[s] {
                        seen[s] = true;
                        queue.push_back(s);
                    }
                }
            }
            for (i, l) in g.layers.iter().enumerate() {
                if !seen[i] {
                    diags.push(Diagnostic::new(&l.id, "unreachable", "layer is not reachable from the input"));
                }
            }
        }

        if !diags.is_empty() {
            return Err(diags);
        }
        Ok(Self { ids, preds, succs, topo, input: input.unwrap(), output: output.unwrap() })
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.get(id).copied()
    }
}

/// Inferred input and output shapes per layer (indexed like `ArchGraph::layers`).
#[derive(Debug, Clone)]
pub struct ShapeMap {
    pub inputs: Vec<Option<Shape>>,
    pub outputs: Vec<Option<Shape>>,
}

impl ShapeMap {
    /// Infer shapes, failing with every diagnostic if the graph is inconsistent.
    pub fn infer(g: &ArchGraph) -> Result<(GraphIndex, ShapeMap)> {
        let idx = GraphIndex::build(g).map_err(Error::Invalid)?;
        let (shapes, diags) = infer_shapes(g, &idx);
        if !diags.is_empty() {
            return Err(Error::Invalid(diags));
        }
        Ok((idx, shapes))
    }

    pub fn input_of(&self, i: usize) -> Shape {
        self.inputs[i].expect("shape inferred")
    }

    pub fn output_of(&self, i: usize) -> Shape {
        self.outputs[i].expect("shape inferred")
    }
}

pub(crate) fn infer_shapes(g: &ArchGraph, idx: &GraphIndex) -> (ShapeMap, Vec<Diagnostic>) {
    let n = g.layers.len();
    let mut inputs = vec![None; n];
    let mut outputs: Vec<Option<Shape>> = vec![None; n];
    let mut diags = Vec::new();
    for &i in &idx.topo {
        let layer = &g.layers[i];
        let Some(ins) = gather_inputs(g, idx, i, &outputs, &mut diags) else { continue };
        inputs[i] = Some(ins[0]);
        match output_shape(layer, &ins) {
            Ok(s) => outputs[i] = Some(s),
            Err(d) => diags.push(d),
        }
    }
    (ShapeMap { inputs, outputs }, diags)
}

/// Shapes arriving at layer `i`, or `None` if an upstream problem was already reported.
fn gather_inputs(
    g: &ArchGraph,
    idx: &GraphIndex,
    i: usize,
    outputs: &[Option<Shape>],
    diags: &mut Vec<Diagnostic>,
) -> Option<Vec<Shape>> {
    let layer = &g.layers[i];
    let preds = &idx.preds[i];
    if i == idx.input {
        if !preds.is_empty() {
            diags.push(Diagnostic::new(&layer.id, "bad fan-in", "input layer must have no predecessors"));
            return None;
        }
        let [c, h, w] = g.input_shape;
        return Some(vec![Shape::Map { c, h, w }]);
    }
    let want = if matches!(layer.op, LayerOp::Add) { 2 } else { 1 };
    if preds.len() != want {
        diags.push(Diagnostic::new(
            &layer.id,
            "bad fan-in",
            format!("{} layer needs {want} predecessor(s), has {}", layer.op.kind_name(), preds.len()),
        ));
        return None;
    }
    preds.iter().map(|&p| outputs[p]).collect()
}

fn check_spatial(layer: &LayerSpec, which: &str, declared: [usize; 2], actual: [usize; 2]) -> Result<(), Diagnostic> {
    if declared != actual {
        return Err(Diagnostic::new(
            &layer.id,
            "spatial mismatch",
            format!("declared {which} {}x{} but graph implies {}x{}", declared[0], declared[1], actual[0], actual[1]),
        ));
    }
    Ok(())
}

fn expect_map(layer: &LayerSpec, s: Shape) -> Result<(usize, usize, usize), Diagnostic> {
    match s {
        Shape::Map { c, h, w } => Ok((c, h, w)),
        Shape::Flat(_) => Err(Diagnostic::new(
            &layer.id,
            "rank mismatch",
            format!("{} expects a [C,H,W] input, got {s}", layer.op.kind_name()),
        )),
    }
}

fn window_out(layer: &LayerSpec, size: usize, pad: usize, window: usize, stride: usize) -> Result<usize, Diagnostic> {
    if window == 0 || stride == 0 {
        return Err(Diagnostic::new(&layer.id, "bad hyperparameter", "kernel/window and stride must be >= 1"));
    }
    if size + 2 * pad < window {
        return Err(Diagnostic::new(
            &layer.id,
            "bad hyperparameter",
            format!("window {window} larger than padded input {}", size + 2 * pad),
        ));
    }
    Ok((size + 2 * pad - window) / stride + 1)
}

/// Output shape of `layer` given its (already gathered) input shapes.
pub(crate) fn output_shape(layer: &LayerSpec, ins: &[Shape]) -> Result<Shape, Diagnostic> {
    let x = ins[0];
    check_spatial(layer, "in_spatial", layer.in_spatial, x.spatial())?;
    let out = match layer.op {
        LayerOp::Conv2d { in_channels, out_channels, kernel, stride, padding, .. } => {
            let (c, h, w) = expect_map(layer, x)?;
            if c != in_channels {
                return Err(Diagnostic::new(
                    &layer.id,
                    "channel mismatch",
                    format!("declares {in_channels} input channels, receives {c}"),
                ));
            }
            if out_channels == 0 {
                return Err(Diagnostic::new(&layer.id, "bad hyperparameter", "out_channels must be >= 1"));
            }
            let oh = window_out(layer, h, padding, kernel, stride)?;
            let ow = window_out(layer, w, padding, kernel, stride)?;
            Shape::Map { c: out_channels, h: oh, w: ow }
        }
        LayerOp::Batchnorm { channels, .. } => {
            let (c, _, _) = expect_map(layer, x)?;
            if c != channels {
                return Err(Diagnostic::new(
                    &layer.id,
                    "channel mismatch",
                    format!("declares {channels} channels, receives {c}"),
                ));
            }
            x
        }
        LayerOp::Relu => x,
        LayerOp::Maxpool { window, stride } | LayerOp::Avgpool { window, stride } => {
            let (c, h, w) = expect_map(layer, x)?;
            Shape::Map { c, h: window_out(layer, h, 0, window, stride)?, w: window_out(layer, w, 0, window, stride)? }
        }
        LayerOp::Flatten => {
            let (c, h, w) = expect_map(layer, x)?;
            Shape::Flat(c * h * w)
        }
        LayerOp::Linear { in_features, out_features, .. } => match x {
            Shape::Flat(n) if n == in_features => Shape::Flat(out_features),
            Shape::Flat(n) => {
                return Err(Diagnostic::new(
                    &layer.id,
                    "feature mismatch",
                    format!("declares {in_features} input features, receives {n}"),
                ))
            }
            Shape::Map { .. } => {
                return Err(Diagnostic::new(&layer.id, "rank mismatch", format!("linear expects flat input, got {x}")))
            }
        },
        LayerOp::Add => {
            let y = ins[1];
            if x.channels() != y.channels() {
                return Err(Diagnostic::new(
                    &layer.id,
                    "shortcut channel mismatch",
                    format!("add inputs carry {} vs {} channels", x.channels(), y.channels()),
                ));
            }
            if x != y {
                return Err(Diagnostic::new(
                    &layer.id,
                    "shortcut spatial mismatch",
                    format!("add inputs have shapes {x} vs {y}"),
                ));
            }
            x
        }
        LayerOp::ChannelPad { out_channels } => {
            let (c, h, w) = expect_map(layer, x)?;
            if out_channels < c {
                return Err(Diagnostic::new(
                    &layer.id,
                    "channel mismatch",
                    format!("channel_pad to {out_channels} cannot shrink {c} channels"),
                ));
            }
            Shape::Map { c: out_channels, h, w }
        }
    };
    check_spatial(layer, "out_spatial", layer.out_spatial, out.spatial())?;
    Ok(out)
}

/// Rewrite every declared input width (conv `in_channels`, batch-norm `channels`,
/// linear `in_features`) from the shapes actually flowing into each layer.
///
/// Used after pruning changes some conv `out_channels`.
pub fn refresh_declared_inputs(g: &mut ArchGraph) -> Result<()> {
    let idx = GraphIndex::build(g).map_err(Error::Invalid)?;
    let mut outputs: Vec<Option<Shape>> = vec![None; g.layers.len()];
    for &i in &idx.topo {
        let mut diags = Vec::new();
        let ins = gather_inputs(g, &idx, i, &outputs, &mut diags).ok_or(Error::Invalid(diags))?;
        let layer = &mut g.layers[i];
        let x = ins[0];
        match &mut layer.op {
            LayerOp::Conv2d { in_channels, .. } => *in_channels = x.channels(),
            LayerOp::Batchnorm { channels, .. } => *channels = x.channels(),
            LayerOp::Linear { in_features, .. } => *in_features = x.numel(),
            _ => {}
        }
        outputs[i] = Some(output_shape(layer, &ins).map_err(|d| Error::Invalid(vec![d]))?);
    }
    Ok(())
}

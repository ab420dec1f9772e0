use std::collections::BTreeSet;

use super::{ref_of, TensorEdit};
use crate::bundle::{ArchGraph, GraphIndex, LayerOp, ShapeMap, BN_ROLES};
use crate::error::{Error, Result};

/// A layer whose tensors must follow a conv's output-channel selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Consumer {
    /// All four batch-norm vectors are sliced.
    BatchNorm(String),
    /// Input-channel axis (axis 1) of the kernel is sliced.
    Conv(String),
    /// Input features of a linear layer behind a flatten of `hw = H·W` positions per channel.
    Linear { layer: String, hw: usize },
}

impl Consumer {
    pub fn layer_id(&self) -> &str {
        match self {
            Consumer::BatchNorm(id) | Consumer::Conv(id) | Consumer::Linear { layer: id, .. } => id,
        }
    }

    pub(crate) fn edits(&self, graph: &ArchGraph, keep: &[usize]) -> Result<Vec<TensorEdit>> {
        let layer = graph
            .layer(self.layer_id())
            .ok_or_else(|| Error::Unsupported(format!("consumer {} vanished", self.layer_id())))?;
        Ok(match self {
            Consumer::BatchNorm(_) => BN_ROLES
                .iter()
                .map(|r| Ok(TensorEdit { tensor: ref_of(layer, r)?, axis: 0, keep: keep.to_vec() }))
                .collect::<Result<_>>()?,
            Consumer::Conv(_) => vec![TensorEdit { tensor: ref_of(layer, "weight")?, axis: 1, keep: keep.to_vec() }],
            Consumer::Linear { hw, .. } => {
                let features = keep.iter().flat_map(|&c| c * hw..(c + 1) * hw).collect();
                vec![TensorEdit { tensor: ref_of(layer, "weight")?, axis: 1, keep: features }]
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Blocker {
    Shortcut(String),
    Output,
    Unsupported(String),
}

impl Blocker {
    pub(crate) fn describe(&self) -> String {
        match self {
            Blocker::Shortcut(via) => format!("its feature maps reach residual shortcut {via}"),
            Blocker::Output => "its feature maps reach the model output".into(),
            Blocker::Unsupported(m) => m.clone(),
        }
    }
}

#[derive(Clone, Copy)]
enum Carry {
    /// Activations still indexed by the conv's channels.
    Channels,
    /// Flattened features, `hw` per channel.
    Features { hw: usize },
}

/// Every layer whose tensors depend on conv `conv`'s output channels.
pub(crate) fn propagate(
    graph: &ArchGraph,
    idx: &GraphIndex,
    shapes: &ShapeMap,
    conv: usize,
) -> std::result::Result<Vec<Consumer>, Blocker> {
    if conv == idx.output {
        return Err(Blocker::Output);
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut stack: Vec<(usize, Carry)> = idx.succs[conv].iter().rev().map(|&s| (s, Carry::Channels)).collect();
    while let Some((i, carry)) = stack.pop() {
        if !seen.insert(i) {
            continue;
        }
        let layer = &graph.layers[i];
        let passes = match (carry, &layer.op) {
            (Carry::Channels, LayerOp::Conv2d { .. }) => {
                out.push(Consumer::Conv(layer.id.clone()));
                None
            }
            (Carry::Channels, LayerOp::Batchnorm { .. }) => {
                out.push(Consumer::BatchNorm(layer.id.clone()));
                Some(carry)
            }
            (Carry::Channels, LayerOp::Relu | LayerOp::Maxpool { .. } | LayerOp::Avgpool { .. }) => Some(carry),
            (Carry::Channels, LayerOp::Flatten) => {
                let [h, w] = shapes.input_of(i).spatial();
                Some(Carry::Features { hw: h * w })
            }
            (_, LayerOp::Add | LayerOp::ChannelPad { .. }) => return Err(Blocker::Shortcut(layer.id.clone())),
            (Carry::Features { .. }, LayerOp::Relu) => Some(carry),
            (Carry::Features { hw }, LayerOp::Linear { .. }) => {
                out.push(Consumer::Linear { layer: layer.id.clone(), hw });
                None
            }
            (_, op) => {
                return Err(Blocker::Unsupported(format!(
                    "channel selection cannot pass through {} layer {}",
                    op.kind_name(),
                    layer.id
                )))
            }
        };
        if let Some(next) = passes {
            if i == idx.output {
                return Err(Blocker::Output);
            }
            stack.extend(idx.succs[i].iter().rev().map(|&s| (s, next)));
        }
    }
    Ok(out)
}

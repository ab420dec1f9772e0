use std::collections::{BTreeSet, HashMap};

use super::PrunePlan;
use crate::bundle::graph::refresh_declared_inputs;
use crate::bundle::{validate_bundle, ArchGraph, LayerOp, ModelBundle, TensorRecord};
use crate::error::{Error, Result};

fn check_layers(graph: &ArchGraph, plan: &PrunePlan) -> Result<()> {
    let shape_err = |layer: &str, detail: String| Error::Shape { layer: layer.to_string(), detail };
    for lp in &plan.layers {
        let layer = graph
            .layer(&lp.layer_id)
            .ok_or_else(|| shape_err(&lp.layer_id, "plan names a layer missing from the bundle".into()))?;
        let LayerOp::Conv2d { out_channels, .. } = layer.op else {
            return Err(Error::Type(format!("plan entry {} is not a conv layer", lp.layer_id)));
        };
        if lp.n_original != out_channels {
            return Err(shape_err(&lp.layer_id, format!("plan expects {} filters, layer has {out_channels}", lp.n_original)));
        }
        let increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&lp.keep) || !increasing(&lp.drop) {
            return Err(shape_err(&lp.layer_id, "keep/drop indices must be strictly increasing".into()));
        }
        let keep: BTreeSet<usize> = lp.keep.iter().copied().collect();
        let all: BTreeSet<usize> = keep.iter().chain(&lp.drop).copied().collect();
        if lp.drop.iter().any(|d| keep.contains(d)) || all.len() != lp.n_original || all.iter().any(|&i| i >= lp.n_original) {
            return Err(shape_err(&lp.layer_id, format!("keep ∪ drop is not a partition of 0..{}", lp.n_original)));
        }
        if lp.keep.is_empty() {
            return Err(shape_err(&lp.layer_id, "plan removes every filter".into()));
        }
        if lp.keep.len() != lp.n_f {
            return Err(shape_err(&lp.layer_id, format!("keeps {} filters but n_f = {}", lp.keep.len(), lp.n_f)));
        }
    }
    Ok(())
}

fn resize_pruned_convs(graph: &mut ArchGraph, plan: &PrunePlan) -> Result<()> {
    for lp in plan.layers.iter().filter(|l| !l.drop.is_empty()) {
        if let Some(LayerOp::Conv2d { out_channels, .. }) = graph.layer_mut(&lp.layer_id).map(|l| &mut l.op) {
            *out_channels = lp.keep.len();
        }
    }
    refresh_declared_inputs(graph)
}

/// Apply the plan's layer decisions to an architecture alone (no tensors).
pub fn apply_plan_to_graph(graph: &ArchGraph, plan: &PrunePlan) -> Result<ArchGraph> {
    check_layers(graph, plan)?;
    let mut g = graph.clone();
    resize_pruned_convs(&mut g, plan)?;
    Ok(g)
}

/// Produce the smaller bundle described by `plan`. The input is left untouched.
pub fn apply_plan(bundle: &ModelBundle, plan: &PrunePlan) -> Result<ModelBundle> {
    let sha = bundle.sha256();
    if sha != plan.provenance.bundle_sha256 {
        return Err(Error::Provenance(format!(
            "plan was built for bundle {}, this bundle is {sha}",
            plan.provenance.bundle_sha256
        )));
    }
    check_layers(&bundle.graph, plan)?;

    let mut out = bundle.clone();
    let mut touched = BTreeSet::new();
    for e in &plan.edits {
        if !touched.insert((e.tensor.as_str(), e.axis)) {
            return Err(Error::Index(format!("tensor {} edited twice on axis {}", e.tensor, e.axis)));
        }
        let t = out
            .tensor_mut(&e.tensor)
            .ok_or_else(|| Error::Index(format!("edit targets missing tensor {}", e.tensor)))?;
        let mut unique = e.keep.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != e.keep.len() {
            return Err(Error::Index(format!("edit on {} repeats an index", e.tensor)));
        }
        *t = t.select_axis(e.axis, &e.keep)?;
    }
    resize_pruned_convs(&mut out.graph, plan)?;

    let diags = validate_bundle(&out);
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    Ok(out)
}

fn zero_outside(t: &mut TensorRecord, axis: usize, keep: &[usize]) {
    let dim = t.shape[axis];
    let inner: usize = t.shape[axis + 1..].iter().product();
    let kept: BTreeSet<usize> = keep.iter().copied().collect();
    for (pos, v) in t.data.iter_mut().enumerate() {
        if !kept.contains(&((pos / inner) % dim)) {
            *v = 0.0;
        }
    }
}

/// Copy of `bundle` in which every dropped channel's downstream contribution
/// is zeroed (consumer kernel input slices, linear input features and the
/// batch-norm scale) while all shapes stay intact.
///
/// Evaluating this network must agree with evaluating `apply_plan(bundle, plan)`.
pub fn zero_downstream(bundle: &ModelBundle, plan: &PrunePlan) -> Result<ModelBundle> {
    let mut owner: HashMap<&str, (&LayerOp, &str)> = HashMap::new();
    for layer in &bundle.graph.layers {
        for (role, name) in &layer.weights {
            owner.insert(name.as_str(), (&layer.op, role.as_str()));
        }
    }
    let mut out = bundle.clone();
    for e in &plan.edits {
        let Some(&(op, role)) = owner.get(e.tensor.as_str()) else {
            return Err(Error::Index(format!("edit targets unknown tensor {}", e.tensor)));
        };
        let zero = matches!(
            (op, role, e.axis),
            (LayerOp::Conv2d { .. }, "weight", 1) | (LayerOp::Linear { .. }, "weight", 1) | (LayerOp::Batchnorm { .. }, "scale", 0)
        );
        if zero {
            let t = out.tensor_mut(&e.tensor).ok_or_else(|| Error::Index(format!("missing tensor {}", e.tensor)))?;
            zero_outside(t, e.axis, &e.keep);
        }
    }
    Ok(out)
}

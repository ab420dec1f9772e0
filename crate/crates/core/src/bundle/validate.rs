use std::collections::HashSet;

use super::graph::{infer_shapes, GraphIndex};
use super::{Diagnostic, ModelBundle};

/// Check every structural invariant of a bundle. An empty list means valid.
///
/// Architecture-only bundles (no tensors) skip tensor resolution but must still
/// declare the weight refs their layers need.
pub fn validate_bundle(bundle: &ModelBundle) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let g = &bundle.graph;

    let mut names = HashSet::new();
    for t in &bundle.tensors {
        if !names.insert(t.name.as_str()) {
            diags.push(Diagnostic::new(&t.name, "duplicate tensor name", "tensor name appears more than once"));
        }
        let expected: usize = t.shape.iter().product();
        if t.shape.is_empty() || t.shape.contains(&0) {
            diags.push(Diagnostic::new(&t.name, "bad shape", format!("shape {:?} must be non-empty and positive", t.shape)));
        } else if expected != t.data.len() {
            diags.push(Diagnostic::new(
                &t.name,
                "data length",
                format!("shape {:?} implies {} bytes, buffer holds {}", t.shape, expected * 4, t.data.len() * 4),
            ));
        }
    }

    match GraphIndex::build(g) {
        Err(mut d) => diags.append(&mut d),
        Ok(idx) => {
            let (_, mut d) = infer_shapes(g, &idx);
            diags.append(&mut d);
        }
    }

    for id in g.stage_tags.keys() {
        if g.layer(id).is_none() {
            diags.push(Diagnostic::new(id, "unknown layer", "stage tag refers to a missing layer"));
        }
    }

    let arch_only = bundle.is_arch_only();
    for layer in &g.layers {
        let roles = layer.op.weight_roles();
        for role in layer.weights.keys() {
            if !roles.iter().any(|(r, _)| r == role) {
                diags.push(Diagnostic::new(
                    &layer.id,
                    "unexpected weight ref",
                    format!("{} layer has no '{role}' weight", layer.op.kind_name()),
                ));
            }
        }
        for (role, shape) in roles {
            let Some(name) = layer.weight_ref(role) else {
                diags.push(Diagnostic::new(&layer.id, "missing weight ref", format!("no tensor named for '{role}'")));
                continue;
            };
            if arch_only {
                continue;
            }
            match bundle.tensor(name) {
                None => diags.push(Diagnostic::new(
                    &layer.id,
                    "unresolved tensor",
                    format!("'{role}' refers to missing tensor {name}"),
                )),
                Some(t) if t.shape != shape => diags.push(Diagnostic::new(
                    &layer.id,
                    "shape mismatch",
                    format!("'{role}' tensor {name} has shape {:?}, layer implies {shape:?}", t.shape),
                )),
                Some(_) => {}
            }
        }
    }
    diags
}

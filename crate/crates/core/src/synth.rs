//! Kernels with planted redundancy.
//!
//! Each group gets a prototype direction: orthonormal vectors from Gram-Schmidt
//! on Gaussian draws, and once those run out (`groups > p`) the negations of the
//! earlier ones. A member is `s·(proto + e)` with `s ∈ [0.5, 2)` and `‖e‖ ≤ NOISE`.
//! With `NOISE = 0.01`, members of one group have cosine ≥ 0.96, members of
//! distinct orthogonal groups ≤ 0.021 in absolute value, and antipodal groups
//! ≤ −0.96. Any threshold in roughly (0.03, 0.95) therefore recovers the groups
//! exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bundle::{LayerOp, ModelBundle};
use crate::error::{Error, Result};
use crate::featurize::{unflatten, FilterMatrix};

pub const NOISE: f64 = 0.01;

fn gaussian(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn prototypes(rng: &mut ChaCha8Rng, p: usize, groups: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < groups.min(p) {
        let mut v = gaussian(rng, p);
        for b in &basis {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let extra: Vec<Vec<f64>> = (0..groups - basis.len()).map(|g| basis[g].iter().map(|x| -x).collect()).collect();
    basis.extend(extra);
    basis
}

/// `n` columns of length `p` in `groups` planted groups; returns the columns and
/// each column's group. Every group is non-empty.
pub fn planted_columns(p: usize, n: usize, groups: usize, seed: u64) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
    if groups == 0 || groups > n || groups > 2 * p {
        return Err(Error::Config(format!("cannot plant {groups} groups among {n} filters of length {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let protos = prototypes(&mut rng, p, groups);
    let mut labels: Vec<usize> = (0..groups).chain((groups..n).map(|_| rng.gen_range(0..groups))).collect();
    labels.shuffle(&mut rng);
    let cols = labels
        .iter()
        .map(|&g| {
            let e = gaussian(&mut rng, p);
            let en = dot(&e, &e).sqrt().max(1e-12);
            let r = NOISE * rng.gen::<f64>() / en;
            let s = rng.gen_range(0.5..2.0);
            protos[g].iter().zip(&e).map(|(&a, &b)| (s * (a + r * b)) as f32).collect()
        })
        .collect();
    Ok((cols, labels))
}

/// Replace conv `layer_id`'s kernel with `groups` planted groups.
pub fn plant_layer(bundle: &mut ModelBundle, layer_id: &str, groups: usize, seed: u64) -> Result<Vec<usize>> {
    let layer = bundle
        .graph
        .layer(layer_id)
        .ok_or_else(|| Error::Index(format!("no layer {layer_id}")))?;
    let LayerOp::Conv2d { in_channels, out_channels, kernel, .. } = layer.op else {
        return Err(Error::Type(format!("{layer_id} is not a conv layer")));
    };
    let name = layer.weight_ref("weight").unwrap_or_default().to_string();
    let p = kernel * kernel * in_channels;
    let (cols, labels) = planted_columns(p, out_channels, groups, seed ^ crate::plan::rng::fnv1a64(layer_id.as_bytes()))?;
    let fm = FilterMatrix::from_columns(layer_id, in_channels, kernel, &cols)?;
    let mut t = unflatten(&fm, &(0..out_channels).collect::<Vec<_>>())?;
    t.name = name.clone();
    *bundle
        .tensor_mut(&name)
        .ok_or_else(|| Error::Index(format!("no tensor {name}")))? = t;
    Ok(labels)
}

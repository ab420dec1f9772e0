//! Independent reference implementations used only by tests.
//!
//! Nothing here calls into the library's clustering, cost or execution code;
//! only the bundle data types are shared.
#![allow(dead_code, clippy::too_many_arguments)]

use std::collections::HashMap;

use filtprune::bundle::{LayerOp, ModelBundle};

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        (dot / (nu * nv).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Average-linkage agglomeration by exhaustive search: every round recomputes
/// each cluster pair's mean pairwise similarity from scratch and merges the
/// best pair while it exceeds `tau`. Ties go to the pair with the smallest
/// (min-member, min-member). Returns clusters sorted by smallest member.
pub fn naive_agglomerate(cols: &[Vec<f64>], tau: f64) -> Vec<Vec<usize>> {
    let n = cols.len();
    let sim: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| cosine(&cols[i], &cols[j])).collect()).collect();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += sim[i][j];
                    }
                }
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(s, _, _)| avg > s) {
                    best = Some((avg, a, b));
                }
            }
        }
        match best {
            Some((s, a, b)) if s > tau => {
                let moved = clusters.remove(b);
                clusters[a].extend(moved);
                clusters[a].sort_unstable();
            }
            _ => break,
        }
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// Result of the reference forward pass.
pub struct Trace {
    pub output: Vec<f64>,
    /// Multiply-accumulates performed in conv and linear layers.
    pub macs: u64,
}

type Act = (Vec<usize>, Vec<f64>);

fn tensor(b: &ModelBundle, layer: &str, role: &str) -> Vec<f64> {
    let l = b.graph.layer(layer).unwrap();
    let name = &l.weights[role];
    b.tensors.iter().find(|t| &t.name == name).unwrap().data.iter().map(|&v| v as f64).collect()
}

/// Conv by explicit zero padding followed by a valid correlation.
fn conv(x: &Act, w: &[f64], bias: Option<&[f64]>, out_c: usize, k: usize, stride: usize, pad: usize, macs: &mut u64) -> Act {
    let (c, h, wd) = (x.0[0], x.0[1], x.0[2]);
    let (ph, pw) = (h + 2 * pad, wd + 2 * pad);
    let mut padded = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..wd {
                padded[(ch * ph + y + pad) * pw + xx + pad] = x.1[(ch * h + y) * wd + xx];
            }
        }
    }
    let (oh, ow) = ((ph - k) / stride + 1, (pw - k) / stride + 1);
    let mut out = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for ch in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += w[((o * c + ch) * k + ky) * k + kx] * padded[(ch * ph + oy * stride + ky) * pw + ox * stride + kx];
                            *macs += 1;
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (vec![out_c, oh, ow], out)
}

fn pool(x: &Act, window: usize, stride: usize, max: bool) -> Act {
    let (c, h, w) = (x.0[0], x.0[1], x.0[2]);
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Vec::new();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut vals = Vec::new();
                for dy in 0..window {
                    for dx in 0..window {
                        vals.push(x.1[(ch * h + oy * stride + dy) * w + ox * stride + dx]);
                    }
                }
                out.push(if max {
                    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                });
            }
        }
    }
    (vec![c, oh, ow], out)
}

fn eval(b: &ModelBundle, id: &str, input: &Act, memo: &mut HashMap<String, Act>, macs: &mut u64) -> Act {
    if let Some(a) = memo.get(id) {
        return a.clone();
    }
    let layer = b.graph.layer(id).unwrap().clone();
    let preds: Vec<String> = b.graph.edges.iter().filter(|(_, t)| t == id).map(|(s, _)| s.clone()).collect();
    let ins: Vec<Act> = if preds.is_empty() {
        vec![input.clone()]
    } else {
        preds.iter().map(|p| eval(b, p, input, memo, macs)).collect()
    };
    let x = &ins[0];
    let out = match layer.op {
        LayerOp::Conv2d { out_channels, kernel, stride, padding, bias, .. } => {
            let w = tensor(b, id, "weight");
            let bv = bias.then(|| tensor(b, id, "bias"));
            conv(x, &w, bv.as_deref(), out_channels, kernel, stride, padding, macs)
        }
        LayerOp::Batchnorm { eps, .. } => {
            let (g, s, m, v) = (tensor(b, id, "scale"), tensor(b, id, "shift"), tensor(b, id, "running_mean"), tensor(b, id, "running_var"));
            let hw = x.0[1] * x.0[2];
            let data = x.1.iter().enumerate().map(|(p, &val)| {
                let c = p / hw;
                g[c] * (val - m[c]) / (v[c] + eps).sqrt() + s[c]
            });
            (x.0.clone(), data.collect())
        }
        LayerOp::Relu => (x.0.clone(), x.1.iter().map(|v| v.max(0.0)).collect()),
        LayerOp::Maxpool { window, stride } => pool(x, window, stride, true),
        LayerOp::Avgpool { window, stride } => pool(x, window, stride, false),
        LayerOp::Flatten => (vec![x.1.len()], x.1.clone()),
        LayerOp::Linear { in_features, out_features, bias } => {
            let w = tensor(b, id, "weight");
            let bv = if bias { tensor(b, id, "bias") } else { vec![0.0; out_features] };
            let mut out = Vec::new();
            for o in 0..out_features {
                let mut acc = bv[o];
                for i in 0..in_features {
                    acc += w[o * in_features + i] * x.1[i];
                    *macs += 1;
                }
                out.push(acc);
            }
            (vec![out_features], out)
        }
        LayerOp::Add => (x.0.clone(), x.1.iter().zip(&ins[1].1).map(|(a, b)| a + b).collect()),
        LayerOp::ChannelPad { out_channels } => {
            let hw = x.0[1] * x.0[2];
            let mut d = x.1.clone();
            d.resize(out_channels * hw, 0.0);
            (vec![out_channels, x.0[1], x.0[2]], d)
        }
    };
    memo.insert(id.to_string(), out.clone());
    out
}

/// Evaluate `b` on `input` (shape `graph.input_shape`, row-major).
pub fn forward(b: &ModelBundle, input: &[f64]) -> Trace {
    let mut memo = HashMap::new();
    let mut macs = 0;
    let x = (b.graph.input_shape.to_vec(), input.to_vec());
    let (_, output) = eval(b, &b.graph.output, &x, &mut memo, &mut macs);
    Trace { output, macs }
}

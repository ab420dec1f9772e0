//! Reference forward pass in inference mode.
//!
//! Straightforward loops with f64 accumulation; meant for checking pruned
//! networks against their originals, not for speed. Batch-norm uses running
//! statistics: `y = scale·(x − mean)/sqrt(var + eps) + shift`.

use crate::bundle::{validate_bundle, LayerOp, LayerSpec, ModelBundle, Shape, ShapeMap};
use crate::error::{Error, Result};

/// Dense activation, row-major over `shape` (`[C, H, W]` or `[N]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ActivationTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Length(format!("activation of shape {shape:?} with {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    fn map3(&self) -> (usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2])
    }
}

/// Run `bundle` on one input of shape `graph.input_shape`.
pub fn forward(bundle: &ModelBundle, input: &ActivationTensor) -> Result<ActivationTensor> {
    if bundle.is_arch_only() {
        return Err(Error::Format("bundle carries no tensors".into()));
    }
    let diags = validate_bundle(bundle);
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    let graph = &bundle.graph;
    if input.shape != graph.input_shape.to_vec() {
        return Err(Error::Shape {
            layer: graph.input.clone(),
            detail: format!("input has shape {:?}, graph expects {:?}", input.shape, graph.input_shape),
        });
    }
    let (idx, shapes) = ShapeMap::infer(graph)?;
    let mut acts: Vec<Option<ActivationTensor>> = vec![None; graph.layers.len()];
    for &i in &idx.topo {
        let layer = &graph.layers[i];
        let ins: Vec<&ActivationTensor> = if i == idx.input {
            vec![input]
        } else {
            idx.preds[i].iter().map(|&p| acts[p].as_ref().expect("topological order")).collect()
        };
        let out = eval(bundle, layer, &ins)?;
        let want: Shape = shapes.output_of(i);
        if out.shape != want.dims() {
            return Err(Error::Shape {
                layer: layer.id.clone(),
                detail: format!("produced {:?}, expected {want}", out.shape),
            });
        }
        acts[i] = Some(out);
    }
    Ok(acts[idx.output].take().expect("output evaluated"))
}

fn weights<'a>(bundle: &'a ModelBundle, layer: &LayerSpec, role: &str) -> Result<&'a [f32]> {
    Ok(&bundle.layer_tensor(layer, role)?.data)
}

fn eval(bundle: &ModelBundle, layer: &LayerSpec, ins: &[&ActivationTensor]) -> Result<ActivationTensor> {
    let x = ins[0];
    let shape_err = |detail: String| Error::Shape { layer: layer.id.clone(), detail };
    match layer.op {
        LayerOp::Conv2d { in_channels, out_channels, kernel, stride, padding, bias } => {
            let (c, h, w) = x.map3();
            if c != in_channels {
                return Err(shape_err(format!("{c} input channels, layer declares {in_channels}")));
            }
            let wt = weights(bundle, layer, "weight")?;
            let b = if bias { Some(weights(bundle, layer, "bias")?) } else { None };
            let [oh, ow] = layer.out_spatial;
            // Output columns whose input column ox·stride + kx - padding lies inside the map.
            let cols: Vec<(usize, usize)> = (0..kernel)
                .map(|kx| {
                    let lo = padding.saturating_sub(kx).div_ceil(stride);
                    let hi = if w + padding > kx { ((w + padding - kx - 1) / stride + 1).min(ow) } else { 0 };
                    (lo, hi.max(lo))
                })
                .collect();
            let mut out = vec![0f32; out_channels * oh * ow];
            let mut acc = vec![0f64; oh * ow];
            for o in 0..out_channels {
                acc.fill(b.map_or(0.0, |b| b[o] as f64));
                for ic in 0..c {
                    let plane = &x.data[ic * h * w..(ic + 1) * h * w];
                    for ky in 0..kernel {
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                            let acc_row = &mut acc[oy * ow..(oy + 1) * ow];
                            for (kx, &(lo, hi)) in cols.iter().enumerate() {
                                let wv = wt[((o * c + ic) * kernel + ky) * kernel + kx] as f64;
                                for ox in lo..hi {
                                    acc_row[ox] += wv * row[ox * stride + kx - padding] as f64;
                                }
                            }
                        }
                    }
                }
                for (dst, &a) in out[o * oh * ow..(o + 1) * oh * ow].iter_mut().zip(&acc) {
                    *dst = a as f32;
                }
            }
            ActivationTensor::new(vec![out_channels, oh, ow], out)
        }
        LayerOp::Batchnorm { eps, .. } => {
            let (c, h, w) = x.map3();
            let [scale, shift, mean, var] =
                ["scale", "shift", "running_mean", "running_var"].map(|r| weights(bundle, layer, r));
            let (scale, shift, mean, var) = (scale?, shift?, mean?, var?);
            let hw = h * w;
            let data = x
                .data
                .iter()
                .enumerate()
                .map(|(p, &v)| {
                    let ch = p / hw;
                    let inv = 1.0 / (var[ch] as f64 + eps).sqrt();
                    (scale[ch] as f64 * (v as f64 - mean[ch] as f64) * inv + shift[ch] as f64) as f32
                })
                .collect();
            debug_assert_eq!(x.data.len(), c * hw);
            ActivationTensor::new(x.shape.clone(), data)
        }
        LayerOp::Relu => ActivationTensor::new(x.shape.clone(), x.data.iter().map(|&v| v.max(0.0)).collect()),
        LayerOp::Maxpool { window, stride } | LayerOp::Avgpool { window, stride } => {
            let max = matches!(layer.op, LayerOp::Maxpool { .. });
            let (c, h, w) = x.map3();
            let [oh, ow] = layer.out_spatial;
            let mut out = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let cells = (0..window)
                            .flat_map(|dy| (0..window).map(move |dx| (oy * stride + dy, ox * stride + dx)))
                            .map(|(y, xx)| x.data[(ch * h + y) * w + xx] as f64);
                        let v = if max {
                            cells.fold(f64::NEG_INFINITY, f64::max)
                        } else {
                            cells.sum::<f64>() / (window * window) as f64
                        };
                        out.push(v as f32);
                    }
                }
            }
            ActivationTensor::new(vec![c, oh, ow], out)
        }
        LayerOp::Flatten => ActivationTensor::new(vec![x.data.len()], x.data.clone()),
        LayerOp::Linear { in_features, out_features, bias } => {
            if x.data.len() != in_features {
                return Err(shape_err(format!("{} input features, layer declares {in_features}", x.data.len())));
            }
            let wt = weights(bundle, layer, "weight")?;
            let b = if bias { Some(weights(bundle, layer, "bias")?) } else { None };
            let out = (0..out_features)
                .map(|o| {
                    let row = &wt[o * in_features..(o + 1) * in_features];
                    let dot: f64 = row.iter().zip(&x.data).map(|(&a, &v)| a as f64 * v as f64).sum();
                    (dot + b.map_or(0.0, |b| b[o] as f64)) as f32
                })
                .collect();
            ActivationTensor::new(vec![out_features], out)
        }
        LayerOp::Add => {
            let y = ins[1];
            if x.shape != y.shape {
                return Err(shape_err(format!("adding {:?} and {:?}", x.shape, y.shape)));
            }
            let data = x.data.iter().zip(&y.data).map(|(&a, &b)| (a as f64 + b as f64) as f32).collect();
            ActivationTensor::new(x.shape.clone(), data)
        }
        LayerOp::ChannelPad { out_channels } => {
            let (c, h, w) = x.map3();
            let mut data = x.data.clone();
            data.resize(out_channels * h * w, 0.0);
            debug_assert!(out_channels >= c);
            ActivationTensor::new(vec![out_channels, h, w], data)
        }
    }
}

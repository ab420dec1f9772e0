//! Conv kernels as filter matrices.
//!
//! A conv layer with `n` output channels, `m` input channels and a `k×k` kernel
//! becomes a `p × n` matrix with `p = k²·m`: column `i` is output filter `i`
//! flattened in (input channel, kernel row, kernel column) order. That is the
//! storage order of a `[out, in, k, k]` tensor, so each column is a contiguous
//! slice of the kernel buffer.

use crate::bundle::{LayerOp, ModelBundle, TensorRecord};
use crate::error::{Error, Result};

pub const FLATTEN_ORDER: &str = "in_channel-major, then kernel-row, then kernel-column";

#[derive(Debug, Clone, PartialEq)]
pub struct FilterMatrix {
    pub layer_id: String,
    /// Name of the kernel tensor the columns came from.
    pub tensor_name: String,
    pub in_channels: usize,
    pub kernel: usize,
    /// Column-major storage: column `i` is `data[i*p .. (i+1)*p]`.
    data: Vec<f32>,
    n: usize,
}

impl FilterMatrix {
    /// Build from explicit columns (each of length `k²·in_channels`).
    pub fn from_columns(
        layer_id: impl Into<String>,
        in_channels: usize,
        kernel: usize,
        columns: &[Vec<f32>],
    ) -> Result<Self> {
        let p = kernel * kernel * in_channels;
        if p == 0 {
            return Err(Error::Length("filter length must be positive".into()));
        }
        if let Some(c) = columns.iter().find(|c| c.len() != p) {
            return Err(Error::Length(format!("column of length {} where p = {p}", c.len())));
        }
        let layer_id = layer_id.into();
        Ok(Self {
            tensor_name: format!("{layer_id}.weight"),
            layer_id,
            in_channels,
            kernel,
            data: columns.concat(),
            n: columns.len(),
        })
    }

    /// Row count `p = k²·in_channels`.
    pub fn p(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    /// Column count, the number of filters.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column(&self, i: usize) -> &[f32] {
        let p = self.p();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.p())
    }
}

/// The filter matrix of conv layer `layer_id`.
pub fn kernel_matrix(bundle: &ModelBundle, layer_id: &str) -> Result<FilterMatrix> {
    let layer = bundle
        .graph
        .layer(layer_id)
        .ok_or_else(|| Error::Type(format!("no layer named {layer_id}")))?;
    let LayerOp::Conv2d { in_channels, out_channels, kernel, .. } = layer.op else {
        return Err(Error::Type(format!("layer {layer_id} is {}, not conv2d", layer.op.kind_name())));
    };
    let t = bundle.layer_tensor(layer, "weight")?;
    if t.shape != [out_channels, in_channels, kernel, kernel] {
        return Err(Error::Shape {
            layer: layer_id.to_string(),
            detail: format!("kernel tensor {:?} disagrees with layer declaration", t.shape),
        });
    }
    Ok(FilterMatrix {
        layer_id: layer_id.to_string(),
        tensor_name: t.name.clone(),
        in_channels,
        kernel,
        data: t.data.clone(),
        n: out_channels,
    })
}

/// Rebuild a `[|keep|, in, k, k]` kernel from the columns in `keep`.
pub fn unflatten(matrix: &FilterMatrix, keep: &[usize]) -> Result<TensorRecord> {
    if let Some(&bad) = keep.iter().find(|&&i| i >= matrix.n) {
        return Err(Error::Index(format!("filter {bad} out of range for {} filters", matrix.n)));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Index("keep indices must be strictly increasing".into()));
    }
    if keep.is_empty() {
        return Err(Error::Index("keep must retain at least one filter".into()));
    }
    let mut data = Vec::with_capacity(keep.len() * matrix.p());
    for &i in keep {
        data.extend_from_slice(matrix.column(i));
    }
    TensorRecord::new(
        matrix.tensor_name.clone(),
        vec![keep.len(), matrix.in_channels, matrix.kernel, matrix.kernel],
        data,
    )
}

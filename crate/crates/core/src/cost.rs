//! FLOP and parameter accounting.
//!
//! Convention: one multiply-accumulate is one FLOP, and only conv and linear
//! layers are charged. A conv costs `k²·in·out·v·h` for an `v×h` output map, a
//! linear layer `in·out`. Batch-norm, activations, pooling and biases cost
//! nothing. Tools that count 2 FLOPs per MAC will report twice these numbers.
//!
//! Parameters in [`ParamMode::Weights`] are conv and linear weights plus any
//! biases those layers declare; batch-norm is excluded. [`ParamMode::Full`] also
//! counts each batch-norm's learnable scale and shift (running statistics are
//! buffers, not parameters).

use std::fmt::Write as _;

use serde::Serialize;

use crate::bundle::{ArchGraph, LayerOp, LayerSpec, ShapeMap};
use crate::error::{Error, Result};
use crate::plan::{apply_plan_to_graph, PrunePlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ParamMode {
    #[default]
    Weights,
    Full,
}

/// FLOPs of `layer` given its effective channel counts.
pub fn layer_flops(layer: &LayerSpec, in_channels: usize, out_channels: usize) -> u64 {
    match layer.op {
        LayerOp::Conv2d { kernel, .. } => {
            let [v, h] = layer.out_spatial;
            (kernel * kernel) as u64 * in_channels as u64 * out_channels as u64 * (v * h) as u64
        }
        LayerOp::Linear { .. } => in_channels as u64 * out_channels as u64,
        _ => 0,
    }
}

/// Parameters of a conv or linear layer (weights plus declared bias); 0 otherwise.
pub fn layer_params(layer: &LayerSpec, in_channels: usize, out_channels: usize) -> u64 {
    let (i, o) = (in_channels as u64, out_channels as u64);
    match layer.op {
        LayerOp::Conv2d { kernel, bias, .. } => (kernel * kernel) as u64 * i * o + if bias { o } else { 0 },
        LayerOp::Linear { bias, .. } => i * o + if bias { o } else { 0 },
        _ => 0,
    }
}

fn layer_params_mode(layer: &LayerSpec, in_channels: usize, out_channels: usize, mode: ParamMode) -> u64 {
    match (&layer.op, mode) {
        (LayerOp::Batchnorm { .. }, ParamMode::Full) => 2 * out_channels as u64,
        _ => layer_params(layer, in_channels, out_channels),
    }
}

fn counted(layer: &LayerSpec, mode: ParamMode) -> bool {
    match layer.op {
        LayerOp::Conv2d { .. } | LayerOp::Linear { .. } => true,
        LayerOp::Batchnorm { .. } => mode == ParamMode::Full,
        _ => false,
    }
}

fn pct(before: u64, after: u64) -> f64 {
    if before == 0 {
        0.0
    } else {
        100.0 * (1.0 - after as f64 / before as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub layer_id: String,
    pub kind: String,
    /// Output map height and width.
    pub v: usize,
    pub h: usize,
    pub maps_before: usize,
    pub maps_after: usize,
    pub flops: u64,
    pub params: u64,
    pub flops_after: u64,
    pub params_after: u64,
    pub flop_reduction_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Totals {
    pub flops: u64,
    pub params: u64,
    pub flops_after: u64,
    pub params_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub mode: ParamMode,
    /// False for a single-architecture baseline, where "after" equals "before".
    pub compared: bool,
    pub layers: Vec<LayerCost>,
    pub totals: Totals,
}

/// Effective (in, out) widths of each charged layer, in graph order.
fn widths(graph: &ArchGraph, mode: ParamMode) -> Result<Vec<(usize, usize, usize)>> {
    let (_, shapes) = ShapeMap::infer(graph)?;
    Ok(graph
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| counted(l, mode))
        .map(|(i, _)| {
            let input = shapes.input_of(i);
            let output = shapes.output_of(i);
            let inw = if matches!(graph.layers[i].op, LayerOp::Linear { .. }) { input.numel() } else { input.channels() };
            (i, inw, output.channels())
        })
        .collect())
}

/// Baseline cost of an architecture; the "after" columns equal "before".
pub fn model_cost(graph: &ArchGraph, mode: ParamMode) -> Result<CostReport> {
    Ok(CostReport { compared: false, ..diff_cost(graph, graph, mode)? })
}

/// Per-layer and total reductions from `before` to `after`, which must share
/// topology and differ only in channel counts.
pub fn diff_cost(before: &ArchGraph, after: &ArchGraph, mode: ParamMode) -> Result<CostReport> {
    check_topology(before, after)?;
    let wb = widths(before, mode)?;
    let wa = widths(after, mode)?;
    let mut layers = Vec::with_capacity(wb.len());
    let mut totals = Totals::default();
    for (&(i, in_b, out_b), &(_, in_a, out_a)) in wb.iter().zip(&wa) {
        let (lb, la) = (&before.layers[i], &after.layers[i]);
        let (flops, flops_after) = (layer_flops(lb, in_b, out_b), layer_flops(la, in_a, out_a));
        let (params, params_after) = (layer_params_mode(lb, in_b, out_b, mode), layer_params_mode(la, in_a, out_a, mode));
        totals.flops += flops;
        totals.flops_after += flops_after;
        totals.params += params;
        totals.params_after += params_after;
        layers.push(LayerCost {
            layer_id: lb.id.clone(),
            kind: lb.op.kind_name().to_string(),
            v: lb.out_spatial[0],
            h: lb.out_spatial[1],
            maps_before: out_b,
            maps_after: out_a,
            flops,
            params,
            flops_after,
            params_after,
            flop_reduction_pct: pct(flops, flops_after),
        });
    }
    Ok(CostReport { mode, compared: true, layers, totals })
}

/// Cost reduction a plan would achieve on `graph`.
pub fn diff_cost_plan(graph: &ArchGraph, plan: &PrunePlan, mode: ParamMode) -> Result<CostReport> {
    diff_cost(graph, &apply_plan_to_graph(graph, plan)?, mode)
}

fn check_topology(a: &ArchGraph, b: &ArchGraph) -> Result<()> {
    if a.layers.len() != b.layers.len() {
        return Err(Error::Topology(format!("{} vs {} layers", a.layers.len(), b.layers.len())));
    }
    for (x, y) in a.layers.iter().zip(&b.layers) {
        if x.id != y.id || x.op.kind_name() != y.op.kind_name() {
            return Err(Error::Topology(format!(
                "layer {} ({}) vs {} ({})",
                x.id,
                x.op.kind_name(),
                y.id,
                y.op.kind_name()
            )));
        }
    }
    if a.edges != b.edges || a.input != b.input || a.output != b.output {
        return Err(Error::Topology("edge sets differ".into()));
    }
    Ok(())
}

/// Scientific notation with one decimal, e.g. `1.8E+06`.
pub fn sci(x: u64) -> String {
    if x == 0 {
        return "0.0E+00".into();
    }
    let mut e = (x as f64).log10().floor() as i32;
    let mut m = x as f64 / 10f64.powi(e);
    if (m * 10.0).round() / 10.0 >= 10.0 {
        e += 1;
        m /= 10.0;
    }
    format!("{m:.1}E{e:+03}")
}

impl CostReport {
    pub fn flop_reduction_pct(&self) -> f64 {
        pct(self.totals.flops, self.totals.flops_after)
    }

    pub fn param_reduction_pct(&self) -> f64 {
        pct(self.totals.params, self.totals.params_after)
    }

    pub fn layer(&self, id: &str) -> Option<&LayerCost> {
        self.layers.iter().find(|l| l.layer_id == id)
    }

    /// Aligned table: layer, v×h, maps, FLOP, params, pruned maps, FLOP%.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if !self.compared {
            let _ = writeln!(s, "{:<16} {:>9} {:>6} {:>9} {:>9}", "layer", "v x h", "#maps", "FLOP", "#params");
            for l in &self.layers {
                let vh = format!("{}x{}", l.v, l.h);
                let _ = writeln!(s, "{:<16} {:>9} {:>6} {:>9} {:>9}", l.layer_id, vh, l.maps_before, sci(l.flops), sci(l.params));
            }
            let t = &self.totals;
            let _ = writeln!(s, "total FLOP {} ({}); params {} ({})", sci(t.flops), t.flops, sci(t.params), t.params);
            return s;
        }
        let _ = writeln!(
            s,
            "{:<16} {:>9} {:>6} {:>9} {:>9} {:>6} {:>7}",
            "layer", "v x h", "#maps", "FLOP", "#params", "#maps", "FLOP%"
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:<16} {:>9} {:>6} {:>9} {:>9} {:>6} {:>6.1}%",
                l.layer_id,
                format!("{}x{}", l.v, l.h),
                l.maps_before,
                sci(l.flops),
                sci(l.params),
                l.maps_after,
                l.flop_reduction_pct
            );
        }
        let t = &self.totals;
        let _ = writeln!(
            s,
            "total FLOP {} -> {} ({} -> {}, {:.1}% pruned); params {} -> {} ({} -> {}, {:.1}% pruned)",
            sci(t.flops),
            sci(t.flops_after),
            t.flops,
            t.flops_after,
            self.flop_reduction_pct(),
            sci(t.params),
            sci(t.params_after),
            t.params,
            t.params_after,
            self.param_reduction_pct()
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer_id,v,h,maps_before,maps_after,flops_before,flops_after,params_before,params_after,flop_pct\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{:.1}",
                l.layer_id, l.v, l.h, l.maps_before, l.maps_after, l.flops, l.flops_after, l.params, l.params_after, l.flop_reduction_pct
            );
        }
        let t = &self.totals;
        let _ = writeln!(
            s,
            "total,,,,,{},{},{},{},{:.1}",
            t.flops,
            t.flops_after,
            t.params,
            t.params_after,
            self.flop_reduction_pct()
        );
        s
    }
}

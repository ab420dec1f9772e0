//! Structural pruning plans.
//!
//! Per prunable conv layer, a [`Clustering`] is turned into keep/drop index sets
//! by one of two heuristics:
//!
//! - **A**: keep one representative per cluster (seeded-random member, or the
//!   smallest index with [`RepMode::FirstIndex`]) and drop the rest;
//! - **B**: drop `n − n_f` filters uniformly at random, ignoring membership.
//!
//! Dropping filter `i` of a conv also drops its feature map, so the plan also
//! carries every propagated edit: batch-norm vectors of that conv, the input
//! channel axis of each consuming conv, and the input features of a linear
//! layer reached through `flatten` (feature index `c·H·W + y·W + x`).
//!
//! Convs whose output reaches an `add` or `channel_pad` (a residual shortcut)
//! cannot change width without breaking the shortcut; with `residual_rule` set
//! they are protected, which leaves only the first conv of each residual block
//! prunable. Convs whose maps reach the model output are always protected.

mod apply;
mod propagate;
pub mod rng;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use apply::{apply_plan, apply_plan_to_graph, zero_downstream};
pub use propagate::Consumer;

use crate::bundle::{ArchGraph, LayerOp, ModelBundle, ShapeMap};
use crate::cluster::{agglomerate, Clustering};
use crate::error::{Error, Result};
use crate::featurize::kernel_matrix;
use propagate::{propagate, Blocker};
use rng::SplitMix64;

pub const TOOL_VERSION: &str = concat!("filtprune ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heuristic {
    A,
    B,
}

/// How heuristic A picks the surviving member of each cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepMode {
    #[default]
    Random,
    FirstIndex,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub default_tau: f64,
    #[serde(default)]
    pub per_stage_tau: BTreeMap<String, f64>,
    #[serde(default)]
    pub skip_layers: BTreeSet<String>,
    pub heuristic: Heuristic,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub residual_rule: bool,
    #[serde(default)]
    pub rep: RepMode,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            default_tau: 1.0,
            per_stage_tau: BTreeMap::new(),
            skip_layers: BTreeSet::new(),
            heuristic: Heuristic::A,
            seed: 0,
            residual_rule: true,
            rep: RepMode::Random,
        }
    }
}

impl PruneConfig {
    /// Threshold settings used for the reference networks.
    ///
    /// `vgg16`: one global tau of 0.54. `resnet56` / `resnet110`: per-stage taus
    /// and a skip list of pruning-sensitive convs (numbered as in [`crate::zoo`]).
    pub fn preset(name: &str) -> Option<Self> {
        let stages = |t: [f64; 3]| -> BTreeMap<String, f64> {
            (1..=3).map(|s| format!("stage{s}")).zip(t).collect()
        };
        let skips = |ids: &[usize]| -> BTreeSet<String> { ids.iter().map(|i| format!("conv{i}")).collect() };
        let base = Self::default();
        match name {
            "vgg16" => Some(Self { default_tau: 0.54, ..base }),
            "resnet56" => Some(Self {
                per_stage_tau: stages([0.253, 0.223, 0.20]),
                skip_layers: skips(&[10, 14, 16, 18, 20, 34, 36, 38, 52, 54]),
                ..base
            }),
            "resnet110" => Some(Self {
                per_stage_tau: stages([0.18, 0.12, 0.17]),
                skip_layers: skips(&[1, 2, 38, 78, 108]),
                ..base
            }),
            _ => None,
        }
    }

    pub fn validate(&self, graph: &ArchGraph) -> Result<()> {
        let in_range = |t: f64| (-1.0..=1.0).contains(&t);
        if !in_range(self.default_tau) {
            return Err(Error::Config(format!("tau {} outside [-1, 1]", self.default_tau)));
        }
        for (stage, &t) in &self.per_stage_tau {
            if !in_range(t) {
                return Err(Error::Config(format!("tau {t} for stage {stage} outside [-1, 1]")));
            }
        }
        for id in &self.skip_layers {
            if graph.layer(id).is_none() {
                return Err(Error::Config(format!("skip layer {id} is not in the graph")));
            }
        }
        Ok(())
    }

    /// Threshold for one layer: its stage's tau if configured, else the default.
    pub fn tau_for(&self, graph: &ArchGraph, layer_id: &str) -> f64 {
        graph
            .stage_of(layer_id)
            .and_then(|s| self.per_stage_tau.get(s))
            .copied()
            .unwrap_or(self.default_tau)
    }
}

/// Why a conv layer can or cannot lose output channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerStatus {
    Prunable,
    /// Listed in `skip_layers`.
    Skipped,
    /// Output reaches a residual shortcut; protected when `residual_rule` is set.
    Shortcut { via: String },
    /// Output reaches the model output.
    ReachesOutput,
}

impl LayerStatus {
    pub fn is_protected(&self, config: &PruneConfig) -> bool {
        match self {
            LayerStatus::Prunable => false,
            LayerStatus::Shortcut { .. } => config.residual_rule,
            LayerStatus::Skipped | LayerStatus::ReachesOutput => true,
        }
    }
}

/// Status of every conv layer, in graph order.
pub fn layer_statuses(graph: &ArchGraph, config: &PruneConfig) -> Result<Vec<(String, LayerStatus)>> {
    let (idx, shapes) = ShapeMap::infer(graph)?;
    let mut out = Vec::new();
    for (i, layer) in graph.layers.iter().enumerate() {
        if !layer.op.is_conv() {
            continue;
        }
        let status = if config.skip_layers.contains(&layer.id) {
            LayerStatus::Skipped
        } else {
            match propagate(graph, &idx, &shapes, i) {
                Ok(_) => LayerStatus::Prunable,
                Err(Blocker::Shortcut(via)) => LayerStatus::Shortcut { via },
                Err(Blocker::Output) => LayerStatus::ReachesOutput,
                Err(Blocker::Unsupported(msg)) => return Err(Error::Unsupported(msg)),
            }
        };
        out.push((layer.id.clone(), status));
    }
    Ok(out)
}

/// Conv layers that a plan under `config` expects clusterings for.
pub fn prunable_layers(graph: &ArchGraph, config: &PruneConfig) -> Result<Vec<String>> {
    Ok(layer_statuses(graph, config)?
        .into_iter()
        .filter(|(_, s)| !s.is_protected(config))
        .map(|(id, _)| id)
        .collect())
}

/// Heuristic A: one member per cluster, drawn from the `(seed, layer_id)` stream
/// in cluster-label order. Returned ascending.
pub fn select_representatives(clustering: &Clustering, seed: u64, layer_id: &str, rep: RepMode) -> Vec<usize> {
    let mut rng = SplitMix64::for_layer(seed, layer_id);
    let mut keep: Vec<usize> = clustering
        .clusters()
        .into_iter()
        .map(|members| match rep {
            RepMode::FirstIndex => members[0],
            RepMode::Random => members[rng.below(members.len() as u64) as usize],
        })
        .collect();
    keep.sort_unstable();
    keep
}

/// Heuristic B: `n_original − n_f` indices sampled uniformly without replacement
/// (partial Fisher-Yates on `0..n_original` from the layer stream). Returned ascending.
pub fn random_prune_set(n_original: usize, n_f: usize, seed: u64, layer_id: &str) -> Result<Vec<usize>> {
    if n_f > n_original {
        return Err(Error::Config(format!("n_f {n_f} exceeds filter count {n_original}")));
    }
    let k = n_original - n_f;
    let mut rng = SplitMix64::for_layer(seed, layer_id);
    let mut pool: Vec<usize> = (0..n_original).collect();
    for i in 0..k {
        let j = i + rng.below((n_original - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut drop = pool[..k].to_vec();
    drop.sort_unstable();
    Ok(drop)
}

/// Keep/drop decision for one conv layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer_id: String,
    pub keep: Vec<usize>,
    pub drop: Vec<usize>,
    pub n_original: usize,
    pub n_f: usize,
    /// Threshold the layer was clustered at; absent for protected layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

/// Slice `tensor` to `keep` along `axis`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEdit {
    pub tensor: String,
    pub axis: usize,
    pub keep: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub bundle_sha256: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub config: PruneConfig,
    pub layers: Vec<LayerPlan>,
    pub edits: Vec<TensorEdit>,
    pub provenance: Provenance,
}

impl PrunePlan {
    pub fn layer(&self, id: &str) -> Option<&LayerPlan> {
        self.layers.iter().find(|l| l.layer_id == id)
    }

    pub fn is_identity(&self) -> bool {
        self.layers.iter().all(|l| l.drop.is_empty()) && self.edits.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Cluster one prunable layer at its configured threshold.
pub fn cluster_layer(bundle: &ModelBundle, config: &PruneConfig, layer_id: &str) -> Result<Clustering> {
    let fm = kernel_matrix(bundle, layer_id)?;
    agglomerate(&fm, config.tau_for(&bundle.graph, layer_id))
}

/// Clusterings for every layer [`prunable_layers`] reports, computed in order.
pub fn cluster_layers(bundle: &ModelBundle, config: &PruneConfig) -> Result<BTreeMap<String, Clustering>> {
    prunable_layers(&bundle.graph, config)?
        .into_iter()
        .map(|id| cluster_layer(bundle, config, &id).map(|c| (id, c)))
        .collect()
}

fn complement(n: usize, drop: &[usize]) -> Vec<usize> {
    let dropped: BTreeSet<usize> = drop.iter().copied().collect();
    (0..n).filter(|i| !dropped.contains(i)).collect()
}

/// Turn per-layer clusterings into a plan with all propagated edits.
///
/// `clusterings` must cover exactly the layers [`prunable_layers`] returns.
pub fn build_plan(bundle: &ModelBundle, config: &PruneConfig, clusterings: &BTreeMap<String, Clustering>) -> Result<PrunePlan> {
    let graph = &bundle.graph;
    config.validate(graph)?;
    let (idx, shapes) = ShapeMap::infer(graph)?;
    let statuses: BTreeMap<String, LayerStatus> = layer_statuses(graph, config)?.into_iter().collect();

    for id in clusterings.keys() {
        match statuses.get(id) {
            None => return Err(Error::Config(format!("clustering for {id}, which is not a conv layer"))),
            Some(s) if s.is_protected(config) => {
                return Err(Error::Config(format!("clustering provided for protected layer {id} ({s:?})")))
            }
            Some(_) => {}
        }
    }

    let mut layers = Vec::new();
    let mut edits = Vec::new();
    for (i, layer) in graph.layers.iter().enumerate() {
        let LayerOp::Conv2d { out_channels: n, bias, .. } = layer.op else { continue };
        let status = &statuses[&layer.id];
        let Some(c) = clusterings.get(&layer.id) else {
            if !status.is_protected(config) {
                return Err(Error::Config(format!("no clustering for prunable layer {}", layer.id)));
            }
            layers.push(LayerPlan { layer_id: layer.id.clone(), keep: (0..n).collect(), drop: vec![], n_original: n, n_f: n, tau: None });
            continue;
        };
        if c.n() != n {
            return Err(Error::Config(format!("clustering for {} covers {} filters, layer has {n}", layer.id, c.n())));
        }
        let (keep, drop) = match config.heuristic {
            Heuristic::A => {
                let keep = select_representatives(c, config.seed, &layer.id, config.rep);
                let drop = complement(n, &keep);
                (keep, drop)
            }
            Heuristic::B => {
                let drop = random_prune_set(n, c.n_f, config.seed, &layer.id)?;
                (complement(n, &drop), drop)
            }
        };

        if !drop.is_empty() {
            let consumers = propagate(graph, &idx, &shapes, i).map_err(|b| {
                Error::Unsupported(format!("cannot remove filters of {}: {}", layer.id, b.describe()))
            })?;
            edits.push(TensorEdit { tensor: ref_of(layer, "weight")?, axis: 0, keep: keep.clone() });
            if bias {
                edits.push(TensorEdit { tensor: ref_of(layer, "bias")?, axis: 0, keep: keep.clone() });
            }
            for consumer in consumers {
                edits.extend(consumer.edits(graph, &keep)?);
            }
        }
        layers.push(LayerPlan { layer_id: layer.id.clone(), keep, drop, n_original: n, n_f: c.n_f, tau: Some(c.tau) });
    }

    Ok(PrunePlan {
        config: config.clone(),
        layers,
        edits,
        provenance: Provenance { bundle_sha256: bundle.sha256(), tool_version: TOOL_VERSION.to_string() },
    })
}

pub(crate) fn ref_of(layer: &crate::bundle::LayerSpec, role: &str) -> Result<String> {
    layer
        .weight_ref(role)
        .map(str::to_string)
        .ok_or_else(|| Error::Format(format!("layer {} has no '{role}' weight ref", layer.id)))
}

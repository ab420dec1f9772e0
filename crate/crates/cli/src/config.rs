use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use filtprune::plan::{Heuristic, PruneConfig, RepMode};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeuristicArg {
    A,
    B,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RepArg {
    Random,
    FirstIndex,
}

/// Flags that build a [`PruneConfig`]. Precedence: defaults, then `--preset` or
/// `--config`, then individual flags.
#[derive(Debug, Clone, Default, Args)]
pub struct PruneFlags {
    /// Start from a reference setting: vgg16, resnet56 or resnet110.
    #[arg(long)]
    pub preset: Option<String>,
    /// Threshold for layers without a stage-specific one.
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Per-stage threshold, STAGE=VALUE (repeatable).
    #[arg(long = "stage-tau", value_name = "STAGE=VALUE")]
    pub stage_tau: Vec<String>,
    /// Never prune this layer (repeatable).
    #[arg(long)]
    pub skip: Vec<String>,
    /// A keeps one filter per cluster; B drops as many filters at random.
    #[arg(long, value_enum, ignore_case = true)]
    pub heuristic: Option<HeuristicArg>,
    /// Which member represents a cluster under heuristic A.
    #[arg(long, value_enum)]
    pub rep: Option<RepArg>,
    /// Allow pruning convs that feed residual additions (fails if such a conv loses filters).
    #[arg(long)]
    pub no_residual_rule: bool,
}

/// A problem with the user's configuration; reported with the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl PruneFlags {
    pub fn resolve(&self, file: Option<&Path>, seed: Option<u64>) -> Result<PruneConfig> {
        let mut cfg = match (&self.preset, file) {
            (Some(_), Some(_)) => return Err(usage("--preset and --config are mutually exclusive")),
            (Some(p), None) => PruneConfig::preset(p).ok_or_else(|| usage(format!("unknown preset {p}")))?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
            }
            (None, None) => PruneConfig::default(),
        };
        if let Some(t) = self.tau {
            cfg.default_tau = t;
        }
        for s in &self.stage_tau {
            let Some((stage, v)) = s.split_once('=') else { bail!(usage(format!("--stage-tau {s}: expected STAGE=VALUE"))) };
            let v: f64 = v.parse().map_err(|_| usage(format!("--stage-tau {s}: {v} is not a number")))?;
            cfg.per_stage_tau.insert(stage.to_string(), v);
        }
        cfg.skip_layers.extend(self.skip.iter().cloned());
        if let Some(h) = self.heuristic {
            cfg.heuristic = match h {
                HeuristicArg::A => Heuristic::A,
                HeuristicArg::B => Heuristic::B,
            };
        }
        if let Some(r) = self.rep {
            cfg.rep = match r {
                RepArg::Random => RepMode::Random,
                RepArg::FirstIndex => RepMode::FirstIndex,
            };
        }
        if self.no_residual_rule {
            cfg.residual_rule = false;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

/// Parse `start:stop:step` into an inclusive grid, computed by integer steps.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("grid {spec}: expected start:stop:step")))?;
    let [start, stop, step] = parts[..] else { return Err(usage(format!("grid {spec}: expected start:stop:step"))) };
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start {
        return Err(usage(format!("grid {spec}: need finite values, step > 0 and stop >= start")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    // rounding to 12 places keeps 0.1 + 3·0.01 printing as 0.13
    Ok((0..=count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#[path = "../../core/tests/fixtures/mod.rs"]
mod fixtures;
#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use filtprune::bundle::graph::refresh_declared_inputs;
use filtprune::bundle::{encode_bundle, read_bundle, validate_bundle, write_bundle, ArchGraph, LayerOp};
use filtprune::cluster::{agglomerate, cosine_sim, cut, dendrogram, similarity_matrix, sweep, Clustering};
use filtprune::cost::{diff_cost, diff_cost_plan, model_cost, CostReport, ParamMode};
use filtprune::featurize::FilterMatrix;
use filtprune::plan::{apply_plan, build_plan, cluster_layers, layer_statuses, zero_downstream, Heuristic, PruneConfig};
use filtprune::refexec::forward;
use filtprune::synth::{plant_layer, planted_columns};
use filtprune::zoo;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relative tolerance on baseline FLOP and parameter totals.
const BASELINE_REL: f64 = 0.03;
/// Absolute tolerance (percentage points) on per-layer FLOP reductions.
const LAYER_POINTS: f64 = 0.5;
/// Relative tolerance on pruned totals.
const PRUNED_REL: f64 = 0.02;
/// Absolute tolerance (percentage points) on pruned total reductions.
const PRUNED_POINTS: f64 = 1.0;
const BASELINE_BUDGET: Duration = Duration::from_secs(1);
const NOOP_ABS: f64 = 1e-5;
const CLUSTER_BUDGET: Duration = Duration::from_secs(1);

/// Retained map counts per VGG-16 conv at tau 0.54.
const VGG_KEPT: [usize; 13] = [32, 58, 125, 128, 256, 254, 252, 299, 164, 121, 59, 104, 129];
const VGG_FLOP_PCT: [f64; 13] = [50.0, 54.7, 11.5, 2.3, 0.0, 0.8, 2.3, 42.5, 81.3, 92.4, 97.3, 97.7, 94.9];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_rel(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs()
}

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn pruned_vgg() -> ArchGraph {
    let mut g = zoo::vgg16();
    for (i, &k) in VGG_KEPT.iter().enumerate() {
        if let Some(LayerOp::Conv2d { out_channels, .. }) = g.layer_mut(&format!("conv{}", i + 1)).map(|l| &mut l.op) {
            *out_channels = k;
        }
    }
    refresh_declared_inputs(&mut g).expect("pruned VGG is consistent");
    g
}

fn baseline_costs() -> Outcome {
    let targets = [("vgg16", 3.13e8, 1.47e7), ("resnet56", 1.25e8, 8.5e5), ("resnet110", 2.53e8, 1.72e6)];
    let start = Instant::now();
    let mut reports = Vec::new();
    for (name, _, _) in targets {
        let b = read_bundle(models_dir().join(format!("{name}.nwb"))).map_err(|e| format!("{name}: {e}"))?;
        reports.push(model_cost(&b.graph, ParamMode::Weights).map_err(|e| e.to_string())?);
    }
    let elapsed = start.elapsed();
    let mut detail = Vec::new();
    for ((name, flops, params), r) in targets.iter().zip(&reports) {
        let (f, p) = (r.totals.flops as f64, r.totals.params as f64);
        ensure(within_rel(f, *flops, BASELINE_REL), || format!("{name} FLOP {f:.3e} vs {flops:.2e}"))?;
        ensure(within_rel(p, *params, BASELINE_REL), || format!("{name} params {p:.3e} vs {params:.2e}"))?;
        detail.push(format!("{name} {f:.3e}/{p:.3e}"));
    }
    ensure(elapsed < BASELINE_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{} in {elapsed:.1?}", detail.join(", ")))
}

fn per_layer_reduction() -> Outcome {
    let r = diff_cost(&zoo::vgg16(), &pruned_vgg(), ParamMode::Weights).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (i, want) in VGG_FLOP_PCT.iter().enumerate() {
        let id = format!("conv{}", i + 1);
        let got = r.layer(&id).ok_or(format!("{id} missing"))?.flop_reduction_pct;
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= LAYER_POINTS, || format!("{id}: {got:.2}% vs {want}%"))?;
    }
    Ok(format!("13 layers, worst deviation {worst:.2} points"))
}

fn check_pruned_totals(r: &CostReport) -> Result<String, String> {
    let (f, p) = (r.totals.flops_after as f64, r.totals.params_after as f64);
    let (fp, pp) = (r.flop_reduction_pct(), r.param_reduction_pct());
    ensure(within_rel(f, 1.86e8, PRUNED_REL), || format!("FLOP {f:.3e}"))?;
    ensure((fp - 40.5).abs() <= PRUNED_POINTS, || format!("FLOP reduction {fp:.2}%"))?;
    ensure(within_rel(p, 3.23e6, PRUNED_REL), || format!("params {p:.3e}"))?;
    ensure((pp - 78.1).abs() <= PRUNED_POINTS, || format!("param reduction {pp:.2}%"))?;
    Ok(format!("FLOP {f:.3e} ({fp:.1}%), params {p:.3e} ({pp:.1}%)"))
}

fn pruned_totals() -> Outcome {
    let direct = check_pruned_totals(&diff_cost(&zoo::vgg16(), &pruned_vgg(), ParamMode::Weights).map_err(|e| e.to_string())?)?;
    // the same widths reached through clustering at tau 0.54 on planted weights
    let mut b = zoo::init_weights(zoo::vgg16(), 54);
    for (i, &k) in VGG_KEPT.iter().enumerate() {
        plant_layer(&mut b, &format!("conv{}", i + 1), k, 54).map_err(|e| e.to_string())?;
    }
    let cfg = PruneConfig::preset("vgg16").expect("preset");
    let plan = build_plan(&b, &cfg, &cluster_layers(&b, &cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let piped = check_pruned_totals(&diff_cost_plan(&b.graph, &plan, ParamMode::Weights).map_err(|e| e.to_string())?)?;
    ensure(direct == piped, || format!("pipeline gave {piped}"))?;
    Ok(format!("{direct}; planted pipeline agrees"))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (FilterMatrix, Vec<Vec<f64>>) {
    let cols: Vec<Vec<f32>> = (0..n).map(|_| (0..p).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
    let f64s = cols.iter().map(|c| c.iter().map(|&v| v as f64).collect()).collect();
    (FilterMatrix::from_columns("l", p, 1, &cols).expect("columns"), f64s)
}

fn clustering_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let taus = [-0.5, 0.0, 0.3, 0.6, 0.9, 1.0];
    for inst in 0..100 {
        let n = rng.gen_range(1..=64);
        let p = rng.gen_range(2..=16);
        let (fm, cols) = random_matrix(&mut rng, n, p);
        for tau in taus {
            let got = agglomerate(&fm, tau).map_err(|e| e.to_string())?.clusters();
            ensure(got == oracle::naive_agglomerate(&cols, tau), || format!("instance {inst} (n={n}, p={p}) tau {tau}"))?;
        }
    }
    Ok(format!("100 instances x {} thresholds identical", taus.len()))
}

fn planted_recovery() -> Outcome {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups = 2 + (seed as usize % 15);
        let p = 9 * rng.gen_range(2..=32);
        let n = rng.gen_range(groups..=128);
        let (cols, labels) = planted_columns(p, n, groups, seed).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in i + 1..n {
                let s = cosine_sim(&cols[i], &cols[j]).map_err(|e| e.to_string())?;
                let ok = if labels[i] == labels[j] { s >= 0.95 } else { s <= 0.3 };
                ensure(ok, || format!("seed {seed}: construction bound violated ({s})"))?;
            }
        }
        let fm = FilterMatrix::from_columns("l", p / 9, 3, &cols).map_err(|e| e.to_string())?;
        let got = sweep(&fm, &[0.6]).map_err(|e| e.to_string())?[0].1;
        ensure(got == groups, || format!("seed {seed}: n_f {got}, planted {groups}"))?;
    }
    Ok("20/20 constructions recovered exactly".into())
}

fn refines(fine: &Clustering, coarse: &Clustering) -> bool {
    fine.clusters().iter().all(|c| c.iter().all(|&i| coarse.assignments[i] == coarse.assignments[c[0]]))
}

fn monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.05).collect();
    for m in 0..50 {
        let n = rng.gen_range(2..=64);
        let p = rng.gen_range(1..=24);
        let (fm, _) = random_matrix(&mut rng, n, p);
        let d = dendrogram::build(&similarity_matrix(&fm), None);
        let parts: Vec<Clustering> = grid.iter().map(|&t| cut(&d, t)).collect();
        for (w, t) in parts.windows(2).zip(&grid[1..]) {
            ensure(w[1].n_f >= w[0].n_f, || format!("matrix {m}: n_f drops at tau {t}"))?;
            ensure(refines(&w[1], &w[0]), || format!("matrix {m}: partition at tau {t} does not refine the previous"))?;
        }
        let swept = sweep(&fm, &grid).map_err(|e| e.to_string())?;
        ensure(swept.iter().zip(&parts).all(|((_, nf), c)| *nf == c.n_f), || format!("matrix {m}: sweep disagrees with cut"))?;
    }
    Ok(format!("50 matrices over {} thresholds", grid.len()))
}

fn plan_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut dropped = 0;
    for draw in 0..100 {
        let graph = fixtures::random_arch(&mut rng);
        let cfg = fixtures::random_config(&mut rng, &graph);
        let b = fixtures::weights(&mut rng, graph, &cfg);
        let err = |e: filtprune::Error| format!("draw {draw}: {e}");
        let clusterings = cluster_layers(&b, &cfg).map_err(err)?;
        let plan = build_plan(&b, &cfg, &clusterings).map_err(err)?;
        let out = apply_plan(&b, &plan).map_err(err)?;
        let diags = validate_bundle(&out);
        ensure(diags.is_empty(), || format!("draw {draw}: {diags:?}"))?;
        for (id, status) in layer_statuses(&b.graph, &cfg).map_err(err)? {
            let lp = plan.layer(&id).ok_or(format!("draw {draw}: {id} missing"))?;
            if status.is_protected(&cfg) {
                ensure(lp.drop.is_empty(), || format!("draw {draw}: protected {id} pruned"))?;
                continue;
            }
            let c = &clusterings[&id];
            ensure(lp.drop.len() == lp.n_original - c.n_f, || format!("draw {draw}: count law on {id}"))?;
            if cfg.heuristic == Heuristic::A {
                let one_each = c.clusters().iter().all(|m| m.iter().filter(|i| lp.keep.contains(i)).count() == 1);
                ensure(one_each, || format!("draw {draw}: {id} not one per cluster"))?;
            }
            dropped += lp.drop.len();
        }
    }
    Ok(format!("100 draws, {dropped} filters dropped in total"))
}

fn functional_noop() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut nets: Vec<(String, ArchGraph, PruneConfig)> = (0..6)
        .map(|i| {
            let g = fixtures::random_arch(&mut rng);
            let cfg = fixtures::random_config(&mut rng, &g);
            (format!("toy{i}"), g, cfg)
        })
        .collect();
    nets.push(("desk-vgg".into(), fixtures::desk_vgg(), PruneConfig { default_tau: 0.5, heuristic: Heuristic::B, seed: 3, ..PruneConfig::default() }));
    let mut worst = 0.0f64;
    for (name, g, cfg) in nets {
        let b = fixtures::weights(&mut rng, g, &cfg);
        let err = |e: filtprune::Error| format!("{name}: {e}");
        let plan = build_plan(&b, &cfg, &cluster_layers(&b, &cfg).map_err(err)?).map_err(err)?;
        let pruned = apply_plan(&b, &plan).map_err(err)?;
        let zeroed = zero_downstream(&b, &plan).map_err(err)?;
        for _ in 0..25 {
            let x = fixtures::random_input(&mut rng, &b.graph);
            let (y0, y1) = (forward(&zeroed, &x).map_err(err)?, forward(&pruned, &x).map_err(err)?);
            for (a, c) in y0.data.iter().zip(&y1.data) {
                worst = worst.max((*a as f64 - *c as f64).abs());
            }
        }
        ensure(worst <= NOOP_ABS, || format!("{name}: max |diff| {worst:e}"))?;
    }
    Ok(format!("7 networks x 25 inputs, max |diff| {worst:e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut b = zoo::init_weights(zoo::toy_resnet(&[2, 2], 6, [8, 8], 4), 9);
    for (id, k) in [("conv2", 3), ("conv4", 4), ("conv6", 2), ("conv8", 5)] {
        plant_layer(&mut b, id, k, 9).map_err(|e| e.to_string())?;
    }
    let src = d.join("src.nwb");
    write_bundle(&b, &src).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&src).map_err(|e| e.to_string())?;
    let back = read_bundle(&src).map_err(|e| e.to_string())?;
    ensure(back == b && encode_bundle(&back) == bytes, || "bundle round trip not bit-exact".into())?;

    let mut artifacts = Vec::new();
    for (run, heuristic) in [(0, "A"), (1, "A"), (2, "B"), (3, "B")] {
        let (pb, pp) = (d.join(format!("out{run}.nwb")), d.join(format!("out{run}.json")));
        let status = Command::new(env!("CARGO_BIN_EXE_filtprune"))
            .args(["--seed", "7", "--jobs", "2", "prune"])
            .arg(&src)
            .arg("--out-bundle")
            .arg(&pb)
            .arg("--out-plan")
            .arg(&pp)
            .args(["--tau", "0.6", "--heuristic", heuristic])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        artifacts.push((std::fs::read(&pb).map_err(|e| e.to_string())?, std::fs::read(&pp).map_err(|e| e.to_string())?));
    }
    ensure(artifacts[0] == artifacts[1], || "heuristic A runs differ".into())?;
    ensure(artifacts[2] == artifacts[3], || "heuristic B runs differ".into())?;
    Ok("bundle round trip bit-exact; repeated prune runs byte-identical (A and B)".into())
}

fn performance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cols: Vec<Vec<f32>> = (0..512).map(|_| (0..4608).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
    let fm = FilterMatrix::from_columns("conv13", 512, 3, &cols).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let c = agglomerate(&fm, 0.54).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(elapsed < CLUSTER_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("512 x 4608 clustered in {elapsed:.1?} (n_f = {})", c.n_f))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("baseline cost", baseline_costs),
        ("per-layer FLOP reduction", per_layer_reduction),
        ("pruned VGG-16 totals", pruned_totals),
        ("clustering matches naive reference", clustering_oracle),
        ("planted redundancy recovered", planted_recovery),
        ("n_f monotone and nested in tau", monotonicity),
        ("plan soundness", plan_soundness),
        ("functional no-op", functional_noop),
        ("determinism", determinism),
        ("clustering performance", performance),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use filtprune::bundle::{read_bundle, read_bundle_unchecked, validate_bundle, write_bundle, ModelBundle, ShapeMap};
use filtprune::cluster::{sweep, Clustering};
use filtprune::cost::{diff_cost, diff_cost_plan, model_cost, CostReport, ParamMode};
use filtprune::featurize::kernel_matrix;
use filtprune::plan::{apply_plan, build_plan, cluster_layer, prunable_layers, zero_downstream, PruneConfig, PrunePlan};
use filtprune::refexec::{forward, ActivationTensor};
use filtprune::synth::plant_layer;
use filtprune::{zoo, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_grid, usage, PruneFlags, UsageError};
use crate::manifest::RunManifest;
use crate::{Cli, Command, Format, Global, EXIT_FAIL, EXIT_USAGE};

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() || matches!(e.downcast_ref::<Error>(), Some(Error::Config(_))) {
        EXIT_USAGE
    } else {
        EXIT_FAIL
    }
}

pub fn run(cli: Cli) -> Result<u8> {
    rayon::ThreadPoolBuilder::new().num_threads(cli.global.jobs).build_global().ok();
    let g = &cli.global;
    match cli.command {
        Command::Inspect { bundle } => inspect(&bundle, g.format),
        Command::Validate { bundle } => validate(&bundle, g.format),
        Command::Sweep { bundle, grid, taus, out, prune } => {
            let taus = match taus {
                Some(t) => t,
                None => parse_grid(&grid)?,
            };
            cmd_sweep(&bundle, &taus, out.as_deref(), &prune, g)
        }
        Command::Plan { bundle, out, prune } => cmd_plan(&bundle, &out, &prune, g),
        Command::Prune { bundle, out_bundle, out_plan, plan, full, prune } => {
            cmd_prune(&bundle, &out_bundle, out_plan, plan.as_deref(), mode(full), &prune, g)
        }
        Command::Cost { before, after, plan, full } => cmd_cost(&before, after.as_deref(), plan.as_deref(), mode(full), g.format),
        Command::Check { before, after, plan, inputs, tol } => check(&before, &after, &plan, inputs, tol, g.seed.unwrap_or(0)),
        Command::Zoo { name, out, weights, plant } => cmd_zoo(&name, &out, weights, &plant, g.seed.unwrap_or(0)),
    }
}

fn mode(full: bool) -> ParamMode {
    if full {
        ParamMode::Full
    } else {
        ParamMode::Weights
    }
}

fn load(path: &Path) -> Result<ModelBundle> {
    read_bundle(path).with_context(|| format!("reading {}", path.display()))
}

fn load_weighted(path: &Path) -> Result<ModelBundle> {
    let b = load(path)?;
    if b.is_arch_only() {
        bail!("{} has no tensors; clustering needs weights", path.display());
    }
    Ok(b)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

#[derive(Serialize)]
struct LayerRow {
    id: String,
    kind: String,
    input: String,
    output: String,
    maps: Option<usize>,
    v: usize,
    h: usize,
}

fn inspect(path: &Path, format: Format) -> Result<u8> {
    let b = read_bundle_unchecked(path).with_context(|| format!("reading {}", path.display()))?;
    let diags = validate_bundle(&b);
    let shapes = ShapeMap::infer(&b.graph).ok();
    let rows: Vec<LayerRow> = b
        .graph
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (input, output, maps) = match &shapes {
                Some((_, s)) => (s.input_of(i).to_string(), s.output_of(i).to_string(), Some(s.output_of(i).channels())),
                None => ("?".into(), "?".into(), None),
            };
            LayerRow { id: l.id.clone(), kind: l.op.kind_name().into(), input, output, maps, v: l.out_spatial[0], h: l.out_spatial[1] }
        })
        .collect();
    match format {
        Format::Json => print_json(&serde_json::json!({
            "layers": rows,
            "tensors": b.tensors.len(),
            "parameters": b.tensors.iter().map(|t| t.numel()).sum::<usize>(),
            "diagnostics": diags,
        }))?,
        Format::Csv => {
            println!("layer_id,kind,input,output,maps,v,h");
            for r in &rows {
                println!("{},{},{},{},{},{},{}", r.id, r.kind, r.input, r.output, r.maps.map_or(String::new(), |m| m.to_string()), r.v, r.h);
            }
        }
        Format::Text => {
            let mut s = String::new();
            writeln!(s, "{:<16} {:<10} {:>12} {:>12} {:>6} {:>9}", "layer", "kind", "input", "output", "#maps", "v x h")?;
            for r in &rows {
                let maps = r.maps.map_or("?".into(), |m| m.to_string());
                writeln!(s, "{:<16} {:<10} {:>12} {:>12} {:>6} {:>9}", r.id, r.kind, r.input, r.output, maps, format!("{}x{}", r.v, r.h))?;
            }
            if b.is_arch_only() {
                writeln!(s, "no tensors (architecture only)")?;
            } else {
                let params: usize = b.tensors.iter().map(|t| t.numel()).sum();
                writeln!(s, "{} tensors, {params} values", b.tensors.len())?;
            }
            for d in &diags {
                writeln!(s, "invalid: {d}")?;
            }
            print!("{s}");
        }
    }
    Ok(if diags.is_empty() { 0 } else { EXIT_FAIL })
}

fn validate(path: &Path, format: Format) -> Result<u8> {
    let b = read_bundle_unchecked(path).with_context(|| format!("reading {}", path.display()))?;
    let diags = validate_bundle(&b);
    match format {
        Format::Json => print_json(&serde_json::json!({ "valid": diags.is_empty(), "diagnostics": diags }))?,
        Format::Csv => {
            println!("subject,rule,detail");
            for d in &diags {
                println!("{},{},\"{}\"", d.subject, d.rule, d.detail.replace('"', "\"\""));
            }
        }
        Format::Text => {
            if diags.is_empty() {
                println!("{}: valid", path.display());
            }
            for d in &diags {
                println!("{d}");
            }
        }
    }
    Ok(if diags.is_empty() { 0 } else { EXIT_FAIL })
}

fn resolve(flags: &PruneFlags, g: &Global, bundle: &ModelBundle) -> Result<PruneConfig> {
    let cfg = flags.resolve(g.config.as_deref(), g.seed)?;
    cfg.validate(&bundle.graph)?;
    Ok(cfg)
}

fn cluster_parallel(b: &ModelBundle, cfg: &PruneConfig) -> Result<BTreeMap<String, Clustering>> {
    let ids = prunable_layers(&b.graph, cfg)?;
    let pairs = ids
        .par_iter()
        .map(|id| cluster_layer(b, cfg, id).map(|c| (id.clone(), c)))
        .collect::<filtprune::Result<Vec<_>>>()?;
    Ok(pairs.into_iter().collect())
}

fn cmd_sweep(path: &Path, taus: &[f64], out: Option<&Path>, flags: &PruneFlags, g: &Global) -> Result<u8> {
    let b = load_weighted(path)?;
    let cfg = resolve(flags, g, &b)?;
    if let Some(t) = taus.iter().find(|t| !(-1.0..=1.0).contains(*t)) {
        return Err(usage(format!("tau {t} outside [-1, 1]")));
    }
    let ids = prunable_layers(&b.graph, &cfg)?;
    let per_layer = ids
        .par_iter()
        .map(|id| Ok((id.clone(), sweep(&kernel_matrix(&b, id)?, taus)?)))
        .collect::<filtprune::Result<Vec<_>>>()?;
    let text = if g.format == Format::Json {
        let rows: Vec<_> = per_layer
            .iter()
            .flat_map(|(id, r)| r.iter().map(move |(t, n)| serde_json::json!({"layer_id": id, "tau": t, "n_f": n})))
            .collect();
        serde_json::to_string_pretty(&rows)? + "\n"
    } else {
        let mut s = String::from("layer_id,tau,n_f\n");
        for (id, r) in &per_layer {
            for (t, n) in r {
                writeln!(s, "{id},{t},{n}")?;
            }
        }
        s
    };
    match out {
        Some(o) => {
            std::fs::write(o, text).with_context(|| format!("writing {}", o.display()))?;
            RunManifest::write("sweep", serde_json::to_value(&cfg)?, &[path], &[o])?;
        }
        None => print!("{text}"),
    }
    Ok(0)
}

fn make_plan(b: &ModelBundle, flags: &PruneFlags, g: &Global) -> Result<PrunePlan> {
    let cfg = resolve(flags, g, b)?;
    let clusterings = cluster_parallel(b, &cfg)?;
    Ok(build_plan(b, &cfg, &clusterings)?)
}

fn plan_summary(plan: &PrunePlan) -> String {
    let mut s = String::new();
    for l in plan.layers.iter().filter(|l| l.tau.is_some()) {
        let _ = writeln!(s, "{}: {} -> {} filters (tau {})", l.layer_id, l.n_original, l.keep.len(), l.tau.unwrap());
    }
    let dropped: usize = plan.layers.iter().map(|l| l.drop.len()).sum();
    let _ = writeln!(s, "{dropped} filters dropped, {} tensor edits", plan.edits.len());
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_plan(path: &Path, out: &Path, flags: &PruneFlags, g: &Global) -> Result<u8> {
    let b = load_weighted(path)?;
    let plan = make_plan(&b, flags, g)?;
    write_text(out, &plan.to_json())?;
    RunManifest::write("plan", serde_json::to_value(&plan.config)?, &[path], &[out])?;
    print!("{}", plan_summary(&plan));
    Ok(0)
}

fn load_plan(path: &Path) -> Result<PrunePlan> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PrunePlan::from_json(&text).with_context(|| format!("parsing plan {}", path.display()))
}

fn print_report(r: &CostReport, format: Format) -> Result<()> {
    match format {
        Format::Text => print!("{}", r.to_text()),
        Format::Csv => print!("{}", r.to_csv()),
        Format::Json => print_json(r)?,
    }
    Ok(())
}

fn cmd_prune(
    path: &Path,
    out_bundle: &Path,
    out_plan: Option<PathBuf>,
    existing: Option<&Path>,
    mode: ParamMode,
    flags: &PruneFlags,
    g: &Global,
) -> Result<u8> {
    let b = load_weighted(path)?;
    let (plan, plan_path, wrote_plan) = match existing {
        Some(p) => (load_plan(p)?, p.to_path_buf(), false),
        None => {
            let mut default = out_bundle.as_os_str().to_owned();
            default.push(".plan.json");
            (make_plan(&b, flags, g)?, out_plan.unwrap_or_else(|| PathBuf::from(default)), true)
        }
    };
    let mut pruned = apply_plan(&b, &plan)?;
    pruned.metadata.insert("pruned_from".into(), b.sha256());
    write_bundle(&pruned, out_bundle).with_context(|| format!("writing {}", out_bundle.display()))?;
    let mut outputs = vec![out_bundle];
    let mut inputs = vec![path];
    if wrote_plan {
        write_text(&plan_path, &plan.to_json())?;
        outputs.push(&plan_path);
    } else {
        inputs.push(&plan_path);
    }
    RunManifest::write("prune", serde_json::to_value(&plan.config)?, &inputs, &outputs)?;
    if g.format == Format::Text {
        print!("{}", plan_summary(&plan));
    }
    print_report(&diff_cost_plan(&b.graph, &plan, mode)?, g.format)?;
    Ok(0)
}

fn cmd_cost(before: &Path, after: Option<&Path>, plan: Option<&Path>, mode: ParamMode, format: Format) -> Result<u8> {
    let b = load(before)?;
    let report = match (after, plan) {
        (Some(a), _) => diff_cost(&b.graph, &load(a)?.graph, mode)?,
        (None, Some(p)) => diff_cost_plan(&b.graph, &load_plan(p)?, mode)?,
        (None, None) => model_cost(&b.graph, mode)?,
    };
    print_report(&report, format)?;
    Ok(0)
}

fn verdict(name: &str, result: std::result::Result<String, String>) -> bool {
    match result {
        Ok(msg) => {
            println!("{name}: ok ({msg})");
            true
        }
        Err(msg) => {
            println!("{name}: FAIL ({msg})");
            false
        }
    }
}

fn check(before: &Path, after: &Path, plan_path: &Path, inputs: usize, tol: f64, seed: u64) -> Result<u8> {
    let b = load(before)?;
    let a = load(after)?;
    let plan = load_plan(plan_path)?;
    let sha = b.sha256();
    if sha != plan.provenance.bundle_sha256 {
        println!("hash: FAIL (plan built for {}, {} is {sha})", plan.provenance.bundle_sha256, before.display());
        return Ok(EXIT_FAIL);
    }
    println!("hash: ok ({sha})");

    let expected = match apply_plan(&b, &plan) {
        Ok(e) => e,
        Err(e) => {
            println!("shape: FAIL ({e})");
            return Ok(EXIT_FAIL);
        }
    };
    let shapes_match = expected.graph == a.graph
        && expected.tensors.len() == a.tensors.len()
        && expected.tensors.iter().zip(&a.tensors).all(|(x, y)| x.name == y.name && x.shape == y.shape);
    if !verdict(
        "shape",
        if shapes_match { Ok(format!("{} tensors", a.tensors.len())) } else { Err("pruned bundle differs from the plan's layout".into()) },
    ) {
        return Ok(EXIT_FAIL);
    }
    let mut ok = verdict(
        "content",
        if expected.tensors == a.tensors { Ok("kept values bit-identical".into()) } else { Err("tensor values differ".into()) },
    );

    if a.is_arch_only() {
        println!("function: skipped (no tensors)");
        return Ok(if ok { 0 } else { EXIT_FAIL });
    }
    let zeroed = zero_downstream(&b, &plan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = b.graph.input_shape.to_vec();
    let n: usize = shape.iter().product();
    // inputs are drawn sequentially so the set does not depend on the thread count
    let xs = (0..inputs)
        .map(|_| ActivationTensor::new(shape.clone(), (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()))
        .collect::<filtprune::Result<Vec<_>>>()?;
    let diffs = xs
        .par_iter()
        .map(|x| {
            let (y0, y1) = (forward(&zeroed, x)?, forward(&a, x)?);
            if y0.shape != y1.shape {
                return Err(anyhow!("output shapes {:?} and {:?} differ", y0.shape, y1.shape));
            }
            Ok(y0.data.iter().zip(&y1.data).map(|(p, q)| (*p as f64 - *q as f64).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    let worst = diffs.into_iter().fold(0.0, f64::max);
    let msg = format!("{inputs} inputs, max |diff| {worst:.3e}, tolerance {tol:e}");
    ok &= verdict("function", if worst <= tol { Ok(msg) } else { Err(msg) });
    Ok(if ok { 0 } else { EXIT_FAIL })
}

fn cmd_zoo(name: &str, out: &Path, weights: bool, plant: &[String], seed: u64) -> Result<u8> {
    let graph = zoo::by_name(name).ok_or_else(|| usage(format!("unknown architecture {name}")))?;
    let bundle = if weights || !plant.is_empty() {
        let mut b = zoo::init_weights(graph, seed);
        for spec in plant {
            let (layer, n) = spec
                .split_once('=')
                .and_then(|(l, n)| Some((l, n.parse::<usize>().ok()?)))
                .ok_or_else(|| usage(format!("--plant {spec}: expected LAYER=N")))?;
            plant_layer(&mut b, layer, n, seed)?;
        }
        b
    } else {
        filtprune::bundle::ModelBundle::new(graph)
    };
    write_bundle(&bundle, out).with_context(|| format!("writing {}", out.display()))?;
    RunManifest::write("zoo", serde_json::json!({ "name": name, "seed": seed, "plant": plant }), &[], &[out])?;
    println!("wrote {} ({} tensors)", out.display(), bundle.tensors.len());
    Ok(0)
}

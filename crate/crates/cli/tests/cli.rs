use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use filtprune::bundle::{encode_bundle, read_bundle, write_bundle, ModelBundle};
use filtprune::plan::PrunePlan;
use filtprune::synth::plant_layer;
use filtprune::zoo;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_filtprune"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// toy ResNet with planted redundancy in its prunable convs
fn toy_bundle(dir: &Path) -> PathBuf {
    let mut b = zoo::init_weights(zoo::toy_resnet(&[2, 1], 6, [8, 8], 4), 1);
    plant_layer(&mut b, "conv2", 3, 1).unwrap();
    plant_layer(&mut b, "conv4", 2, 2).unwrap();
    plant_layer(&mut b, "conv6", 5, 3).unwrap();
    let path = dir.join("toy.nwb");
    write_bundle(&b, &path).unwrap();
    path
}

#[test]
fn shipped_models_match_zoo() {
    for name in ["vgg16", "resnet56", "resnet110"] {
        let bytes = std::fs::read(models_dir().join(format!("{name}.nwb"))).unwrap();
        assert_eq!(bytes, encode_bundle(&ModelBundle::new(zoo::by_name(name).unwrap())), "{name}");
    }
}

#[test]
fn inspect_arch_only_and_corrupt() {
    let o = run(&["inspect", p(&models_dir().join("vgg16.nwb"))]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("no tensors"));
    assert_eq!(out.lines().filter(|l| l.contains("conv2d")).count(), 13);
    assert!(out.lines().any(|l| l.starts_with("conv1 ") && l.contains("32x32") && l.contains(" 64 ")));

    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.nwb");
    std::fs::write(&bad, b"NWB1garbage").unwrap();
    let o = run(&["inspect", p(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
}

#[test]
fn validate_reports_status() {
    let o = run(&["--format", "json", "validate", p(&models_dir().join("resnet56.nwb"))]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], true);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let dir = TempDir::new().unwrap();
    let b = toy_bundle(dir.path());
    let plan = dir.path().join("plan.json");
    let o = run(&["plan", p(&b), "-o", p(&plan), "--tau", "1.5"]);
    assert_eq!(code(&o), 2);
    assert!(!plan.exists());
    let o = run(&["plan", p(&b), "-o", p(&plan), "--stage-tau", "stage1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_grids() {
    let dir = TempDir::new().unwrap();
    let b = toy_bundle(dir.path());
    let o = run(&["sweep", p(&b), "--taus", "1.0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "layer_id,tau,n_f\nconv2,1,6\nconv4,1,6\nconv6,1,12\n");
    let o = run(&["sweep", p(&b), "--taus", "0.6"]);
    assert_eq!(stdout(&o), "layer_id,tau,n_f\nconv2,0.6,3\nconv4,0.6,2\nconv6,0.6,5\n");

    let csv = dir.path().join("sweep.csv");
    assert_eq!(code(&run(&["sweep", p(&b), "-o", p(&csv)])), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 91);
    assert!(dir.path().join("sweep.csv.manifest.json").exists());
}

#[test]
fn prune_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let b = toy_bundle(dir.path());
    let mut outs = Vec::new();
    for i in 0..2 {
        let pb = dir.path().join(format!("p{i}.nwb"));
        let pp = dir.path().join(format!("p{i}.json"));
        let o = run(&["--seed", "7", "prune", p(&b), "--out-bundle", p(&pb), "--out-plan", p(&pp), "--tau", "0.6", "--heuristic", "A"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outs.push((std::fs::read(&pb).unwrap(), std::fs::read(&pp).unwrap()));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("p{i}.nwb.manifest.json"))).unwrap()).unwrap();
        assert_eq!(manifest["command"], "prune");
        assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
    }
    assert_eq!(outs[0], outs[1]);
    let plan = PrunePlan::from_json(std::str::from_utf8(&outs[0].1).unwrap()).unwrap();
    assert_eq!(plan.layer("conv2").unwrap().keep.len(), 3);
    assert_eq!(plan.layer("conv3").unwrap().keep.len(), 6);
}

#[test]
fn tau_one_is_identity() {
    let dir = TempDir::new().unwrap();
    let b = toy_bundle(dir.path());
    let out = dir.path().join("same.nwb");
    assert_eq!(code(&run(&["prune", p(&b), "--out-bundle", p(&out), "--tau", "1.0"])), 0);
    let (x, y) = (read_bundle(&b).unwrap(), read_bundle(&out).unwrap());
    assert_eq!(x.tensors, y.tensors);
    assert_eq!(x.graph, y.graph);
}

#[test]
fn check_passes_and_catches_forgery() {
    let dir = TempDir::new().unwrap();
    let b = toy_bundle(dir.path());
    let out = dir.path().join("p.nwb");
    let plan = dir.path().join("p.json");
    assert_eq!(code(&run(&["prune", p(&b), "--out-bundle", p(&out), "--out-plan", p(&plan), "--tau", "0.6"])), 0);
    let o = run(&["check", p(&b), p(&out), p(&plan)]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("function: ok"));

    let mut forged = PrunePlan::from_json(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    let l = forged.layers.iter_mut().find(|l| l.layer_id == "conv2").unwrap();
    l.drop.push(l.keep[0]);
    l.drop.sort_unstable();
    let forged_path = dir.path().join("forged.json");
    std::fs::write(&forged_path, forged.to_json()).unwrap();
    let o = run(&["check", p(&b), p(&out), p(&forged_path)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("shape: FAIL"));

    let other = dir.path().join("other.nwb");
    write_bundle(&zoo::init_weights(zoo::toy_resnet(&[2, 1], 6, [8, 8], 4), 2), &other).unwrap();
    let o = run(&["check", p(&other), p(&out), p(&plan)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("hash: FAIL"));
}

#[test]
fn identity_plan_checks() {
    let dir = TempDir::new().unwrap();
    let b = toy_bundle(dir.path());
    let out = dir.path().join("p.nwb");
    let plan = dir.path().join("p.json");
    assert_eq!(code(&run(&["prune", p(&b), "--out-bundle", p(&out), "--out-plan", p(&plan)])), 0);
    assert_eq!(code(&run(&["check", p(&b), p(&out), p(&plan)])), 0);
}

#[test]
fn cost_formats() {
    let vgg = models_dir().join("vgg16.nwb");
    let o = run(&["--format", "csv", "cost", p(&vgg)]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("layer_id,v,h,maps_before,maps_after,flops_before"));
    assert!(out.lines().any(|l| l.starts_with("conv1,32,32,64,64,1769472,1769472,1728,1728,")));
    let o = run(&["--format", "json", "cost", p(&vgg)]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["totals"]["flops"], 313_201_664u64);
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let b = toy_bundle(dir.path());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"default_tau": 1.0, "heuristic": "A", "skip_layers": ["conv6"]}"#).unwrap();
    let plan = dir.path().join("plan.json");
    let o = run(&["--config", p(&cfg), "plan", p(&b), "-o", p(&plan), "--tau", "0.6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let plan = PrunePlan::from_json(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    assert_eq!(plan.config.default_tau, 0.6);
    assert!(plan.layer("conv6").unwrap().drop.is_empty());
    assert_eq!(plan.layer("conv2").unwrap().keep.len(), 3);
}

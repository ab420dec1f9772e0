//! Random small networks and configurations shared by integration tests.
#![allow(dead_code)]

use filtprune::bundle::{ArchGraph, ModelBundle};
use filtprune::plan::{prunable_layers, Heuristic, PruneConfig, RepMode};
use filtprune::refexec::ActivationTensor;
use filtprune::synth::plant_layer;
use filtprune::zoo::{self, VggItem};
use rand::Rng;

pub fn random_resnet(rng: &mut impl Rng) -> ArchGraph {
    let stages = rng.gen_range(1..=3);
    let blocks: Vec<usize> = (0..stages).map(|_| rng.gen_range(1..=2)).collect();
    zoo::toy_resnet(&blocks, rng.gen_range(2..=6), [8, 8], rng.gen_range(2..=5))
}

pub fn random_vgg(rng: &mut impl Rng) -> ArchGraph {
    let mut cfg = Vec::new();
    let mut pools = 0;
    for _ in 0..rng.gen_range(2..=5) {
        cfg.push(VggItem::Conv(rng.gen_range(2..=8)));
        if pools < 2 && rng.gen_bool(0.4) {
            cfg.push(VggItem::Pool);
            pools += 1;
        }
    }
    zoo::vgg_like(&cfg, [3, 8, 8], rng.gen_range(2..=5))
}

/// Residual, plain or chain topology, chosen at random.
pub fn random_arch(rng: &mut impl Rng) -> ArchGraph {
    match rng.gen_range(0..5) {
        0 | 1 => random_resnet(rng),
        2 | 3 => random_vgg(rng),
        _ => zoo::toy_chain(),
    }
}

/// VGG-shaped network large enough to exercise every layer kind of the plain path.
pub fn desk_vgg() -> ArchGraph {
    use VggItem::{Conv as C, Pool as M};
    zoo::vgg_like(&[C(8), C(8), M, C(16), C(16), M, C(32), C(32), M], [3, 16, 16], 10)
}

pub fn random_config(rng: &mut impl Rng, graph: &ArchGraph) -> PruneConfig {
    let mut cfg = PruneConfig {
        default_tau: rng.gen_range(-0.3..0.9),
        heuristic: if rng.gen_bool(0.5) { Heuristic::A } else { Heuristic::B },
        seed: rng.gen(),
        rep: if rng.gen_bool(0.5) { RepMode::Random } else { RepMode::FirstIndex },
        ..PruneConfig::default()
    };
    for l in graph.conv_layers() {
        if rng.gen_bool(0.15) {
            cfg.skip_layers.insert(l.id.clone());
        }
    }
    cfg
}

/// Seeded weights, with some prunable layers replaced by planted redundancy.
pub fn weights(rng: &mut impl Rng, graph: ArchGraph, cfg: &PruneConfig) -> ModelBundle {
    let mut b = zoo::init_weights(graph, rng.gen());
    for id in prunable_layers(&b.graph, cfg).unwrap() {
        if rng.gen_bool(0.6) {
            let n = b.tensor(&format!("{id}.weight")).unwrap().shape[0];
            plant_layer(&mut b, &id, rng.gen_range(1..=n), rng.gen()).unwrap();
        }
    }
    b
}

pub fn random_input(rng: &mut impl Rng, graph: &ArchGraph) -> ActivationTensor {
    let shape = graph.input_shape.to_vec();
    let n = shape.iter().product();
    ActivationTensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

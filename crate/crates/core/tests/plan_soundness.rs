mod fixtures;

use std::collections::BTreeSet;

use filtprune::bundle::{validate_bundle, LayerOp};
use filtprune::plan::{apply_plan, build_plan, cluster_layers, layer_statuses, Heuristic};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_plans_are_sound() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut dropped = [0usize; 2];
    for draw in 0..100 {
        let graph = fixtures::random_arch(&mut rng);
        let cfg = fixtures::random_config(&mut rng, &graph);
        let bundle = fixtures::weights(&mut rng, graph, &cfg);
        let clusterings = cluster_layers(&bundle, &cfg).unwrap();
        let plan = build_plan(&bundle, &cfg, &clusterings).unwrap();
        let out = apply_plan(&bundle, &plan).unwrap();
        assert!(validate_bundle(&out).is_empty(), "draw {draw}");

        let statuses = layer_statuses(&bundle.graph, &cfg).unwrap();
        for (id, status) in statuses {
            let lp = plan.layer(&id).unwrap();
            let LayerOp::Conv2d { out_channels, .. } = out.graph.layer(&id).unwrap().op else { unreachable!() };
            assert_eq!(out_channels, lp.keep.len());
            if status.is_protected(&cfg) {
                assert!(lp.drop.is_empty(), "draw {draw}: protected {id} lost filters");
                assert_eq!(lp.n_f, lp.n_original);
                continue;
            }
            let c = &clusterings[&id];
            dropped[(cfg.heuristic == Heuristic::B) as usize] += lp.drop.len();
            assert_eq!(lp.drop.len(), lp.n_original - c.n_f, "draw {draw}: count law on {id}");
            let all: BTreeSet<usize> = lp.keep.iter().chain(&lp.drop).copied().collect();
            assert_eq!(all.len(), lp.n_original);
            if cfg.heuristic == Heuristic::A {
                for members in c.clusters() {
                    assert_eq!(members.iter().filter(|m| lp.keep.contains(m)).count(), 1, "draw {draw}: {id}");
                }
            }
        }
    }
    assert!(dropped.iter().all(|&d| d > 0), "{dropped:?}");
}

#[test]
fn identical_inputs_give_identical_plans() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let graph = fixtures::random_arch(&mut rng);
        let cfg = fixtures::random_config(&mut rng, &graph);
        let bundle = fixtures::weights(&mut rng, graph, &cfg);
        let a = build_plan(&bundle, &cfg, &cluster_layers(&bundle, &cfg).unwrap()).unwrap();
        let b = build_plan(&bundle, &cfg, &cluster_layers(&bundle, &cfg).unwrap()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(apply_plan(&bundle, &a).unwrap().sha256(), apply_plan(&bundle, &b).unwrap().sha256());
    }
}

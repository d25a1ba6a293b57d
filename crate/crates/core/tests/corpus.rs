//! Properties that must hold for every config in the shared corpus.

use infector_core::analytic::{analytic_report, extinction_probabilities, r0, tv_binomial_poisson, BoundsForm};
use infector_core::branching::{solve_malthusian, survival_probability, BackwardSampler};
use infector_core::forward::{simulate_replicate, Method};
use infector_core::graph::EpidemicGraph;
use infector_core::model::{ModelConfig, TypeIndex};
use infector_core::rng::{stream, Purpose};
use std::path::PathBuf;

fn corpus() -> Vec<(String, ModelConfig)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
    let mut out: Vec<(String, ModelConfig)> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            let cfg = ModelConfig::from_json(&std::fs::read_to_string(&p).unwrap()).unwrap();
            (p.file_stem().unwrap().to_string_lossy().into_owned(), cfg)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn supercritical() -> Vec<(String, ModelConfig)> {
    corpus().into_iter().filter(|(_, c)| r0(&c.mean_matrix().unwrap()).unwrap() > 1.0).collect()
}

#[test]
fn every_config_is_valid_and_round_trips() {
    let all = corpus();
    assert!(all.len() >= 5);
    for (name, cfg) in &all {
        assert!(cfg.validate().is_valid(), "{name}: {:?}", cfg.validate());
        assert_eq!(&ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg, "{name}");
    }
}

#[test]
fn extinction_frequency_matches_survival() {
    for (name, cfg) in supercritical() {
        let alpha = solve_malthusian(&cfg).unwrap().alpha;
        let sampler = BackwardSampler::new(&cfg).unwrap();
        // Kernels with near-instant critical blocks have a huge alpha, so the
        // horizon must also span many typical generations.
        let mut rng = stream(8, Purpose::Test, 0);
        let mean_age = (0..2000).map(|_| cfg.sample_eta(&mut rng, TypeIndex(cfg.k() - 1), TypeIndex(0))).sum::<f64>() / 2000.0;
        let horizon = (9.0 / alpha).max(30.0 * mean_age);
        for j in 0..cfg.k() {
            let s = survival_probability(&cfg, TypeIndex(j)).unwrap();
            let runs = 4000;
            let mut rng = stream(7, Purpose::Test, j as u64);
            let extinct = (0..runs).filter(|_| sampler.run(&mut rng, TypeIndex(j), horizon, 5000).unwrap().extinct()).count();
            let freq = extinct as f64 / runs as f64;
            let se = (s * (1.0 - s) / runs as f64).sqrt();
            assert!((freq - (1.0 - s)).abs() < 3.0 * se, "{name} type {}: {freq} vs {}", j + 1, 1.0 - s);
        }
    }
}

#[test]
fn ordering_chain_for_marked_configs() {
    for (name, cfg) in supercritical() {
        if let Some((p1, m1, m2)) = cfg.marked_means() {
            let r = analytic_report(p1, m1, m2, BoundsForm::Corrected).unwrap();
            assert!(r.q <= r.q1 + 1e-12 && r.q1 <= r.q_tilde_1 + 1e-12, "{name}: {r:?}");
            assert!(r.rho1_minus <= r.rho1_plus, "{name}: {r:?}");
            let q = extinction_probabilities(&cfg.backward_mean_matrix().unwrap()).unwrap().q;
            assert!((q[0] - r.q1).abs() < 1e-10 && (q[1] - r.q2).abs() < 1e-10, "{name}");
        }
    }
}

#[test]
fn in_degree_coupling_within_envelope() {
    for (name, cfg) in corpus() {
        let n = cfg.population.n;
        let m = cfg.mean_matrix().unwrap();
        let p = &cfg.population.proportions;
        for i in 0..cfg.k() {
            for j in 0..cfg.k() {
                let n_i = cfg.population.counts[i] as u64;
                let n_j = cfg.population.counts[j] as f64;
                let tv = tv_binomial_poisson(n_i, m[(i, j)] / n_j, p[i] / p[j] * m[(i, j)]).unwrap();
                assert!(tv < 1.0 / (n as f64).sqrt(), "{name} ({i},{j}): {tv}");
            }
        }
    }
}

#[test]
fn graph_file_round_trip() {
    let (_, cfg) = corpus().into_iter().find(|(n, _)| n == "asymmetric_seir").unwrap();
    let g = EpidemicGraph::build(&cfg, &mut stream(1, Purpose::Graph, 0)).unwrap();
    let mut buf = Vec::new();
    g.write_edge_list(&mut buf).unwrap();
    let back = EpidemicGraph::read_edge_list(&buf[..]).unwrap();
    assert_eq!(back, g);
}

#[test]
fn replicates_are_reproducible() {
    for (name, cfg) in supercritical() {
        let a = simulate_replicate(&cfg, Method::Eager, 99, 3).unwrap();
        let b = simulate_replicate(&cfg, Method::Eager, 99, 3).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

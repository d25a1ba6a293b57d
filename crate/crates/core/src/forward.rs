//! Forward epidemic: infection times are shortest-path distances from the
//! initial infecteds, and each infection is credited to the predecessor
//! on its shortest path.

use crate::error::{Error, Result};
use crate::graph::{assign_heads, EpidemicGraph, VertexId};
use crate::model::{ModelConfig, TypeIndex};
use crate::rng::{stream, Purpose};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

/// Default infected fraction separating large outbreaks from minor ones.
pub const DEFAULT_THRESHOLD: f64 = 0.05;

/// Heap entry ordered so that `BinaryHeap` pops the smallest time first,
/// ties going to the smaller vertex and then the smaller tail.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Event {
    pub time: f64,
    pub vertex: u32,
    pub from: u32,
}

pub(crate) const NO_TAIL: u32 = u32::MAX;

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.vertex.cmp(&self.vertex)).then(other.from.cmp(&self.from))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutbreakResult {
    /// Infection time per vertex; infinite if never infected.
    pub sigma: Vec<f64>,
    /// Predecessor on the shortest path; `None` for seeds and the uninfected.
    pub infector: Vec<Option<VertexId>>,
    /// Infected vertices per type, seeds included.
    pub infected_counts: Vec<usize>,
    /// Seeds per type.
    pub seed_counts: Vec<usize>,
    /// `attribution_counts[i][j]`: non-seed type-`j` infecteds whose infector has type `i`.
    pub attribution_counts: Vec<Vec<usize>>,
    type_offsets: Vec<usize>,
}

impl OutbreakResult {
    fn assemble(type_offsets: Vec<usize>, sigma: Vec<f64>, infector: Vec<Option<VertexId>>) -> Self {
        let k = type_offsets.len() - 1;
        let type_of = |v: usize| type_offsets.partition_point(|&o| o <= v) - 1;
        let mut infected_counts = vec![0; k];
        let mut seed_counts = vec![0; k];
        let mut attribution_counts = vec![vec![0; k]; k];
        for (v, (&s, inf)) in sigma.iter().zip(&infector).enumerate() {
            if !s.is_finite() {
                continue;
            }
            let j = type_of(v);
            infected_counts[j] += 1;
            match inf {
                Some(u) => attribution_counts[type_of(u.index())][j] += 1,
                None => seed_counts[j] += 1,
            }
        }
        OutbreakResult { sigma, infector, infected_counts, seed_counts, attribution_counts, type_offsets }
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn total_infected(&self) -> usize {
        self.infected_counts.iter().sum()
    }

    pub fn final_fraction(&self) -> f64 {
        self.total_infected() as f64 / self.n() as f64
    }

    pub fn type_of(&self, v: VertexId) -> TypeIndex {
        TypeIndex(self.type_offsets.partition_point(|&o| o <= v.index()) - 1)
    }

    /// Type-`j` vertices never infected.
    pub fn never_infected(&self, j: TypeIndex) -> usize {
        self.type_offsets[j.0 + 1] - self.type_offsets[j.0] - self.infected_counts[j.0]
    }

    /// True when at least `threshold · n` vertices were infected.
    pub fn is_large_outbreak(&self, threshold: f64) -> Result<bool> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Domain(format!("threshold {threshold} must lie in (0, 1)")));
        }
        Ok(self.total_infected() as f64 >= threshold * self.n() as f64)
    }
}

fn check_seeds(n: usize, seeds: &[VertexId]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Domain("at least one initial infected is required".into()));
    }
    if let Some(v) = seeds.iter().find(|v| v.index() >= n) {
        return Err(Error::Domain(format!("initial vertex {v} is out of range")));
    }
    Ok(())
}

/// Multi-source shortest paths from `seeds`. Equal distances resolve to
/// the smaller predecessor id.
pub fn run_epidemic(graph: &EpidemicGraph, seeds: &[VertexId]) -> Result<OutbreakResult> {
    let n = graph.n();
    check_seeds(n, seeds)?;
    let mut sigma = vec![f64::INFINITY; n];
    let mut pred = vec![NO_TAIL; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for s in seeds {
        sigma[s.index()] = 0.0;
        heap.push(Event { time: 0.0, vertex: s.0, from: NO_TAIL });
    }
    while let Some(Event { time, vertex, .. }) = heap.pop() {
        let u = vertex as usize;
        if done[u] || time > sigma[u] {
            continue;
        }
        done[u] = true;
        for (h, w) in graph.out_edges(VertexId(vertex)) {
            let hv = h.index();
            if done[hv] {
                continue;
            }
            let t = time + w;
            if t < sigma[hv] || (t == sigma[hv] && vertex < pred[hv]) {
                sigma[hv] = t;
                pred[hv] = vertex;
                heap.push(Event { time: t, vertex: h.0, from: vertex });
            }
        }
    }
    let infector = pred.iter().map(|&p| (p != NO_TAIL).then_some(VertexId(p))).collect();
    Ok(OutbreakResult::assemble(graph.type_offsets().to_vec(), sigma, infector))
}

/// Event-driven simulation that samples contacts only for vertices that
/// become infected. Same law as building the whole graph first.
pub fn run_epidemic_lazy<R: Rng + ?Sized>(config: &ModelConfig, seeds: &[VertexId], rng: &mut R) -> Result<OutbreakResult> {
    let pop = &config.population;
    check_seeds(pop.n, seeds)?;
    let offsets = pop.offsets();
    let type_of = |v: u32| TypeIndex(offsets.partition_point(|&o| o <= v as usize) - 1);
    let mut infected: HashMap<u32, (f64, u32)> = HashMap::new();
    let mut heap = BinaryHeap::new();
    for s in seeds {
        heap.push(Event { time: 0.0, vertex: s.0, from: NO_TAIL });
    }
    let mut contacts = Vec::new();
    let mut targets = Vec::new();
    while let Some(Event { time, vertex, from }) = heap.pop() {
        if infected.contains_key(&vertex) {
            continue;
        }
        infected.insert(vertex, (time, from));
        config.sample_contacts_into(rng, type_of(vertex), &mut contacts);
        assign_heads(rng, &contacts, &pop.counts, &offsets, &mut targets);
        for &(age, head) in &targets {
            if !infected.contains_key(&head) {
                heap.push(Event { time: time + age, vertex: head, from: vertex });
            }
        }
    }
    let mut sigma = vec![f64::INFINITY; pop.n];
    let mut infector = vec![None; pop.n];
    for (v, (t, from)) in infected {
        sigma[v as usize] = t;
        infector[v as usize] = (from != NO_TAIL).then_some(VertexId(from));
    }
    Ok(OutbreakResult::assemble(offsets, sigma, infector))
}

/// `entries[i][j]`: fraction of non-seed type-`j` infecteds infected by
/// type `i`; `None` where no type-`j` vertex was infected by another.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionMatrix {
    pub entries: Vec<Vec<Option<f64>>>,
}

pub fn attribute_infectors(result: &OutbreakResult) -> AttributionMatrix {
    let k = result.infected_counts.len();
    let entries = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let denom: usize = (0..k).map(|r| result.attribution_counts[r][j]).sum();
                    (denom > 0).then(|| result.attribution_counts[i][j] as f64 / denom as f64)
                })
                .collect()
        })
        .collect();
    AttributionMatrix { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Build the full graph, then run shortest paths.
    #[default]
    Eager,
    /// Event-driven simulation.
    Lazy,
}

#[derive(Debug, Clone)]
pub struct ReplicateOptions {
    /// Replicates to run, or the batch size when `min_large` is set.
    pub replicates: usize,
    pub threshold: f64,
    pub method: Method,
    /// Keep running batches until this many large outbreaks are found.
    pub min_large: Option<usize>,
    /// Hard limit on replicates when `min_large` is set.
    pub max_replicates: usize,
}

impl Default for ReplicateOptions {
    fn default() -> Self {
        ReplicateOptions { replicates: 100, threshold: DEFAULT_THRESHOLD, method: Method::Eager, min_large: None, max_replicates: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub large_outbreak: bool,
    pub final_fraction: f64,
    pub rho: AttributionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoEstimate {
    /// Mean attribution over large outbreaks; `NaN` where no replicate had data.
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub replicates_used: usize,
    pub replicates_total: usize,
}

/// Runs one replicate with its own streams.
pub fn simulate_replicate(config: &ModelConfig, method: Method, master_seed: u64, replicate: u64) -> Result<OutbreakResult> {
    let seeds = config.choose_initial(&mut stream(master_seed, Purpose::Seeds, replicate))?;
    match method {
        Method::Eager => {
            let graph = EpidemicGraph::build(config, &mut stream(master_seed, Purpose::Graph, replicate))?;
            run_epidemic(&graph, &seeds)
        }
        Method::Lazy => run_epidemic_lazy(config, &seeds, &mut stream(master_seed, Purpose::Forward, replicate)),
    }
}

/// Monte Carlo estimate of the attribution fractions, conditional on a
/// large outbreak. Replicate `r` uses streams `r` under `master_seed`, so
/// the result does not depend on thread scheduling.
pub fn replicate_rho(config: &ModelConfig, opts: &ReplicateOptions, master_seed: u64) -> Result<(RhoEstimate, Vec<ReplicateRecord>)> {
    if opts.replicates == 0 {
        return Err(Error::Domain("at least one replicate is required".into()));
    }
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {} must lie in (0, 1)", opts.threshold)));
    }
    let run_batch = |from: usize, to: usize| -> Result<Vec<ReplicateRecord>> {
        (from..to)
            .into_par_iter()
            .map(|r| {
                let res = simulate_replicate(config, opts.method, master_seed, r as u64)?;
                Ok(ReplicateRecord {
                    replicate: r,
                    large_outbreak: res.is_large_outbreak(opts.threshold)?,
                    final_fraction: res.final_fraction(),
                    rho: attribute_infectors(&res),
                })
            })
            .collect()
    };
    let mut records = Vec::new();
    match opts.min_large {
        None => records = run_batch(0, opts.replicates)?,
        Some(target) => {
            let mut large = 0;
            'outer: while records.len() < opts.max_replicates {
                let from = records.len();
                let to = (from + opts.replicates).min(opts.max_replicates);
                for rec in run_batch(from, to)? {
                    large += rec.large_outbreak as usize;
                    records.push(rec);
                    if large >= target {
                        break 'outer;
                    }
                }
            }
        }
    }
    let estimate = summarize(config.k(), &records)?;
    Ok((estimate, records))
}

fn summarize(k: usize, records: &[ReplicateRecord]) -> Result<RhoEstimate> {
    let large: Vec<&ReplicateRecord> = records.iter().filter(|r| r.large_outbreak).collect();
    if large.is_empty() {
        return Err(Error::NoData(format!("no large outbreak among {} replicates", records.len())));
    }
    let mut mean = vec![vec![f64::NAN; k]; k];
    let mut stderr = vec![vec![f64::NAN; k]; k];
    for i in 0..k {
        for j in 0..k {
            let xs: Vec<f64> = large.iter().filter_map(|r| r.rho.entries[i][j]).collect();
            if !xs.is_empty() {
                let (m, s) = crate::stats::mean_stderr(&xs);
                mean[i][j] = m;
                stderr[i][j] = s;
            }
        }
    }
    Ok(RhoEstimate { mean, stderr, replicates_used: large.len(), replicates_total: records.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{fixture_graph, fixture_vertex, WeightedEdge};
    use crate::model::presets::{marked_two_type, markov_sir};
    use crate::model::PopulationSpec;
    use crate::stats::ks_two_sample;
    use proptest::prelude::*;

    #[test]
    fn fixture_infection_times() {
        let g = fixture_graph();
        let res = run_epidemic(&g, &[fixture_vertex('a')]).unwrap();
        let s = |c| res.sigma[fixture_vertex(c).index()];
        assert_eq!(s('a'), 0.0);
        assert_eq!(s('b'), 0.3);
        assert_eq!(s('c'), 1.3);
        assert_eq!(s('d'), 1.8);
        assert_eq!(res.infector[fixture_vertex('d').index()], Some(fixture_vertex('b')));
        assert!(s('h').is_infinite());
    }

    #[test]
    fn fixture_attribution() {
        let g = fixture_graph();
        let res = run_epidemic(&g, &[fixture_vertex('a')]).unwrap();
        let rho = attribute_infectors(&res);
        assert_eq!(rho.entries[0][0], Some(2.0 / 3.0));
        assert_eq!(rho.entries[1][0], Some(1.0 / 3.0));
    }

    #[test]
    fn empty_graph_only_seeds() {
        let pop = PopulationSpec::single(5);
        let g = EpidemicGraph::from_edges(pop, &[], 0).unwrap();
        let res = run_epidemic(&g, &[VertexId(2)]).unwrap();
        assert_eq!(res.total_infected(), 1);
        assert!(res.sigma.iter().enumerate().all(|(v, s)| (v == 2) == s.is_finite()));
        assert_eq!(attribute_infectors(&res).entries[0][0], None);
    }

    #[test]
    fn single_type_attribution_is_one() {
        let cfg = markov_sir(2000, 2.0, 1.0);
        let res = simulate_replicate(&cfg, Method::Eager, 1, 0).unwrap();
        let rho = attribute_infectors(&res);
        assert!(rho.entries[0][0].is_none_or(|x| x == 1.0));
    }

    #[test]
    fn threshold_domain() {
        let g = fixture_graph();
        let res = run_epidemic(&g, &[fixture_vertex('a')]).unwrap();
        assert!(res.is_large_outbreak(0.0).is_err());
        assert!(res.is_large_outbreak(0.05).unwrap());
        let pop = PopulationSpec::single(200);
        let lone = run_epidemic(&EpidemicGraph::from_edges(pop, &[], 0).unwrap(), &[VertexId(0)]).unwrap();
        assert!(!lone.is_large_outbreak(0.05).unwrap());
    }

    #[test]
    fn equal_lengths_prefer_smaller_infector() {
        let pop = PopulationSpec::single(4);
        let e = |t, h, w| WeightedEdge { tail: VertexId(t), head: VertexId(h), weight: w };
        let g = EpidemicGraph::from_edges(pop, &[e(0, 2, 1.0), e(0, 1, 0.5), e(2, 3, 0.5), e(1, 3, 1.0)], 0).unwrap();
        let res = run_epidemic(&g, &[VertexId(0)]).unwrap();
        assert_eq!(res.sigma[3], 1.5);
        assert_eq!(res.infector[3], Some(VertexId(1)));
    }

    #[test]
    fn subcritical_rarely_large() {
        let cfg = markov_sir(2000, 0.5, 1.0);
        let opts = ReplicateOptions { replicates: 1000, method: Method::Lazy, ..Default::default() };
        let err = replicate_rho(&cfg, &opts, 11).unwrap_err();
        assert!(matches!(err, Error::NoData(_)));
    }

    #[test]
    fn zero_rate_only_seeds() {
        let cfg = markov_sir(100, 0.0, 1.0);
        let res = simulate_replicate(&cfg, Method::Lazy, 3, 0).unwrap();
        assert_eq!(res.total_infected(), 1);
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = marked_two_type(3000, 0.4, [2.0, 3.0], 1.0);
        let opts = ReplicateOptions { replicates: 16, ..Default::default() };
        let a = replicate_rho(&cfg, &opts, 5).unwrap();
        let b = replicate_rho(&cfg, &opts, 5).unwrap();
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn column_sums_are_one() {
        let cfg = marked_two_type(3000, 0.4, [2.0, 3.0], 1.0);
        let opts = ReplicateOptions { replicates: 32, ..Default::default() };
        let (est, recs) = replicate_rho(&cfg, &opts, 6).unwrap();
        for rec in &recs {
            for j in 0..2 {
                if rec.rho.entries[0][j].is_some() {
                    let s: f64 = (0..2).map(|i| rec.rho.entries[i][j].unwrap()).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
        for j in 0..2 {
            assert!((est.mean[0][j] + est.mean[1][j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn min_large_stops_early() {
        let cfg = markov_sir(1000, 2.0, 1.0);
        let opts = ReplicateOptions { replicates: 8, min_large: Some(5), method: Method::Lazy, ..Default::default() };
        let (est, recs) = replicate_rho(&cfg, &opts, 7).unwrap();
        assert_eq!(est.replicates_used, 5);
        assert!(recs.last().unwrap().large_outbreak);
    }

    #[test]
    fn lazy_matches_eager_in_law() {
        let cfg = markov_sir(10_000, 2.0, 1.0);
        let opts = |method| ReplicateOptions { replicates: 500, method, ..Default::default() };
        let (_, eager) = replicate_rho(&cfg, &opts(Method::Eager), 21).unwrap();
        let (_, lazy) = replicate_rho(&cfg, &opts(Method::Lazy), 22).unwrap();
        let sizes = |rs: &[ReplicateRecord]| rs.iter().filter(|r| r.large_outbreak).map(|r| r.final_fraction).collect::<Vec<_>>();
        let out = ks_two_sample(&sizes(&eager), &sizes(&lazy));
        assert!(out.p_value > 0.01, "KS p = {}", out.p_value);
        let large = |rs: &[ReplicateRecord]| rs.iter().filter(|r| r.large_outbreak).count() as f64;
        let (a, b) = (large(&eager) / 500.0, large(&lazy) / 500.0);
        let se = (a * (1.0 - a) / 500.0 + b * (1.0 - b) / 500.0).sqrt();
        assert!((a - b).abs() < 3.5 * se);
    }

    fn small_graph() -> impl Strategy<Value = EpidemicGraph> {
        (2usize..=8).prop_flat_map(|n| {
            proptest::collection::vec((0..n as u32, 0..n as u32, 0.01..5.0f64), 0..20).prop_map(move |es| {
                let edges: Vec<WeightedEdge> = es
                    .into_iter()
                    .filter(|(t, h, _)| t != h)
                    .map(|(t, h, w)| WeightedEdge { tail: VertexId(t), head: VertexId(h), weight: w })
                    .collect();
                EpidemicGraph::from_edges(PopulationSpec::single(n), &edges, 0).unwrap()
            })
        })
    }

    fn brute_force(g: &EpidemicGraph, src: usize) -> Vec<f64> {
        fn walk(g: &EpidemicGraph, v: usize, len: f64, on_path: &mut Vec<bool>, best: &mut Vec<f64>) {
            best[v] = best[v].min(len);
            for (h, w) in g.out_edges(VertexId(v as u32)) {
                if !on_path[h.index()] {
                    on_path[h.index()] = true;
                    walk(g, h.index(), len + w, on_path, best);
                    on_path[h.index()] = false;
                }
            }
        }
        let mut best = vec![f64::INFINITY; g.n()];
        let mut on_path = vec![false; g.n()];
        on_path[src] = true;
        walk(g, src, 0.0, &mut on_path, &mut best);
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn matches_path_enumeration(g in small_graph()) {
            let res = run_epidemic(&g, &[VertexId(0)]).unwrap();
            let oracle = brute_force(&g, 0);
            for (s, o) in res.sigma.iter().zip(&oracle) {
                prop_assert!((s - o).abs() < 1e-12 || s == o);
            }
        }

        #[test]
        fn infector_edge_consistency(g in small_graph()) {
            let res = run_epidemic(&g, &[VertexId(0)]).unwrap();
            for v in 0..g.n() {
                if let Some(u) = res.infector[v] {
                    let w = g.out_edges(u).filter(|(h, _)| h.index() == v).map(|(_, w)| w).fold(f64::INFINITY, f64::min);
                    prop_assert_eq!(res.sigma[v], res.sigma[u.index()] + w);
                }
                prop_assert_eq!(res.sigma[v] == 0.0, v == 0);
            }
        }

        #[test]
        fn extra_seed_never_delays(g in small_graph(), extra in 0u32..8) {
            let extra = VertexId(extra % g.n() as u32);
            let one = run_epidemic(&g, &[VertexId(0)]).unwrap();
            let two = run_epidemic(&g, &[VertexId(0), extra]).unwrap();
            for v in 0..g.n() {
                prop_assert!(two.sigma[v] <= one.sigma[v]);
            }
        }

        #[test]
        fn attribution_conservation(seed in 0u64..200) {
            let cfg = marked_two_type(300, 0.4, [2.0, 2.5], 1.0);
            let res = simulate_replicate(&cfg, Method::Eager, seed, 0).unwrap();
            for j in 0..2 {
                let attributed: usize = (0..2).map(|i| res.attribution_counts[i][j]).sum();
                prop_assert_eq!(attributed + res.seed_counts[j] + res.never_infected(TypeIndex(j)), cfg.population.counts[j]);
            }
        }
    }
}

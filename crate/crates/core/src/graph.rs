//! Realized weighted contact graphs.
//!
//! An edge `u -> v` with weight `w` means `u` would contact `v` at age `w`
//! after its own infection. Only finite-weight edges are stored, in
//! compressed sparse rows keyed by tail.

use crate::error::{Error, Result};
use crate::model::{Contact, ModelConfig, PopulationSpec, TypeIndex};
use rand::seq::index;
use rand::Rng;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

pub use crate::model::VertexId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub tail: VertexId,
    pub head: VertexId,
    pub weight: f64,
}

/// In-edges grouped by head.
#[derive(Debug, Clone)]
pub struct ReverseAdjacency {
    start: Vec<usize>,
    tails: Vec<u32>,
    weights: Vec<f64>,
}

impl ReverseAdjacency {
    /// `(tail, weight)` for every edge into `v`.
    pub fn in_edges(&self, v: VertexId) -> impl Iterator<Item = (VertexId, f64)> + '_ {
        let r = self.start[v.index()]..self.start[v.index() + 1];
        self.tails[r.clone()].iter().zip(&self.weights[r]).map(|(&t, &w)| (VertexId(t), w))
    }
}

#[derive(Debug, Clone)]
pub struct EpidemicGraph {
    population: PopulationSpec,
    type_offsets: Vec<usize>,
    start: Vec<usize>,
    heads: Vec<u32>,
    weights: Vec<f64>,
    realized_seed: u64,
    reverse: OnceLock<ReverseAdjacency>,
}

impl PartialEq for EpidemicGraph {
    fn eq(&self, other: &Self) -> bool {
        self.population == other.population
            && self.start == other.start
            && self.heads == other.heads
            && self.weights.iter().map(|w| w.to_bits()).eq(other.weights.iter().map(|w| w.to_bits()))
            && self.realized_seed == other.realized_seed
    }
}

impl EpidemicGraph {
    /// Builds a graph from an explicit edge list. Edges keep their order
    /// within each tail.
    pub fn from_edges(population: PopulationSpec, edges: &[WeightedEdge], realized_seed: u64) -> Result<Self> {
        let n = population.n;
        if population.counts.iter().sum::<usize>() != n {
            return Err(Error::Config("type counts must sum to n".into()));
        }
        for e in edges {
            if e.tail.index() >= n || e.head.index() >= n {
                return Err(Error::Domain(format!("edge {} -> {} leaves the vertex range", e.tail, e.head)));
            }
            if !(e.weight.is_finite() && e.weight >= 0.0) {
                return Err(Error::Domain(format!("edge weight {} must be finite and nonnegative", e.weight)));
            }
        }
        let mut start = vec![0usize; n + 1];
        for e in edges {
            start[e.tail.index() + 1] += 1;
        }
        for v in 0..n {
            start[v + 1] += start[v];
        }
        let mut fill = start.clone();
        let mut heads = vec![0u32; edges.len()];
        let mut weights = vec![0.0; edges.len()];
        for e in edges {
            let slot = &mut fill[e.tail.index()];
            heads[*slot] = e.head.0;
            weights[*slot] = e.weight;
            *slot += 1;
        }
        Ok(EpidemicGraph { type_offsets: population.offsets(), population, start, heads, weights, realized_seed, reverse: OnceLock::new() })
    }

    /// Samples a graph: every vertex draws its contact process, contacts
    /// toward type `j` beyond the first `n_j` are dropped, and heads are
    /// drawn from `V_j` without replacement.
    pub fn build<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let report = config.validate();
        if let Some(v) = report.violations.first() {
            return Err(Error::Config(v.to_string()));
        }
        let pop = &config.population;
        let offsets = pop.offsets();
        let k = pop.k();
        let mut start = Vec::with_capacity(pop.n + 1);
        start.push(0);
        let mut heads = Vec::new();
        let mut weights = Vec::new();
        let mut contacts: Vec<Contact> = Vec::new();
        let mut targets = Vec::new();
        for i in 0..k {
            for _u in offsets[i]..offsets[i + 1] {
                config.sample_contacts_into(rng, TypeIndex(i), &mut contacts);
                assign_heads(rng, &contacts, &pop.counts, &offsets, &mut targets);
                for &(age, head) in &targets {
                    heads.push(head);
                    weights.push(age);
                }
                start.push(heads.len());
            }
        }
        Ok(EpidemicGraph {
            population: pop.clone(),
            type_offsets: offsets,
            start,
            heads,
            weights,
            realized_seed: config.seed,
            reverse: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.population.n
    }

    pub fn k(&self) -> usize {
        self.population.k()
    }

    pub fn population(&self) -> &PopulationSpec {
        &self.population
    }

    pub fn realized_seed(&self) -> u64 {
        self.realized_seed
    }

    pub fn edge_count(&self) -> usize {
        self.heads.len()
    }

    /// Vertex range boundaries: type `i` is `offsets[i]..offsets[i+1]`.
    pub fn type_offsets(&self) -> &[usize] {
        &self.type_offsets
    }

    pub fn type_of(&self, v: VertexId) -> TypeIndex {
        TypeIndex(self.type_offsets.partition_point(|&o| o <= v.index()) - 1)
    }

    pub fn vertices_of(&self, t: TypeIndex) -> impl Iterator<Item = VertexId> {
        (self.type_offsets[t.0]..self.type_offsets[t.0 + 1]).map(|v| VertexId(v as u32))
    }

    /// `(head, weight)` for every edge out of `u`.
    pub fn out_edges(&self, u: VertexId) -> impl Iterator<Item = (VertexId, f64)> + '_ {
        let r = self.start[u.index()]..self.start[u.index() + 1];
        self.heads[r.clone()].iter().zip(&self.weights[r]).map(|(&h, &w)| (VertexId(h), w))
    }

    pub fn out_degree(&self, u: VertexId) -> usize {
        self.start[u.index() + 1] - self.start[u.index()]
    }

    pub fn edges(&self) -> impl Iterator<Item = WeightedEdge> + '_ {
        (0..self.n()).flat_map(move |u| {
            let tail = VertexId(u as u32);
            self.out_edges(tail).map(move |(head, weight)| WeightedEdge { tail, head, weight })
        })
    }

    /// In-edge index, built on first use.
    pub fn reverse(&self) -> &ReverseAdjacency {
        self.reverse.get_or_init(|| {
            let n = self.n();
            let mut start = vec![0usize; n + 1];
            for &h in &self.heads {
                start[h as usize + 1] += 1;
            }
            for v in 0..n {
                start[v + 1] += start[v];
            }
            let mut fill = start.clone();
            let mut tails = vec![0u32; self.heads.len()];
            let mut weights = vec![0.0; self.heads.len()];
            for e in self.edges() {
                let slot = &mut fill[e.head.index()];
                tails[*slot] = e.tail.0;
                weights[*slot] = e.weight;
                *slot += 1;
            }
            ReverseAdjacency { start, tails, weights }
        })
    }

    /// The same vertices with every edge reversed.
    pub fn transposed(&self) -> EpidemicGraph {
        let edges: Vec<WeightedEdge> = self.edges().map(|e| WeightedEdge { tail: e.head, head: e.tail, weight: e.weight }).collect();
        EpidemicGraph::from_edges(self.population.clone(), &edges, self.realized_seed).expect("transpose of a valid graph")
    }

    /// Writes `tail head weight` lines after a short header. Weights carry
    /// 17 significant digits, so reading back reproduces every bit.
    pub fn write_edge_list(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# weighted epidemic graph")?;
        writeln!(w, "n {}", self.n())?;
        writeln!(w, "k {}", self.k())?;
        writeln!(w, "boundaries {}", join(self.type_offsets.iter()))?;
        let props: Vec<String> = self.population.proportions.iter().map(|p| format!("{p:.16e}")).collect();
        writeln!(w, "proportions {}", props.join(" "))?;
        writeln!(w, "seed {}", self.realized_seed)?;
        for e in self.edges() {
            writeln!(w, "{} {} {:.16e}", e.tail, e.head, e.weight)?;
        }
        Ok(())
    }

    pub fn read_edge_list(r: impl BufRead) -> Result<Self> {
        let mut n = None;
        let mut boundaries: Option<Vec<usize>> = None;
        let mut proportions: Option<Vec<f64>> = None;
        let mut seed = 0;
        let mut edges = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let bad = |msg: &str| Error::Parse { line: line_no, msg: msg.to_string() };
            let mut parts = line.split_whitespace();
            let Some(first) = parts.next() else { continue };
            if first.starts_with('#') {
                continue;
            }
            let rest: Vec<&str> = parts.collect();
            match first {
                "n" => n = Some(rest.first().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad vertex count"))?),
                "k" => {}
                "boundaries" => {
                    boundaries =
                        Some(rest.iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad boundary"))?)
                }
                "proportions" => {
                    proportions =
                        Some(rest.iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad proportion"))?)
                }
                "seed" => seed = rest.first().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad seed"))?,
                _ => {
                    if rest.len() != 2 {
                        return Err(bad("expected `tail head weight`"));
                    }
                    let tail = first.parse().map_err(|_| bad("bad tail"))?;
                    let head = rest[0].parse().map_err(|_| bad("bad head"))?;
                    let weight = rest[1].parse().map_err(|_| bad("bad weight"))?;
                    edges.push(WeightedEdge { tail: VertexId(tail), head: VertexId(head), weight });
                }
            }
        }
        let missing = |what: &str| Error::Parse { line: 0, msg: format!("missing {what} header") };
        let n = n.ok_or_else(|| missing("n"))?;
        let b = boundaries.ok_or_else(|| missing("boundaries"))?;
        let proportions = proportions.ok_or_else(|| missing("proportions"))?;
        if b.len() != proportions.len() + 1 || b.first() != Some(&0) || b.last() != Some(&n) {
            return Err(Error::Parse { line: 0, msg: "boundaries do not match n and proportions".into() });
        }
        let counts = b.windows(2).map(|w| w[1] - w[0]).collect();
        EpidemicGraph::from_edges(PopulationSpec { n, counts, proportions }, &edges, seed)
    }
}

/// Draws heads for one tail: contacts toward type `j` beyond `n_j` are
/// dropped, the rest get distinct uniform heads from `V_j`. Returns
/// `(age, head)` in age order.
pub(crate) fn assign_heads<R: Rng + ?Sized>(
    rng: &mut R,
    contacts: &[Contact],
    counts: &[usize],
    offsets: &[usize],
    out: &mut Vec<(f64, u32)>,
) {
    let k = counts.len();
    let mut per_type = vec![0usize; k];
    for c in contacts {
        per_type[c.target.0] += 1;
    }
    let picks: Vec<Vec<usize>> = (0..k).map(|j| index::sample(rng, counts[j], per_type[j].min(counts[j])).into_vec()).collect();
    per_type.iter_mut().for_each(|c| *c = 0);
    out.clear();
    for c in contacts {
        let j = c.target.0;
        if per_type[j] < picks[j].len() {
            out.push((c.age, (offsets[j] + picks[j][per_type[j]]) as u32));
            per_type[j] += 1;
        }
    }
}

fn join<T: ToString>(xs: impl Iterator<Item = T>) -> String {
    xs.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Out-degree histograms per ordered type pair: `counts[i][j][d]` vertices
/// of type `i` have exactly `d` out-edges into type `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeStats {
    pub counts: Vec<Vec<Vec<usize>>>,
}

impl DegreeStats {
    pub fn total_edges(&self) -> usize {
        self.counts.iter().flatten().map(|h| h.iter().enumerate().map(|(d, c)| d * c).sum::<usize>()).sum()
    }
}

pub fn degree_stats(graph: &EpidemicGraph) -> DegreeStats {
    let k = graph.k();
    let mut counts = vec![vec![vec![0usize]; k]; k];
    let mut deg = vec![0usize; k];
    for u in 0..graph.n() {
        let u = VertexId(u as u32);
        let i = graph.type_of(u).0;
        deg.iter_mut().for_each(|d| *d = 0);
        for (h, _) in graph.out_edges(u) {
            deg[graph.type_of(h).0] += 1;
        }
        for j in 0..k {
            let hist = &mut counts[i][j];
            if hist.len() <= deg[j] {
                hist.resize(deg[j] + 1, 0);
            }
            hist[deg[j]] += 1;
        }
    }
    DegreeStats { counts }
}

/// Vertex labels of the small worked example, in id order.
pub const FIXTURE_LABELS: [char; 8] = ['a', 'c', 'd', 'g', 'h', 'b', 'e', 'f'];

/// Id of a labelled vertex of the worked example.
pub fn fixture_vertex(label: char) -> VertexId {
    let idx = FIXTURE_LABELS.iter().position(|&c| c == label).expect("fixture label");
    VertexId(idx as u32)
}

/// The eight-vertex, two-type worked example. Type 1 is {a, c, d, g, h},
/// type 2 is {b, e, f}.
pub fn fixture_graph() -> EpidemicGraph {
    let edge = |t: char, h: char, w: f64| WeightedEdge { tail: fixture_vertex(t), head: fixture_vertex(h), weight: w };
    let edges = [
        edge('a', 'b', 0.3),
        edge('a', 'c', 1.3),
        edge('b', 'd', 1.5),
        edge('c', 'd', 0.6),
        edge('c', 'g', 0.9),
        edge('d', 'f', 0.4),
        edge('f', 'e', 0.7),
        edge('e', 'g', 0.8),
        edge('h', 'g', 0.2),
    ];
    let population = PopulationSpec { n: 8, counts: vec![5, 3], proportions: vec![0.625, 0.375] };
    EpidemicGraph::from_edges(population, &edges, 0).expect("fixture is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::marked_two_type;
    use crate::model::{presets::markov_sir, ContactKernel, Phase};
    use crate::rng::{stream, Purpose};
    use crate::stats::{chi_square_gof, mean_stderr};
    use std::collections::HashSet;

    #[test]
    fn lone_vertex_has_no_edges() {
        let cfg = markov_sir(1, 0.0, 1.0);
        let g = EpidemicGraph::build(&cfg, &mut stream(0, Purpose::Graph, 0)).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn fixture_shape() {
        let g = fixture_graph();
        assert_eq!(g.n(), 8);
        assert_eq!(g.type_of(fixture_vertex('h')), TypeIndex(0));
        assert_eq!(g.type_of(fixture_vertex('b')), TypeIndex(1));
        let stats = degree_stats(&g);
        assert_eq!(stats.total_edges(), g.edge_count());
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(stats.counts[i][j].iter().sum::<usize>(), g.population().counts[i]);
            }
        }
    }

    #[test]
    fn empty_graph_histogram() {
        let pop = PopulationSpec { n: 4, counts: vec![2, 2], proportions: vec![0.5, 0.5] };
        let g = EpidemicGraph::from_edges(pop, &[], 0).unwrap();
        let stats = degree_stats(&g);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(stats.counts[i][j], vec![2]);
            }
        }
    }

    #[test]
    fn heads_distinct_and_within_type() {
        let cfg = marked_two_type(50, 0.4, [30.0, 10.0], 1.0);
        let g = EpidemicGraph::build(&cfg, &mut stream(1, Purpose::Graph, 0)).unwrap();
        for u in 0..g.n() {
            let u = VertexId(u as u32);
            let mut seen = HashSet::new();
            let mut per_type = [0usize; 2];
            for (h, _) in g.out_edges(u) {
                assert!(seen.insert(h));
                per_type[g.type_of(h).0] += 1;
            }
            for (seen, cap) in per_type.iter().zip(&g.population().counts) {
                assert!(seen <= cap);
            }
        }
    }

    #[test]
    fn out_weights_distinct() {
        let cfg = marked_two_type(2000, 0.5, [3.0, 3.0], 1.0);
        let g = EpidemicGraph::build(&cfg, &mut stream(2, Purpose::Graph, 0)).unwrap();
        for u in 0..g.n() {
            let mut ws: Vec<f64> = g.out_edges(VertexId(u as u32)).map(|(_, w)| w).collect();
            ws.sort_by(f64::total_cmp);
            assert!(ws.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn deterministic_build() {
        let cfg = marked_two_type(1000, 0.5, [2.0, 2.0], 1.0);
        let a = EpidemicGraph::build(&cfg, &mut stream(9, Purpose::Graph, 0)).unwrap();
        let b = EpidemicGraph::build(&cfg, &mut stream(9, Purpose::Graph, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_out_degree() {
        let cfg = marked_two_type(10_000, 0.5, [2.0, 2.0], 1.0);
        let g = EpidemicGraph::build(&cfg, &mut stream(3, Purpose::Graph, 0)).unwrap();
        let degs: Vec<f64> = (0..g.n()).map(|u| g.out_degree(VertexId(u as u32)) as f64).collect();
        let (m, se) = mean_stderr(&degs);
        assert!((m - 2.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn type_one_degree_law() {
        // Constant infectious period makes the type-1 -> type-1 count
        // exactly Poisson(p1 · rate · duration) before truncation.
        let mut cfg = marked_two_type(10_000, 0.5, [2.0, 2.0], 1.0);
        if let ContactKernel::Marked(b) = &mut cfg.kernel {
            b.infectious = vec![Phase::Constant { value: 1.0 }; 2];
        }
        let g = EpidemicGraph::build(&cfg, &mut stream(4, Purpose::Graph, 0)).unwrap();
        let hist = &degree_stats(&g).counts[0][0];
        let bins = 6;
        let mut observed: Vec<u64> = (0..bins).map(|d| hist.get(d).copied().unwrap_or(0) as u64).collect();
        observed.push(hist.iter().skip(bins).sum::<usize>() as u64);
        let mut pmf = vec![(-1.0f64).exp()];
        for d in 1..bins {
            pmf.push(pmf[d - 1] / d as f64);
        }
        let out = chi_square_gof(&observed, &pmf);
        assert!(out.p_value > 0.01, "p = {}", out.p_value);
    }

    #[test]
    fn edge_list_round_trip() {
        let cfg = marked_two_type(300, 0.3, [2.5, 1.5], 1.3);
        let g = EpidemicGraph::build(&cfg, &mut stream(5, Purpose::Graph, 0)).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let back = EpidemicGraph::read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn malformed_edge_list() {
        let text = "n 2\nboundaries 0 2\nproportions 1\n0 1\n";
        assert!(matches!(EpidemicGraph::read_edge_list(text.as_bytes()), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn reverse_matches_transpose() {
        let cfg = marked_two_type(200, 0.5, [2.0, 2.0], 1.0);
        let g = EpidemicGraph::build(&cfg, &mut stream(6, Purpose::Graph, 0)).unwrap();
        let t = g.transposed();
        for v in 0..g.n() {
            let v = VertexId(v as u32);
            let mut a: Vec<(VertexId, u64)> = g.reverse().in_edges(v).map(|(u, w)| (u, w.to_bits())).collect();
            let mut b: Vec<(VertexId, u64)> = t.out_edges(v).map(|(u, w)| (u, w.to_bits())).collect();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
    }
}

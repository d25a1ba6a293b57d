//! Susceptibility sets: everyone whose infection would eventually reach a
//! given vertex, explored backward along in-edges.

use crate::error::{Error, Result};
use crate::graph::{EpidemicGraph, VertexId};
use crate::model::TypeIndex;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap, HashSet};

use crate::forward::{Event, NO_TAIL};

/// Exploration horizon `(1 - κ)/4 · ln n / α`.
pub fn t_star(n: usize, alpha: f64, kappa: f64) -> Result<f64> {
    if !(alpha > 0.0) || !(0.0..1.0).contains(&kappa) || n < 2 {
        return Err(Error::Domain("need alpha > 0, 0 <= kappa < 1 and n >= 2".into()));
    }
    Ok((1.0 - kappa) / 4.0 * (n as f64).ln() / alpha)
}

pub const DEFAULT_KAPPA: f64 = 0.5;

/// State of a backward exploration stopped at `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct SusceptibilitySnapshot {
    pub root: VertexId,
    /// Vertices within distance `horizon` of the root, in exploration order
    /// (nondecreasing distance), with their distance to the root.
    pub explored: Vec<(VertexId, f64)>,
    /// Discovered tails whose distance exceeds the horizon, with best-known distance.
    pub active: Vec<(VertexId, f64)>,
    /// Out-neighbours of explored or active vertices that are neither.
    pub passive: Vec<VertexId>,
    /// In-edges whose tail had already been discovered.
    pub collisions: usize,
    pub horizon: f64,
    type_offsets: Vec<usize>,
}

impl SusceptibilitySnapshot {
    /// True when some in-edge landed on an already discovered vertex.
    pub fn flagged(&self) -> bool {
        self.collisions > 0
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.explored.iter().any(|(u, _)| *u == v)
    }

    pub fn distance(&self, v: VertexId) -> Option<f64> {
        self.explored.iter().find(|(u, _)| *u == v).map(|(_, d)| *d)
    }

    fn type_of(&self, v: VertexId) -> usize {
        self.type_offsets.partition_point(|&o| o <= v.index()) - 1
    }
}

/// Reverse label-setting from `root`, settling vertices in order of their
/// distance to the root until that distance exceeds `horizon`.
pub fn explore_susceptibility(graph: &EpidemicGraph, root: VertexId, horizon: f64) -> Result<SusceptibilitySnapshot> {
    if !(horizon >= 0.0) {
        return Err(Error::Domain(format!("horizon {horizon} must be nonnegative")));
    }
    if root.index() >= graph.n() {
        return Err(Error::Domain(format!("root {root} is out of range")));
    }
    let rev = graph.reverse();
    let mut best: HashMap<u32, f64> = HashMap::new();
    let mut settled: HashSet<u32> = HashSet::new();
    let mut explored = Vec::new();
    let mut collisions = 0;
    let mut heap = BinaryHeap::new();
    best.insert(root.0, 0.0);
    heap.push(Event { time: 0.0, vertex: root.0, from: NO_TAIL });
    while let Some(&Event { time, vertex, .. }) = heap.peek() {
        if time > horizon {
            break;
        }
        heap.pop();
        if settled.contains(&vertex) || time > best[&vertex] {
            continue;
        }
        settled.insert(vertex);
        explored.push((VertexId(vertex), time));
        for (tail, w) in rev.in_edges(VertexId(vertex)) {
            let d = time + w;
            match best.entry(tail.0) {
                Entry::Occupied(mut e) => {
                    collisions += 1;
                    if d < *e.get() && !settled.contains(&tail.0) {
                        e.insert(d);
                        heap.push(Event { time: d, vertex: tail.0, from: vertex });
                    }
                }
                Entry::Vacant(e) => {
                    e.insert(d);
                    heap.push(Event { time: d, vertex: tail.0, from: vertex });
                }
            }
        }
    }
    let mut active: Vec<(VertexId, f64)> = best.iter().filter(|(v, _)| !settled.contains(v)).map(|(&v, &d)| (VertexId(v), d)).collect();
    active.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut passive: Vec<VertexId> =
        best.keys().flat_map(|&v| graph.out_edges(VertexId(v)).map(|(h, _)| h)).filter(|h| !best.contains_key(&h.0)).collect();
    passive.sort_unstable();
    passive.dedup();
    Ok(SusceptibilitySnapshot { root, explored, active, passive, collisions, horizon, type_offsets: graph.type_offsets().to_vec() })
}

/// Number of type-`j` vertices `u` with `t - a < d(u, root) ≤ t`.
pub fn susceptibility_counts(snapshot: &SusceptibilitySnapshot, t: f64, a: f64, j: TypeIndex) -> Result<usize> {
    if t > snapshot.horizon {
        return Err(Error::OutOfHorizon { t, horizon: snapshot.horizon });
    }
    if !(t >= 0.0 && a >= 0.0) {
        return Err(Error::Domain("t and a must be nonnegative".into()));
    }
    Ok(snapshot.explored.iter().filter(|(u, d)| *d <= t && *d > t - a && snapshot.type_of(*u) == j.0).count())
}

/// Size of the restricted susceptibility set, root included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestrictedSetSize(pub usize);

/// Counts vertices with a path to `root` using only edges whose tail has
/// type `i` or whose head does not have type `j`.
pub fn restricted_susceptibility_size(graph: &EpidemicGraph, root: VertexId, i: TypeIndex, j: TypeIndex) -> Result<RestrictedSetSize> {
    if root.index() >= graph.n() {
        return Err(Error::Domain(format!("root {root} is out of range")));
    }
    if graph.type_of(root) != j {
        return Err(Error::Domain(format!("root {root} is not of type {j}")));
    }
    let rev = graph.reverse();
    let mut seen: HashSet<u32> = HashSet::from([root.0]);
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        let head_is_j = graph.type_of(v) == j;
        for (tail, _) in rev.in_edges(v) {
            if (graph.type_of(tail) == i || !head_is_j) && seen.insert(tail.0) {
                stack.push(tail);
            }
        }
    }
    Ok(RestrictedSetSize(seen.len()))
}

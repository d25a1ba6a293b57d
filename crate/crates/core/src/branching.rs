//! Backward branching process: particles of type `j` bear type-`i`
//! children with mean `(p_i/p_j) m_ij`, at ages drawn from the contact-age
//! law of `i` toward `j`. Particles never die.

use crate::analytic::extinction_probabilities;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ModelConfig, TypeIndex};
use crate::rng::{stream, Purpose};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

/// Default population cap for a single run.
pub const DEFAULT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Birth {
    pub time: f64,
    pub type_index: TypeIndex,
    /// Index of the parent in the event list; `None` for the root.
    pub parent: Option<usize>,
}

/// One realization up to `horizon`, births sorted by time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchingRun {
    pub root_type: TypeIndex,
    pub events: Vec<Birth>,
    pub horizon: f64,
    pub capped: bool,
}

impl BranchingRun {
    /// Particles born by the horizon, root included.
    pub fn population(&self) -> usize {
        self.events.len()
    }

    /// No birth in `[T/2, T]`, taken as the sign that the line died out.
    pub fn quiet_late(&self) -> bool {
        let half = self.horizon / 2.0;
        !self.events.iter().any(|b| b.time >= half && b.time <= self.horizon)
    }

    /// Extinct under the late-quiet surrogate. A capped run is never extinct.
    pub fn extinct(&self) -> bool {
        !self.capped && self.quiet_late()
    }
}

/// Offspring laws of the backward process, built once per config.
#[derive(Debug, Clone)]
pub struct BackwardSampler<'a> {
    config: &'a ModelConfig,
    mb: Matrix,
    counts: Vec<Vec<Option<Poisson<f64>>>>,
}

impl<'a> BackwardSampler<'a> {
    pub fn new(config: &'a ModelConfig) -> Result<Self> {
        let mb = config.backward_mean_matrix()?;
        let k = mb.dim();
        let counts =
            (0..k).map(|j| (0..k).map(|i| if mb[(j, i)] > 0.0 { Poisson::new(mb[(j, i)]).ok() } else { None }).collect()).collect();
        Ok(BackwardSampler { config, mb, counts })
    }

    pub fn mean_matrix(&self) -> &Matrix {
        &self.mb
    }

    /// Number of type-`i` children of a type-`j` particle.
    pub fn child_count<R: Rng + ?Sized>(&self, rng: &mut R, j: TypeIndex, i: TypeIndex) -> u64 {
        self.counts[j.0][i.0].as_ref().map_or(0, |d| d.sample(rng) as u64)
    }

    /// Age of a type-`j` particle when it bears a type-`i` child.
    pub fn child_age<R: Rng + ?Sized>(&self, rng: &mut R, j: TypeIndex, i: TypeIndex) -> f64 {
        self.config.sample_eta(rng, i, j)
    }

    /// Simulates from one newborn `root` up to `horizon`, breadth first.
    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R, root: TypeIndex, horizon: f64, cap: usize) -> Result<BranchingRun> {
        if !(horizon > 0.0) || cap == 0 {
            return Err(Error::Domain("need horizon > 0 and cap >= 1".into()));
        }
        if root.0 >= self.mb.dim() {
            return Err(Error::Domain(format!("type {root} is out of range")));
        }
        let mut raw = vec![Birth { time: 0.0, type_index: root, parent: None }];
        let mut capped = false;
        let mut next = 0;
        'grow: while next < raw.len() {
            let Birth { time, type_index: j, .. } = raw[next];
            for i in (0..self.mb.dim()).map(TypeIndex) {
                for _ in 0..self.child_count(rng, j, i) {
                    let t = time + self.child_age(rng, j, i);
                    if t <= horizon {
                        if raw.len() == cap {
                            capped = true;
                            break 'grow;
                        }
                        raw.push(Birth { time: t, type_index: i, parent: Some(next) });
                    }
                }
            }
            next += 1;
        }
        // Breadth-first order already puts parents first, so a stable sort keeps that on ties.
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| raw[a].time.total_cmp(&raw[b].time));
        let mut rank = vec![0; raw.len()];
        for (new, &old) in order.iter().enumerate() {
            rank[old] = new;
        }
        let events = order.iter().map(|&old| Birth { parent: raw[old].parent.map(|p| rank[p]), ..raw[old] }).collect();
        Ok(BranchingRun { root_type: root, events, horizon, capped })
    }
}

/// Simulates the backward process from one newborn particle of type `root`.
pub fn simulate_backward_bp<R: Rng + ?Sized>(
    config: &ModelConfig,
    root: TypeIndex,
    horizon: f64,
    cap: usize,
    rng: &mut R,
) -> Result<BranchingRun> {
    BackwardSampler::new(config)?.run(rng, root, horizon, cap)
}

/// Laplace transform of the backward mean measure; entry `(j, i)` is
/// `(p_i/p_j) m_ij E[exp(-x η_ij)]`.
pub fn laplace_mean_matrix(config: &ModelConfig, x: f64) -> Result<Matrix> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("Laplace argument {x} must be nonnegative")));
    }
    let mb = config.backward_mean_matrix()?;
    let k = mb.dim();
    let mut rows = vec![vec![0.0; k]; k];
    for (j, row) in rows.iter_mut().enumerate() {
        for (i, cell) in row.iter_mut().enumerate() {
            if mb[(j, i)] > 0.0 {
                *cell = mb[(j, i)] * config.eta_laplace(TypeIndex(i), TypeIndex(j), x)?;
            }
        }
    }
    Matrix::from_rows(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MalthusianSolution {
    pub alpha: f64,
    /// `|spectral radius - 1|` at `alpha`.
    pub residual: f64,
}

/// Growth rate `α`: the Laplace-transformed backward mean matrix has
/// Perron root one at `x = α`.
pub fn solve_malthusian(config: &ModelConfig) -> Result<MalthusianSolution> {
    let radius = |x: f64| laplace_mean_matrix(config, x)?.spectral_radius(1e-15);
    let r0 = radius(0.0)?;
    if r0 <= 1.0 {
        return Err(Error::Subcritical { r0 });
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut expansions = 0;
    while radius(hi)? > 1.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 1100 {
            return Err(Error::NonConvergence { what: "Malthusian bracket".into(), iterations: expansions });
        }
    }
    let mut iterations = 0;
    while hi - lo > 4.0 * f64::EPSILON * hi && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if radius(mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let (r_lo, r_hi) = ((radius(lo)? - 1.0).abs(), (radius(hi)? - 1.0).abs());
    let (alpha, residual) = if r_lo < r_hi { (lo, r_lo) } else { (hi, r_hi) };
    if residual >= 1e-10 {
        return Err(Error::NonConvergence { what: format!("Malthusian residual {residual}"), iterations });
    }
    Ok(MalthusianSolution { alpha, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WEstimate {
    /// `exp(-α T)` times the population at `T`, or 0 when the run was quiet late.
    pub value: f64,
    pub root_type: TypeIndex,
    pub horizon: f64,
}

pub fn estimate_w(run: &BranchingRun, alpha: f64) -> Result<WEstimate> {
    if run.capped {
        return Err(Error::Capped { cap: run.population() });
    }
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha {alpha} must be positive")));
    }
    let value = if run.quiet_late() { 0.0 } else { (-alpha * run.horizon).exp() * run.population() as f64 };
    Ok(WEstimate { value, root_type: run.root_type, horizon: run.horizon })
}

/// Probability that the backward process from a type-`root` particle grows forever.
pub fn survival_probability(config: &ModelConfig, root: TypeIndex) -> Result<f64> {
    let mb = config.backward_mean_matrix()?;
    if root.0 >= mb.dim() {
        return Err(Error::Domain(format!("type {root} is out of range")));
    }
    Ok(1.0 - extinction_probabilities(&mb)?.q[root.0])
}

/// Attribution of one replicate: `Σ_r e^{-ατ_ijr} W^i(r)` per type `i`.
/// `None` when every weight vanished.
pub fn attribution_ratio(weights: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    (total > 0.0).then(|| weights.iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BpRhoEstimate {
    pub target: TypeIndex,
    /// `ρ_ij` for each infector type `i`.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Per-replicate ratios; `None` where the denominator vanished.
    pub ratios: Vec<Option<Vec<f64>>>,
    /// Fraction of replicates with a positive denominator.
    pub positive_fraction: f64,
    /// Analytic survival probability of a type-`target` root.
    pub survival: f64,
    pub alpha: f64,
    pub horizon: f64,
}

/// Discounted weights of one replicate: the root's children are drawn
/// directly, and each child's `W` comes from its own run to `horizon`.
fn replicate_weights<R: Rng + ?Sized>(
    sampler: &BackwardSampler,
    rng: &mut R,
    j: TypeIndex,
    alpha: f64,
    horizon: f64,
    cap: usize,
) -> Result<Vec<f64>> {
    let k = sampler.mean_matrix().dim();
    let mut weights = vec![0.0; k];
    for i in (0..k).map(TypeIndex) {
        for _ in 0..sampler.child_count(rng, j, i) {
            let tau = sampler.child_age(rng, j, i);
            let w = estimate_w(&sampler.run(rng, i, horizon, cap)?, alpha)?;
            weights[i.0] += (-alpha * tau).exp() * w.value;
        }
    }
    Ok(weights)
}

/// Monte Carlo estimate of the attribution fractions toward type `j`.
///
/// The expectation is normalised by the observed frequency of a positive
/// denominator, which estimates the survival probability of the root and
/// makes the estimates sum to one.
pub fn estimate_rho_bp(config: &ModelConfig, j: TypeIndex, replicates: usize, horizon: f64, seed: u64) -> Result<BpRhoEstimate> {
    estimate_rho_bp_capped(config, j, replicates, horizon, DEFAULT_CAP, seed)
}

pub fn estimate_rho_bp_capped(
    config: &ModelConfig,
    j: TypeIndex,
    replicates: usize,
    horizon: f64,
    cap: usize,
    seed: u64,
) -> Result<BpRhoEstimate> {
    if replicates == 0 {
        return Err(Error::Domain("at least one replicate is required".into()));
    }
    let sampler = BackwardSampler::new(config)?;
    let k = sampler.mean_matrix().dim();
    if j.0 >= k {
        return Err(Error::Domain(format!("type {j} is out of range")));
    }
    let alpha = solve_malthusian(config)?.alpha;
    let survival = survival_probability(config, j)?;
    let ratios: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, Purpose::Branching, r as u64);
            replicate_weights(&sampler, &mut rng, j, alpha, horizon, cap).map(|w| attribution_ratio(&w))
        })
        .collect::<Result<_>>()?;
    let positive: Vec<&Vec<f64>> = ratios.iter().flatten().collect();
    if positive.is_empty() {
        return Err(Error::NoData(format!("all {replicates} replicates had a vanishing denominator")));
    }
    let (mean, stderr) = (0..k).map(|i| crate::stats::mean_stderr(&positive.iter().map(|v| v[i]).collect::<Vec<_>>())).unzip();
    Ok(BpRhoEstimate {
        target: j,
        mean,
        stderr,
        positive_fraction: positive.len() as f64 / replicates as f64,
        ratios,
        survival,
        alpha,
        horizon,
    })
}

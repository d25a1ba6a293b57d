//! Scenario configuration: population, contact kernel, initial infecteds.

mod phase;
mod population;

pub use phase::Phase;
pub use population::{PopulationSpec, TypeIndex};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quad;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Vertex label in `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub u32);

impl VertexId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One infectious individual's contact behaviour, per type: a latent
/// phase, then an infectious phase during which contacts occur as a
/// Poisson process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedProcess {
    pub latent: Vec<Phase>,
    pub infectious: Vec<Phase>,
    /// Total contact rate of each type; each contact targets type `j`
    /// with probability `p_j`.
    pub rates: Vec<f64>,
}

/// How an infected individual generates typed, timed contacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContactKernel {
    /// Independent Poisson streams per target type: type `i` contacts type
    /// `j` at rate `p_j · rates[i][j]` while infectious.
    Seir { latent: Vec<Phase>, infectious: Vec<Phase>, rates: Vec<Vec<f64>> },
    /// A single Poisson stream per individual with independent type marks.
    Marked(MarkedProcess),
    /// Two types. Contact counts follow `base`, but edges from `fast_tail`
    /// to `fast_head` get vanishing ages while all other edges are long.
    Extremal { base: MarkedProcess, fast_tail: TypeIndex, fast_head: TypeIndex },
}

impl ContactKernel {
    fn phases(&self, i: usize) -> (Phase, Phase) {
        match self {
            ContactKernel::Seir { latent, infectious, .. } | ContactKernel::Marked(MarkedProcess { latent, infectious, .. }) => {
                (latent[i], infectious[i])
            }
            ContactKernel::Extremal { base, .. } => (base.latent[i], base.infectious[i]),
        }
    }

    /// Rate of contacts from type `i` toward type `j`, before scaling by `p_j`.
    fn rate(&self, i: usize, j: usize) -> f64 {
        match self {
            ContactKernel::Seir { rates, .. } => rates[i][j],
            ContactKernel::Marked(b) | ContactKernel::Extremal { base: b, .. } => b.rates[i],
        }
    }

    fn shape_problems(&self, k: usize) -> Vec<String> {
        let mut out = Vec::new();
        let (latent, infectious) = match self {
            ContactKernel::Seir { latent, infectious, rates } => {
                if rates.len() != k || rates.iter().any(|r| r.len() != k) {
                    out.push(format!("rate matrix must be {k}x{k}"));
                }
                (latent, infectious)
            }
            ContactKernel::Marked(b) | ContactKernel::Extremal { base: b, .. } => {
                if b.rates.len() != k {
                    out.push(format!("rate vector must have length {k}"));
                }
                (&b.latent, &b.infectious)
            }
        };
        if latent.len() != k || infectious.len() != k {
            out.push(format!("latent and infectious phase lists must have length {k}"));
        }
        if let ContactKernel::Extremal { fast_tail, fast_head, .. } = self {
            if k != 2 {
                out.push("the extremal kernel needs exactly two types".into());
            }
            if fast_tail.0 >= k || fast_head.0 >= k {
                out.push("fast edge types out of range".into());
            }
        }
        out
    }
}

/// One group of randomly chosen initial infecteds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedGroup {
    #[serde(rename = "type")]
    pub type_index: TypeIndex,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialInfecteds {
    Vertices(Vec<u32>),
    Random(Vec<SeedGroup>),
}

impl InitialInfecteds {
    pub fn len(&self) -> usize {
        match self {
            InitialInfecteds::Vertices(v) => v.len(),
            InitialInfecteds::Random(g) => g.iter().map(|g| g.count).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub population: PopulationSpec,
    pub kernel: ContactKernel,
    pub initial_infecteds: InitialInfecteds,
    #[serde(default)]
    pub seed: u64,
}

/// Which modelling requirement a violation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Requirement {
    TypeProportions,
    FiniteMeans,
    Irreducible,
    InitialSet,
    KernelShape,
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Requirement::TypeProportions => "type proportions",
            Requirement::FiniteMeans => "finite contact means",
            Requirement::Irreducible => "irreducible type structure",
            Requirement::InitialSet => "small initial set",
            Requirement::KernelShape => "kernel shape",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub requirement: Requirement,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.requirement, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, requirement: Requirement, detail: impl Into<String>) {
        self.violations.push(Violation { requirement, detail: detail.into() });
    }
}

/// A realized contact: time since infection and the type contacted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub age: f64,
    pub target: TypeIndex,
}

/// Age window used by the extremal kernel at population size `n`:
/// `(short_width, long_offset, long_width)`.
fn extremal_scales(n: usize) -> (f64, f64, f64) {
    let n = n as f64;
    (n.powi(-3), 1.0 / n, 1.0 / n)
}

impl ModelConfig {
    pub fn k(&self) -> usize {
        self.population.k()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Lists every violated requirement; never fails.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let pop = &self.population;
        let k = pop.k();
        if k == 0 || pop.proportions.len() != k {
            report.push(Requirement::TypeProportions, "counts and proportions must be nonempty and of equal length");
            return report;
        }
        if pop.counts.iter().sum::<usize>() != pop.n {
            report.push(Requirement::TypeProportions, format!("counts sum to {}, not n = {}", pop.counts.iter().sum::<usize>(), pop.n));
        }
        let psum: f64 = pop.proportions.iter().sum();
        if (psum - 1.0).abs() > 1e-9 {
            report.push(Requirement::TypeProportions, format!("proportions sum to {psum}"));
        }
        for (i, (&c, &p)) in pop.counts.iter().zip(&pop.proportions).enumerate() {
            let t = TypeIndex(i);
            if !(p.is_finite() && p > 0.0) {
                report.push(Requirement::TypeProportions, format!("p_{t} = {p} must be positive"));
            }
            if c == 0 {
                report.push(Requirement::TypeProportions, format!("n_{t} must be positive"));
            }
            if pop.n > 0 && (p - c as f64 / pop.n as f64).abs() > 1.0 / pop.n as f64 + 1e-12 {
                report
                    .push(Requirement::TypeProportions, format!("|p_{t} - n_{t}/n| = {} exceeds 1/n", (p - c as f64 / pop.n as f64).abs()));
            }
        }
        let shape = self.kernel.shape_problems(k);
        let shape_ok = shape.is_empty();
        for s in shape {
            report.push(Requirement::KernelShape, s);
        }
        if shape_ok {
            for i in 0..k {
                let (lat, inf) = self.kernel.phases(i);
                if let Some(msg) = lat.check() {
                    report.push(Requirement::FiniteMeans, format!("latent phase of type {}: {msg}", TypeIndex(i)));
                }
                if let Some(msg) = inf.check() {
                    report.push(Requirement::FiniteMeans, format!("infectious phase of type {}: {msg}", TypeIndex(i)));
                } else if inf.mean() <= 0.0 {
                    report.push(Requirement::FiniteMeans, format!("infectious phase of type {} has zero mean", TypeIndex(i)));
                }
                for j in 0..k {
                    let r = self.kernel.rate(i, j);
                    if !(r.is_finite() && r >= 0.0) {
                        report.push(
                            Requirement::FiniteMeans,
                            format!("rate {} -> {} = {r} must be finite and nonnegative", TypeIndex(i), TypeIndex(j)),
                        );
                    }
                }
            }
            if report.violations.iter().all(|v| v.requirement != Requirement::FiniteMeans) {
                let m = self.mean_matrix_unchecked();
                if !m.is_finite() {
                    report.push(Requirement::FiniteMeans, "mean matrix has nonfinite entries");
                } else if !m.is_irreducible() {
                    report.push(Requirement::Irreducible, "mean matrix positivity pattern is reducible");
                }
            }
        }
        let seeds = self.initial_infecteds.len();
        let limit = 10f64.max((pop.n as f64).ln()).floor() as usize;
        if seeds == 0 {
            report.push(Requirement::InitialSet, "at least one initial infected is required");
        } else if seeds > limit {
            report.push(Requirement::InitialSet, format!("{seeds} initial infecteds exceed max(10, ln n) = {limit}"));
        }
        match &self.initial_infecteds {
            InitialInfecteds::Vertices(v) => {
                let mut sorted = v.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != v.len() {
                    report.push(Requirement::InitialSet, "initial vertices must be distinct");
                }
                if let Some(bad) = v.iter().find(|&&u| u as usize >= pop.n) {
                    report.push(Requirement::InitialSet, format!("initial vertex {bad} is out of range"));
                }
            }
            InitialInfecteds::Random(groups) => {
                for g in groups {
                    if g.type_index.0 >= k {
                        report.push(Requirement::InitialSet, format!("seed type {} out of range", g.type_index));
                    } else if g.count > pop.counts[g.type_index.0] {
                        report.push(Requirement::InitialSet, format!("cannot seed {} vertices of type {}", g.count, g.type_index));
                    }
                }
            }
        }
        report
    }

    /// First violated requirement, as an error.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        match report.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::Config(v.to_string())),
        }
    }

    fn mean_matrix_unchecked(&self) -> Matrix {
        let p = &self.population.proportions;
        Matrix::from_fn(self.k(), |i, j| p[j] * self.kernel.rate(i, j) * self.kernel.phases(i).1.mean())
    }

    /// Expected number of type-`j` contacts of a type-`i` individual, `m_ij`.
    pub fn mean_matrix(&self) -> Result<Matrix> {
        if !self.kernel.shape_problems(self.k()).is_empty() {
            return Err(Error::Config("kernel does not match the population".into()));
        }
        let m = self.mean_matrix_unchecked();
        if !m.is_finite() || !m.is_nonnegative() {
            return Err(Error::Config("mean matrix must be finite and nonnegative".into()));
        }
        Ok(m)
    }

    /// Backward offspring means: entry `(j, i)` is `(p_i / p_j) m_ij`.
    pub fn backward_mean_matrix(&self) -> Result<Matrix> {
        let m = self.mean_matrix()?;
        let p = &self.population.proportions;
        Ok(Matrix::from_fn(self.k(), |j, i| p[i] / p[j] * m[(i, j)]))
    }

    /// `(p_1, m̃_1, m̃_2)` for a two-type marked or extremal kernel, where
    /// `m̃_i` is the mean number of contacts of a type-`i` individual.
    pub fn marked_means(&self) -> Option<(f64, f64, f64)> {
        let base = match &self.kernel {
            ContactKernel::Marked(b) | ContactKernel::Extremal { base: b, .. } => b,
            ContactKernel::Seir { .. } => return None,
        };
        if self.k() != 2 || base.rates.len() != 2 || base.infectious.len() != 2 {
            return None;
        }
        let m = |i: usize| base.rates[i] * base.infectious[i].mean();
        Some((self.population.proportions[0], m(0), m(1)))
    }

    /// Contacts of one type-`i` infected individual, sorted by age.
    pub fn sample_contact_process<R: Rng + ?Sized>(&self, rng: &mut R, i: TypeIndex) -> Vec<Contact> {
        let mut out = Vec::new();
        self.sample_contacts_into(rng, i, &mut out);
        out
    }

    pub(crate) fn sample_contacts_into<R: Rng + ?Sized>(&self, rng: &mut R, i: TypeIndex, out: &mut Vec<Contact>) {
        out.clear();
        let (latent, infectious) = self.kernel.phases(i.0);
        let l = latent.sample(rng);
        let dur = infectious.sample(rng);
        for (j, pj) in self.population.proportions.iter().enumerate() {
            let mean = pj * self.kernel.rate(i.0, j) * dur;
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).unwrap().sample(rng) as usize;
            for _ in 0..count {
                let base_age = l + rng.random::<f64>() * dur;
                let age = match &self.kernel {
                    ContactKernel::Extremal { fast_tail, fast_head, .. } => {
                        let (short, offset, width) = extremal_scales(self.population.n);
                        if i == *fast_tail && j == fast_head.0 {
                            short * rng.random::<f64>()
                        } else {
                            offset + width * rng.random::<f64>()
                        }
                    }
                    _ => base_age,
                };
                out.push(Contact { age, target: TypeIndex(j) });
            }
        }
        out.sort_by(|a, b| a.age.total_cmp(&b.age));
    }

    fn check_pair(&self, i: TypeIndex, j: TypeIndex) -> Result<()> {
        let k = self.k();
        if i.0 >= k || j.0 >= k {
            return Err(Error::Domain("type index out of range".into()));
        }
        if self.mean_matrix()?[(i.0, j.0)] <= 0.0 {
            return Err(Error::Domain(format!("no contacts from type {i} to type {j}; the age law is undefined")));
        }
        Ok(())
    }

    /// `P(η_ij ≤ t)`: the law of the age at which a type-`i` individual
    /// makes a given type-`j` contact.
    pub fn eta_cdf(&self, i: TypeIndex, j: TypeIndex, t: f64) -> Result<f64> {
        self.check_pair(i, j)?;
        if t <= 0.0 {
            return Ok(0.0);
        }
        if let ContactKernel::Extremal { fast_tail, fast_head, .. } = &self.kernel {
            let (short, offset, width) = extremal_scales(self.population.n);
            let (a, w) = if i == *fast_tail && j == *fast_head { (0.0, short) } else { (offset, width) };
            return Ok(((t - a) / w).clamp(0.0, 1.0));
        }
        let (latent, infectious) = self.kernel.phases(i.0);
        Ok(match latent {
            Phase::Constant { value } => infectious.residual_cdf(t - value),
            _ => {
                // Condition on the residual offset, whose density is bounded.
                let f = |r: f64| infectious.residual_density(r) * latent.cdf(t - r);
                match infectious {
                    Phase::Constant { value } if value < t => quad::integrate(f, 0.0, value, 1e-13),
                    _ => quad::integrate(f, 0.0, t, 1e-13),
                }
                .clamp(0.0, 1.0)
            }
        })
    }

    /// `E[exp(-x η_ij)]`.
    pub fn eta_laplace(&self, i: TypeIndex, j: TypeIndex, x: f64) -> Result<f64> {
        self.check_pair(i, j)?;
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("Laplace argument {x} must be nonnegative")));
        }
        if let ContactKernel::Extremal { fast_tail, fast_head, .. } = &self.kernel {
            let (short, offset, width) = extremal_scales(self.population.n);
            let (a, w) = if i == *fast_tail && j == *fast_head { (0.0, short) } else { (offset, width) };
            let xw = x * w;
            let body = if xw == 0.0 { 1.0 } else { -(-xw).exp_m1() / xw };
            return Ok((-x * a).exp() * body);
        }
        let (latent, infectious) = self.kernel.phases(i.0);
        Ok(latent.laplace(x) * infectious.residual_laplace(x))
    }

    /// Draws one age from the law of `η_ij`.
    pub fn sample_eta<R: Rng + ?Sized>(&self, rng: &mut R, i: TypeIndex, j: TypeIndex) -> f64 {
        if let ContactKernel::Extremal { fast_tail, fast_head, .. } = &self.kernel {
            let (short, offset, width) = extremal_scales(self.population.n);
            return if i == *fast_tail && j == *fast_head { short * rng.random::<f64>() } else { offset + width * rng.random::<f64>() };
        }
        let (latent, infectious) = self.kernel.phases(i.0);
        latent.sample(rng) + infectious.sample_residual(rng)
    }

    /// Picks the initial infecteds.
    pub fn choose_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<VertexId>> {
        self.ensure_valid()?;
        Ok(match &self.initial_infecteds {
            InitialInfecteds::Vertices(v) => v.iter().map(|&u| VertexId(u)).collect(),
            InitialInfecteds::Random(groups) => {
                let mut out = Vec::new();
                for g in groups {
                    let range = self.population.type_range(g.type_index);
                    let picks = index::sample(rng, range.len(), g.count);
                    out.extend(picks.iter().map(|x| VertexId((range.start + x) as u32)));
                }
                out.sort_unstable();
                out.dedup();
                out
            }
        })
    }
}

/// Convenience constructors for common scenarios.
pub mod presets {
    use super::*;

    /// Single-type SIR with exponential infectious period.
    pub fn markov_sir(n: usize, rate: f64, recovery: f64) -> ModelConfig {
        ModelConfig {
            population: PopulationSpec::single(n),
            kernel: ContactKernel::Seir {
                latent: vec![Phase::ZERO],
                infectious: vec![Phase::Exponential { rate: recovery }],
                rates: vec![vec![rate]],
            },
            initial_infecteds: InitialInfecteds::Random(vec![SeedGroup { type_index: TypeIndex(0), count: 1 }]),
            seed: 0,
        }
    }

    /// Two-type marked model with Markov SIR individuals, `m̃_i = rates[i] / recovery`.
    pub fn marked_two_type(n: usize, p1: f64, rates: [f64; 2], recovery: f64) -> ModelConfig {
        ModelConfig {
            population: PopulationSpec::from_proportions(n, &[p1, 1.0 - p1]).unwrap(),
            kernel: ContactKernel::Marked(MarkedProcess {
                latent: vec![Phase::ZERO; 2],
                infectious: vec![Phase::Exponential { rate: recovery }; 2],
                rates: rates.to_vec(),
            }),
            initial_infecteds: InitialInfecteds::Random(vec![SeedGroup { type_index: TypeIndex(0), count: 1 }]),
            seed: 0,
        }
    }
}

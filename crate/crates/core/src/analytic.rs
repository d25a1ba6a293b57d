//! Closed forms and fixed points: R0, extinction probabilities, Borel
//! identities, the two-type sandwich bounds, and the binomial–Poisson
//! coupling distance.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use serde::Serialize;
use std::f64::consts::PI;

/// A root of a scalar fixed-point equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPointResult {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Perron root of a nonnegative irreducible mean matrix.
pub fn r0(m: &Matrix) -> Result<f64> {
    if !m.is_finite() || !m.is_nonnegative() {
        return Err(Error::Domain("mean matrix must be finite and nonnegative".into()));
    }
    if !m.is_irreducible() {
        return Err(Error::Domain("mean matrix is reducible".into()));
    }
    let r = m.spectral_radius(1e-14)?;
    if m.dim() == 2 {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let closed = 0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt());
        if (closed - r).abs() > 1e-9 * closed.max(1.0) {
            return Err(Error::NonConvergence { what: format!("power iteration gave {r}, quadratic gives {closed}"), iterations: 0 });
        }
    }
    Ok(r)
}

/// Smallest root in (0, 1) of `x = exp(-r0 (1 - x))`.
///
/// Bisection runs on `s = 1 - x`, where `s + expm1(-r0 s)` can be evaluated
/// without cancellation even when the root is close to 1.
pub fn fixed_point_q(r0: f64) -> Result<FixedPointResult> {
    if !(r0.is_finite() && r0 > 1.0) {
        return Err(Error::Subcritical { r0 });
    }
    let g = |s: f64| s + (-r0 * s).exp_m1();
    let (mut lo, mut hi) = (1e-300, 1.0);
    let mut iterations = 0;
    while iterations < 2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let s = if g(lo).abs() < g(hi).abs() { lo } else { hi };
    let value = 1.0 - s;
    Ok(FixedPointResult { value, residual: (value - (-r0 * (1.0 - value)).exp()).abs(), iterations })
}

/// Extinction probability of a Poisson(m) Galton–Watson tree: 1 when
/// `m ≤ 1`, otherwise the root of `x = exp(-m (1 - x))`.
pub fn fixed_point_qtilde(m: f64) -> Result<FixedPointResult> {
    if !(m.is_finite() && m >= 0.0) {
        return Err(Error::Domain(format!("offspring mean {m} must be finite and nonnegative")));
    }
    if m <= 1.0 {
        return Ok(FixedPointResult { value: 1.0, residual: 0.0, iterations: 0 });
    }
    fixed_point_q(m)
}

/// Extinction probabilities of a multi-type Poisson branching process
/// with offspring means `mb[(j, i)]` (type-`i` children of a type-`j` parent).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtinctionResult {
    pub q: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `q_j = exp(-Σ_i mb[(j,i)] (1 - q_i))` for the root in `[0,1)^K`.
///
/// Newton's method on survival probabilities, started from certain
/// survival. Plain iteration needs too many steps near criticality.
pub fn extinction_probabilities(mb: &Matrix) -> Result<ExtinctionResult> {
    let k = mb.dim();
    let rho = mb.spectral_radius(1e-14)?;
    if rho <= 1.0 {
        return Err(Error::Subcritical { r0: rho });
    }
    let f = |s: &[f64]| -> Vec<f64> { mb.mul_vec(s).iter().zip(s).map(|(ms, si)| si + (-ms).exp_m1()).collect() };
    let residual_of = |s: &[f64]| f(s).iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut s = vec![1.0; k];
    let mut best = (residual_of(&s), s.clone());
    let mut iterations = 0;
    const MAX_ITER: usize = 100_000;
    while iterations < MAX_ITER {
        let fs = f(&s);
        let ms = mb.mul_vec(&s);
        let jac = Matrix::from_fn(k, |r, c| if r == c { 1.0 } else { 0.0 } - (-ms[r]).exp() * mb[(r, c)]);
        let step = jac.solve(&fs).unwrap_or(fs);
        let mut moved: f64 = 0.0;
        for (si, d) in s.iter_mut().zip(&step) {
            let next = (*si - d).clamp(0.0, 1.0);
            moved = moved.max((next - *si).abs());
            *si = next;
        }
        iterations += 1;
        let res = residual_of(&s);
        if res < best.0 {
            best = (res, s.clone());
        } else if iterations > 3 && res <= 1e-15 {
            break;
        }
        let scale = s.iter().cloned().fold(0.0, f64::max);
        if moved <= 4.0 * f64::EPSILON * scale || res == 0.0 {
            break;
        }
    }
    let s = best.1;
    let q: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
    let pull = mb.mul_vec(&s);
    let residual = q.iter().zip(&pull).map(|(qi, p)| (qi - (-p).exp()).abs()).fold(0.0, f64::max);
    if residual >= 1e-12 {
        return Err(Error::NonConvergence { what: format!("extinction residual {residual}"), iterations });
    }
    Ok(ExtinctionResult { q, residual, iterations })
}

/// Two-type case of [`extinction_probabilities`].
pub fn extinction_probs_2type(mb: &Matrix) -> Result<(f64, f64)> {
    if mb.dim() != 2 {
        return Err(Error::Domain("expected a 2x2 matrix".into()));
    }
    let r = extinction_probabilities(mb)?;
    Ok((r.q[0], r.q[1]))
}

/// `ln ℓ! - [(ℓ + 1/2) ln ℓ - ℓ + ln(2π)/2]`.
fn stirling_remainder(ell: u64) -> f64 {
    if ell < 30 {
        let lf: f64 = (2..=ell).map(|k| (k as f64).ln()).sum();
        let l = ell as f64;
        return lf - (l + 0.5) * l.ln() + l - 0.5 * (2.0 * PI).ln();
    }
    let l = ell as f64;
    let r = 1.0 / (l * l);
    (1.0 / 12.0 - r * (1.0 / 360.0 - r * (1.0 / 1260.0 - r / 1680.0))) / l
}

/// `ln m - (m - 1)`, accurate near `m = 1`.
fn log_excess(m: f64) -> f64 {
    let d = m - 1.0;
    if d.abs() < 0.5 {
        d.ln_1p() - d
    } else {
        m.ln() - d
    }
}

/// Borel probability `(mℓ)^(ℓ-1) e^(-mℓ) / ℓ!`, the law of the total
/// progeny of a Poisson(m) Galton–Watson tree.
///
/// For `m > 1` the masses sum to the extinction probability rather than 1.
pub fn borel_pmf(m: f64, ell: u64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::Domain("Borel support starts at 1".into()));
    }
    if !(m.is_finite() && m >= 0.0) {
        return Err(Error::Domain(format!("Borel parameter {m} must be finite and nonnegative")));
    }
    if m == 0.0 {
        return Ok(if ell == 1 { 1.0 } else { 0.0 });
    }
    let l = ell as f64;
    let ln_p = l * log_excess(m) - m.ln() - 1.5 * l.ln() - 0.5 * (2.0 * PI).ln() - stirling_remainder(ell);
    Ok(ln_p.exp())
}

/// Total mass of the Borel masses for parameter `m`.
pub fn borel_total_mass(m: f64) -> Result<f64> {
    Ok(fixed_point_qtilde(m)?.value)
}

/// `E[1/Y] = 1 - m/2` for `Y ~ Borel(m)`, `m ≤ 1`.
pub fn borel_mean_inverse(m: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Domain(format!("mean of 1/Y needs 0 <= m <= 1, got {m}")));
    }
    Ok(1.0 - m / 2.0)
}

/// Law of the restricted susceptibility-set size given that the root is
/// reached: `[Borel(m)(ℓ) - q1 Borel(m q1)(ℓ)] / (1 - q1)`.
pub fn borel_conditional_pmf(m: f64, q1: f64, ell: u64) -> Result<f64> {
    if !(q1 > 0.0 && q1 < 1.0) {
        return Err(Error::Domain(format!("q1 = {q1} must lie in (0, 1)")));
    }
    let q = q1 * (m * (1.0 - q1)).exp();
    if !(q <= 1.0 + 1e-12) {
        return Err(Error::Domain(format!("inconsistent pair: q1 exp(m (1 - q1)) = {q} > 1")));
    }
    Ok((borel_pmf(m, ell)? - q1 * borel_pmf(m * q1, ell)?) / (1.0 - q1))
}

/// `(1 - m (q̃1 + q1) / 2) (q̃1 - q1) / (1 - q1)`: the smallest possible
/// fraction of type-1 infecteds whose infector is of the other type.
pub fn rho21_min(m: f64, q1: f64, q_tilde_1: f64) -> Result<f64> {
    const SLACK: f64 = 1e-12;
    if !(q1 > 0.0 && q1 < 1.0 && q1 <= q_tilde_1 + SLACK && q_tilde_1 <= 1.0 && m >= 0.0) {
        return Err(Error::Domain(format!("need 0 < q1 <= q~1 <= 1 and q1 < 1 (q1 = {q1}, q~1 = {q_tilde_1})")));
    }
    if m * q_tilde_1 > 1.0 + SLACK {
        return Err(Error::Domain(format!("m q~1 = {} exceeds 1", m * q_tilde_1)));
    }
    Ok((1.0 - m * (q_tilde_1 + q1) / 2.0) * (q_tilde_1 - q1).max(0.0) / (1.0 - q1))
}

/// Which algebraic form of the upper bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundsForm {
    /// `1 - rho21_min`, consistent with the derivation of the bound.
    #[default]
    Corrected,
    /// The same expression without the leading `1 -`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sandwich {
    pub rho1_minus: f64,
    pub rho1_plus: f64,
}

/// Bounds on the fraction of infections caused by type 1 in the two-type
/// marked model with proportions `(p1, 1 - p1)` and per-individual means
/// `(m1, m2)`.
pub fn attribution_bounds(p1: f64, m1: f64, m2: f64) -> Result<Sandwich> {
    bounds_with_form(p1, m1, m2, BoundsForm::Corrected)
}

pub fn bounds_with_form(p1: f64, m1: f64, m2: f64, form: BoundsForm) -> Result<Sandwich> {
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(Error::Domain(format!("p1 = {p1} must lie in (0, 1)")));
    }
    let p2 = 1.0 - p1;
    let r = p1 * m1 + p2 * m2;
    if !(r > 1.0) {
        return Err(Error::Subcritical { r0: r });
    }
    let q = fixed_point_q(r)?.value;
    let bracket1 = rho21_min(p1 * m1, q, fixed_point_qtilde(p1 * m1)?.value)?;
    let bracket2 = rho21_min(p2 * m2, q, fixed_point_qtilde(p2 * m2)?.value)?;
    Ok(match form {
        BoundsForm::Corrected => Sandwich { rho1_minus: bracket2, rho1_plus: 1.0 - bracket1 },
        BoundsForm::AsPrinted => Sandwich { rho1_minus: 1.0 - bracket2, rho1_plus: bracket1 },
    })
}

/// All derived quantities of a two-type marked model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticReport {
    pub r0: f64,
    pub q: f64,
    pub q_tilde_1: f64,
    pub q_tilde_2: f64,
    pub q1: f64,
    pub q2: f64,
    pub rho1_minus: f64,
    pub rho1_plus: f64,
}

pub fn analytic_report(p1: f64, m1: f64, m2: f64, form: BoundsForm) -> Result<AnalyticReport> {
    let bounds = bounds_with_form(p1, m1, m2, form)?;
    let p2 = 1.0 - p1;
    let mb = Matrix::from_rows(&[vec![p1 * m1, p2 * m2], vec![p1 * m1, p2 * m2]])?;
    let (q1, q2) = extinction_probs_2type(&mb)?;
    Ok(AnalyticReport {
        r0: p1 * m1 + p2 * m2,
        q: fixed_point_q(p1 * m1 + p2 * m2)?.value,
        q_tilde_1: fixed_point_qtilde(p1 * m1)?.value,
        q_tilde_2: fixed_point_qtilde(p2 * m2)?.value,
        q1,
        q2,
        rho1_minus: bounds.rho1_minus,
        rho1_plus: bounds.rho1_plus,
    })
}

/// Total variation distance between Binomial(n, p) and Poisson(λ).
pub fn tv_binomial_poisson(n_trials: u64, p: f64, lambda: f64) -> Result<f64> {
    if n_trials == 0 || !(0.0..=1.0).contains(&p) || !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain("need n >= 1, 0 <= p <= 1, lambda >= 0".into()));
    }
    let n = n_trials as f64;
    let ln_q = (-p).ln_1p();
    let ln_odds = p.ln() - ln_q;
    let mut ln_b = n * ln_q;
    let mut ln_pois = -lambda;
    let mut sum = 0.0;
    let mut k: u64 = 0;
    loop {
        let b = if p == 1.0 {
            if k == n_trials {
                1.0
            } else {
                0.0
            }
        } else if k <= n_trials {
            ln_b.exp()
        } else {
            0.0
        };
        let pois = ln_pois.exp();
        sum += (b - pois).abs();
        let kf = k as f64;
        let ratio_b = if k < n_trials { (n - kf) / (kf + 1.0) * p / (1.0 - p) } else { 0.0 };
        let ratio_p = lambda / (kf + 1.0);
        if k as f64 >= n * p && k as f64 >= lambda && b < 1e-17 && pois < 1e-17 && ratio_b < 0.5 && ratio_p < 0.5 {
            break;
        }
        if k < n_trials {
            ln_b += (n - kf).ln() - (kf + 1.0).ln() + ln_odds;
        }
        ln_pois += lambda.ln() - (kf + 1.0).ln();
        k += 1;
    }
    Ok(0.5 * sum)
}

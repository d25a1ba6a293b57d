use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

/// Duration of a latent or infectious phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Phase {
    Constant { value: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl Phase {
    pub const ZERO: Phase = Phase::Constant { value: 0.0 };

    /// Describes the first invalid parameter, if any.
    pub fn check(&self) -> Option<String> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            Phase::Constant { value } if !(value.is_finite() && value >= 0.0) => {
                Some(format!("constant duration {value} must be finite and nonnegative"))
            }
            Phase::Exponential { rate } if !ok(rate) => Some(format!("exponential rate {rate} must be finite and positive")),
            Phase::Gamma { shape, rate } if !ok(shape) || !ok(rate) => {
                Some(format!("gamma shape {shape} and rate {rate} must be finite and positive"))
            }
            _ => None,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Phase::Constant { value } => value,
            Phase::Exponential { rate } => 1.0 / rate,
            Phase::Gamma { shape, rate } => shape / rate,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Phase::Constant { value } => value,
            Phase::Exponential { rate } => Exp::new(rate).unwrap().sample(rng),
            Phase::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate).unwrap().sample(rng),
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            Phase::Constant { value } => {
                if t >= value {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Exponential { rate } => -(-rate * t).exp_m1(),
            Phase::Gamma { shape, rate } => gamma_lr(shape, rate * t),
        }
    }

    /// Laplace transform `E[exp(-x T)]`, for `x ≥ 0`.
    pub fn laplace(&self, x: f64) -> f64 {
        match *self {
            Phase::Constant { value } => (-x * value).exp(),
            Phase::Exponential { rate } => rate / (rate + x),
            Phase::Gamma { shape, rate } => (rate / (rate + x)).powf(shape),
        }
    }

    /// `E[min(T, r)]`.
    pub fn truncated_mean(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match *self {
            Phase::Constant { value } => value.min(r),
            Phase::Exponential { rate } => -(-rate * r).exp_m1() / rate,
            Phase::Gamma { shape, rate } => shape / rate * gamma_lr(shape + 1.0, rate * r) + r * (1.0 - gamma_lr(shape, rate * r)),
        }
    }

    /// CDF of the residual lifetime, whose density is `P(T > r) / E[T]`.
    ///
    /// A contact placed uniformly inside a phase of length `T`, weighted by
    /// `T`, lands at an offset with exactly this law.
    pub fn residual_cdf(&self, r: f64) -> f64 {
        (self.truncated_mean(r) / self.mean()).min(1.0)
    }

    /// Density of the residual lifetime.
    pub fn residual_density(&self, r: f64) -> f64 {
        if r < 0.0 {
            0.0
        } else {
            (1.0 - self.cdf(r)) / self.mean()
        }
    }

    /// Laplace transform of the residual lifetime, `(1 - E[exp(-xT)]) / (x E[T])`.
    pub fn residual_laplace(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 1.0;
        }
        let one_minus = match *self {
            Phase::Constant { value } => -(-x * value).exp_m1(),
            Phase::Exponential { rate } => x / (rate + x),
            Phase::Gamma { shape, rate } => -(shape * (-x / (rate + x)).ln_1p()).exp_m1(),
        };
        one_minus / (x * self.mean())
    }

    /// Draws a residual lifetime.
    pub fn sample_residual<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Phase::Constant { value } => rng.random::<f64>() * value,
            Phase::Exponential { rate } => Exp::new(rate).unwrap().sample(rng),
            // Uniform fraction of a size-biased draw.
            Phase::Gamma { shape, rate } => {
                let sized = Gamma::new(shape + 1.0, 1.0 / rate).unwrap().sample(rng);
                rng.random::<f64>() * sized
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    const PHASES: [Phase; 4] = [
        Phase::Constant { value: 1.5 },
        Phase::Exponential { rate: 2.0 },
        Phase::Gamma { shape: 2.5, rate: 3.0 },
        Phase::Gamma { shape: 0.5, rate: 1.0 },
    ];

    #[test]
    fn residual_cdf_is_integral_of_density() {
        for p in PHASES {
            for &r in &[0.1, 0.7, 1.4, 3.0] {
                let num = crate::quad::integrate(|s| p.residual_density(s), 0.0, r, 1e-13);
                let tol = if matches!(p, Phase::Constant { .. }) { 1e-9 } else { 1e-11 };
                assert!((num - p.residual_cdf(r)).abs() < tol, "{p:?} r={r}");
            }
        }
    }

    #[test]
    fn residual_laplace_matches_quadrature() {
        for p in PHASES {
            for &x in &[0.3, 1.0, 4.0] {
                let num = crate::quad::integrate(|s| (-x * s).exp() * p.residual_density(s), 0.0, 60.0, 1e-13);
                let tol = if matches!(p, Phase::Constant { .. }) { 1e-9 } else { 1e-10 };
                assert!((num - p.residual_laplace(x)).abs() < tol, "{p:?} x={x}");
            }
        }
    }

    #[test]
    fn residual_sampler_matches_cdf() {
        let mut rng = stream(1, Purpose::Test, 0);
        for p in PHASES {
            let n = 200_000;
            let r = 0.4;
            let hits = (0..n).filter(|_| p.sample_residual(&mut rng) <= r).count();
            let f = p.residual_cdf(r);
            let se = (f * (1.0 - f) / n as f64).sqrt();
            assert!((hits as f64 / n as f64 - f).abs() < 4.0 * se, "{p:?}");
        }
    }

    #[test]
    fn sample_mean_matches() {
        let mut rng = stream(2, Purpose::Test, 0);
        for p in PHASES {
            let xs: Vec<f64> = (0..200_000).map(|_| p.sample(&mut rng)).collect();
            let (m, se) = crate::stats::mean_stderr(&xs);
            assert!((m - p.mean()).abs() <= 4.0 * se + 1e-12, "{p:?}");
        }
    }

    #[test]
    fn invalid_parameters_reported() {
        assert!(Phase::Exponential { rate: 0.0 }.check().is_some());
        assert!(Phase::Gamma { shape: 1.0, rate: f64::NAN }.check().is_some());
        assert!(Phase::Constant { value: -1.0 }.check().is_some());
        assert!(Phase::ZERO.check().is_none());
    }
}

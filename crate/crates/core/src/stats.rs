//! Summary statistics and the goodness-of-fit tests used by the checks.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Sample mean and its standard error (sample sd / √n).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Pearson chi-square test of observed bin counts against bin probabilities.
///
/// `probs` covers every bin except the last, which receives the remaining
/// mass so the expected counts always total the sample size.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> TestOutcome {
    assert_eq!(observed.len(), probs.len() + 1, "one more observed bin than probabilities");
    let total: u64 = observed.iter().sum();
    let rest = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    let stat: f64 = observed
        .iter()
        .zip(probs.iter().chain(std::iter::once(&rest)))
        .map(|(&o, &p)| {
            let e = p * total as f64;
            if e > 0.0 {
                (o as f64 - e).powi(2) / e
            } else if o > 0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum();
    let dof = (observed.len() - 1) as f64;
    let p = if stat.is_finite() { 1.0 - ChiSquared::new(dof).unwrap().cdf(stat) } else { 0.0 };
    TestOutcome { statistic: stat, p_value: p }
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = 2.0 * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestOutcome {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    TestOutcome { statistic: d, p_value: kolmogorov_q((ne + 0.12 + 0.11 / ne) * d) }
}

/// Two-sided z-test for equality of two estimates with known standard errors.
pub fn z_test(a: f64, se_a: f64, b: f64, se_b: f64) -> TestOutcome {
    let se = (se_a * se_a + se_b * se_b).sqrt();
    let z = if se > 0.0 {
        (a - b) / se
    } else if a == b {
        0.0
    } else {
        f64::INFINITY
    };
    let p = 2.0 * (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z.abs()));
    TestOutcome { statistic: z, p_value: p }
}

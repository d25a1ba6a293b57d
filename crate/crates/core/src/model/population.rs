use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

/// Zero-based type label. Displayed, and written in config files, one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct TypeIndex(pub usize);

impl TryFrom<usize> for TypeIndex {
    type Error = String;
    fn try_from(v: usize) -> std::result::Result<Self, String> {
        v.checked_sub(1).map(TypeIndex).ok_or_else(|| "type labels start at 1".to_string())
    }
}

impl From<TypeIndex> for usize {
    fn from(t: TypeIndex) -> usize {
        t.0 + 1
    }
}

impl TypeIndex {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for TypeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0 + 1)
    }
}

/// Population size and its split into types.
///
/// Type `i` occupies the contiguous vertex range `offset(i)..offset(i+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n: usize,
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
}

impl PopulationSpec {
    /// Rounds `n·p` to integer counts by largest remainder, so every count
    /// is within one of its target.
    pub fn from_proportions(n: usize, proportions: &[f64]) -> Result<Self> {
        if proportions.is_empty() || proportions.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::Config("proportions must be positive and finite".into()));
        }
        let total: f64 = proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("proportions sum to {total}, not 1")));
        }
        let exact: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let short = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        Ok(PopulationSpec { n, counts, proportions: proportions.to_vec() })
    }

    pub fn single(n: usize) -> Self {
        PopulationSpec { n, counts: vec![n], proportions: vec![1.0] }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn offsets(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.counts.iter().scan(0, |acc, c| {
                *acc += c;
                Some(*acc)
            }))
            .collect()
    }

    pub fn type_range(&self, t: TypeIndex) -> Range<usize> {
        let start: usize = self.counts[..t.0].iter().sum();
        start..start + self.counts[t.0]
    }

    pub fn types(&self) -> impl Iterator<Item = TypeIndex> {
        (0..self.k()).map(TypeIndex)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn largest_remainder() {
        let p = PopulationSpec::from_proportions(100, &[0.3, 0.7]).unwrap();
        assert_eq!(p.counts, vec![30, 70]);
        let p = PopulationSpec::from_proportions(10, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert_eq!(p.counts.iter().sum::<usize>(), 10);
        assert_eq!(p.offsets(), vec![0, p.counts[0], p.counts[0] + p.counts[1], 10]);
    }

    #[test]
    fn ranges_tile_vertices() {
        let p = PopulationSpec::from_proportions(17, &[0.25, 0.5, 0.25]).unwrap();
        let mut next = 0;
        for t in p.types() {
            let r = p.type_range(t);
            assert_eq!(r.start, next);
            next = r.end;
        }
        assert_eq!(next, 17);
    }

    proptest! {
        #[test]
        fn rounding_within_one(n in 1usize..10_000, a in 0.05..1.0f64, b in 0.05..1.0f64) {
            let p = [a / (a + b), b / (a + b)];
            let pop = PopulationSpec::from_proportions(n, &p).unwrap();
            prop_assert_eq!(pop.counts.iter().sum::<usize>(), n);
            for (c, q) in pop.counts.iter().zip(p) {
                prop_assert!((*c as f64 / n as f64 - q).abs() <= 1.0 / n as f64 + 1e-12);
            }
        }
    }
}

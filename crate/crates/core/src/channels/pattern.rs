use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which components of an `m`-vector are transmitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ReductionPattern {
    dim: usize,
    mask: u64,
}

impl ReductionPattern {
    pub fn new(dim: usize, indices: &[usize]) -> Result<Self> {
        if dim == 0 || dim > 64 {
            return Err(Error::Config(format!("pattern dimension {dim} outside 1..=64")));
        }
        let mut mask = 0u64;
        for &i in indices {
            if i >= dim {
                return Err(Error::Config(format!("component {i} outside dimension {dim}")));
            }
            mask |= 1 << i;
        }
        Self::from_mask(dim, mask)
    }

    pub fn from_mask(dim: usize, mask: u64) -> Result<Self> {
        if dim == 0 || dim > 64 || (dim < 64 && mask >> dim != 0) {
            return Err(Error::Config(format!("mask {mask:#b} invalid for dimension {dim}")));
        }
        if mask == 0 {
            return Err(Error::Config("a pattern must select at least one component".into()));
        }
        Ok(ReductionPattern { dim, mask })
    }

    pub fn full(dim: usize) -> Self {
        let mask = if dim == 64 { u64::MAX } else { (1u64 << dim) - 1 };
        ReductionPattern { dim, mask }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.dim && self.mask & (1 << i) != 0
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.dim).filter(|&i| self.contains(i)).collect()
    }

    /// The 0-1 diagonal selection matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            if i == j && self.contains(i) {
                1.0
            } else {
                0.0
            }
        })
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All `C(m, budget)` patterns, ordered lexicographically by their sorted
/// index tuples ({0,1} < {0,2} < {1,2} for m = 3).
pub fn enumerate_patterns(m: usize, budget: usize) -> Result<Vec<ReductionPattern>> {
    if budget == 0 || budget > m {
        return Err(Error::Config(format!("budget {budget} outside 1..={m}")));
    }
    if m > 64 {
        return Err(Error::Config(format!("dimension {m} exceeds 64")));
    }
    let mut out = Vec::with_capacity(binomial(m, budget));
    let mut idx: Vec<usize> = (0..budget).collect();
    loop {
        out.push(ReductionPattern::new(m, &idx)?);
        // Advance to the next combination in lexicographic order.
        let Some(i) = (0..budget).rev().find(|&i| idx[i] < m - budget + i) else {
            return Ok(out);
        };
        idx[i] += 1;
        for j in i + 1..budget {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_reference_cases() {
        assert_eq!(enumerate_patterns(4, 2).unwrap().len(), 6);
        assert_eq!(enumerate_patterns(3, 2).unwrap().len(), 3);
        let full = enumerate_patterns(3, 3).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].matrix(), DMatrix::identity(3, 3));
    }

    #[test]
    fn order_for_three_components() {
        let p: Vec<Vec<usize>> = enumerate_patterns(3, 2).unwrap().iter().map(|p| p.indices()).collect();
        assert_eq!(p, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn exhaustive_counts_up_to_eight() {
        for m in 1..=8 {
            for s in 1..=m {
                let pats = enumerate_patterns(m, s).unwrap();
                assert_eq!(pats.len(), binomial(m, s), "m={m} s={s}");
                let mut masks: Vec<u64> = pats.iter().map(|p| p.mask()).collect();
                masks.dedup();
                assert_eq!(masks.len(), pats.len());
                assert!(pats.iter().all(|p| p.count() == s));
            }
        }
    }

    #[test]
    fn out_of_range_budget_is_rejected() {
        assert!(enumerate_patterns(3, 0).is_err());
        assert!(enumerate_patterns(3, 4).is_err());
    }
}

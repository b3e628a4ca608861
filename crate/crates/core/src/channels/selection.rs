use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::pattern::{enumerate_patterns, ReductionPattern};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum SelectionPolicy {
    /// Always the same pattern.
    Fixed(ReductionPattern),
    /// Cycle through the enumerated patterns by step index.
    RoundRobin,
    /// The components with the largest residual magnitude.
    GreedyResidual,
    /// Draw a pattern with the given probabilities (one per enumerated pattern).
    Categorical(Vec<f64>),
}

/// Per-link pattern selector with its own random stream.
#[derive(Clone, Debug)]
pub struct Selector {
    patterns: Vec<ReductionPattern>,
    policy: SelectionPolicy,
    budget: usize,
    rng: ChaCha8Rng,
}

impl Selector {
    pub fn new(m: usize, budget: usize, policy: SelectionPolicy, rng: ChaCha8Rng) -> Result<Self> {
        let patterns = enumerate_patterns(m, budget)?;
        match &policy {
            SelectionPolicy::Fixed(p) => {
                if p.dim() != m || p.count() != budget {
                    return Err(Error::Config(format!(
                        "fixed pattern {:?} does not select {budget} of {m} components",
                        p.indices()
                    )));
                }
            }
            SelectionPolicy::Categorical(pi) => {
                if pi.len() != patterns.len() {
                    return Err(Error::dim("pattern probabilities", patterns.len(), pi.len()));
                }
                if pi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::Config("pattern probabilities must be nonnegative".into()));
                }
                let s: f64 = pi.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::Config(format!("pattern probabilities sum to {s}, not 1")));
                }
            }
            _ => {}
        }
        Ok(Selector {
            patterns,
            policy,
            budget,
            rng,
        })
    }

    pub fn patterns(&self) -> &[ReductionPattern] {
        &self.patterns
    }

    pub fn policy(&self) -> &SelectionPolicy {
        &self.policy
    }

    /// Chooses the pattern for step `k`; only call when a transmission happens.
    pub fn select(&mut self, k: usize, residual: &DVector<f64>) -> ReductionPattern {
        match &self.policy {
            SelectionPolicy::Fixed(p) => *p,
            SelectionPolicy::RoundRobin => self.patterns[k % self.patterns.len()],
            SelectionPolicy::GreedyResidual => {
                let mut order: Vec<usize> = (0..residual.len()).collect();
                // Stable sort keeps the lowest index first among ties.
                order.sort_by(|&a, &b| residual[b].abs().total_cmp(&residual[a].abs()));
                order.truncate(self.budget);
                ReductionPattern::new(residual.len(), &order).expect("budget within dimension")
            }
            SelectionPolicy::Categorical(pi) => {
                let u: f64 = self.rng.gen();
                let mut acc = 0.0;
                for (p, pat) in pi.iter().zip(&self.patterns) {
                    acc += p;
                    if u < acc {
                        return *pat;
                    }
                }
                // Rounding left u above the cumulative sum: last positive entry.
                let last = pi.iter().rposition(|&p| p > 0.0).unwrap_or(pi.len() - 1);
                self.patterns[last]
            }
        }
    }

    /// Pattern distribution assumed by the stability analysis: the categorical
    /// probabilities, a point mass for a fixed pattern, and uniform weights for
    /// the deterministic cycling and residual-driven policies.
    pub fn distribution(&self) -> Vec<(f64, ReductionPattern)> {
        match &self.policy {
            SelectionPolicy::Fixed(p) => vec![(1.0, *p)],
            SelectionPolicy::Categorical(pi) => pi.iter().copied().zip(self.patterns.iter().copied()).collect(),
            _ => {
                let w = 1.0 / self.patterns.len() as f64;
                self.patterns.iter().map(|p| (w, *p)).collect()
            }
        }
    }

    /// Probability that each component is transmitted given a trigger.
    pub fn inclusion_probabilities(&self, m: usize) -> DVector<f64> {
        let mut out = DVector::zeros(m);
        for (w, p) in self.distribution() {
            for i in p.indices() {
                out[i] += w;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn round_robin_cycles() {
        let mut s = Selector::new(3, 2, SelectionPolicy::RoundRobin, rng()).unwrap();
        let r = DVector::zeros(3);
        let pats: Vec<ReductionPattern> = (0..4).map(|k| s.select(k, &r)).collect();
        let all = s.patterns().to_vec();
        assert_eq!(pats, vec![all[0], all[1], all[2], all[0]]);
    }

    #[test]
    fn greedy_picks_largest_residuals() {
        let mut s = Selector::new(3, 2, SelectionPolicy::GreedyResidual, rng()).unwrap();
        let p = s.select(0, &DVector::from_vec(vec![0.1, 0.9, 0.5]));
        assert_eq!(p.indices(), vec![1, 2]);
        let p = s.select(0, &DVector::from_vec(vec![0.5, 0.5, 0.5]));
        assert_eq!(p.indices(), vec![0, 1]);
    }

    #[test]
    fn categorical_frequencies() {
        let pi = vec![0.3, 0.2, 0.5];
        let mut s = Selector::new(3, 2, SelectionPolicy::Categorical(pi.clone()), rng()).unwrap();
        let pats = s.patterns().to_vec();
        let n = 100_000;
        let mut counts = [0usize; 3];
        let r = DVector::zeros(3);
        for k in 0..n {
            let p = s.select(k, &r);
            counts[pats.iter().position(|q| *q == p).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(&pi) {
            assert!((*c as f64 / n as f64 - p).abs() < 0.01);
        }
    }

    #[test]
    fn categorical_validation() {
        assert!(Selector::new(3, 2, SelectionPolicy::Categorical(vec![0.5, 0.5]), rng()).is_err());
        assert!(Selector::new(3, 2, SelectionPolicy::Categorical(vec![0.5, 0.6, -0.1]), rng()).is_err());
        assert!(Selector::new(3, 2, SelectionPolicy::Categorical(vec![0.3, 0.3, 0.3]), rng()).is_err());
    }

    #[test]
    fn inclusion_probabilities_of_categorical() {
        let s = Selector::new(3, 2, SelectionPolicy::Categorical(vec![0.3, 0.2, 0.5]), rng()).unwrap();
        let e = s.inclusion_probabilities(3);
        assert!((e[0] - 0.5).abs() < 1e-15 && (e[1] - 0.8).abs() < 1e-15 && (e[2] - 0.7).abs() < 1e-15);
    }
}

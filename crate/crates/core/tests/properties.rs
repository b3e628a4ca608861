use etfusion::channels::{binomial, enumerate_patterns, transmit, ReductionPattern, SelectionPolicy, Selector, TriggerState};
use etfusion::estimators::{fuse, FusionWeights};
use etfusion::lmi::lemma::{robust_problem, sampled_worst};
use etfusion::lmi::{solve, SolverOptions};
use etfusion::models::{numerical_jacobian, Dynamics, Measurement, NoiseEntry, RangeSensors, VehicleDynamics};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn signal_path(dim: usize, len: usize) -> impl Strategy<Value = Vec<DVector<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, dim), len).prop_map(|steps| {
        let mut x = DVector::zeros(steps[0].len());
        steps
            .into_iter()
            .map(|s| {
                x += DVector::from_vec(s);
                x.clone()
            })
            .collect()
    })
}

fn count_triggers(delta: f64, path: &[DVector<f64>]) -> usize {
    let mut t = TriggerState::new(delta).unwrap();
    t.initialize(&path[0]);
    path[1..].iter().filter(|s| t.evaluate(s)).count()
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn doubling_the_threshold_never_adds_triggers(
        path in signal_path(3, 60),
        small in 0.05..2.0f64,
        factor in 2.0..5.0f64,
    ) {
        prop_assert!(count_triggers(small * factor, &path) <= count_triggers(small, &path));
    }

    #[test]
    fn trigger_memory_stays_within_threshold(path in signal_path(2, 40), delta in 0.1..3.0f64) {
        let mut t = TriggerState::new(delta).unwrap();
        t.initialize(&path[0]);
        for s in &path[1..] {
            let fired = t.evaluate(s);
            let gap = (s - t.last_sent().unwrap()).norm();
            let ok = if fired { gap == 0.0 } else { gap <= delta };
            prop_assert!(ok);
        }
    }

    #[test]
    fn pattern_count_is_binomial(m in 1usize..=8, b in 1usize..=8) {
        prop_assume!(b <= m);
        let patterns = enumerate_patterns(m, b).unwrap();
        prop_assert_eq!(patterns.len(), binomial(m, b));
        for w in patterns.windows(2) {
            prop_assert!(w[0].indices() < w[1].indices());
        }
        for p in &patterns {
            prop_assert_eq!(p.count(), b);
            prop_assert_eq!(p.matrix().sum(), b as f64);
        }
    }

    #[test]
    fn transmission_carries_exactly_the_budget(
        m in 2usize..=6,
        b in 1usize..=6,
        triggered: bool,
        seed: u64,
        k in 0usize..1000,
    ) {
        prop_assume!(b <= m);
        let mut sel = Selector::new(m, b, SelectionPolicy::RoundRobin, ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let signal = DVector::from_fn(m, |i, _| i as f64 + 1.0);
        let out = transmit(k, triggered, sel.select(k, &signal), &signal);
        prop_assert_eq!(out.payload.len(), if triggered { b } else { 0 });
        prop_assert_eq!(out.mask_bits().count_ones() as usize, out.payload.len());
        let kept = out.expanded();
        for i in 0..m {
            prop_assert!(kept[i] == 0.0 || kept[i] == signal[i]);
        }
    }

    #[test]
    fn greedy_selection_keeps_the_largest_residuals(residual in prop::collection::vec(-5.0..5.0f64, 4), b in 1usize..=4) {
        let r = DVector::from_vec(residual);
        let mut sel = Selector::new(4, b, SelectionPolicy::GreedyResidual, ChaCha8Rng::seed_from_u64(0)).unwrap();
        let p = sel.select(0, &r);
        let kept_min = p.indices().iter().map(|&i| r[i].abs()).fold(f64::INFINITY, f64::min);
        let dropped_max = (0..4).filter(|i| !p.contains(*i)).map(|i| r[i].abs()).fold(0.0, f64::max);
        prop_assert!(kept_min >= dropped_max);
    }

    #[test]
    fn vehicle_jacobians_match_finite_differences(
        x in prop::collection::vec(-20.0..20.0f64, 3),
        speed in 0.2..2.0f64,
        turn in prop_oneof![-1.5..-0.1f64, 0.1..1.5f64],
    ) {
        let x = DVector::from_vec(x);
        let f = VehicleDynamics { sample_time: 1.8, speed, turn_rate: turn, entry: NoiseEntry::Commands };
        let fd = numerical_jacobian(|z| f.transition(z), &x);
        prop_assert!((f.jacobian(&x).unwrap() - fd).amax() < 1e-6 * (1.0 + speed / turn.abs()));
        let h = RangeSensors { anchors: vec![[30.0, 0.0], [0.0, -30.0], [-40.0, 35.0]], noise_gain: DMatrix::identity(3, 3) };
        let fd = numerical_jacobian(|z| h.output(z), &x);
        prop_assert!((h.jacobian(&x).unwrap() - fd).amax() < 1e-6);
    }

    #[test]
    fn fusion_weights_sum_to_identity(free in prop::collection::vec(matrix(3, 3, 2.0), 0..4), shift in prop::collection::vec(-5.0..5.0f64, 3)) {
        let w = FusionWeights::from_free(free, 3);
        let total = w.weights().iter().fold(DMatrix::zeros(3, 3), |acc, m| acc + m);
        prop_assert!((total - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        // Identical local estimates pass through unchanged.
        let x = DVector::from_vec(shift);
        let fused = fuse(&w, &vec![x.clone(); w.len()]);
        prop_assert!((fused - &x).amax() < 1e-9 * (1.0 + x.amax()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn categorical_frequencies_converge(raw in prop::collection::vec(0.05..1.0f64, 3), seed: u64) {
        let total: f64 = raw.iter().sum();
        let mut pi: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let s: f64 = pi[..2].iter().sum();
        pi[2] = 1.0 - s;
        let mut sel = Selector::new(3, 2, SelectionPolicy::Categorical(pi.clone()), ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let patterns: Vec<ReductionPattern> = sel.patterns().to_vec();
        let n = 20_000;
        let mut counts = [0usize; 3];
        let zero = DVector::zeros(3);
        for k in 0..n {
            let p = sel.select(k, &zero);
            counts[patterns.iter().position(|q| *q == p).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(&pi) {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            prop_assert!((*c as f64 / n as f64 - p).abs() < 5.0 * sd + 1e-9, "{counts:?} vs {pi:?}");
        }
    }

    #[test]
    fn certified_lemma_instances_survive_sampling(
        b in matrix(3, 3, 1.0),
        s2 in matrix(2, 3, 1.0),
        s3 in matrix(3, 2, 1.0),
        seed: u64,
    ) {
        let s1 = -(&b * b.transpose() + DMatrix::identity(3, 3) * 0.3);
        let (pr, _) = robust_problem(&s1, &s2, &s3);
        if solve(&pr, &SolverOptions::default()).status.is_feasible() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(sampled_worst(&s1, &s2, &s3, 300, &mut rng) < 0.0);
        }
    }
}

//! Aggregate error and channel-usage statistics over Monte Carlo runs.

use serde::Serialize;

use super::run::RunRecord;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Metrics {
    pub names: Vec<String>,
    /// `rmse[e][k] = sqrt(mean over runs of ||x(k) - x_e(k)||^2)`.
    pub rmse: Vec<Vec<f64>>,
    /// Mean of `rmse[e][k]` over `k > burn_in`.
    pub time_avg_rmse: Vec<f64>,
    /// Fraction of steps `1..=T` with a transmission, per link, averaged
    /// over runs.
    pub trigger_rate: Vec<f64>,
    /// Mean number of transmitted components per step over all links.
    pub bandwidth: f64,
}

/// RMSE series of every estimator across runs.
pub fn rmse_series(records: &[RunRecord]) -> Vec<Vec<f64>> {
    assert!(!records.is_empty(), "at least one run is required");
    let n_est = records[0].names.len();
    let steps = records[0].truth.len();
    let r = records.len() as f64;
    (0..n_est)
        .map(|e| {
            let mut acc = vec![0.0; steps];
            for rec in records {
                for (a, se) in acc.iter_mut().zip(rec.squared_errors(e)) {
                    *a += se;
                }
            }
            acc.into_iter().map(|s| (s / r).sqrt()).collect()
        })
        .collect()
}

/// Mean of a series over the indices after `burn_in`.
pub fn time_average(series: &[f64], burn_in: usize) -> f64 {
    let tail = &series[(burn_in + 1).min(series.len())..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

pub fn compute_metrics(records: &[RunRecord], burn_in: usize) -> Metrics {
    let rmse = rmse_series(records);
    let time_avg_rmse = rmse.iter().map(|s| time_average(s, burn_in)).collect();
    let links = records[0].gamma.first().map_or(0, |g| g.len());
    let horizon = records[0].horizon().max(1) as f64;
    let r = records.len() as f64;
    let mut trigger_rate = vec![0.0; links];
    let mut sent = 0.0;
    for rec in records {
        for k in 1..rec.gamma.len() {
            for i in 0..links {
                if rec.gamma[k][i] {
                    trigger_rate[i] += 1.0;
                }
                sent += rec.masks[k][i].count_ones() as f64;
            }
        }
    }
    for t in &mut trigger_rate {
        *t /= horizon * r;
    }
    Metrics {
        names: records[0].names.clone(),
        rmse,
        time_avg_rmse,
        trigger_rate,
        bandwidth: sent / (horizon * r),
    }
}

/// Least-squares slope of `ys` against its index and the slope's standard
/// error.
pub fn linear_trend(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    assert!(ys.len() >= 3, "trend needs at least three points");
    let xm = (n - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = (0..ys.len()).map(|i| (i as f64 - xm).powi(2)).sum();
    let sxy: f64 = ys.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (y - intercept - slope * i as f64).powi(2))
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    (slope, se)
}

/// No blow-up: the series after `burn_in` is finite and its last `window`
/// points show no significant upward trend (the lower end of the 95%
/// confidence interval of the slope is not above zero).
pub fn is_bounded(series: &[f64], burn_in: usize, window: usize) -> bool {
    let tail = &series[(burn_in + 1).min(series.len())..];
    if tail.is_empty() || tail.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let last = &tail[tail.len().saturating_sub(window)..];
    if last.len() < 3 {
        return true;
    }
    let (slope, se) = linear_trend(last);
    slope - 1.96 * se <= 0.0
}

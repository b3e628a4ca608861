//! Monte Carlo execution of the two pipelines, metrics, sweeps, stability
//! checks and persistence.

mod config;
mod metrics;
mod output;
mod run;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{
    Algorithm, ChannelMode, ChannelSection, ModelSection, NoiseKind, PolicyKind, ScenarioConfig, ScenarioSection,
    SolverSection, StabilitySection, SweepAxis, SweepSection, UncertaintySection,
};
pub use metrics::{compute_metrics, is_bounded, linear_trend, rmse_series, time_average, Metrics};
pub use output::{
    git_describe, meta_json, prepare_output_dir, run_csv, summary_csv, write_run_outputs, SCHEMA_VERSION,
};
pub use run::{first_step_problems, pilot_trigger_rates, run_sre, run_sfc, run_once, Prepared, RunDiagnostics, RunRecord};

use crate::channels::{ReductionPattern, Selector};
use crate::error::{Error, Result};
use crate::lmi::stability::{
    check_mean_stability, check_window_stability, expected_complement, MeanStabilityReport,
    WindowStabilityReport,
};
use crate::models::stream_rng;
use nalgebra::DMatrix;

/// Runs `0..runs` one after another.
pub fn monte_carlo_sequential(prep: &Prepared, runs: usize) -> Result<Vec<RunRecord>> {
    (0..runs).map(|r| run_once(prep, r)).collect()
}

/// Runs `0..runs` on a worker pool of `jobs` threads (the current rayon
/// pool when `None`). Results are ordered by run index.
#[cfg(feature = "parallel")]
pub fn monte_carlo_parallel(prep: &Prepared, runs: usize, jobs: Option<usize>) -> Result<Vec<RunRecord>> {
    use rayon::prelude::*;
    let Some(jobs) = jobs else {
        return (0..runs).into_par_iter().map(|r| run_once(prep, r)).collect();
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..runs).into_par_iter().map(|r| run_once(prep, r)).collect())
}

/// Runs the configured number of Monte Carlo runs, in parallel when the
/// `parallel` feature is enabled and `jobs` is not 1.
pub fn monte_carlo(prep: &Prepared, jobs: Option<usize>) -> Result<Vec<RunRecord>> {
    let runs = prep.config.scenario.runs;
    #[cfg(feature = "parallel")]
    if jobs != Some(1) {
        return monte_carlo_parallel(prep, runs, jobs);
    }
    let _ = jobs;
    monte_carlo_sequential(prep, runs)
}

/// Runs a configuration and aggregates the result.
pub fn run_config(config: &ScenarioConfig, jobs: Option<usize>) -> Result<(Vec<RunRecord>, Metrics)> {
    let prep = Prepared::new(config)?;
    let records = monte_carlo(&prep, jobs)?;
    let metrics = compute_metrics(&records, config.scenario.burn_in);
    Ok((records, metrics))
}

/// Inputs of the stability checks for one link.
#[derive(Clone, Debug)]
pub struct StabilityInputs {
    /// Transition Jacobians along the nominal trajectory, newest first.
    pub a_seq: Vec<DMatrix<f64>>,
    /// Remainder scalings of the compensation prediction, newest first.
    pub l_seq: Vec<DMatrix<f64>>,
    pub distribution: Vec<(f64, ReductionPattern)>,
    pub trigger_rate: f64,
}

impl StabilityInputs {
    pub fn theta_i(&self) -> DMatrix<f64> {
        let n = self.a_seq[0].nrows();
        expected_complement(&self.distribution, self.trigger_rate, n)
    }

    /// Scales every transition Jacobian.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for a in &mut s.a_seq {
            *a *= factor;
        }
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LinkStability {
    pub link: usize,
    pub trigger_rate: f64,
    /// Where the trigger probability came from: "config", "pilot" or "full".
    pub trigger_source: String,
    pub mean_holds: bool,
    /// Smallest certificate over the window when every step holds.
    pub rho: Option<f64>,
    pub mean_nominal: f64,
    pub mean_sampled_max: f64,
    pub window_holds: bool,
    pub window_nominal: f64,
    pub window_envelope: f64,
    pub window_sampled_max: f64,
}

impl LinkStability {
    pub fn holds(&self) -> bool {
        self.mean_holds && self.window_holds
    }
}

/// Trigger probability per link for the expectation over transmissions,
/// with its source.
pub fn stability_trigger_rates(prep: &Prepared) -> Result<(Vec<f64>, &'static str)> {
    let l = prep.links();
    if let Some(g) = prep.config.stability.trigger_rate {
        return Ok((vec![g; l], "config"));
    }
    if !prep.config.mode().uses_trigger() {
        return Ok((vec![1.0; l], "full"));
    }
    if prep.config.stability.pilot {
        return Ok((pilot_trigger_rates(prep)?, "pilot"));
    }
    Ok((vec![1.0; l], "full"))
}

/// Jacobians and scalings over the window along the noise-free trajectory
/// from the initial state.
pub fn stability_inputs(prep: &Prepared, trigger_rates: &[f64]) -> Result<Vec<StabilityInputs>> {
    let sc = &prep.scenario;
    let model = &sc.model;
    let n = model.n();
    let window = prep.config.stability.window;
    let mut xs = vec![sc.x0.clone()];
    for _ in 0..window {
        let next = model.predict(xs.last().expect("nonempty"));
        xs.push(next);
    }
    let mut out = Vec::new();
    for i in 0..prep.links() {
        let distribution = match &prep.policies {
            Some(p) => {
                let (budget, policy) = p[i].clone();
                Selector::new(n, budget, policy, stream_rng(0, 0, 0, 0))?.distribution()
            }
            None => vec![(1.0, ReductionPattern::full(n))],
        };
        let mut a_seq = Vec::new();
        let mut l_seq = Vec::new();
        for x in xs.iter().rev() {
            a_seq.push(model.dynamics_jacobian(x)?);
            l_seq.push(sc.uncertainty[i].l_c.matrix_at(x));
        }
        out.push(StabilityInputs {
            a_seq,
            l_seq,
            distribution,
            trigger_rate: trigger_rates[i],
        });
    }
    Ok(out)
}

/// Both checks on one link's inputs. The mean condition is evaluated at
/// every step of the window and must hold at all of them.
pub fn check_link(inputs: &StabilityInputs, samples: usize, seed: u64) -> (MeanStabilityReport, bool, WindowStabilityReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_i = inputs.theta_i();
    let mut worst: Option<MeanStabilityReport> = None;
    let mut all = true;
    let mut rho_min = f64::INFINITY;
    for (a, l) in inputs.a_seq.iter().zip(&inputs.l_seq) {
        let r = check_mean_stability(a, l, &theta_i, samples, &mut rng);
        all &= r.holds;
        if let Some(rho) = r.rho {
            rho_min = rho_min.min(rho);
        }
        if worst.as_ref().is_none_or(|w| r.sampled_max > w.sampled_max) {
            worst = Some(r);
        }
    }
    let mut mean = worst.expect("window has at least one step");
    mean.rho = (all && rho_min.is_finite()).then_some(rho_min);
    let window = check_window_stability(&inputs.a_seq, &inputs.l_seq, &inputs.distribution, inputs.trigger_rate, samples, &mut rng);
    (mean, all, window)
}

pub fn check_stability(prep: &Prepared) -> Result<Vec<LinkStability>> {
    let (rates, source) = stability_trigger_rates(prep)?;
    let inputs = stability_inputs(prep, &rates)?;
    let samples = prep.config.stability.samples;
    Ok(inputs
        .iter()
        .enumerate()
        .map(|(i, inp)| {
            let (mean, mean_holds, window) = check_link(inp, samples, prep.config.seed() ^ (i as u64 + 1));
            LinkStability {
                link: i + 1,
                trigger_rate: inp.trigger_rate,
                trigger_source: source.to_string(),
                mean_holds,
                rho: mean.rho,
                mean_nominal: mean.nominal_norm,
                mean_sampled_max: mean.sampled_max,
                window_holds: window.holds,
                window_nominal: window.nominal,
                window_envelope: window.envelope,
                window_sampled_max: window.sampled_max,
            }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepCell {
    pub axis: SweepAxis,
    pub value: String,
    pub metrics: Metrics,
}

/// Configurations of every cell of the sweep, sharing the master seed.
pub fn sweep_configs(config: &ScenarioConfig) -> Result<Vec<(String, ScenarioConfig)>> {
    let sw = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::MissingKeys(vec!["sweep.axis".into()]))?;
    let axis = sw.axis.expect("validated");
    let mut cells = Vec::new();
    match axis {
        SweepAxis::Threshold => {
            for &d in sw.thresholds.as_ref().expect("validated") {
                cells.push((d.to_string(), config.with_thresholds(d)));
            }
        }
        SweepAxis::Budget => {
            for b in sw.budgets.as_ref().expect("validated") {
                let label = b.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("+");
                cells.push((label, config.with_budgets(b.clone())));
            }
        }
        SweepAxis::Strategy => {
            for &m in sw.strategies.as_ref().expect("validated") {
                cells.push((m.label().to_string(), config.with_mode(m)));
            }
        }
    }
    for (label, c) in &mut cells {
        let mut text = c.clone();
        text.sweep = None;
        *c = ScenarioConfig::from_toml_str(&text.to_toml_string())
            .map_err(|e| Error::Config(format!("sweep cell {label}: {e}")))?;
    }
    Ok(cells)
}

pub fn sweep(config: &ScenarioConfig, jobs: Option<usize>) -> Result<Vec<SweepCell>> {
    let axis = config.sweep.as_ref().and_then(|s| s.axis).expect("validated");
    sweep_configs(config)?
        .into_iter()
        .map(|(value, c)| {
            let (_, metrics) = run_config(&c, jobs)?;
            Ok(SweepCell { axis, value, metrics })
        })
        .collect()
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut s = String::from("axis,value,estimator,time_avg_rmse,trigger_rate,bandwidth\n");
    for c in cells {
        let axis = match c.axis {
            SweepAxis::Threshold => "threshold",
            SweepAxis::Budget => "budget",
            SweepAxis::Strategy => "strategy",
        };
        let rate = c.metrics.trigger_rate.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";");
        for (name, v) in c.metrics.names.iter().zip(&c.metrics.time_avg_rmse) {
            s.push_str(&format!("{axis},{},{name},{v},{rate},{}\n", c.value, c.metrics.bandwidth));
        }
    }
    s
}

//! Scenario configuration: a sectioned TOML file with a strict schema.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::FilterKind;
use crate::channels::{binomial, check_bandwidth, ReductionPattern, SelectionPolicy};
use crate::error::{Error, Result};
use crate::lmi::{AlphaBorder, GainProblemOptions, SolverOptions, ZetaForm};
use crate::models::{make_vehicle_scenario, Scaling, Scenario, SensorUncertainty, VehicleNoise, VehicleParams};

type Unknown = BTreeMap<String, toml::Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Raw measurements travel to remote estimators.
    Sre,
    /// Local estimates travel to the fusion center.
    Sfc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelMode {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "ets")]
    EtsOnly,
    #[serde(rename = "drs")]
    DrsOnly,
    #[serde(rename = "ets+drs")]
    EtsDrs,
}

impl ChannelMode {
    pub fn uses_trigger(self) -> bool {
        matches!(self, ChannelMode::EtsOnly | ChannelMode::EtsDrs)
    }

    pub fn uses_reduction(self) -> bool {
        matches!(self, ChannelMode::DrsOnly | ChannelMode::EtsDrs)
    }

    pub fn label(self) -> &'static str {
        match self {
            ChannelMode::None => "none",
            ChannelMode::EtsOnly => "ets",
            ChannelMode::DrsOnly => "drs",
            ChannelMode::EtsDrs => "ets+drs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Bounded,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    RoundRobin,
    GreedyResidual,
    Categorical,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Threshold,
    Budget,
    Strategy,
}

fn default_horizon() -> usize {
    300
}
fn default_runs() -> usize {
    100
}
fn default_burn_in() -> usize {
    50
}
fn default_window() -> usize {
    10
}
fn default_samples() -> usize {
    1000
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioSection {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub algorithm: Option<Algorithm>,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Comparison filters run alongside the remote estimators.
    #[serde(default)]
    pub baselines: Vec<FilterKind>,
    #[serde(flatten, skip_serializing)]
    unknown: Unknown,
}

/// Overrides of the reference vehicle setup; omitted keys keep reference
/// values.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ModelSection {
    pub sample_time: Option<f64>,
    pub speed: Option<f64>,
    pub turn_rate: Option<f64>,
    pub anchors: Option<Vec<Vec<[f64; 2]>>>,
    pub noise_gains: Option<Vec<Vec<f64>>>,
    pub x0: Option<Vec<f64>>,
    pub xhat0: Option<Vec<f64>>,
    pub p0: Option<Vec<f64>>,
    pub command_scale: Option<Vec<f64>>,
    pub command_offset: Option<Vec<f64>>,
    pub sensor_scale: Option<Vec<Vec<f64>>>,
    pub sensor_offset: Option<Vec<Vec<f64>>>,
    pub process_variance: Option<Vec<f64>>,
    pub sensor_variance: Option<Vec<f64>>,
    #[serde(flatten, skip_serializing)]
    unknown: Unknown,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ChannelSection {
    pub mode: Option<ChannelMode>,
    /// One trigger threshold per link.
    pub thresholds: Option<Vec<f64>>,
    /// Components sent per link when reduction is active.
    pub budgets: Option<Vec<usize>>,
    /// Total components per step over all links (measurement links only).
    pub global_budget: Option<usize>,
    #[serde(default)]
    pub policy: Option<PolicyKind>,
    /// Pattern probabilities per link, in enumeration order.
    pub probabilities: Option<Vec<Vec<f64>>>,
    /// Selected component indices per link for the fixed policy.
    pub fixed: Option<Vec<Vec<usize>>>,
    #[serde(flatten, skip_serializing)]
    unknown: Unknown,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UncertaintySection {
    pub m_f: Option<Vec<Vec<f64>>>,
    pub m_h: Option<Vec<Vec<f64>>>,
    pub l_f: Option<Vec<Vec<f64>>>,
    pub l_h: Option<Vec<Vec<f64>>>,
    pub l_c: Option<Vec<Vec<f64>>>,
    pub alpha_m: Option<Vec<f64>>,
    pub alpha_s: Option<Vec<f64>>,
    #[serde(flatten, skip_serializing)]
    unknown: Unknown,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverSection {
    pub gap_tol: Option<f64>,
    pub max_newton: Option<usize>,
    pub mu: Option<f64>,
    pub newton_tol: Option<f64>,
    #[serde(default)]
    pub zeta: ZetaForm,
    #[serde(default)]
    pub alpha_border: AlphaBorder,
    /// Stop redesigning gains and weights after this step.
    pub freeze_after: Option<usize>,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(flatten, skip_serializing)]
    unknown: Unknown,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            gap_tol: None,
            max_newton: None,
            mu: None,
            newton_tol: None,
            zeta: ZetaForm::default(),
            alpha_border: AlphaBorder::default(),
            freeze_after: None,
            warm_start: true,
            unknown: Unknown::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilitySection {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Trigger probability used in the expectations; overrides the pilot.
    pub trigger_rate: Option<f64>,
    /// Estimate the trigger probability from a pilot run of the local
    /// estimators; when off and no rate is given, full triggering is assumed.
    #[serde(default = "default_true")]
    pub pilot: bool,
    #[serde(flatten, skip_serializing)]
    unknown: Unknown,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            window: default_window(),
            samples: default_samples(),
            trigger_rate: None,
            pilot: true,
            unknown: Unknown::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSection {
    pub axis: Option<SweepAxis>,
    pub thresholds: Option<Vec<f64>>,
    pub budgets: Option<Vec<Vec<usize>>>,
    pub strategies: Option<Vec<ChannelMode>>,
    #[serde(flatten, skip_serializing)]
    unknown: Unknown,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub uncertainty: UncertaintySection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(flatten, skip_serializing)]
    unknown: Unknown,
}

fn collect_unknown(prefix: &str, map: &Unknown, out: &mut Vec<String>) {
    for k in map.keys() {
        out.push(if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") });
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn algorithm(&self) -> Algorithm {
        self.scenario.algorithm.expect("validated")
    }

    pub fn mode(&self) -> ChannelMode {
        self.channel.mode.expect("validated")
    }

    pub fn seed(&self) -> u64 {
        self.scenario.seed.unwrap_or(0)
    }

    pub fn name(&self) -> String {
        self.scenario.name.clone().unwrap_or_else(|| "scenario".into())
    }

    pub fn solver_options(&self) -> SolverOptions {
        let d = SolverOptions::fast();
        SolverOptions {
            gap_tol: self.solver.gap_tol.unwrap_or(d.gap_tol),
            max_newton: self.solver.max_newton.unwrap_or(d.max_newton),
            mu: self.solver.mu.unwrap_or(d.mu),
            newton_tol: self.solver.newton_tol.unwrap_or(d.newton_tol),
        }
    }

    pub fn gain_options(&self) -> GainProblemOptions {
        GainProblemOptions {
            zeta: self.solver.zeta,
            alpha_border: self.solver.alpha_border,
        }
    }

    /// Same configuration with a different channel mode. Thresholds and
    /// budgets are kept, so a strategy sweep needs both in the base file.
    pub fn with_mode(&self, mode: ChannelMode) -> Self {
        let mut c = self.clone();
        c.channel.mode = Some(mode);
        c
    }

    pub fn with_thresholds(&self, delta: f64) -> Self {
        let mut c = self.clone();
        let l = self.link_count();
        c.channel.thresholds = Some(vec![delta; l]);
        c
    }

    pub fn with_budgets(&self, budgets: Vec<usize>) -> Self {
        let mut c = self.clone();
        if self.algorithm() == Algorithm::Sre {
            c.channel.global_budget = Some(budgets.iter().sum());
        }
        if let Some(pi) = &self.channel.probabilities {
            // Probabilities depend on the budget; fall back to uniform.
            if pi.iter().zip(&budgets).any(|(row, b)| row.len() != binomial(self.link_dim(), *b)) {
                c.channel.probabilities = Some(
                    budgets
                        .iter()
                        .map(|b| {
                            let h = binomial(self.link_dim(), *b);
                            vec![1.0 / h as f64; h]
                        })
                        .collect(),
                );
            }
        }
        c.channel.budgets = Some(budgets);
        c
    }

    fn link_count(&self) -> usize {
        self.model.anchors.as_ref().map_or(2, |a| a.len())
    }

    /// Length of the transmitted vector on each link (3 for both the range
    /// groups and the vehicle state).
    fn link_dim(&self) -> usize {
        3
    }

    fn validate(&self) -> Result<()> {
        let mut unknown = Vec::new();
        collect_unknown("", &self.unknown, &mut unknown);
        collect_unknown("scenario", &self.scenario.unknown, &mut unknown);
        collect_unknown("model", &self.model.unknown, &mut unknown);
        collect_unknown("channel", &self.channel.unknown, &mut unknown);
        collect_unknown("uncertainty", &self.uncertainty.unknown, &mut unknown);
        collect_unknown("solver", &self.solver.unknown, &mut unknown);
        collect_unknown("stability", &self.stability.unknown, &mut unknown);
        if let Some(s) = &self.sweep {
            collect_unknown("sweep", &s.unknown, &mut unknown);
        }
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }

        let mut missing = Vec::new();
        if self.scenario.algorithm.is_none() {
            missing.push("scenario.algorithm".to_string());
        }
        if self.channel.mode.is_none() {
            missing.push("channel.mode".to_string());
        }
        if let Some(mode) = self.channel.mode {
            if mode.uses_trigger() && self.channel.thresholds.is_none() {
                missing.push("channel.thresholds".into());
            }
            if mode.uses_reduction() && self.channel.budgets.is_none() {
                missing.push("channel.budgets".into());
            }
            if mode.uses_reduction() && self.scenario.algorithm == Some(Algorithm::Sre) && self.channel.global_budget.is_none() {
                missing.push("channel.global_budget".into());
            }
            if mode.uses_reduction() && self.policy() == PolicyKind::Categorical && self.channel.probabilities.is_none() {
                missing.push("channel.probabilities".into());
            }
            if mode.uses_reduction() && self.policy() == PolicyKind::Fixed && self.channel.fixed.is_none() {
                missing.push("channel.fixed".into());
            }
        }
        if let Some(s) = &self.sweep {
            match s.axis {
                None => missing.push("sweep.axis".into()),
                Some(SweepAxis::Threshold) if s.thresholds.is_none() => missing.push("sweep.thresholds".into()),
                Some(SweepAxis::Budget) if s.budgets.is_none() => missing.push("sweep.budgets".into()),
                Some(SweepAxis::Strategy) if s.strategies.is_none() => missing.push("sweep.strategies".into()),
                _ => {}
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingKeys(missing));
        }

        if self.scenario.horizon == 0 || self.scenario.runs == 0 {
            return Err(Error::Config("scenario.horizon and scenario.runs must be positive".into()));
        }
        let l = self.link_count();
        let dim = self.link_dim();
        if let Some(th) = &self.channel.thresholds {
            if th.len() != l {
                return Err(Error::dim("channel.thresholds", l, th.len()));
            }
            if th.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(Error::Config("channel.thresholds must be positive and finite".into()));
            }
        }
        if let Some(b) = &self.channel.budgets {
            if b.len() != l {
                return Err(Error::dim("channel.budgets", l, b.len()));
            }
            if b.iter().any(|&v| v == 0 || v > dim) {
                return Err(Error::Config(format!("channel.budgets entries must lie in 1..={dim}")));
            }
            if self.mode().uses_reduction() && self.algorithm() == Algorithm::Sre {
                let g = self.channel.global_budget.expect("checked above");
                if !check_bandwidth(b, g) {
                    return Err(Error::Config(format!(
                        "channel.budgets {b:?} do not add up to channel.global_budget = {g}"
                    )));
                }
            }
        }
        if self.mode().uses_reduction() {
            self.policies()?;
        }
        if let Some(g) = self.stability.trigger_rate {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config("stability.trigger_rate must lie in [0, 1]".into()));
            }
        }
        self.vehicle_params().and_then(|p| make_vehicle_scenario(&p).map(|_| ()))
    }

    pub fn policy(&self) -> PolicyKind {
        self.channel.policy.unwrap_or(match self.scenario.algorithm {
            Some(Algorithm::Sfc) => PolicyKind::Categorical,
            _ => PolicyKind::RoundRobin,
        })
    }

    /// Per-link selection policy and budget; `None` when reduction is off.
    pub fn policies(&self) -> Result<Option<Vec<(usize, SelectionPolicy)>>> {
        if !self.mode().uses_reduction() {
            return Ok(None);
        }
        let budgets = self.channel.budgets.clone().expect("validated");
        let dim = self.link_dim();
        let mut out = Vec::new();
        for (i, &b) in budgets.iter().enumerate() {
            let policy = match self.policy() {
                PolicyKind::RoundRobin => SelectionPolicy::RoundRobin,
                PolicyKind::GreedyResidual => SelectionPolicy::GreedyResidual,
                PolicyKind::Categorical => {
                    let rows = self.channel.probabilities.as_ref().expect("validated");
                    let row = rows.get(i).ok_or_else(|| Error::dim("channel.probabilities", budgets.len(), rows.len()))?;
                    SelectionPolicy::Categorical(row.clone())
                }
                PolicyKind::Fixed => {
                    let rows = self.channel.fixed.as_ref().expect("validated");
                    let idx = rows.get(i).ok_or_else(|| Error::dim("channel.fixed", budgets.len(), rows.len()))?;
                    SelectionPolicy::Fixed(ReductionPattern::new(dim, idx)?)
                }
            };
            // Constructing a selector validates the policy against the budget.
            crate::channels::Selector::new(dim, b, policy.clone(), crate::models::stream_rng(0, 0, 0, 0))?;
            out.push((b, policy));
        }
        Ok(Some(out))
    }

    pub fn vehicle_params(&self) -> Result<VehicleParams> {
        let mut p = VehicleParams::reference();
        let m = &self.model;
        if let Some(v) = m.sample_time {
            p.sample_time = v;
        }
        if let Some(v) = m.speed {
            p.speed = v;
        }
        if let Some(v) = m.turn_rate {
            p.turn_rate = v;
        }
        if let Some(v) = &m.anchors {
            p.anchors = v.clone();
        }
        if let Some(v) = &m.noise_gains {
            p.noise_gains = v.clone();
        }
        if let Some(v) = &m.x0 {
            p.x0 = v.clone();
        }
        if let Some(v) = &m.xhat0 {
            p.xhat0 = v.clone();
        }
        if let Some(v) = &m.p0 {
            p.p0 = v.clone();
        }
        p.noise = match self.scenario.noise {
            NoiseKind::Bounded => {
                let VehicleNoise::Bounded {
                    command_scale,
                    command_offset,
                    sensor_scale,
                    sensor_offset,
                } = VehicleNoise::reference_bounded()
                else {
                    unreachable!()
                };
                VehicleNoise::Bounded {
                    command_scale: m.command_scale.clone().unwrap_or(command_scale),
                    command_offset: m.command_offset.clone().unwrap_or(command_offset),
                    sensor_scale: m.sensor_scale.clone().unwrap_or(sensor_scale),
                    sensor_offset: m.sensor_offset.clone().unwrap_or(sensor_offset),
                }
            }
            NoiseKind::Gaussian => {
                let VehicleNoise::Gaussian {
                    process_variance,
                    sensor_variance,
                } = VehicleNoise::reference_gaussian()
                else {
                    unreachable!()
                };
                VehicleNoise::Gaussian {
                    process_variance: m.process_variance.clone().unwrap_or(process_variance),
                    sensor_variance: m.sensor_variance.clone().unwrap_or(sensor_variance),
                }
            }
        };
        let u = &self.uncertainty;
        let groups = p.anchors.len();
        if p.uncertainty.len() != groups {
            let first = p.uncertainty[0].clone();
            p.uncertainty = vec![first; groups];
        }
        let tables: [(&Option<Vec<Vec<f64>>>, &str); 5] =
            [(&u.m_f, "m_f"), (&u.m_h, "m_h"), (&u.l_f, "l_f"), (&u.l_h, "l_h"), (&u.l_c, "l_c")];
        for (table, name) in tables {
            if let Some(rows) = table {
                if rows.len() != groups {
                    return Err(Error::dim(format!("uncertainty.{name}"), groups, rows.len()));
                }
                for (unc, row) in p.uncertainty.iter_mut().zip(rows) {
                    let s = Scaling::constant(row);
                    set_scaling(unc, name, s);
                }
            }
        }
        for (values, name) in [(&u.alpha_m, "alpha_m"), (&u.alpha_s, "alpha_s")] {
            if let Some(v) = values {
                if v.len() != groups {
                    return Err(Error::dim(format!("uncertainty.{name}"), groups, v.len()));
                }
                for (unc, a) in p.uncertainty.iter_mut().zip(v) {
                    if name == "alpha_m" {
                        unc.alpha_m = Some(*a);
                    } else {
                        unc.alpha_s = Some(*a);
                    }
                }
            }
        }
        Ok(p)
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        make_vehicle_scenario(&self.vehicle_params()?)
    }
}

fn set_scaling(unc: &mut SensorUncertainty, name: &str, s: Scaling) {
    match name {
        "m_f" => unc.m_f = s,
        "m_h" => unc.m_h = s,
        "l_f" => unc.l_f = s,
        "l_h" => unc.l_h = s,
        _ => unc.l_c = s,
    }
}

//! Single Monte Carlo runs of the two fusion pipelines.

use log::warn;
use nalgebra::{DMatrix, DVector};

use super::config::{Algorithm, ChannelMode, ScenarioConfig};
use crate::baselines::{filter_step, FilterKind, GaussianFilterState};
use crate::channels::{compensate_measurement, transmit, ReductionPattern, SelectionPolicy, Selector, TriggerState};
use crate::error::{Error, Result};
use crate::estimators::{
    build_lne_error_blocks, build_lre_error_blocks, cse_step, design_gain, fuse, lne_step, lre_step,
    CompensatedErrorBlocks, EstimatorKind, FusionWeights, GainDesign, LocalErrorBlocks, LocalEstimatorState,
};
use crate::linalg::lambda_max;
use crate::lmi::{
    build_fusion_problem, build_gain_problem, build_compensated_fusion_problem, solve_warm,
    FusionProblem, GainProblemOptions, LmiProblem, SolverOptions,
};
use crate::models::{stream_rng, Scenario};

/// Random stream identifiers. Sensor noise uses `SENSOR_NOISE + i`, pattern
/// selection `SELECTOR + i`.
const PROCESS_NOISE: u64 = 0;
const SENSOR_NOISE: u64 = 1;
const SELECTOR: u64 = 1 << 32;

/// Everything shared by the runs of one configuration.
pub struct Prepared {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    pub policies: Option<Vec<(usize, SelectionPolicy)>>,
    pub solver: SolverOptions,
    pub gain_options: GainProblemOptions,
}

impl Prepared {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        Ok(Prepared {
            scenario: config.build_scenario()?,
            policies: config.policies()?,
            solver: config.solver_options(),
            gain_options: config.gain_options(),
            config: config.clone(),
        })
    }

    pub fn links(&self) -> usize {
        self.scenario.model.sensor_count()
    }

    fn mode(&self) -> ChannelMode {
        self.config.mode()
    }

    fn trigger(&self, i: usize) -> Result<TriggerState> {
        if self.mode().uses_trigger() {
            TriggerState::new(self.config.channel.thresholds.as_ref().expect("validated")[i])
        } else {
            Ok(TriggerState::always())
        }
    }

    fn selector(&self, run: usize, i: usize, dim: usize) -> Result<Option<Selector>> {
        match &self.policies {
            None => Ok(None),
            Some(p) => {
                let (budget, policy) = p[i].clone();
                let rng = stream_rng(self.config.seed(), run as u64, 0, SELECTOR + i as u64);
                Selector::new(dim, budget, policy, rng).map(Some)
            }
        }
    }

    fn redesign(&self, k: usize) -> bool {
        self.config.solver.freeze_after.is_none_or(|k0| k <= k0)
    }

    /// Estimator names in record order.
    pub fn estimator_names(&self) -> Vec<String> {
        let l = self.links();
        let mut names = Vec::new();
        match self.config.algorithm() {
            Algorithm::Sre => {
                names.extend((1..=l).map(|i| format!("lre{i}")));
                names.push("dfe".into());
                for kind in &self.config.scenario.baselines {
                    names.extend((1..=l).map(|i| format!("{}{i}", kind.name())));
                }
            }
            Algorithm::Sfc => {
                names.extend((1..=l).map(|i| format!("lne{i}")));
                names.extend((1..=l).map(|i| format!("cse{i}")));
                names.push("dcfe".into());
            }
        }
        names
    }

    /// Indices of the local estimators and of the fused estimate within the
    /// record: (locals compared against fusion, fused).
    pub fn fusion_indices(&self) -> (Vec<usize>, usize) {
        let l = self.links();
        match self.config.algorithm() {
            Algorithm::Sre => ((0..l).collect(), l),
            Algorithm::Sfc => ((l..2 * l).collect(), 2 * l),
        }
    }
}

/// Counters and checks collected during one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunDiagnostics {
    /// Gain designs performed and those that found no feasible point.
    pub designs: usize,
    pub design_failures: usize,
    pub fusion_solves: usize,
    pub fusion_failures: usize,
    /// One-step error bounds checked after a successful design, and those
    /// exceeded.
    pub bound_checks: usize,
    pub bound_violations: usize,
    /// Largest ratio of realized squared error to its certified bound.
    pub worst_bound_ratio: f64,
    pub filter_repairs: usize,
}

/// Complete trace of one run. Index `k` runs over `0..=T`; step 0 holds the
/// initial condition.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub names: Vec<String>,
    pub truth: Vec<DVector<f64>>,
    /// `estimates[e][k]`.
    pub estimates: Vec<Vec<DVector<f64>>>,
    /// `gamma[k][i]`.
    pub gamma: Vec<Vec<bool>>,
    /// Bitmask of the transmitted components, 0 when nothing was sent.
    pub masks: Vec<Vec<u64>>,
    pub diagnostics: RunDiagnostics,
}

impl RunRecord {
    fn new(run: usize, names: Vec<String>) -> Self {
        RunRecord {
            run,
            estimates: vec![Vec::new(); names.len()],
            names,
            truth: Vec::new(),
            gamma: Vec::new(),
            masks: Vec::new(),
            diagnostics: RunDiagnostics::default(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.truth.len().saturating_sub(1)
    }

    /// Squared error of estimator `e` at every step.
    pub fn squared_errors(&self, e: usize) -> Vec<f64> {
        self.truth
            .iter()
            .zip(&self.estimates[e])
            .map(|(x, xh)| (x - xh).norm_squared())
            .collect()
    }

    fn push_step(&mut self, truth: DVector<f64>, estimates: Vec<DVector<f64>>, gamma: Vec<bool>, masks: Vec<u64>) {
        self.truth.push(truth);
        for (series, x) in self.estimates.iter_mut().zip(estimates) {
            series.push(x);
        }
        self.gamma.push(gamma);
        self.masks.push(masks);
    }
}

fn tag_run(e: Error, run: usize) -> Error {
    match e {
        Error::Diverged { step, what, .. } => Error::Diverged { run, step, what },
        other => other,
    }
}

/// Realized noises of one step.
struct StepNoise {
    w: DVector<f64>,
    v: Vec<DVector<f64>>,
}

fn draw_noise(prep: &Prepared, run: usize, k: usize) -> StepNoise {
    let seed = prep.config.seed();
    let sc = &prep.scenario;
    let w = sc.process_noise.sample(&mut stream_rng(seed, run as u64, k as u64, PROCESS_NOISE));
    let v = (0..prep.links())
        .map(|i| sc.measurement_noise[i].sample(&mut stream_rng(seed, run as u64, k as u64, SENSOR_NOISE + i as u64)))
        .collect();
    StepNoise { w, v }
}

/// Checks the certified one-step bound of a designed gain.
fn check_bound(diag: &mut RunDiagnostics, design: &GainDesign, se_prev: f64, se_now: f64, noise: &StepNoise, i: usize) {
    let bound = lambda_max(&design.psi) * se_prev
        + noise.w.norm_squared() * lambda_max(&design.phi)
        + noise.v[i].norm_squared() * lambda_max(&design.upsilon);
    diag.bound_checks += 1;
    let ratio = if bound > 0.0 { se_now / bound } else { f64::INFINITY };
    diag.worst_bound_ratio = diag.worst_bound_ratio.max(ratio);
    if se_now > bound * (1.0 + 1e-9) {
        diag.bound_violations += 1;
    }
}

/// Fusion-weight state carried across steps, with the previous optimum for
/// warm starts.
struct FusionState {
    weights: FusionWeights,
    previous: Option<Vec<f64>>,
}

impl FusionState {
    fn new(l: usize, n: usize) -> Self {
        FusionState {
            weights: FusionWeights::equal(l, n),
            previous: None,
        }
    }

    fn update(&mut self, prep: &Prepared, diag: &mut RunDiagnostics, k: usize, fp: Result<FusionProblem>) {
        let fp = match fp {
            Ok(fp) => fp,
            Err(e) => {
                warn!("fusion problem at step {k} not assembled: {e}");
                diag.fusion_failures += 1;
                return;
            }
        };
        diag.fusion_solves += 1;
        let prev = if prep.config.solver.warm_start { self.previous.as_deref() } else { None };
        let sol = solve_warm(&fp.problem, &prep.solver, &fp.start, prev);
        if sol.status.is_feasible() {
            let n = self.weights.weights()[0].nrows();
            let free = fp.weights.iter().map(|&w| fp.problem.value(&sol.x, w)).collect();
            self.weights = FusionWeights::from_free(free, n);
            self.previous = Some(sol.x);
        } else {
            warn!("fusion weights at step {k} infeasible; keeping previous weights");
            diag.fusion_failures += 1;
        }
    }
}

/// Designs a gain, falling back to the previous one on failure.
fn redesign_gain(
    prep: &Prepared,
    diag: &mut RunDiagnostics,
    blocks: &LocalErrorBlocks,
    state: &mut LocalEstimatorState,
    k: usize,
    i: usize,
) -> Option<GainDesign> {
    diag.designs += 1;
    match design_gain(blocks, &prep.gain_options, &prep.solver) {
        Some(d) => {
            state.gain = d.gain.clone();
            Some(d)
        }
        None => {
            warn!("gain design for link {i} at step {k} infeasible; keeping previous gain");
            diag.design_failures += 1;
            None
        }
    }
}

/// Assembled problems of one step, collected for export.
type Captured = Vec<(String, LmiProblem)>;

fn capture_gain(captured: &mut Option<&mut Captured>, blocks: &LocalErrorBlocks, opts: &GainProblemOptions, i: usize) {
    if let Some(c) = captured {
        if let Ok(gp) = build_gain_problem(blocks, opts) {
            c.push((format!("gain{}", i + 1), gp.problem));
        }
    }
}

fn capture_fusion(captured: &mut Option<&mut Captured>, fp: &Result<FusionProblem>) {
    if let (Some(c), Ok(fp)) = (captured, fp) {
        c.push(("fusion".into(), fp.problem.clone()));
    }
}

/// Measurement links to remote estimators, fused by optimized weights.
pub fn run_sre(prep: &Prepared, run: usize) -> Result<RunRecord> {
    sre_pipeline(prep, run, prep.config.scenario.horizon, None)
}

fn sre_pipeline(prep: &Prepared, run: usize, horizon: usize, mut captured: Option<&mut Captured>) -> Result<RunRecord> {
    let sc = &prep.scenario;
    let model = &sc.model;
    let l = prep.links();
    let n = model.n();
    let mut rec = RunRecord::new(run, prep.estimator_names());

    let mut x = sc.x0.clone();
    let noise0 = draw_noise(prep, run, 0);
    let mut triggers = Vec::new();
    let mut selectors = Vec::new();
    for i in 0..l {
        let mut t = prep.trigger(i)?;
        t.initialize(&model.measure(i, &x, &noise0.v[i], 0)?);
        triggers.push(t);
        selectors.push(prep.selector(run, i, model.m(i))?);
    }
    let mut lres: Vec<_> = (0..l)
        .map(|i| LocalEstimatorState::new(EstimatorKind::Remote, sc.xhat0.clone(), model.m(i)))
        .collect();
    let kinds: Vec<FilterKind> = prep.config.scenario.baselines.clone();
    let mut filters: Vec<Vec<GaussianFilterState>> = kinds
        .iter()
        .map(|_| {
            (0..l)
                .map(|i| {
                    GaussianFilterState::new(
                        sc.xhat0.clone(),
                        sc.p0.clone(),
                        sc.process_noise.covariance(),
                        sc.measurement_noise[i].covariance(),
                    )
                })
                .collect()
        })
        .collect();
    let mut fusion = FusionState::new(l, n);

    let snapshot = |lres: &[LocalEstimatorState], fused: &DVector<f64>, filters: &[Vec<GaussianFilterState>]| {
        let mut v: Vec<DVector<f64>> = lres.iter().map(|s| s.estimate.clone()).collect();
        v.push(fused.clone());
        for f in filters {
            v.extend(f.iter().map(|s| s.mean.clone()));
        }
        v
    };
    rec.push_step(x.clone(), snapshot(&lres, &sc.xhat0, &filters), vec![false; l], vec![0; l]);

    for k in 1..=horizon {
        let noise = draw_noise(prep, run, k);
        let x_prev = x.clone();
        x = model.step_truth(&x, &noise.w, k - 1)?;
        let redesign = prep.redesign(k);
        let mut blocks = Vec::with_capacity(l);
        let mut gammas = Vec::with_capacity(l);
        let mut masks = Vec::with_capacity(l);
        for i in 0..l {
            let y = model.measure(i, &x, &noise.v[i], k)?;
            let est_prev = lres[i].estimate.clone();
            let pred = model.predict(&est_prev);
            let triggered = triggers[i].evaluate(&y);
            let pattern = match (&mut selectors[i], triggered) {
                (Some(sel), true) => sel.select(k, &(&y - model.sensors[i].output(&pred))),
                _ => ReductionPattern::full(model.m(i)),
            };
            let out = transmit(k, triggered, pattern, &y);
            gammas.push(triggered);
            masks.push(out.mask_bits());

            let blk = build_lre_error_blocks(model, i, &sc.uncertainty[i], out.gamma(), &out.selection_matrix(), k, &est_prev, &pred)?;
            // An untriggered step is a pure prediction whatever the gain.
            if redesign && triggered {
                capture_gain(&mut captured, &blk, &prep.gain_options, i);
            }
            let design = if redesign && triggered {
                redesign_gain(prep, &mut rec.diagnostics, &blk, &mut lres[i], k, i)
            } else {
                None
            };
            lre_step(&mut lres[i], model, i, &out, k).map_err(|e| tag_run(e, run))?;
            if let Some(d) = &design {
                let se_prev = (&x_prev - &est_prev).norm_squared();
                let se_now = (&x - &lres[i].estimate).norm_squared();
                check_bound(&mut rec.diagnostics, d, se_prev, se_now, &noise, i);
            }
            blocks.push(blk);

            for (kind, fs) in kinds.iter().zip(filters.iter_mut()) {
                let st = &mut fs[i];
                let predicted = model.sensors[i].output(&model.predict(&st.mean));
                let z = compensate_measurement(&out, &predicted);
                filter_step(*kind, st, model, i, &z, k).map_err(|e| tag_run(e, run))?;
            }
        }

        if l > 1 && redesign {
            let gains: Vec<DMatrix<f64>> = lres.iter().map(|s| s.gain.clone()).collect();
            let fp = build_fusion_problem(&blocks, &gains, Some(fusion.weights.free()));
            capture_fusion(&mut captured, &fp);
            fusion.update(prep, &mut rec.diagnostics, k, fp);
        }
        let locals: Vec<_> = lres.iter().map(|s| s.estimate.clone()).collect();
        let fused = fuse(&fusion.weights, &locals);
        rec.push_step(x.clone(), snapshot(&lres, &fused, &filters), gammas, masks);
    }
    rec.diagnostics.filter_repairs = filters.iter().flatten().map(|s| s.repairs).sum();
    Ok(rec)
}

/// Local estimators on every raw measurement, whose estimates travel over
/// constrained links, are compensated at the fusion center and fused.
pub fn run_sfc(prep: &Prepared, run: usize) -> Result<RunRecord> {
    sfc_pipeline(prep, run, prep.config.scenario.horizon, None)
}

fn sfc_pipeline(prep: &Prepared, run: usize, horizon: usize, mut captured: Option<&mut Captured>) -> Result<RunRecord> {
    let sc = &prep.scenario;
    let model = &sc.model;
    let l = prep.links();
    let n = model.n();
    let mut rec = RunRecord::new(run, prep.estimator_names());

    let mut x = sc.x0.clone();
    let mut triggers = Vec::new();
    let mut selectors = Vec::new();
    for i in 0..l {
        let mut t = prep.trigger(i)?;
        t.initialize(&sc.xhat0);
        triggers.push(t);
        selectors.push(prep.selector(run, i, n)?);
    }
    let mut lnes: Vec<_> = (0..l)
        .map(|i| LocalEstimatorState::new(EstimatorKind::Local, sc.xhat0.clone(), model.m(i)))
        .collect();
    let mut cses: Vec<DVector<f64>> = vec![sc.xhat0.clone(); l];
    let mut fusion = FusionState::new(l, n);

    let snapshot = |lnes: &[LocalEstimatorState], cses: &[DVector<f64>], fused: &DVector<f64>| {
        let mut v: Vec<DVector<f64>> = lnes.iter().map(|s| s.estimate.clone()).collect();
        v.extend(cses.iter().cloned());
        v.push(fused.clone());
        v
    };
    rec.push_step(x.clone(), snapshot(&lnes, &cses, &sc.xhat0), vec![false; l], vec![0; l]);

    for k in 1..=horizon {
        let noise = draw_noise(prep, run, k);
        let x_prev = x.clone();
        x = model.step_truth(&x, &noise.w, k - 1)?;
        let redesign = prep.redesign(k);
        let mut blocks = Vec::with_capacity(l);
        let mut gammas = Vec::with_capacity(l);
        let mut masks = Vec::with_capacity(l);
        for i in 0..l {
            let y = model.measure(i, &x, &noise.v[i], k)?;
            let est_prev = lnes[i].estimate.clone();
            let pred = model.predict(&est_prev);
            let local = build_lne_error_blocks(model, i, &sc.uncertainty[i], k, &est_prev, &pred)?;
            if redesign {
                capture_gain(&mut captured, &local, &prep.gain_options, i);
            }
            let design = if redesign {
                redesign_gain(prep, &mut rec.diagnostics, &local, &mut lnes[i], k, i)
            } else {
                None
            };
            lne_step(&mut lnes[i], model, i, &y, k).map_err(|e| tag_run(e, run))?;
            if let Some(d) = &design {
                let se_prev = (&x_prev - &est_prev).norm_squared();
                let se_now = (&x - &lnes[i].estimate).norm_squared();
                check_bound(&mut rec.diagnostics, d, se_prev, se_now, &noise, i);
            }

            let xs = lnes[i].estimate.clone();
            let triggered = triggers[i].evaluate(&xs);
            let pattern = match (&mut selectors[i], triggered) {
                (Some(sel), true) => sel.select(k, &(&xs - model.predict(&cses[i]))),
                _ => ReductionPattern::full(n),
            };
            let out = transmit(k, triggered, pattern, &xs);
            gammas.push(triggered);
            masks.push(out.mask_bits());

            let c_prev = cses[i].clone();
            cses[i] = cse_step(&c_prev, model, &out);
            crate::linalg::check_finite_vec(&cses[i], "compensated estimate").map_err(|_| Error::Diverged {
                run,
                step: k,
                what: format!("compensated estimate of link {i}"),
            })?;
            blocks.push(CompensatedErrorBlocks {
                local,
                gain: lnes[i].gain.clone(),
                a_c: model.dynamics_jacobian(&c_prev)?,
                l_c: sc.uncertainty[i].l_c.matrix_at(&c_prev),
                gamma: out.gamma(),
                theta: out.selection_matrix(),
            });
        }

        if l > 1 && redesign {
            let fp = build_compensated_fusion_problem(&blocks, Some(fusion.weights.free()));
            capture_fusion(&mut captured, &fp);
            fusion.update(prep, &mut rec.diagnostics, k, fp);
        }
        let fused = fuse(&fusion.weights, &cses);
        rec.push_step(x.clone(), snapshot(&lnes, &cses, &fused), gammas, masks);
    }
    Ok(rec)
}

/// The gain and fusion problems assembled at step 1 of run 0, in the order
/// they are solved.
pub fn first_step_problems(prep: &Prepared) -> Result<Vec<(String, LmiProblem)>> {
    let mut captured = Vec::new();
    match prep.config.algorithm() {
        Algorithm::Sre => sre_pipeline(prep, 0, 1, Some(&mut captured))?,
        Algorithm::Sfc => sfc_pipeline(prep, 0, 1, Some(&mut captured))?,
    };
    Ok(captured)
}

pub fn run_once(prep: &Prepared, run: usize) -> Result<RunRecord> {
    match prep.config.algorithm() {
        Algorithm::Sre => run_sre(prep, run),
        Algorithm::Sfc => run_sfc(prep, run),
    }
}

/// Empirical trigger rate of each link from one run of the local estimators
/// alone (the estimate-side trigger does not depend on fusion).
pub fn pilot_trigger_rates(prep: &Prepared) -> Result<Vec<f64>> {
    let sc = &prep.scenario;
    let model = &sc.model;
    let l = prep.links();
    if !prep.config.mode().uses_trigger() {
        return Ok(vec![1.0; l]);
    }
    let mut x = sc.x0.clone();
    let mut lnes: Vec<_> = (0..l)
        .map(|i| LocalEstimatorState::new(EstimatorKind::Local, sc.xhat0.clone(), model.m(i)))
        .collect();
    let mut triggers = Vec::new();
    for i in 0..l {
        let mut t = prep.trigger(i)?;
        t.initialize(&sc.xhat0);
        triggers.push(t);
    }
    let mut counts = vec![0usize; l];
    let mut diag = RunDiagnostics::default();
    let horizon = prep.config.scenario.horizon;
    for k in 1..=horizon {
        let noise = draw_noise(prep, 0, k);
        x = model.step_truth(&x, &noise.w, k - 1)?;
        for i in 0..l {
            let y = model.measure(i, &x, &noise.v[i], k)?;
            let est_prev = lnes[i].estimate.clone();
            let pred = model.predict(&est_prev);
            if prep.redesign(k) {
                let local = build_lne_error_blocks(model, i, &sc.uncertainty[i], k, &est_prev, &pred)?;
                redesign_gain(prep, &mut diag, &local, &mut lnes[i], k, i);
            }
            lne_step(&mut lnes[i], model, i, &y, k)?;
            if triggers[i].evaluate(&lnes[i].estimate) {
                counts[i] += 1;
            }
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / horizon as f64).collect())
}

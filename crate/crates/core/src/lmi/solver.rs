//! Primal log-barrier interior-point method for strict LMI problems.
//!
//! Each constraint `F_j(x) <= -margin_j I` is handled through the barrier
//! `-log det(-F_j(x) - margin_j I)`. A phase-one problem with an auxiliary
//! scalar finds a strictly feasible start when none is supplied.

use nalgebra::{DMatrix, DVector};

use super::problem::LmiProblem;

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Stop when `degree / t <= gap_tol * max(1, |objective|)`.
    pub gap_tol: f64,
    /// Budget of Newton steps over both phases.
    pub max_newton: usize,
    /// Barrier parameter reduction factor per outer iteration.
    pub mu: f64,
    /// Centering stops when half the squared Newton decrement drops below this.
    pub newton_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tol: 1e-7,
            max_newton: 400,
            mu: 0.2,
            newton_tol: 1e-7,
        }
    }
}

impl SolverOptions {
    /// Looser settings used for per-step designs inside simulations.
    pub fn fast() -> Self {
        SolverOptions {
            gap_tol: 1e-3,
            max_newton: 200,
            mu: 0.1,
            newton_tol: 5e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    FeasibleSuboptimal,
    Infeasible,
    MaxIter,
}

impl SolveStatus {
    /// True when the returned point is strictly feasible.
    pub fn is_feasible(self) -> bool {
        !matches!(self, SolveStatus::Infeasible)
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Barrier duality-gap bound `degree / t` at termination (0 when only
    /// feasibility was requested).
    pub gap: f64,
    /// Largest eigenvalue of each constraint at `x`.
    pub max_eigs: Vec<f64>,
    pub newton_steps: usize,
}

pub fn solve(problem: &LmiProblem, opts: &SolverOptions) -> SdpSolution {
    solve_from(problem, opts, None)
}

/// Solves from an optional starting point; a strictly feasible start skips
/// phase one.
pub fn solve_from(problem: &LmiProblem, opts: &SolverOptions, start: Option<&[f64]>) -> SdpSolution {
    let n = problem.n_coords;
    let mut x: Vec<f64> = match start {
        Some(s) if s.len() == n => s.to_vec(),
        _ => vec![0.0; n],
    };
    let mut steps = 0usize;
    let degree: f64 = problem.constraints.iter().map(|l| l.dim as f64).sum();

    let infeasible = |x: Vec<f64>, steps| SdpSolution {
        status: SolveStatus::Infeasible,
        objective: problem.objective_value(&x),
        max_eigs: problem.constraint_maxeigs(&x),
        x,
        gap: f64::INFINITY,
        newton_steps: steps,
    };

    if problem.constraints.is_empty() {
        return SdpSolution {
            status: SolveStatus::Optimal,
            objective: problem.objective_value(&x),
            x,
            gap: 0.0,
            max_eigs: vec![],
            newton_steps: 0,
        };
    }

    let phase2 = Barrier::new(problem, false);
    if phase2.factor_all(&x).is_none() {
        match phase_one(problem, &x, opts, &mut steps) {
            Some(xf) => x = xf,
            None => return infeasible(x, steps),
        }
    }

    if !problem.has_objective() {
        return finish(problem, x, SolveStatus::Optimal, 0.0, steps);
    }

    // Initial barrier weight balancing objective and barrier gradients.
    let mut t = {
        let (g, h) = phase2.grad_hess(&x, 0.0);
        let c = &phase2.c;
        match chol_solve_pair(&h, c, &g) {
            Some((hc, hg)) => {
                let num = -dot(c, &hg);
                let den = dot(c, &hc);
                if den > 0.0 && num > 0.0 {
                    (num / den).clamp(1e-6, 1e8)
                } else {
                    1.0
                }
            }
            None => 1.0,
        }
    };

    loop {
        let outcome = phase2.center(&mut x, t, opts, &mut steps, |_| false);
        let gap = degree / t;
        let obj = problem.objective_value(&x);
        match outcome {
            Center::Budget => return finish(problem, x, SolveStatus::MaxIter, gap, steps),
            Center::Stalled => {
                let status = if gap <= opts.gap_tol.max(1e-9) * 1e3 * obj.abs().max(1.0) {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::FeasibleSuboptimal
                };
                return finish(problem, x, status, gap, steps);
            }
            Center::Centered | Center::Stopped => {
                if gap <= opts.gap_tol * obj.abs().max(1.0) {
                    return finish(problem, x, SolveStatus::Optimal, gap, steps);
                }
                t /= opts.mu;
            }
        }
    }
}

/// Warm start for a sequence of problems with the same variable layout:
/// moves from `previous` (typically last step's optimum) toward the strictly
/// feasible `start` just far enough to be strictly feasible, then solves.
pub fn solve_warm(problem: &LmiProblem, opts: &SolverOptions, start: &[f64], previous: Option<&[f64]>) -> SdpSolution {
    if let Some(prev) = previous.filter(|p| p.len() == start.len()) {
        for theta in [0.01, 0.05, 0.2, 0.5] {
            let x: Vec<f64> = prev.iter().zip(start).map(|(p, s)| (1.0 - theta) * p + theta * s).collect();
            if problem.is_strictly_feasible(&x) {
                let sol = solve_from(problem, opts, Some(&x));
                if sol.status.is_feasible() {
                    return sol;
                }
                break;
            }
        }
    }
    solve_from(problem, opts, Some(start))
}

fn finish(problem: &LmiProblem, x: Vec<f64>, status: SolveStatus, gap: f64, steps: usize) -> SdpSolution {
    let max_eigs = problem.constraint_maxeigs(&x);
    let verified = problem.is_strictly_feasible(&x);
    let status = if verified { status } else { SolveStatus::Infeasible };
    SdpSolution {
        status,
        objective: problem.objective_value(&x),
        x,
        gap,
        max_eigs,
        newton_steps: steps,
    }
}

/// Minimizes an auxiliary scalar `s` with `F_j(x) + margin_j I <= s I` until
/// `s < 0`. Returns `None` when the problem is certified (or numerically)
/// infeasible.
fn phase_one(problem: &LmiProblem, x0: &[f64], opts: &SolverOptions, steps: &mut usize) -> Option<Vec<f64>> {
    let n = problem.n_coords;
    let mut b = Barrier::new(problem, true);
    let s0 = problem
        .constraints
        .iter()
        .map(|l| crate::linalg::lambda_max(&l.eval(x0)) + l.margin)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut x = x0.to_vec();
    x.push(s0.max(0.0) + 1.0);
    let early = -0.1 * (1.0 + s0.abs());
    let norm2: f64 = x0.iter().map(|v| v * v).sum();
    b.radius2 = 1e8 * (1.0 + norm2);
    let degree: f64 = problem.constraints.iter().map(|l| l.dim as f64).sum();
    let mut t = 1.0;
    loop {
        let outcome = b.center(&mut x, t, opts, steps, |x| x[n] < early);
        let s = x[n];
        match outcome {
            Center::Stopped => break,
            Center::Budget => {
                if s < 0.0 {
                    break;
                }
                return None;
            }
            Center::Stalled | Center::Centered => {
                if s < 0.0 {
                    break;
                }
                let gap = degree / t;
                if s - gap > 0.0 || gap < 1e-12 || matches!(outcome, Center::Stalled) {
                    return None;
                }
                t /= opts.mu;
            }
        }
    }
    x.truncate(n);
    if Barrier::new(problem, false).factor_all(&x).is_some() {
        Some(x)
    } else {
        None
    }
}

/// Flattened nonzero-row structure of one constraint's coordinate terms.
struct RowLayout {
    /// `starts[a]..starts[a+1]` indexes the rows of term a.
    starts: Vec<usize>,
    row_ids: Vec<usize>,
}

impl RowLayout {
    fn new(lmi: &super::problem::AffineLmi) -> Self {
        let mut starts = vec![0];
        let mut row_ids = Vec::new();
        for t in &lmi.terms {
            row_ids.extend(t.rows.iter().map(|(r, _)| *r));
            starts.push(row_ids.len());
        }
        RowLayout { starts, row_ids }
    }
}

enum Center {
    Centered,
    Stalled,
    Budget,
    Stopped,
}

struct Barrier<'a> {
    p: &'a LmiProblem,
    phase1: bool,
    /// Squared radius of a ball around the origin that keeps the phase-one
    /// centering problem bounded.
    radius2: f64,
    layouts: Vec<RowLayout>,
    /// Objective in the (possibly extended) coordinates.
    c: Vec<f64>,
}

impl<'a> Barrier<'a> {
    fn new(p: &'a LmiProblem, phase1: bool) -> Self {
        let c = if phase1 {
            let mut c = vec![0.0; p.n_coords + 1];
            c[p.n_coords] = 1.0;
            c
        } else {
            p.objective.clone()
        };
        Barrier {
            p,
            phase1,
            c,
            radius2: f64::INFINITY,
            layouts: p.constraints.iter().map(RowLayout::new).collect(),
        }
    }

    /// Slack matrix `-F_j(x) - margin_j I (+ s I)` for constraint j.
    fn slack(&self, j: usize, x: &[f64]) -> DMatrix<f64> {
        let l = &self.p.constraints[j];
        let mut a = -l.eval(x);
        let shift = if self.phase1 { x[self.p.n_coords] } else { 0.0 } - l.margin;
        for i in 0..l.dim {
            a[(i, i)] += shift;
        }
        a
    }

    fn factor_all(&self, x: &[f64]) -> Option<Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>> {
        (0..self.p.constraints.len())
            .map(|j| self.slack(j, x).cholesky())
            .collect()
    }

    fn ball_slack(&self, x: &[f64]) -> f64 {
        self.radius2 - x[..self.p.n_coords].iter().map(|v| v * v).sum::<f64>()
    }

    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = t * dot(&self.c, x);
        if self.radius2.is_finite() {
            let r = self.ball_slack(x);
            if r <= 0.0 {
                return None;
            }
            v -= r.ln();
        }
        for j in 0..self.p.constraints.len() {
            let ch = self.slack(j, x).cholesky()?;
            let l = ch.l_dirty();
            for i in 0..l.nrows() {
                v -= 2.0 * l[(i, i)].ln();
            }
        }
        v.is_finite().then_some(v)
    }

    /// Gradient and Hessian of `t c.x + barrier` at a strictly feasible `x`.
    fn grad_hess(&self, x: &[f64], t: f64) -> (Vec<f64>, DMatrix<f64>) {
        let nx = x.len();
        let sidx = self.p.n_coords;
        let mut g: Vec<f64> = self.c.iter().map(|c| t * c).collect();
        let mut h = DMatrix::<f64>::zeros(nx, nx);
        if self.radius2.is_finite() {
            let r = self.ball_slack(x);
            for i in 0..sidx {
                g[i] += 2.0 * x[i] / r;
                h[(i, i)] += 2.0 / r;
                for j in 0..sidx {
                    h[(i, j)] += 4.0 * x[i] * x[j] / (r * r);
                }
            }
        }
        for (j, lmi) in self.p.constraints.iter().enumerate() {
            let nd = lmi.dim;
            let Some(ch) = self.slack(j, x).cholesky() else {
                continue;
            };
            let s = ch.inverse();
            let ss = s.as_slice(); // column-major; symmetric so row i == column i
            let srow = |i: usize| &ss[i * nd..(i + 1) * nd];

            // U rows: (F_c S)[row, :] for every nonzero row of every F_c,
            // and its transpose for contiguous access in the pair loop.
            let lay = &self.layouts[j];
            let tr = lay.row_ids.len();
            let mut u = vec![0.0; tr * nd];
            for (a, term) in lmi.terms.iter().enumerate() {
                let mut trace = 0.0;
                for (ia, (row, cols)) in term.rows.iter().enumerate() {
                    let dst = &mut u[(lay.starts[a] + ia) * nd..(lay.starts[a] + ia + 1) * nd];
                    for &(col, v) in cols {
                        for (d, sv) in dst.iter_mut().zip(srow(col)) {
                            *d += v * sv;
                        }
                    }
                    trace += dst[*row];
                }
                g[term.coord] += trace;
            }
            let mut ut = vec![0.0; tr * nd];
            for r in 0..tr {
                for c in 0..nd {
                    ut[c * tr + r] = u[r * nd + c];
                }
            }

            let nt = lmi.terms.len();
            for a in 0..nt {
                let (sa, ea) = (lay.starts[a], lay.starts[a + 1]);
                let ca = lmi.terms[a].coord;
                for b in a..nt {
                    let (sb, eb) = (lay.starts[b], lay.starts[b + 1]);
                    let rb_rows = &lay.row_ids[sb..eb];
                    let mut acc = 0.0;
                    for ia in sa..ea {
                        let ra = lay.row_ids[ia];
                        let ua = &u[ia * nd..(ia + 1) * nd];
                        let col = &ut[ra * tr + sb..ra * tr + eb];
                        for (&rb, &w) in rb_rows.iter().zip(col) {
                            acc += ua[rb] * w;
                        }
                    }
                    let cb = lmi.terms[b].coord;
                    h[(ca, cb)] += acc;
                    if ca != cb {
                        h[(cb, ca)] += acc;
                    }
                }
            }

            if self.phase1 {
                let mut trs = 0.0;
                let mut trss = 0.0;
                for i in 0..nd {
                    trs += ss[i * nd + i];
                }
                for v in ss {
                    trss += v * v;
                }
                g[sidx] -= trs;
                h[(sidx, sidx)] += trss;
                for (a, ta) in lmi.terms.iter().enumerate() {
                    let mut acc = 0.0;
                    for ia in lay.starts[a]..lay.starts[a + 1] {
                        let ua = &u[ia * nd..(ia + 1) * nd];
                        acc += ua.iter().zip(srow(lay.row_ids[ia])).map(|(p, q)| p * q).sum::<f64>();
                    }
                    h[(ta.coord, sidx)] -= acc;
                    h[(sidx, ta.coord)] -= acc;
                }
            }
        }
        (g, h)
    }

    fn center(
        &self,
        x: &mut Vec<f64>,
        t: f64,
        opts: &SolverOptions,
        budget_used: &mut usize,
        stop: impl Fn(&[f64]) -> bool,
    ) -> Center {
        loop {
            if *budget_used >= opts.max_newton {
                return Center::Budget;
            }
            let (g, h) = self.grad_hess(x, t);
            let Some(d) = chol_solve(&h, &g.iter().map(|v| -v).collect::<Vec<_>>()) else {
                return Center::Stalled;
            };
            let gd = dot(&g, &d);
            let lambda2 = -gd;
            if !lambda2.is_finite() {
                return Center::Stalled;
            }
            if lambda2 * 0.5 <= opts.newton_tol {
                return Center::Centered;
            }
            let Some(f0) = self.value(x, t) else {
                return Center::Stalled;
            };
            let mut alpha = 1.0;
            let mut accepted = false;
            let mut xn = x.clone();
            for _ in 0..60 {
                for i in 0..x.len() {
                    xn[i] = x[i] + alpha * d[i];
                }
                if let Some(fv) = self.value(&xn, t) {
                    if fv <= f0 + 0.25 * alpha * gd {
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            *budget_used += 1;
            if !accepted {
                return Center::Stalled;
            }
            x.copy_from_slice(&xn);
            if stop(x) {
                return Center::Stopped;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn regularized_cholesky(h: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = h.clone().cholesky() {
        return Some(c);
    }
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut reg = 1e-12 * scale;
    for _ in 0..8 {
        let mut hr = h.clone();
        for i in 0..h.nrows() {
            hr[(i, i)] += reg;
        }
        if let Some(c) = hr.cholesky() {
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

fn chol_solve(h: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let c = regularized_cholesky(h)?;
    let sol = c.solve(&DVector::from_column_slice(rhs));
    sol.iter().all(|v| v.is_finite()).then(|| sol.as_slice().to_vec())
}

fn chol_solve_pair(h: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let c = regularized_cholesky(h)?;
    let sa = c.solve(&DVector::from_column_slice(a));
    let sb = c.solve(&DVector::from_column_slice(b));
    Some((sa.as_slice().to_vec(), sb.as_slice().to_vec()))
}

//! Semidefinite programming with strict LMIs and the estimator design
//! problems built on it.

mod compensated;
mod design;
mod dump;
mod problem;
mod solver;

pub use compensated::build_compensated_fusion_problem;
pub use design::{
    build_fusion_problem, build_gain_problem, AlphaBorder, CenterVars, FusionProblem, GainProblem,
    GainProblemOptions, ZetaForm,
};
pub use dump::dump;
pub use problem::{strict_margin, AffineLmi, CoordTerm, DecisionVar, LmiBuilder, LmiProblem, VarId, VarKind};
pub use solver::{solve, solve_from, solve_warm, SdpSolution, SolveStatus, SolverOptions};

pub mod lemma;
pub mod stability;

#[cfg(test)]
#[path = "tests_solver.rs"]
mod tests_solver;

#[cfg(test)]
#[path = "tests_design.rs"]
mod tests_design;

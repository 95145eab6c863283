//! Randomized and simulated-quantum algorithms for multivariate Feynman-Kac
//! path integrals.
//!
//! The solution `z(u*, t*)` of the heat equation with potential is expanded
//! into a series of weighted integrals over `(k+1)·d` variables. Each term is
//! approximated by a sparse-grid control variate plus a Monte Carlo (or
//! simulated amplitude-estimation) correction of the residual, with
//! per-term accuracies chosen so the total root-mean-square error stays
//! below a target `ε`.

pub mod driver;
pub mod error;
pub mod estimators;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod quantum;
pub mod rng;
pub mod sampler;
pub mod series;
pub mod smolyak;

pub use driver::{
    cost_sweep, plan_budget, prepare, solve, BudgetPlan, Mode, PrecomputeEntry, Prepared, SolveOptions, SolveReport, SweepTable,
};
pub use error::{FkError, Result};
pub use estimators::{mc_mean, phi_rand, TermEstimate};
pub use model::{ClassConfig, ClassKind, ClassParams, FunctionClassTag, InputFn, Preset, ProblemConfig, ProblemSpec};
pub use oracle::{OracleMethod, OracleResult};
pub use quantum::{phi_quant, QueryModel};
pub use rng::RngStream;
pub use sampler::PathSample;
pub use smolyak::{build_sparse, eval_sparse, precompute_cv_weights, SparseApprox};

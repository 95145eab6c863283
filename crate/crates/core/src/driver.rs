//! Complete algorithms: per-term accuracy budgets, truncation of the series,
//! summation of the term estimates and cost accounting.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::estimators::{phi_rand, TermEstimate};
use crate::model::{shift_to_origin, ClassParams, FunctionClassTag, ProblemSpec};
use crate::quantum::phi_quant;
use crate::rng::RngStream;
use crate::series::{g_l1_norm, product_h};
use crate::smolyak::{build_sparse, precompute_cv_weights, BuildOptions, PrecomputeOptions, SparseApprox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rand,
    Quant,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rand => "rand",
            Mode::Quant => "quant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermPlan {
    pub k: usize,
    /// Relative accuracy of the sparse approximant of `h_{k+1}`.
    pub eps_term: f64,
    /// `m` (rand) or `κ` (quant).
    pub budget: u64,
    pub skip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub eps: f64,
    pub mode: Mode,
    /// Terms up to the first `k` after which every term is skipped.
    pub per_term: Vec<TermPlan>,
    /// Largest non-skipped `k`; `None` when the zero estimate already has
    /// accuracy `eps`.
    pub n_trunc: Option<usize>,
}

/// `β1 β2^k t^k / k!`, a bound on `|S_{k+1}|`.
pub fn term_magnitude_bound(k: usize, params: &ClassParams, t: f64) -> f64 {
    params.beta1 * params.beta2.powi(k as i32) * g_l1_norm(k, t)
}

/// Per-term accuracies, sample or query budgets, and truncation.
///
/// Term `k` is skipped when the zero estimate already meets its share
/// `eps / 2^{k+1}` (magnitude bound, `K`-scaled), or when
/// `eps_term / budget ≥ K^{k+1}`.
/// Constant in front of the query budget `κ ∝ ε^{-α/(α+1)}`. Amplitude
/// estimation with `M` grid points is only accurate to about `π/M` of the
/// range, so the bare power leaves the quantum terms short by that factor.
pub const QUANT_QUERY_FACTOR: f64 = std::f64::consts::PI;

pub fn plan_budget(eps: f64, params: &ClassParams, t: f64, mode: Mode) -> Result<BudgetPlan> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(FkError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    params.validate()?;
    let a = params.alpha;
    let (power, shift, budget) = match mode {
        Mode::Rand => (2.0 / (a + 2.0), 1, eps.powf(-2.0 * a / (a + 2.0)).ceil()),
        Mode::Quant => (1.0 / (a + 1.0), 2, (QUANT_QUERY_FACTOR * eps.powf(-a / (a + 1.0))).ceil()),
    };
    let budget = budget.max(1.0) as u64;
    let kk = params.embed_k.max(1.0);
    let mut per_term = Vec::new();
    let mut n_trunc = None;
    for k in 0usize.. {
        let share = eps / 2f64.powi(k as i32 + 1);
        let bound = kk.powi(k as i32 + 1) * term_magnitude_bound(k, params, t);
        let eps_term = if bound > 0.0 {
            eps.powf(power) / (term_magnitude_bound(k, params, t) * 2f64.powi((k + shift) as i32))
        } else {
            f64::INFINITY
        };
        let magnitude_skip = bound <= share;
        let ratio_skip = eps_term / budget as f64 >= kk.powi(k as i32 + 1);
        let skip = magnitude_skip || ratio_skip;
        per_term.push(TermPlan {
            k,
            eps_term,
            budget,
            skip,
        });
        if !skip {
            n_trunc = Some(k);
        }
        // Bounds shrink geometrically once k + 1 > 2 β2 t (2K β2 t with K).
        let decreasing = (k + 1) as f64 > 2.0 * kk * params.beta2 * t;
        if skip && decreasing {
            break;
        }
        if k > 10_000 {
            return Err(FkError::InvalidArgument("series truncation did not terminate".into()));
        }
    }
    Ok(BudgetPlan {
        eps,
        mode,
        per_term,
        n_trunc,
    })
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub mode: Mode,
    pub precompute_dir: Option<PathBuf>,
    pub build: BuildOptions,
    /// Cap on Monte Carlo samples for the control-variate weights.
    pub max_precompute_samples: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Rand,
            precompute_dir: None,
            build: BuildOptions::default(),
            max_precompute_samples: PrecomputeOptions::default().max_samples,
        }
    }
}

/// Costs, itemized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Evaluations of `h` at sparse-grid nodes.
    pub node_evals: u64,
    /// Evaluations of `h` in the Monte Carlo residual estimates.
    pub residual_evals: u64,
    pub queries: u64,
    /// Evaluations of `h` used only to certify the approximants (not part of
    /// the algorithm's cost).
    pub certify_evals: u64,
    /// Path samples drawn to precompute control-variate weights (no
    /// evaluations of `v` or `V`).
    pub precompute_samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub k: usize,
    pub eps_term: f64,
    pub budget: u64,
    pub n_nodes: usize,
    pub level_sum: usize,
    /// Largest error of the approximant on its build probes.
    pub certified_error: f64,
    /// Absolute sup-error target of the approximant.
    pub target: f64,
    pub cv_precision: f64,
    pub cache_hit: bool,
    pub estimate: TermEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub estimate: f64,
    pub eps: f64,
    pub mode: Mode,
    /// `cost.node_evals + cost.residual_evals`.
    pub total_evals: u64,
    /// `cost.queries`.
    pub total_queries: u64,
    pub cost: CostBreakdown,
    pub n_trunc: Option<usize>,
    /// Set when no term was needed and the estimate is zero.
    pub trivial_accuracy: bool,
    /// Root sum of squared term errors plus the control-variate bias
    /// allowance.
    pub reported_error: f64,
    pub per_term_estimates: Vec<TermEstimate>,
    pub terms: Vec<TermReport>,
    pub seed: u64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
struct PreparedTerm {
    plan: TermPlan,
    approx: SparseApprox,
    cache_hit: bool,
    precompute_samples: u64,
}

/// Approximants and weights for every planned term. Independent of the
/// run seed, so replicates can share one `Prepared`.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: ProblemSpec,
    pub params: ClassParams,
    pub class: FunctionClassTag,
    pub plan: BudgetPlan,
    terms: Vec<PreparedTerm>,
}

/// Builds the approximants and control-variate weights for all non-skipped
/// terms.
pub fn prepare(
    spec: &ProblemSpec,
    params: &ClassParams,
    class: &FunctionClassTag,
    eps: f64,
    opts: &SolveOptions,
) -> Result<Prepared> {
    let spec = shift_to_origin(spec);
    let t = spec.t_star;
    let plan = plan_budget(eps, params, t, opts.mode)?;
    let mut terms = Vec::new();
    for tp in plan.per_term.iter().filter(|p| !p.skip) {
        let k = tp.k;
        let (v, pot, d) = (&spec.v, &spec.potential, spec.d);
        let mut approx = build_sparse(
            |z: &[f64]| product_h(v, pot, z, d),
            tp.eps_term,
            k,
            d,
            t,
            class,
            params,
            &opts.build,
        )?;
        // Shared-sample weights: bias of the control variate at most a tenth
        // of the term's share of eps.
        let kk = params.embed_k.max(1.0);
        let precision =
            eps / (10.0 * 2f64.powi(k as i32 + 1) * kk.powi(k as i32 + 1) * params.beta1 * params.beta2.powi(k as i32));
        let popts = PrecomputeOptions {
            cache_dir: opts.precompute_dir.clone(),
            max_samples: opts.max_precompute_samples,
            ..PrecomputeOptions::default()
        };
        let out = precompute_cv_weights(&mut approx, t, precision, &popts)?;
        log::info!(
            "term k={k}: {} nodes (level sum {}), probe error {:.3e} / target {:.3e}, cv precision {:.2e}{}",
            approx.n_nodes,
            approx.level_sum,
            approx.certified_error,
            approx.target,
            out.precision,
            if out.cache_hit { " (cached)" } else { "" }
        );
        terms.push(PreparedTerm {
            plan: *tp,
            approx,
            cache_hit: out.cache_hit,
            precompute_samples: out.samples,
        });
    }
    Ok(Prepared {
        spec,
        params: *params,
        class: *class,
        plan,
        terms,
    })
}

/// Precompute outcome of one term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecomputeEntry {
    pub k: usize,
    pub n_nodes: usize,
    pub cache_hit: bool,
    /// Monte Carlo samples drawn for the weights (0 on a cache hit).
    pub samples: u64,
}

impl Prepared {
    pub fn precompute_entries(&self) -> Vec<PrecomputeEntry> {
        self.terms
            .iter()
            .map(|p| PrecomputeEntry {
                k: p.plan.k,
                n_nodes: p.approx.n_nodes,
                cache_hit: p.cache_hit,
                samples: p.precompute_samples,
            })
            .collect()
    }

    /// Approximants of the non-skipped terms, by increasing `k`.
    pub fn approximants(&self) -> impl Iterator<Item = &SparseApprox> {
        self.terms.iter().map(|p| &p.approx)
    }

    pub fn approximant(&self, k: usize) -> Option<&SparseApprox> {
        self.terms.iter().find(|p| p.plan.k == k).map(|p| &p.approx)
    }

    /// Runs the estimators with streams derived from `seed`.
    pub fn run(&self, seed: u64) -> Result<SolveReport> {
        let start = Instant::now();
        let mut cost = CostBreakdown::default();
        let mut terms = Vec::new();
        let mut estimate = 0.0;
        let mut var = 0.0;
        let mut bias = 0.0;
        for pt in &self.terms {
            let k = pt.plan.k;
            let stream = RngStream::new(seed, k as u64);
            let a = &pt.approx;
            let est = match self.plan.mode {
                Mode::Rand => phi_rand(&self.spec, a, pt.plan.budget as usize, &stream)?,
                Mode::Quant => phi_quant(&self.spec, a, pt.plan.budget, a.target, &stream)?,
            };
            estimate += est.value;
            var += est.std_error * est.std_error;
            let cvp = a.cv_precision.unwrap_or(0.0);
            // sup |U h| <= sup |h| + target.
            bias += cvp * (self.params.beta1 * self.params.beta2.powi(k as i32) + a.target);
            cost.node_evals += a.node_evals;
            cost.residual_evals += est.n_evals;
            cost.queries += est.queries_used;
            cost.certify_evals += a.certify_evals;
            cost.precompute_samples += pt.precompute_samples;
            terms.push(TermReport {
                k,
                eps_term: pt.plan.eps_term,
                budget: pt.plan.budget,
                n_nodes: a.n_nodes,
                level_sum: a.level_sum,
                certified_error: a.certified_error,
                target: a.target,
                cv_precision: cvp,
                cache_hit: pt.cache_hit,
                estimate: est,
            });
        }
        Ok(SolveReport {
            estimate,
            eps: self.plan.eps,
            mode: self.plan.mode,
            total_evals: cost.node_evals + cost.residual_evals,
            total_queries: cost.queries,
            cost,
            n_trunc: self.plan.n_trunc,
            trivial_accuracy: self.plan.n_trunc.is_none(),
            reported_error: var.sqrt() + bias,
            per_term_estimates: terms.iter().map(|t| t.estimate).collect(),
            terms,
            seed,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }
}

/// `prepare` followed by one `run`.
pub fn solve(
    spec: &ProblemSpec,
    params: &ClassParams,
    class: &FunctionClassTag,
    eps: f64,
    seed: u64,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    let mut report = prepare(spec, params, class, eps, opts)?.run(seed)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    /// Root-mean-square error over the replicates against the reference.
    pub rmse: f64,
    pub total_evals: u64,
    pub total_queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub mode: Mode,
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log(evals + queries)` against `log(1/eps)`;
    /// absent with fewer than two distinct eps.
    pub slope_fit: Option<f64>,
}

/// Least-squares slope of `y` on `x`; `None` for fewer than two distinct `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx)
}

/// Solves at every `eps` with `replicates` seeds and reports RMSE against
/// `reference` together with the cost of one run.
#[allow(clippy::too_many_arguments)]
pub fn cost_sweep(
    spec: &ProblemSpec,
    params: &ClassParams,
    class: &FunctionClassTag,
    eps_list: &[f64],
    replicates: usize,
    seed: u64,
    reference: f64,
    opts: &SolveOptions,
) -> Result<SweepTable> {
    if replicates == 0 {
        return Err(FkError::InvalidArgument("replicates must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &eps in eps_list {
        let prepared = prepare(spec, params, class, eps, opts)?;
        let mut sq = 0.0;
        let mut last = None;
        for r in 0..replicates {
            let rep = prepared.run(seed.wrapping_add(r as u64))?;
            sq += (rep.estimate - reference).powi(2);
            last = Some(rep);
        }
        let rep = last.expect("replicates >= 1");
        rows.push(SweepRow {
            eps,
            rmse: (sq / replicates as f64).sqrt(),
            total_evals: rep.total_evals,
            total_queries: rep.total_queries,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| (1.0 / r.eps).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| ((r.total_evals + r.total_queries) as f64).ln()).collect();
    Ok(SweepTable {
        mode: opts.mode,
        slope_fit: fit_slope(&x, &y),
        rows,
    })
}

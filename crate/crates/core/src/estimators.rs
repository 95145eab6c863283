//! Classical Monte Carlo for one series term and the variance-reduced
//! estimator `φ^rand = I(U h) + (t^k/k!) · mean(h - U h)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::model::ProblemSpec;
use crate::rng::RngStream;
use crate::sampler::{fill_path, sample_path_with};
use crate::series::{g_l1_norm, product_h};
use crate::smolyak::{eval_sparse, SparseApprox};

/// Output of a per-term estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub k: usize,
    pub value: f64,
    /// Gaussian-approximation standard error; `+inf` when it cannot be
    /// estimated (a single sample). For the quantum estimator, the
    /// amplitude-estimation error radius at 8/π² confidence.
    pub std_error: f64,
    /// Classical evaluations of `h` (or of the residual).
    pub n_evals: u64,
    /// Quantum queries; zero for classical estimators.
    pub queries_used: u64,
    /// Control-variate part `Σ s_i I(ζ_i)`.
    pub cv_value: f64,
}

/// Values of `f` on `m` path draws, draw `i` from `stream.indexed(i)`.
pub(crate) fn sample_values<F>(f: &F, k: usize, t: f64, d: usize, m: usize, stream: &RngStream) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = (0..m as u64)
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(k), Vec::with_capacity((k + 1) * d)),
            |(times, points), i| {
                fill_path(k, t, d, &mut stream.indexed(i), times, points);
                f(points)
            },
        )
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        let s = sample_path_with(k, t, d, &mut stream.indexed(index as u64));
        return Err(FkError::InvalidIntegrandSample {
            index,
            times: s.times,
            points: s.points,
            value: values[index],
        });
    }
    Ok(values)
}

/// Mean and unbiased variance, summed in index order.
pub(crate) fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// `(t^k/k!) · (1/m) Σ f(sample_j)`, an unbiased estimate of `I_{k+1}(f)`.
/// `f` receives the flat points `z_1..z_{k+1}`.
pub fn mc_mean<F>(f: F, k: usize, t: f64, d: usize, m: usize, stream: &RngStream) -> Result<TermEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if m == 0 {
        return Err(FkError::InvalidArgument("m must be at least 1".into()));
    }
    let values = sample_values(&f, k, t, d, m, stream)?;
    let (mean, var) = mean_var(&values);
    let norm = g_l1_norm(k, t);
    let std_error = if m == 1 {
        f64::INFINITY
    } else {
        norm * (var / m as f64).sqrt()
    };
    Ok(TermEstimate {
        k,
        value: norm * mean,
        std_error,
        n_evals: m as u64,
        queries_used: 0,
        cv_value: 0.0,
    })
}

pub(crate) fn check_origin(spec: &ProblemSpec) -> Result<()> {
    if spec.u_star.iter().any(|&u| u != 0.0) {
        return Err(FkError::InvalidArgument(
            "term estimators expect u* = 0; shift the problem to the origin first".into(),
        ));
    }
    Ok(())
}

pub(crate) fn control_variate(approx: &SparseApprox) -> Result<f64> {
    approx
        .integral()
        .ok_or_else(|| FkError::InvalidArgument("control-variate weights have not been precomputed".into()))
}

/// Variance-reduced estimate of term `approx.k`: the exact integral of the
/// sparse approximant plus plain Monte Carlo on the residual with `m`
/// samples.
pub fn phi_rand(spec: &ProblemSpec, approx: &SparseApprox, m: usize, stream: &RngStream) -> Result<TermEstimate> {
    check_origin(spec)?;
    let cv = control_variate(approx)?;
    let d = spec.d;
    let residual = |z: &[f64]| product_h(&spec.v, &spec.potential, z, d) - eval_sparse(approx, z);
    let mc = mc_mean(residual, approx.k, spec.t_star, d, m, stream)?;
    Ok(TermEstimate {
        value: cv + mc.value,
        cv_value: cv,
        ..mc
    })
}

/// `Var(h) / Var(h - U h)` from `m` samples; `+inf` when the residual
/// variance vanishes.
pub fn empirical_variance_ratio(spec: &ProblemSpec, approx: &SparseApprox, m: usize, stream: &RngStream) -> Result<f64> {
    check_origin(spec)?;
    if m < 2 {
        return Err(FkError::InvalidArgument("m must be at least 2".into()));
    }
    let d = spec.d;
    let pairs = sample_values(
        &|z: &[f64]| product_h(&spec.v, &spec.potential, z, d),
        approx.k,
        spec.t_star,
        d,
        m,
        stream,
    )?;
    let residual = sample_values(
        &|z: &[f64]| product_h(&spec.v, &spec.potential, z, d) - eval_sparse(approx, z),
        approx.k,
        spec.t_star,
        d,
        m,
        stream,
    )?;
    let (_, var_h) = mean_var(&pairs);
    let (_, var_r) = mean_var(&residual);
    if var_r <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(var_h / var_r)
}

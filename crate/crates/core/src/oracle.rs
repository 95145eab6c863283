//! Reference solutions used to check the algorithms: closed forms for
//! presets, tensor quadrature, and a direct simulation of the Feynman-Kac
//! expectation on a fine time grid.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::model::{InputFn, Preset, ProblemSpec};
use crate::rng::RngStream;
use crate::series::{term_reference_value, QuadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ClosedForm,
    Quadrature,
    DensePathMc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub method: OracleMethod,
    /// Total error estimate; zero for closed forms.
    pub error_estimate: f64,
    /// Time-discretization part of `error_estimate` (dense-path only).
    pub discretization: f64,
}

impl OracleResult {
    fn exact(value: f64) -> Self {
        Self {
            value,
            method: OracleMethod::ClosedForm,
            error_estimate: 0.0,
            discretization: 0.0,
        }
    }
}

fn closed_form_gaussian_integral(p: &Preset, d: usize, t: f64) -> Option<f64> {
    let df = d as f64;
    match *p {
        Preset::Zero => Some(0.0),
        Preset::Constant { value } => Some(value),
        Preset::GaussianBump { amplitude, scale } => Some(amplitude * (1.0 + 2.0 * scale * t).powf(-0.5 * df)),
        Preset::Cosine { amplitude, frequency } => Some(amplitude * (-0.5 * df * frequency * frequency * t).exp()),
        Preset::HarmonicPotential {
            omega2,
            truncation: None,
        } => Some(-0.5 * omega2 * df * t),
        Preset::HarmonicPotential { truncation: Some(_), .. } => None,
    }
}

/// `∫ v(z) N(0, t I_d)(z) dz`, in closed form for presets and by
/// Gauss–Hermite quadrature otherwise.
pub fn oracle_v_only(v: &InputFn, d: usize, t: f64) -> Result<OracleResult> {
    if let Some(x) = v.as_preset().and_then(|p| closed_form_gaussian_integral(p, d, t)) {
        return Ok(OracleResult::exact(x));
    }
    let spec = ProblemSpec::at_origin(d, t, v.clone(), InputFn::preset(Preset::Zero))?;
    let q = term_reference_value(0, &spec, QuadSpec::auto(0, d))?;
    Ok(OracleResult {
        value: q.value,
        method: OracleMethod::Quadrature,
        error_estimate: q.error_estimate,
        discretization: 0.0,
    })
}

/// Solution for a constant potential `c`: `e^{ct} · ∫ v N(0, t I_d)`.
pub fn oracle_constant_potential(v: &InputFn, c: f64, d: usize, t: f64) -> Result<OracleResult> {
    let base = oracle_v_only(v, d, t)?;
    let f = (c * t).exp();
    Ok(OracleResult {
        value: f * base.value,
        error_estimate: f * base.error_estimate,
        ..base
    })
}

/// Monte Carlo over Brownian paths from `u*` on a uniform grid of
/// `n_steps`, with the trapezoid rule for `∫ V`. The discretization term is
/// the difference to the same paths read at half the resolution.
pub fn oracle_dense_path(spec: &ProblemSpec, n_steps: usize, n_paths: usize, seed: u64) -> Result<OracleResult> {
    if n_steps < 2 || !n_steps.is_multiple_of(2) {
        return Err(FkError::InvalidArgument(format!(
            "n_steps must be even and at least 2, got {n_steps}"
        )));
    }
    if n_paths < 2 {
        return Err(FkError::InvalidArgument("n_paths must be at least 2".into()));
    }
    let d = spec.d;
    let dt = spec.t_star / n_steps as f64;
    let sd = dt.sqrt();
    let stream = RngStream::new(seed, 0xD3);
    let results: Vec<std::result::Result<(f64, f64), usize>> = (0..n_paths as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |x, p| {
                let mut rng = stream.indexed(p);
                x.copy_from_slice(&spec.u_star);
                let v0 = spec.potential.eval(x);
                // fine: every point; coarse: even points only.
                let (mut fine, mut coarse) = (0.5 * v0, 0.5 * v0);
                for step in 1..=n_steps {
                    for c in x.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *c += sd * z;
                    }
                    let vi = spec.potential.eval(x);
                    let last = step == n_steps;
                    fine += if last { 0.5 * vi } else { vi };
                    if step % 2 == 0 {
                        coarse += if last { 0.5 * vi } else { vi };
                    }
                }
                let (fine, coarse) = (fine * dt, coarse * 2.0 * dt);
                if fine > 700.0 || coarse > 700.0 || !fine.is_finite() {
                    return Err(p as usize);
                }
                let end = spec.v.eval(x);
                Ok((end * fine.exp(), end * coarse.exp()))
            },
        )
        .collect();
    let mut pairs = Vec::with_capacity(n_paths);
    for r in results {
        match r {
            Ok(x) => pairs.push(x),
            Err(path) => return Err(FkError::PotentialOverflow { path }),
        }
    }
    let n = n_paths as f64;
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let var = pairs.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let diffs: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let dmean = diffs.iter().sum::<f64>() / n;
    let dvar = diffs.iter().map(|x| (x - dmean).powi(2)).sum::<f64>() / (n - 1.0);
    // The coupled difference estimates the coarse bias, about twice the fine one.
    let discretization = dmean.abs() + 2.0 * (dvar / n).sqrt();
    Ok(OracleResult {
        value: mean,
        method: OracleMethod::DensePathMc,
        error_estimate: (var / n).sqrt() + discretization,
        discretization,
    })
}

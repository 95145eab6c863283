//! Simulated quantum mean estimation.
//!
//! Amplitude estimation is simulated by drawing its measurement outcome
//! from the exact phase-estimation distribution. A real-valued mean with
//! `|f| ≤ b` is reduced to amplitudes by splitting `f = f⁺ - f⁻`, scaling each
//! part into `[0, 1]` with `value_bits` of fixed-point resolution, and using
//! the controlled-rotation encoding whose success amplitude is the mean of
//! the encoded values.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::estimators::{check_origin, control_variate, TermEstimate};
use crate::model::ProblemSpec;
use crate::rng::RngStream;
use crate::sampler::PathSample;
use crate::series::{g_l1_norm, product_h};
use crate::smolyak::{eval_sparse, SparseApprox};

/// Budget of one quantum mean estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryModel {
    /// Queries per estimation.
    pub kappa: u64,
    /// Width of the phase register, `⌈log2 κ⌉`. The phase grid itself has
    /// `M = κ` points (`κ/2` per amplitude when both signs are present).
    pub grid_bits: u32,
    pub value_bits: u32,
    /// Odd number of repetitions combined by the median.
    pub repeats: u32,
}

impl QueryModel {
    /// 10 value bits, median of 5.
    pub fn new(kappa: u64) -> Self {
        Self {
            kappa,
            grid_bits: grid_bits_for(kappa),
            value_bits: 10,
            repeats: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kappa < 1 {
            return Err(FkError::InvalidArgument("kappa must be at least 1".into()));
        }
        if self.grid_bits < 1 || self.grid_bits > 30 {
            return Err(FkError::InvalidArgument(format!(
                "grid_bits {} outside 1..=30",
                self.grid_bits
            )));
        }
        if self.repeats.is_multiple_of(2) {
            return Err(FkError::InvalidArgument(format!("repeats must be odd, got {}", self.repeats)));
        }
        if self.value_bits < 1 || self.value_bits > 52 {
            return Err(FkError::InvalidArgument(format!(
                "value_bits {} outside 1..=52",
                self.value_bits
            )));
        }
        Ok(())
    }

    /// Total queries charged for one estimation.
    pub fn queries(&self) -> u64 {
        self.kappa * self.repeats as u64
    }
}

fn grid_bits_for(budget: u64) -> u32 {
    64 - (budget.max(2) - 1).leading_zeros()
}

/// One simulated amplitude-estimation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AEOutcome {
    pub j: usize,
    pub grid: usize,
    pub amplitude_estimate: f64,
    pub queries_used: u64,
}

/// `sin²(Mπδ) / (M² sin²(πδ))`, the probability kernel of phase estimation.
fn fejer(delta: f64, m: usize) -> f64 {
    let s = (PI * delta).sin();
    if s.abs() < 1e-300 {
        return 1.0;
    }
    let num = (m as f64 * PI * delta).sin();
    let v = num * num / ((m * m) as f64 * s * s);
    // Within rounding of an integer shift the kernel is exactly 1.
    let frac = delta - delta.round();
    if frac.abs() < 1e-15 {
        1.0
    } else {
        v
    }
}

/// Outcome probabilities of amplitude estimation with `M` grid points on
/// amplitude `a`. Any `M ≥ 2` is accepted; powers of two are the usual
/// choice.
pub fn ae_outcome_distribution(a: f64, grid: usize) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&a), "amplitude {a} outside [0, 1]");
    assert!(grid >= 2, "grid {grid} must be at least 2");
    let theta = a.sqrt().asin() / PI;
    let mf = grid as f64;
    (0..grid)
        .map(|j| {
            let x = j as f64 / mf;
            0.5 * fejer(x - theta, grid) + 0.5 * fejer(x + theta, grid)
        })
        .collect()
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.len() - 1
}

/// Median of `repeats` simulated runs on amplitude `a`. Each run is charged
/// `budget` queries and uses a phase grid of `M = budget` points (at least 2).
pub fn estimate_amplitude(a: f64, budget: u64, repeats: u32, rng: &mut impl Rng) -> AEOutcome {
    let grid = budget.max(2) as usize;
    let probs = ae_outcome_distribution(a.clamp(0.0, 1.0), grid);
    let mut runs: Vec<(f64, usize)> = (0..repeats)
        .map(|_| {
            let j = draw(&probs, rng);
            ((PI * j as f64 / grid as f64).sin().powi(2), j)
        })
        .collect();
    runs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let (amplitude_estimate, j) = runs[runs.len() / 2];
    AEOutcome {
        j,
        grid,
        amplitude_estimate,
        queries_used: budget * repeats as u64,
    }
}

/// Fixed-point encoding of `x ∈ [-b, b]` as `(x⁺, x⁻)` in units of
/// `2^-bits`.
pub fn encode(x: f64, bound: f64, bits: u32) -> (u64, u64) {
    let scale = (1u64 << bits) as f64;
    let q = |y: f64| ((y / bound).clamp(0.0, 1.0) * scale).round() as u64;
    (q(x.max(0.0)), q((-x).max(0.0)))
}

pub fn decode(code: (u64, u64), bound: f64, bits: u32) -> f64 {
    let scale = (1u64 << bits) as f64;
    bound * (code.0 as f64 - code.1 as f64) / scale
}

/// Simulated quantum estimate of `(1/m) Σ f(sample_j)` with `|f| ≤ bound`.
///
/// `value` is the plain mean estimate, `n_evals` is zero (the function is
/// accessed through queries only) and `std_error` is the AE error radius.
pub fn q_quant_mean<F>(f: F, samples: &[PathSample], model: &QueryModel, bound: f64, rng: &mut impl Rng) -> Result<TermEstimate>
where
    F: Fn(&PathSample) -> f64,
{
    let values: Vec<f64> = samples.iter().map(&f).collect();
    quant_mean_of_values(&values, model, bound, rng)
}

pub(crate) fn quant_mean_of_values(values: &[f64], model: &QueryModel, bound: f64, rng: &mut impl Rng) -> Result<TermEstimate> {
    model.validate()?;
    if values.is_empty() {
        return Err(FkError::InvalidArgument("quantum mean needs at least one sample".into()));
    }
    if !(bound > 0.0) {
        return Err(FkError::InvalidArgument(format!("bound must be positive, got {bound}")));
    }
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() || value.abs() > bound {
            return Err(FkError::QuantumRangeExceeded { index, value, bound });
        }
    }
    let bits = model.value_bits;
    let scale = (1u64 << bits) as f64;
    let (mut plus, mut minus) = (0u64, 0u64);
    for &v in values {
        let (p, q) = encode(v, bound, bits);
        plus += p;
        minus += q;
    }
    let n = values.len() as f64;
    let a_plus = plus as f64 / scale / n;
    let a_minus = minus as f64 / scale / n;

    // Each present sign gets its share of the query budget.
    let parts = (plus > 0) as u64 + (minus > 0) as u64;
    let budget = (model.kappa / parts.max(1)).max(1);
    let mut value = 0.0;
    let mut radius: f64 = 0.0;
    for (a, sign) in [(a_plus, 1.0), (a_minus, -1.0)] {
        if a == 0.0 {
            continue;
        }
        let out = estimate_amplitude(a, budget, model.repeats, rng);
        value += sign * bound * out.amplitude_estimate;
        let mf = out.grid as f64;
        let r = 2.0 * PI * (a * (1.0 - a)).sqrt() / mf + (PI / mf).powi(2);
        radius = (radius * radius + (bound * r).powi(2)).sqrt();
    }
    Ok(TermEstimate {
        k: 0,
        value,
        std_error: radius,
        n_evals: 0,
        queries_used: model.queries(),
        cv_value: 0.0,
    })
}

/// Quantum counterpart of [`crate::estimators::phi_rand`]: the control
/// variate plus `(t^k/k!)` times the simulated quantum mean of the residual
/// over `m = κ²` path samples, with encoding bound `bound`.
pub fn phi_quant(spec: &ProblemSpec, approx: &SparseApprox, kappa: u64, bound: f64, stream: &RngStream) -> Result<TermEstimate> {
    check_origin(spec)?;
    let cv = control_variate(approx)?;
    let model = QueryModel::new(kappa);
    let m = (kappa * kappa) as usize;
    let d = spec.d;
    let k = approx.k;
    let residual = |z: &[f64]| product_h(&spec.v, &spec.potential, z, d) - eval_sparse(approx, z);
    let values = crate::estimators::sample_values(&residual, k, spec.t_star, d, m, &stream.substream(0))?;
    let mut rng = stream.substream(1).rng();
    let est = quant_mean_of_values(&values, &model, bound, &mut rng)?;
    let norm = g_l1_norm(k, spec.t_star);
    Ok(TermEstimate {
        k,
        value: cv + norm * est.value,
        std_error: norm * est.std_error,
        n_evals: 0,
        queries_used: est.queries_used,
        cv_value: cv,
    })
}

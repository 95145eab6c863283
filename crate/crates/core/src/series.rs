//! Series decomposition of the path integral into weighted multivariate
//! integrals `S_{k+1}(v, V) = I_{k+1}(h_{k+1})`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::model::{InputFn, ProblemSpec};
use crate::quadrature::{gauss_hermite_normal, gauss_legendre_on};

/// Index `k` of a series term; the term integrates over `(k+1)·d` variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TermIndex(pub usize);

impl TermIndex {
    pub fn dims(self, d: usize) -> usize {
        (self.0 + 1) * d
    }
}

/// `f_{k+1}(t_1..t_k, t, z_1..z_{k+1})`: product of Gaussian transition
/// kernels with variances `t_1, t_2 - t_1, ..., t - t_k`.
pub fn eval_transition_density(times: &[f64], points: &[f64], t: f64, d: usize) -> Result<f64> {
    let k = times.len();
    if points.len() != (k + 1) * d {
        return Err(FkError::InvalidArgument(format!(
            "expected {} coordinates, got {}",
            (k + 1) * d,
            points.len()
        )));
    }
    let mut log_density = 0.0;
    let mut prev_t = 0.0;
    for i in 0..=k {
        let ti = if i < k { times[i] } else { t };
        let var = ti - prev_t;
        if var == 0.0 {
            return Err(FkError::DegenerateTimePartition { left: prev_t, right: ti });
        }
        if var < 0.0 {
            return Err(FkError::InvalidArgument(format!("times not sorted: {prev_t} > {ti}")));
        }
        let mut sq = 0.0;
        for c in 0..d {
            let prev = if i == 0 { 0.0 } else { points[(i - 1) * d + c] };
            let diff = points[i * d + c] - prev;
            sq += diff * diff;
        }
        log_density += -0.5 * d as f64 * (2.0 * PI * var).ln() - 0.5 * sq / var;
        prev_t = ti;
    }
    Ok(log_density.exp())
}

/// `‖g_{k+1}‖_{L1} = t^k / k!`.
pub fn g_l1_norm(k: usize, t: f64) -> f64 {
    let mut x = 1.0;
    for j in 1..=k {
        x *= t / j as f64;
    }
    x
}

/// `h_{k+1}(z) = v(z_{k+1}) Π_{i≤k} V(z_i)` for flat `points` of `k+1`
/// points in `R^d`.
#[inline]
pub fn product_h(v: &InputFn, potential: &InputFn, points: &[f64], d: usize) -> f64 {
    let k = points.len() / d - 1;
    let mut acc = v.eval(&points[k * d..]);
    for i in 0..k {
        acc *= potential.eval(&points[i * d..(i + 1) * d]);
    }
    acc
}

/// [`product_h`] rejecting non-finite factors.
pub fn product_h_checked(v: &InputFn, potential: &InputFn, points: &[f64], d: usize) -> Result<f64> {
    let k = points.len() / d - 1;
    let mut acc = v.eval_checked(&points[k * d..])?;
    for i in 0..k {
        acc *= potential.eval_checked(&points[i * d..(i + 1) * d])?;
    }
    Ok(acc)
}

/// Largest `(k+1)·d` the tensor-quadrature oracle accepts.
pub const ORACLE_DIM_LIMIT: usize = 6;

/// Resolution of [`term_reference_value`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadSpec {
    /// Gauss–Legendre nodes per collapsed time coordinate.
    pub time_nodes: usize,
    /// Gauss–Hermite nodes per Brownian-increment coordinate.
    pub space_nodes: usize,
}

impl QuadSpec {
    /// Resolution that keeps the tensor grid below roughly `4·10^7` points.
    pub fn auto(k: usize, d: usize) -> Self {
        let dims = (k + 1) * d;
        let time_nodes = match k {
            0 => 1,
            1 => 16,
            2 => 12,
            _ => 8,
        };
        let budget = 4.0e7 / (time_nodes as f64).powi(k as i32);
        let space_nodes = budget.powf(1.0 / dims as f64).floor().clamp(4.0, 40.0) as usize;
        Self { time_nodes, space_nodes }
    }

    fn coarser(self) -> Self {
        Self {
            time_nodes: (self.time_nodes * 3 / 4).max(1),
            space_nodes: (self.space_nodes * 3 / 4).max(3),
        }
    }
}

/// Deterministic quadrature value of a term with a self-reported error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureValue {
    pub value: f64,
    pub error_estimate: f64,
}

/// Brute-force quadrature of `S_{k+1}(v, V)` at `u = 0`.
///
/// The time simplex is collapsed onto the unit cube (`t_k = t w_k`,
/// `t_{j} = t_{j+1} w_j`) and integrated with Gauss–Legendre; for fixed times
/// the points are written as sums of independent Gaussian increments and
/// integrated with Gauss–Hermite. The error estimate is the difference to a
/// coarser grid.
pub fn term_reference_value(k: usize, spec: &ProblemSpec, quad: QuadSpec) -> Result<QuadratureValue> {
    let dims = (k + 1) * spec.d;
    if dims > ORACLE_DIM_LIMIT {
        return Err(FkError::OracleDimensionLimit {
            dims,
            limit: ORACLE_DIM_LIMIT,
        });
    }
    let fine = term_quadrature(k, spec, quad)?;
    let coarse = term_quadrature(k, spec, quad.coarser())?;
    Ok(QuadratureValue {
        value: fine,
        error_estimate: (fine - coarse).abs(),
    })
}

fn term_quadrature(k: usize, spec: &ProblemSpec, quad: QuadSpec) -> Result<f64> {
    let d = spec.d;
    let t = spec.t_star;
    let dims = (k + 1) * d;
    let (gx, gw) = gauss_hermite_normal(quad.space_nodes);
    let (lx, lw) = gauss_legendre_on(quad.time_nodes, 0.0, 1.0);

    // Enumerate time nodes on the unit cube [0,1]^k.
    let n_time = if k == 0 { 1 } else { quad.time_nodes.pow(k as u32) };
    let per_time: Vec<Result<f64>> = (0..n_time)
        .into_par_iter()
        .map(|idx| {
            let mut times = vec![0.0; k];
            let mut jac = 1.0;
            let mut rem = idx;
            let mut w_time = 1.0;
            let mut upper = t;
            for j in (0..k).rev() {
                let i = rem % quad.time_nodes;
                rem /= quad.time_nodes;
                times[j] = upper * lx[i];
                jac *= upper;
                w_time *= lw[i];
                upper = times[j];
            }
            let mut sds = Vec::with_capacity(k + 1);
            let mut prev = 0.0;
            for i in 0..=k {
                let ti = if i < k { times[i] } else { t };
                sds.push((ti - prev).max(0.0).sqrt());
                prev = ti;
            }
            // Tensor Gauss–Hermite over the increments.
            let n = quad.space_nodes;
            let total = n.pow(dims as u32);
            let mut counter = vec![0usize; dims];
            let mut points = vec![0.0; dims];
            let mut acc = 0.0;
            for _ in 0..total {
                let mut w = 1.0;
                for i in 0..=k {
                    for c in 0..d {
                        let slot = i * d + c;
                        let base = if i == 0 { 0.0 } else { points[(i - 1) * d + c] };
                        points[slot] = base + sds[i] * gx[counter[slot]];
                        w *= gw[counter[slot]];
                    }
                }
                acc += w * product_h_checked(&spec.v, &spec.potential, &points, d)?;
                for slot in 0..dims {
                    counter[slot] += 1;
                    if counter[slot] < n {
                        break;
                    }
                    counter[slot] = 0;
                }
            }
            Ok(acc * jac * w_time)
        })
        .collect();
    let mut sum = 0.0;
    for v in per_time {
        sum += v?;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Preset, ProblemSpec};

    #[test]
    fn density_examples() {
        let v = eval_transition_density(&[], &[0.0], 1.0, 1).unwrap();
        assert!((v - 0.398942).abs() < 1e-6);
        let v = eval_transition_density(&[], &[0.0, 0.0], 1.0, 2).unwrap();
        assert!((v - 0.159155).abs() < 1e-6);
        let v = eval_transition_density(&[0.5], &[0.0, 0.0], 1.0, 1).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-12);
        assert!((v - std::f64::consts::FRAC_1_PI).abs() < 1e-6);
    }

    #[test]
    fn degenerate_partition_is_an_error() {
        let err = eval_transition_density(&[0.3, 0.3], &[0.0; 3], 1.0, 1).unwrap_err();
        assert!(matches!(err, FkError::DegenerateTimePartition { .. }));
        assert!(eval_transition_density(&[1.0], &[0.0; 2], 1.0, 1).is_err());
    }

    #[test]
    fn density_symmetric_under_negation() {
        let pts = [0.3, -1.2, 0.7, 2.0, -0.4, 0.1];
        let neg: Vec<f64> = pts.iter().map(|x| -x).collect();
        let a = eval_transition_density(&[0.2, 0.9], &pts, 1.5, 2).unwrap();
        let b = eval_transition_density(&[0.2, 0.9], &neg, 1.5, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn g_norm_values() {
        assert_eq!(g_l1_norm(0, 1.0), 1.0);
        assert_eq!(g_l1_norm(2, 1.0), 0.5);
        assert!((g_l1_norm(3, 2.0) - 8.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn product_h_examples() {
        let c = InputFn::preset(Preset::Constant { value: 3.5 });
        assert_eq!(product_h(&c, &c, &[9.0], 1), 3.5);
        let one = InputFn::preset(Preset::Constant { value: 1.0 });
        let pot = InputFn::preset(Preset::Constant { value: -0.7 });
        assert!((product_h(&one, &pot, &[1.0, 2.0, 3.0], 1) - 0.49).abs() < 1e-15);
        let v = InputFn::new("z", |z| z[0]);
        let sq = InputFn::new("z^2", |z| z[0] * z[0]);
        assert_eq!(product_h(&v, &sq, &[2.0, 3.0], 1), 12.0);
    }

    fn spec(d: usize, v: Preset, pot: Preset) -> ProblemSpec {
        ProblemSpec::at_origin(d, 1.0, InputFn::preset(v), InputFn::preset(pot)).unwrap()
    }

    #[test]
    fn reference_gaussian_convolution() {
        let s = spec(
            1,
            Preset::GaussianBump {
                amplitude: 1.0,
                scale: 1.0,
            },
            Preset::Zero,
        );
        let r = term_reference_value(0, &s, QuadSpec::auto(0, 1)).unwrap();
        assert!((r.value - 1.0 / 3f64.sqrt()).abs() < 1e-10, "{r:?}");
    }

    #[test]
    fn reference_constant_potential_terms() {
        let c = 0.8;
        for k in 0..=3usize {
            let s = spec(1, Preset::Constant { value: 1.0 }, Preset::Constant { value: c });
            let r = term_reference_value(k, &s, QuadSpec::auto(k, 1)).unwrap();
            let exact = c.powi(k as i32) * g_l1_norm(k, 1.0);
            assert!((r.value - exact).abs() < 1e-9, "k={k}: {} vs {exact}", r.value);
        }
    }

    #[test]
    fn partial_sums_approach_exponential() {
        let c = 0.5;
        let s = spec(1, Preset::Constant { value: 1.0 }, Preset::Constant { value: c });
        let partial: f64 = (0..=3)
            .map(|k| term_reference_value(k, &s, QuadSpec::auto(k, 1)).unwrap().value)
            .sum();
        let tail_bound = c.powi(4) / 24.0 * 1.2;
        assert!((c.exp() - partial).abs() < tail_bound);
    }

    #[test]
    fn oracle_dimension_cap() {
        let s = spec(2, Preset::Zero, Preset::Zero);
        assert!(matches!(
            term_reference_value(3, &s, QuadSpec::auto(3, 2)),
            Err(FkError::OracleDimensionLimit { .. })
        ));
    }
}

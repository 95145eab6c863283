//! Problem definition: dimension, evaluation point, the initial-value and
//! potential functions, and the function-class parameters that drive the
//! accuracy budgets.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::rng::RngStream;
use rand::Rng;

/// Gaussian weight `exp(-‖z‖²)` of the weighted Sobolev class.
pub fn gaussian_weight(z: &[f64]) -> f64 {
    (-z.iter().map(|x| x * x).sum::<f64>()).exp()
}

/// Built-in input functions with known analytic properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum Preset {
    /// `f ≡ 0`.
    Zero,
    /// `f ≡ value`.
    Constant { value: f64 },
    /// `amplitude · exp(-scale ‖z‖²)`.
    GaussianBump {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `-½ ω² ‖z‖²`, optionally saturated smoothly at `-R²/2` via
    /// `-(R²/2) tanh(ω²‖z‖²/R²)` so that it stays bounded.
    HarmonicPotential {
        #[serde(default = "one")]
        omega2: f64,
        #[serde(default)]
        truncation: Option<f64>,
    },
    /// `amplitude · Π cos(frequency · z_i)`.
    Cosine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Preset {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match *self {
            Preset::Zero => 0.0,
            Preset::Constant { value } => value,
            Preset::GaussianBump { amplitude, scale } => amplitude * (-scale * z.iter().map(|x| x * x).sum::<f64>()).exp(),
            Preset::HarmonicPotential { omega2, truncation } => {
                let r2: f64 = z.iter().map(|x| x * x).sum();
                match truncation {
                    None => -0.5 * omega2 * r2,
                    Some(cap) => {
                        let c2 = cap * cap;
                        -0.5 * c2 * (omega2 * r2 / c2).tanh()
                    }
                }
            }
            Preset::Cosine { amplitude, frequency } => amplitude * z.iter().map(|x| (frequency * x).cos()).product::<f64>(),
        }
    }

    /// Exact supremum of `|f|` over `R^d`, when finite.
    pub fn sup_abs(&self) -> Option<f64> {
        match *self {
            Preset::Zero => Some(0.0),
            Preset::Constant { value } => Some(value.abs()),
            Preset::GaussianBump { amplitude, .. } => Some(amplitude.abs()),
            Preset::HarmonicPotential { truncation, .. } => truncation.map(|c| 0.5 * c * c),
            Preset::Cosine { amplitude, .. } => Some(amplitude.abs()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Zero => "zero",
            Preset::Constant { .. } => "constant",
            Preset::GaussianBump { .. } => "gaussian_bump",
            Preset::HarmonicPotential { .. } => "harmonic_potential",
            Preset::Cosine { .. } => "cosine",
        }
    }
}

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A scalar function on `R^d`. Either a [`Preset`] or an opaque closure.
#[derive(Clone)]
pub struct InputFn {
    label: String,
    preset: Option<Preset>,
    f: Arc<ScalarFn>,
}

impl InputFn {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            preset: None,
            f: Arc::new(f),
        }
    }

    pub fn preset(p: Preset) -> Self {
        let q = p.clone();
        Self {
            label: p.name().to_string(),
            preset: Some(p),
            f: Arc::new(move |z: &[f64]| q.eval(z)),
        }
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        (self.f)(z)
    }

    /// Evaluates and rejects non-finite values.
    pub fn eval_checked(&self, z: &[f64]) -> Result<f64> {
        let y = self.eval(z);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(FkError::InvalidInputFunction {
                point: z.to_vec(),
                value: y,
            })
        }
    }

    pub fn as_preset(&self) -> Option<&Preset> {
        self.preset.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for InputFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InputFn")
            .field("label", &self.label)
            .field("preset", &self.preset)
            .finish()
    }
}

/// Evaluation point, terminal time and the two input functions.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub d: usize,
    pub t_star: f64,
    pub u_star: Vec<f64>,
    /// Initial value `v`.
    pub v: InputFn,
    /// Potential `V`.
    pub potential: InputFn,
}

impl ProblemSpec {
    pub fn new(d: usize, t_star: f64, u_star: Vec<f64>, v: InputFn, potential: InputFn) -> Result<Self> {
        if d == 0 {
            return Err(FkError::InvalidArgument("dimension must be at least 1".into()));
        }
        if !(t_star > 0.0 && t_star.is_finite()) {
            return Err(FkError::InvalidArgument(format!("t_star must be positive, got {t_star}")));
        }
        if u_star.len() != d {
            return Err(FkError::InvalidArgument(format!(
                "u_star has {} coordinates, expected {d}",
                u_star.len()
            )));
        }
        Ok(Self {
            d,
            t_star,
            u_star,
            v,
            potential,
        })
    }

    /// Problem at the origin, `u_star = 0`.
    pub fn at_origin(d: usize, t_star: f64, v: InputFn, potential: InputFn) -> Result<Self> {
        Self::new(d, t_star, vec![0.0; d], v, potential)
    }
}

/// Translates the problem so that the evaluation point is the origin.
pub fn shift_to_origin(spec: &ProblemSpec) -> ProblemSpec {
    if spec.u_star.iter().all(|&u| u == 0.0) {
        return spec.clone();
    }
    let shift = |f: &InputFn, u: &[f64]| {
        let inner = f.clone();
        let u = u.to_vec();
        InputFn::new(format!("{}(.+u*)", f.label()), move |z: &[f64]| {
            let moved: Vec<f64> = z.iter().zip(&u).map(|(a, b)| a + b).collect();
            inner.eval(&moved)
        })
    };
    ProblemSpec {
        d: spec.d,
        t_star: spec.t_star,
        u_star: vec![0.0; spec.d],
        v: shift(&spec.v, &spec.u_star),
        potential: shift(&spec.potential, &spec.u_star),
    }
}

/// Parameters of the function class `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    /// Bound on `‖v‖_F`.
    pub beta1: f64,
    /// Bound on `‖V‖_F`.
    pub beta2: f64,
    /// Uniform-approximation exponent `α(F)`.
    pub alpha: f64,
    /// Embedding constant `K` with `‖f‖_∞ ≤ K ‖f‖_F`.
    pub embed_k: f64,
    /// Derivative order `r` of the class.
    pub smoothness_r: u32,
}

impl ClassParams {
    /// Parameters of an `r`-smooth class in `d` variables, `α = d / r`, `K = 1`.
    pub fn smooth(d: usize, smoothness_r: u32, beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            alpha: d as f64 / smoothness_r as f64,
            embed_k: 1.0,
            smoothness_r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(FkError::InvalidArgument(format!("{name} must be positive, got {x}")))
            }
        };
        pos("beta1", self.beta1)?;
        pos("beta2", self.beta2)?;
        pos("alpha", self.alpha)?;
        pos("embed_k", self.embed_k)?;
        if self.smoothness_r == 0 {
            return Err(FkError::InvalidArgument("smoothness_r must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which norm the class uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    /// `‖f‖ = ‖f/ρ‖` with `ρ(z) = exp(-‖z‖²)`; approximation is done on `f/ρ`
    /// and multiplied back by `ρ`.
    WeightedSobolevGaussian,
    /// Bounded functions with unit weight; `‖f‖` is the sup norm.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionClassTag {
    pub kind: ClassKind,
    /// Half-width `L` of the box `[-L, L]^d` the approximations live on.
    pub domain_halfwidth_l: f64,
}

impl FunctionClassTag {
    pub fn new(kind: ClassKind, t: f64) -> Self {
        Self {
            kind,
            domain_halfwidth_l: Self::default_halfwidth(t),
        }
    }

    /// `max(6 √t, 4)`.
    pub fn default_halfwidth(t: f64) -> f64 {
        (6.0 * t.sqrt()).max(4.0)
    }

    /// Class weight at `z` (all coordinates).
    #[inline]
    pub fn weight(&self, z: &[f64]) -> f64 {
        match self.kind {
            ClassKind::WeightedSobolevGaussian => gaussian_weight(z),
            ClassKind::Custom => 1.0,
        }
    }

    #[inline]
    pub fn weight_1d(&self, x: f64) -> f64 {
        match self.kind {
            ClassKind::WeightedSobolevGaussian => (-x * x).exp(),
            ClassKind::Custom => 1.0,
        }
    }
}

/// Outcome of [`validate_membership`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub probe_count: usize,
    /// Sampled sup of `|v|/ρ`.
    pub v_norm: f64,
    /// Sampled sup of `|V|/ρ`.
    pub potential_norm: f64,
    pub v_ok: bool,
    pub potential_ok: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.v_ok && self.potential_ok
    }
}

/// Low-discrepancy probe points on `[-L, L]^d`: a Kronecker sequence with a
/// seeded random shift. The first probe is always the origin.
pub fn probe_points(d: usize, count: usize, halfwidth: f64, seed: u64) -> Vec<Vec<f64>> {
    // Generalised golden ratio: root of x^{d+1} = x + 1.
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    let alphas: Vec<f64> = (1..=d).map(|j| (1.0 / phi.powi(j as i32)).fract()).collect();
    let mut rng = RngStream::new(seed, 0x0098_06e5).rng();
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(vec![0.0; d]);
    }
    for i in 1..count {
        out.push(
            (0..d)
                .map(|j| {
                    let u = (shift[j] + i as f64 * alphas[j]).fract();
                    halfwidth * (2.0 * u - 1.0)
                })
                .collect(),
        );
    }
    out
}

/// Checks `‖v‖ ≤ β1`, `‖V‖ ≤ β2` by a sampled sup of `|f|/ρ` on a
/// deterministic probe set. Violations are reported, not raised; only
/// non-finite function values are errors.
pub fn validate_membership(
    spec: &ProblemSpec,
    params: &ClassParams,
    class: &FunctionClassTag,
    probe_count: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if probe_count == 0 {
        return Err(FkError::InvalidArgument("probe_count must be at least 1".into()));
    }
    let probes = probe_points(spec.d, probe_count, class.domain_halfwidth_l, seed);
    let mut v_norm = 0.0f64;
    let mut potential_norm = 0.0f64;
    for z in &probes {
        let w = class.weight(z);
        let a = spec.v.eval_checked(z)?;
        let b = spec.potential.eval_checked(z)?;
        if w > 0.0 {
            v_norm = v_norm.max(a.abs() / w);
            potential_norm = potential_norm.max(b.abs() / w);
        }
    }
    let report = ValidationReport {
        probe_count,
        v_norm,
        potential_norm,
        v_ok: v_norm <= params.beta1,
        potential_ok: potential_norm <= params.beta2,
    };
    if !report.passed() {
        log::warn!(
            "class membership not certified: |v| = {:.4} (beta1 {}), |V| = {:.4} (beta2 {})",
            v_norm,
            params.beta1,
            potential_norm,
            params.beta2
        );
    }
    Ok(report)
}

/// Problem definition as it appears in JSON configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dimension: usize,
    pub t_star: f64,
    #[serde(default)]
    pub u_star: Option<Vec<f64>>,
    pub v: Preset,
    #[serde(rename = "V")]
    pub potential: Preset,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemSpec> {
        let u = self.u_star.clone().unwrap_or_else(|| vec![0.0; self.dimension]);
        ProblemSpec::new(
            self.dimension,
            self.t_star,
            u,
            InputFn::preset(self.v.clone()),
            InputFn::preset(self.potential.clone()),
        )
    }
}

/// Class description as it appears in JSON configs. `beta1`/`beta2` default
/// to 1, `alpha` to `d / r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub kind: ClassKind,
    #[serde(default = "default_r")]
    pub smoothness_r: u32,
    #[serde(default = "one")]
    pub beta1: f64,
    #[serde(default = "one")]
    pub beta2: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "one")]
    pub embed_k: f64,
    #[serde(default)]
    pub domain_halfwidth: Option<f64>,
}

fn default_r() -> u32 {
    1
}

impl ClassConfig {
    pub fn build(&self, d: usize, t: f64) -> Result<(ClassParams, FunctionClassTag)> {
        let mut params = ClassParams::smooth(d, self.smoothness_r, self.beta1, self.beta2);
        if let Some(a) = self.alpha {
            params.alpha = a;
        }
        params.embed_k = self.embed_k;
        params.validate()?;
        let mut tag = FunctionClassTag::new(self.kind, t);
        if let Some(l) = self.domain_halfwidth {
            if !(l > 0.0) {
                return Err(FkError::Config(format!("domain_halfwidth must be positive, got {l}")));
            }
            tag.domain_halfwidth_l = l;
        }
        Ok((params, tag))
    }
}

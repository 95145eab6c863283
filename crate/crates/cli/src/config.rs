//! Run configuration: a JSON file merged with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use fkpath::model::{ClassConfig, ClassKind, ClassParams, FunctionClassTag, Preset, ProblemConfig, ProblemSpec};
use fkpath::Mode;
use serde::Deserialize;
use serde_json::Value;

/// `Mode` plus running both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Rand,
    Quant,
    Both,
}

impl ModeArg {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Rand => vec![Mode::Rand],
            ModeArg::Quant => vec![Mode::Quant],
            ModeArg::Both => vec![Mode::Rand, Mode::Quant],
        }
    }
}

/// Config file contents. `problem` is either a named problem or an explicit
/// problem object; `class` defaults to the named problem's class, or to a
/// sup-norm class with `beta1 = beta2 = 1`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    problem: Option<Value>,
    class: Option<ClassConfig>,
    eps: Option<f64>,
    eps_list: Option<Vec<f64>>,
    mode: Option<ModeArg>,
    seed: Option<u64>,
    replicates: Option<usize>,
    output: Option<PathBuf>,
    precompute_dir: Option<PathBuf>,
    reference: Option<f64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub problem: Option<String>,
    pub eps: Vec<f64>,
    pub mode: Option<ModeArg>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub output: Option<PathBuf>,
    pub precompute_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunConfig {
    pub label: String,
    pub spec: ProblemSpec,
    pub problem: ProblemConfig,
    pub params: ClassParams,
    pub class: FunctionClassTag,
    /// All requested accuracies; `solve` and `precompute` need exactly one.
    pub eps: Vec<f64>,
    pub mode: ModeArg,
    pub seed: u64,
    pub replicates: usize,
    pub output: Option<PathBuf>,
    pub precompute_dir: Option<PathBuf>,
    pub reference: Option<f64>,
}

impl RunConfig {
    pub fn single_eps(&self) -> Result<f64, String> {
        match self.eps.as_slice() {
            [] => Err("missing field `eps` (set it in the config or pass --eps)".into()),
            [e] => Ok(*e),
            _ => Err(format!("field `eps`: expected one value, got {}", self.eps.len())),
        }
    }
}

pub const NAMED_PROBLEMS: [&str; 6] = [
    "v1_V0_d1",
    "bump_V0_d1",
    "bump_V0_d2",
    "bump_const_d1",
    "bump_const_d2",
    "harmonic_d1",
];

/// Zero potentials still need a positive `beta2`; this one makes every
/// `k ≥ 1` term negligible.
const ZERO_POTENTIAL_BETA2: f64 = 1e-6;
const HARMONIC_TRUNCATION: f64 = 1.25;

fn bump() -> Preset {
    Preset::GaussianBump {
        amplitude: 1.0,
        scale: 1.0,
    }
}

fn custom_class(beta1: f64, beta2: f64) -> ClassConfig {
    ClassConfig {
        kind: ClassKind::Custom,
        smoothness_r: 1,
        beta1,
        beta2,
        alpha: None,
        embed_k: 1.0,
        domain_halfwidth: None,
    }
}

pub fn named_problem(name: &str) -> Option<(ProblemConfig, ClassConfig)> {
    let problem = |dimension, v, potential| ProblemConfig {
        dimension,
        t_star: 1.0,
        u_star: None,
        v,
        potential,
    };
    let one = Preset::Constant { value: 1.0 };
    let c = Preset::Constant { value: 0.25 };
    Some(match name {
        "v1_V0_d1" => (problem(1, one, Preset::Zero), custom_class(1.0, ZERO_POTENTIAL_BETA2)),
        "bump_V0_d1" => (problem(1, bump(), Preset::Zero), custom_class(1.0, ZERO_POTENTIAL_BETA2)),
        "bump_V0_d2" => (problem(2, bump(), Preset::Zero), custom_class(1.0, ZERO_POTENTIAL_BETA2)),
        "bump_const_d1" => (problem(1, bump(), c), custom_class(1.0, 0.25)),
        "bump_const_d2" => (problem(2, bump(), c), custom_class(1.0, 0.25)),
        "harmonic_d1" => (
            problem(
                1,
                one,
                Preset::HarmonicPotential {
                    omega2: 1.0,
                    truncation: Some(HARMONIC_TRUNCATION),
                },
            ),
            custom_class(1.0, 0.5 * HARMONIC_TRUNCATION * HARMONIC_TRUNCATION),
        ),
        _ => return None,
    })
}

fn resolve_problem(value: &Value, class: Option<ClassConfig>) -> Result<(String, ProblemConfig, ClassConfig), String> {
    match value {
        Value::String(name) => {
            let (p, c) = named_problem(name).ok_or_else(|| {
                format!(
                    "field `problem`: unknown problem {name:?}; known: {}",
                    NAMED_PROBLEMS.join(", ")
                )
            })?;
            Ok((name.clone(), p, class.unwrap_or(c)))
        }
        Value::Object(_) => {
            let p = ProblemConfig::deserialize(value).map_err(|e| format!("field `problem`: {e}"))?;
            let label = format!("{}_{}_d{}", p.v.name(), p.potential.name(), p.dimension);
            Ok((label, p, class.unwrap_or_else(|| custom_class(1.0, 1.0))))
        }
        _ => Err("field `problem`: expected a problem name or object".into()),
    }
}

fn read_file(path: &Path) -> Result<FileConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Loads and validates the configuration. Every error is a config error.
pub fn load(path: Option<&Path>, o: &Overrides) -> Result<RunConfig, String> {
    let file = match path {
        Some(p) => read_file(p)?,
        None => FileConfig::default(),
    };
    let problem_value = match (&o.problem, file.problem) {
        (Some(name), _) => Value::String(name.clone()),
        (None, Some(v)) => v,
        (None, None) => return Err("missing field `problem` (set it in the config or pass --problem)".into()),
    };
    let (label, problem, class_cfg) = resolve_problem(&problem_value, file.class)?;
    let spec = problem.build().map_err(|e| format!("field `problem`: {e}"))?;
    let (params, class) = class_cfg
        .build(problem.dimension, problem.t_star)
        .map_err(|e| format!("field `class`: {e}"))?;

    let eps = if !o.eps.is_empty() {
        o.eps.clone()
    } else if let Some(list) = file.eps_list {
        list
    } else {
        file.eps.into_iter().collect()
    };
    if let Some(bad) = eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(format!("field `eps`: must be positive, got {bad}"));
    }
    let replicates = o.replicates.or(file.replicates).unwrap_or(1);
    if replicates == 0 {
        return Err("field `replicates`: must be at least 1".into());
    }
    Ok(RunConfig {
        label,
        spec,
        problem,
        params,
        class,
        eps,
        mode: o.mode.or(file.mode).unwrap_or(ModeArg::Rand),
        seed: o.seed.or(file.seed).unwrap_or(0),
        replicates,
        output: o.output.clone().or(file.output),
        precompute_dir: o.precompute_dir.clone().or(file.precompute_dir),
        reference: file.reference,
    })
}

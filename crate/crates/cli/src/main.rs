mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fkpath::model::{validate_membership, Preset};
use fkpath::oracle::{oracle_constant_potential, oracle_dense_path};
use fkpath::{cost_sweep, plan_budget, prepare, Mode, SolveOptions, SweepTable};
use serde_json::{json, Map, Value};

use config::{ModeArg, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "fkpath",
    version,
    about = "Feynman-Kac path integrals by randomized and simulated quantum algorithms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the solution once per mode and write a JSON report.
    Solve(CommonArgs),
    /// Run replicates over a list of eps and write an RMSE/cost CSV table.
    Sweep(CommonArgs),
    /// Build the approximants and cache their control-variate weights.
    Precompute(CommonArgs),
    /// Check class membership of the inputs and print the budget plan.
    Validate(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named problem; overrides the config's `problem`.
    #[arg(long)]
    problem: Option<String>,
    /// Target accuracy; comma-separated or repeated for sweeps.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    precompute_dir: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; stdout if absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<fkpath::FkError> for Failure {
    fn from(e: fkpath::FkError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let args = match &command {
        Command::Solve(a) | Command::Sweep(a) | Command::Precompute(a) | Command::Validate(a) => a.clone(),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let overrides = Overrides {
        problem: args.problem.clone(),
        eps: args.eps.clone(),
        mode: args.mode,
        seed: args.seed,
        replicates: args.replicates,
        output: args.output.clone(),
        precompute_dir: args.precompute_dir.clone(),
    };
    let cfg = config::load(args.config.as_deref(), &overrides).map_err(Failure::Config)?;
    match command {
        Command::Solve(_) => cmd_solve(&cfg),
        Command::Sweep(_) => cmd_sweep(&cfg),
        Command::Precompute(_) => cmd_precompute(&cfg),
        Command::Validate(_) => cmd_validate(&cfg),
    }
}

fn options(cfg: &RunConfig, mode: Mode) -> SolveOptions {
    SolveOptions {
        mode,
        precompute_dir: cfg.precompute_dir.clone(),
        ..SolveOptions::default()
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn cmd_solve(cfg: &RunConfig) -> Result<(), Failure> {
    let eps = cfg.single_eps().map_err(Failure::Config)?;
    let mut reports = Map::new();
    for mode in cfg.mode.modes() {
        let r = fkpath::solve(&cfg.spec, &cfg.params, &cfg.class, eps, cfg.seed, &options(cfg, mode))?;
        let line = format!(
            "{}: estimate {:.6} reported_error {:.3e} evals {} queries {}",
            mode.as_str(),
            r.estimate,
            r.reported_error,
            r.total_evals,
            r.total_queries
        );
        // Keep stdout parseable when the report goes there.
        if cfg.output.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
        reports.insert(mode.as_str().into(), serde_json::to_value(&r).expect("reports serialize"));
    }
    let doc = if reports.len() == 1 {
        reports.into_iter().next().unwrap().1
    } else {
        Value::Object(reports)
    };
    emit(cfg.output.as_deref(), &to_json(&doc))
}

/// Reference value for sweeps: the config's `reference`, the closed form for
/// zero or constant potentials at the origin, otherwise a dense-path
/// simulation.
fn reference(cfg: &RunConfig) -> Result<f64, Failure> {
    if let Some(r) = cfg.reference {
        return Ok(r);
    }
    let at_origin = cfg.spec.u_star.iter().all(|&u| u == 0.0);
    let constant = match cfg.problem.potential {
        Preset::Zero => Some(0.0),
        Preset::Constant { value } => Some(value),
        _ => None,
    };
    let r = match constant {
        Some(c) if at_origin => oracle_constant_potential(&cfg.spec.v, c, cfg.spec.d, cfg.spec.t_star)?,
        _ => {
            log::info!("no closed form for {}; running the dense-path oracle", cfg.label);
            oracle_dense_path(&cfg.spec, 1000, 100_000, cfg.seed)?
        }
    };
    log::info!("reference {:.6} ({:?}, error {:.2e})", r.value, r.method, r.error_estimate);
    Ok(r.value)
}

fn sweep_csv(table: &SweepTable) -> String {
    let slope = table.slope_fit.map(|s| format!("{s:.6}")).unwrap_or_default();
    let mut out = String::from("eps,rmse,evals,queries,slope_fit\n");
    for r in &table.rows {
        writeln!(
            out,
            "{},{:.6e},{},{},{}",
            r.eps, r.rmse, r.total_evals, r.total_queries, slope
        )
        .unwrap();
    }
    writeln!(out, "# mode={} slope_fit={slope}", table.mode.as_str()).unwrap();
    out
}

fn cmd_sweep(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.eps.is_empty() {
        return Err(Failure::Config(
            "missing field `eps_list` (set it in the config or pass --eps)".into(),
        ));
    }
    let reference = reference(cfg)?;
    let mut out = String::new();
    for mode in cfg.mode.modes() {
        let table = cost_sweep(
            &cfg.spec,
            &cfg.params,
            &cfg.class,
            &cfg.eps,
            cfg.replicates,
            cfg.seed,
            reference,
            &options(cfg, mode),
        )?;
        out.push_str(&sweep_csv(&table));
    }
    emit(cfg.output.as_deref(), &out)
}

fn cmd_precompute(cfg: &RunConfig) -> Result<(), Failure> {
    let eps = cfg.single_eps().map_err(Failure::Config)?;
    if cfg.precompute_dir.is_none() {
        return Err(Failure::Config(
            "missing field `precompute_dir` (set it in the config or pass --precompute-dir)".into(),
        ));
    }
    let mut doc = Map::new();
    for mode in cfg.mode.modes() {
        let prepared = prepare(&cfg.spec, &cfg.params, &cfg.class, eps, &options(cfg, mode))?;
        let entries = prepared.precompute_entries();
        let hits = entries.iter().filter(|e| e.cache_hit).count();
        eprintln!("{}: {} terms, {hits} cache hits", mode.as_str(), entries.len());
        doc.insert(
            mode.as_str().into(),
            serde_json::to_value(&entries).expect("entries serialize"),
        );
    }
    emit(cfg.output.as_deref(), &to_json(&doc))
}

fn cmd_validate(cfg: &RunConfig) -> Result<(), Failure> {
    let membership = validate_membership(&cfg.spec, &cfg.params, &cfg.class, 4096, cfg.seed)?;
    let mut doc = json!({
        "problem": cfg.label,
        "params": cfg.params,
        "class": cfg.class,
        "membership": membership,
    });
    if let [eps] = cfg.eps.as_slice() {
        let mut plans = Map::new();
        for mode in cfg.mode.modes() {
            let plan = plan_budget(*eps, &cfg.params, cfg.spec.t_star, mode)?;
            plans.insert(mode.as_str().into(), serde_json::to_value(&plan).expect("plans serialize"));
        }
        doc["plan"] = Value::Object(plans);
    }
    emit(cfg.output.as_deref(), &to_json(&doc))
}

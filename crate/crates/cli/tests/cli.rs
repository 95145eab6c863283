use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fkpath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fkpath"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn without_wall_time(mut v: Value) -> Value {
    match &mut v {
        Value::Object(m) => {
            m.remove("wall_time");
            for x in m.values_mut() {
                *x = without_wall_time(x.take());
            }
        }
        Value::Array(a) => {
            for x in a.iter_mut() {
                *x = without_wall_time(x.take());
            }
        }
        _ => {}
    }
    v
}

#[test]
fn solve_constant_input_reports_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = fkpath(&[
        "solve",
        "--problem",
        "v1_V0_d1",
        "--eps",
        "0.05",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("estimate") && stdout.contains("queries"), "{stdout}");
    let r: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert!((r["estimate"].as_f64().unwrap() - 1.0).abs() <= 0.05);
    assert_eq!(r["mode"], "rand");
    assert!(r["terms"]
        .as_array()
        .unwrap()
        .iter()
        .all(|t| t.get("eps_term").is_some() && t.get("budget").is_some()));
}

#[test]
fn missing_eps_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"problem": "bump_V0_d1", "mode": "rand"}"#);
    let o = fkpath(&["solve", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eps"), "{}", stderr(&o));
}

#[test]
fn malformed_config_names_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        "{\n  \"problem\": \"bump_V0_d1\",\n  \"eps\": \"small\"\n}",
    );
    let o = fkpath(&["solve", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line 3"), "{e}");
}

#[test]
fn mode_both_keys_reports_by_mode() {
    let o = fkpath(&["solve", "--problem", "bump_V0_d1", "--eps", "0.1", "--mode", "both"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["rand"]["mode"], "rand");
    assert_eq!(r["quant"]["mode"], "quant");
    assert_eq!(r["rand"]["total_queries"], 0);
    assert!(r["quant"]["total_queries"].as_u64().unwrap() > 0);
}

#[test]
fn solve_is_reproducible_and_thread_independent() {
    let run = |threads: &str| {
        let o = fkpath(&[
            "solve",
            "--problem",
            "bump_const_d1",
            "--eps",
            "0.05",
            "--mode",
            "both",
            "--seed",
            "3",
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        without_wall_time(serde_json::from_slice(&o.stdout).unwrap())
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    assert_eq!(a, run("4"));
}

#[test]
fn sweep_csv_contract() {
    let o = fkpath(&[
        "sweep",
        "--problem",
        "bump_V0_d1",
        "--eps",
        "0.1,0.05,0.02,0.01",
        "--replicates",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eps,rmse,evals,queries,slope_fit");
    let rows: Vec<Vec<&str>> = lines[1..5].iter().map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 5 && r[3] == "0"));
    assert!(lines[5].starts_with("# mode=rand slope_fit="));
    let slope: f64 = lines[5].rsplit('=').next().unwrap().parse().unwrap();
    assert!(slope.is_finite());
    assert_eq!(lines.len(), 6);

    let again = fkpath(&[
        "sweep",
        "--problem",
        "bump_V0_d1",
        "--eps",
        "0.1,0.05,0.02,0.01",
        "--replicates",
        "2",
    ]);
    assert_eq!(text.as_bytes(), &again.stdout[..]);
}

#[test]
fn single_eps_sweep_leaves_slope_empty() {
    let o = fkpath(&["sweep", "--problem", "bump_V0_d1", "--eps", "0.05", "--mode", "quant"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[1].ends_with(','), "{}", lines[1]);
    assert_eq!(lines[2], "# mode=quant slope_fit=");
}

#[test]
fn precompute_is_idempotent_and_resilient() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let c = cache.to_str().unwrap();
    let args = [
        "precompute",
        "--problem",
        "bump_const_d1",
        "--eps",
        "0.05",
        "--precompute-dir",
        c,
    ];
    let first = fkpath(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let r: Value = serde_json::from_slice(&first.stdout).unwrap();
    let terms = r["rand"].as_array().unwrap();
    assert!(terms.iter().all(|t| t["cache_hit"] == false));
    let files: Vec<_> = fs::read_dir(&cache).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), terms.len());

    let second = fkpath(&args);
    assert!(second.status.success());
    let r: Value = serde_json::from_slice(&second.stdout).unwrap();
    assert!(r["rand"]
        .as_array()
        .unwrap()
        .iter()
        .all(|t| t["cache_hit"] == true && t["samples"] == 0));
    assert_eq!(stderr(&second).matches("cache hit: term").count(), files.len());

    // Changing eps adds keys and leaves the old files alone.
    let before: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
    let third = fkpath(&[
        "precompute",
        "--problem",
        "bump_const_d1",
        "--eps",
        "0.02",
        "--precompute-dir",
        c,
    ]);
    assert!(third.status.success());
    assert!(fs::read_dir(&cache).unwrap().count() > files.len());
    for (p, b) in files.iter().zip(&before) {
        assert_eq!(&fs::read(p).unwrap(), b);
    }

    fs::write(&files[0], b"FKCV1 broken").unwrap();
    let fourth = fkpath(&args);
    assert!(fourth.status.success());
    assert!(stderr(&fourth).contains("corrupted"), "{}", stderr(&fourth));
}

#[test]
fn unwritable_precompute_dir_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "file", "not a directory");
    let sub = format!("{blocker}/cache");
    let o = fkpath(&[
        "precompute",
        "--problem",
        "bump_const_d1",
        "--eps",
        "0.05",
        "--precompute-dir",
        &sub,
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn validate_reports_membership_and_plan() {
    let o = fkpath(&["validate", "--problem", "harmonic_d1", "--eps", "0.05"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["membership"]["potential_ok"], true);
    assert!(r["plan"]["rand"]["per_term"].as_array().unwrap().len() >= 2);
}

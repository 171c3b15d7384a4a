//! The binary driven through its public interface on a small world.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[world]
n_cells = 200

[rf]
n_trees = 30

[gb]
n_rounds = 60

[selection]
full_trees = 40
realisations = 12
realisation_trees = 10
inner_trees = 15
final_trees = 30
"#;

fn geoecon(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geoecon"));
    cmd.args(args);
    for var in ["GEOECON_CONFIG", "GEOECON_SEED", "GEOECON_OUT", "GEOECON_THREADS", "GEOECON_SAMPLE", "GEOECON_GLOBAL_SD"] {
        cmd.env_remove(var);
    }
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = geoecon(args, &[]);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

/// Runs every stage into `out` and returns the run directory.
fn pipeline(dir: &Path, name: &str, threads: &str) -> PathBuf {
    let cfg = write_config(dir);
    let out = dir.join(name);
    let common = |cmd: &str| -> Vec<String> {
        vec![
            cmd.into(),
            "--config".into(),
            cfg.display().to_string(),
            "--out".into(),
            out.display().to_string(),
            "--seed".into(),
            "5".into(),
            "--threads".into(),
            threads.into(),
        ]
    };
    for cmd in ["synth", "ingest", "features", "target", "select"] {
        let args = common(cmd);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let mut args = common("evaluate");
    args.extend(["--sample".into(), "all".into()]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let field = out.join("eval/fields/all_prediction.csv");
    for mode in ["tercile", "gray", "ascii"] {
        let mut args = common("render");
        args.extend(["--field".into(), field.display().to_string(), "--mode".into(), mode.into()]);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_complete_and_byte_identical_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let a = pipeline(dir.path(), "a", "1");
    let b = pipeline(dir.path(), "b", "3");

    for expected in [
        "world/truth.json",
        "data/cells.geof",
        "features.geof",
        "oracle.json",
        "target.csv",
        "selection/selection.csv",
        "selection/curve.csv",
        "selection/correlations.csv",
        "eval/table.csv",
        "eval/fields/all_residual.csv",
        "eval/fields/all_delta_2.csv",
        "maps/all_prediction.ppm",
        "maps/all_prediction.pgm",
        "maps/all_prediction.txt",
        "manifest_evaluate.json",
    ] {
        assert!(a.join(expected).exists(), "{expected} missing");
    }
    let ppm = std::fs::read(a.join("maps/all_prediction.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n360 180\n255\n"));
    assert_eq!(ppm.len(), 15 + 3 * 360 * 180);

    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    for f in files.iter().filter(|f| !f.to_string_lossy().starts_with("manifest_")) {
        assert!(
            std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(),
            "{} differs between thread counts",
            f.display()
        );
    }

    let curve = std::fs::read_to_string(a.join("selection/curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("step,added,nmae,corr"));
    assert_eq!(curve.lines().count(), 11);
    let table = std::fs::read_to_string(a.join("eval/table.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.starts_with("all,")));
    assert!(table.contains(",RF,oob,top10,"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest_select.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["command"], "select");
}

#[test]
fn evaluate_top_tercile_restricts_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let (cfg, out) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    for cmd in ["synth", "ingest", "features", "target"] {
        ok(&[cmd, "--config", cfg, "--out", out]);
    }
    ok(&["evaluate", "--config", cfg, "--out", out, "--sample", "top-tercile", "--models", "rf", "--no-oob"]);
    let table = std::fs::read_to_string(Path::new(out).join("eval/table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("top_tercile,RF,kfold,all,"));
    let field = std::fs::read_to_string(Path::new(out).join("eval/fields/top_tercile_observed.csv")).unwrap();
    let target = std::fs::read_to_string(Path::new(out).join("target.csv")).unwrap();
    let top = target.lines().filter(|l| l.ends_with(",top")).count();
    assert_eq!(field.lines().count() - 1, top);
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();

    let usage = geoecon(&["select", "--no-such-flag"], &[]);
    assert_eq!(usage.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("Usage"));

    let missing = geoecon(&["features", "--out", out], &[]);
    assert_eq!(missing.status.code(), Some(2));
    let line = String::from_utf8_lossy(&missing.stderr);
    let last: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert_eq!(last["error"], "missing_input");
    assert_eq!(last["exit"], 2);

    // A cell file whose soil category is out of range fails validation.
    let bad = dir.path().join("cells.csv");
    std::fs::write(
        &bad,
        "cell_id,lat,lon,latitude,elevation_m,dist_coast1_km,dist_coast2_km,dist_lake_km,dist_major_river_km,dist_river_km,dist_ocean_km,vegetation,soil\n\
         1,0.5,0.5,0.5,10,1,1,1,1,1,1,3,251\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("economy.csv"), "cell_id,year,gcp_usd,population\n").unwrap();
    let invalid = geoecon(
        &[
            "ingest",
            "--out",
            out,
            "--cells",
            bad.to_str().unwrap(),
            "--economy",
            dir.path().join("economy.csv").to_str().unwrap(),
            "--series-dir",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(invalid.status.code(), Some(3), "{}", String::from_utf8_lossy(&invalid.stderr));
}

#[test]
fn environment_overrides_config_and_flags_override_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\n[world]\nn_cells = 20\nseries_years = 1\n").unwrap();
    let out = dir.path().join("run");
    let cfg_s = cfg.to_str().unwrap();
    let out_s = out.to_str().unwrap();
    let res = geoecon(&["synth", "--out", out_s], &[("GEOECON_CONFIG", cfg_s), ("GEOECON_SEED", "8")]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest_synth.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 8);
    let res = geoecon(
        &["synth", "--out", out_s, "--seed", "9"],
        &[("GEOECON_CONFIG", cfg_s), ("GEOECON_SEED", "8")],
    );
    assert!(res.status.success());
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest_synth.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    let truth = std::fs::read_to_string(out.join("world/truth.json")).unwrap();
    assert!(truth.contains("\"n_cells\": 20") || truth.contains("\"n_cells\":20"));
}

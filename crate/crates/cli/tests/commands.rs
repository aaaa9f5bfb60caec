use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn econosim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_econosim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ECONOSIM_OUT")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_config(dir: &Path, c_th: f64) -> String {
    let p = dir.join("run.cfg");
    fs::write(
        &p,
        format!("n = 300\nsteps = 8000\nwarmup = 1000\nc_th = {c_th}\n"),
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn critical_prints_omega() {
    let tmp = tempfile::tempdir().unwrap();
    let out = econosim(&["critical", "--gamma", "3", "--q", "1"], tmp.path());
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["omega"].as_f64().unwrap() - 1.012161).abs() < 1e-6);
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none());
}

#[test]
fn critical_without_gamma_is_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = econosim(&["critical"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = econosim(&["analyze", "no_such_prices.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_prices.csv"));

    let out = econosim(&["simulate", "--config", "missing.cfg"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cfg"));
}

#[test]
fn unknown_flag_value_is_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = econosim(&["analyze", "x.csv", "--size-metric", "volume"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = econosim(&["simulate", "--cth", "low"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_then_analyze_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), -0.45);
    let out = econosim(
        &["simulate", "--config", &cfg, "--seed", "5", "--out", "run"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = tmp.path().join("run");
    for f in [
        "u_total.csv",
        "returns.csv",
        "avalanches.csv",
        "ccdf.csv",
        "tailfit.json",
        "edges.csv",
        "hist_in.csv",
        "hist_out.csv",
        "manifest.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let header = fs::read_to_string(run.join("avalanches.csv")).unwrap();
    assert!(header.starts_with("t,agents_lost,links_destroyed\n"));

    let out = econosim(&["analyze", "run/u_total.csv", "--out", "ana"], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let inproc = json(&run.join("index_tailfit.json"));
    let cli = json(&tmp.path().join("ana/tailfit.json"));
    let m = |v: &Value| v["exponent"].as_f64().unwrap();
    assert!((m(&inproc) - m(&cli)).abs() <= 1e-9);
    assert!(tmp.path().join("ana/manifest.json").exists());
}

#[test]
fn manifest_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), -0.45);
    econosim(
        &["simulate", "--config", &cfg, "--seed", "11", "--out", "a"],
        tmp.path(),
    );
    let manifest = json(&tmp.path().join("a/manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 11);
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(manifest["version"].is_string());

    econosim(
        &["simulate", "--config", "a/manifest.json", "--out", "b"],
        tmp.path(),
    );
    for f in ["u_total.csv", "avalanches.csv", "edges.csv", "tailfit.json"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn env_sets_output_and_flag_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["critical", "--gamma", "2.5"];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_econosim"))
            .args(&args)
            .current_dir(tmp.path())
            .env("ECONOSIM_OUT", "from_env")
            .output()
            .unwrap()
    };
    assert!(run(&[]).status.success());
    assert!(tmp.path().join("from_env/critical.json").exists());
    assert!(run(&["--out", "from_flag"]).status.success());
    assert!(tmp.path().join("from_flag/critical.json").exists());
}

#[test]
fn thin_tail_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let prices = tmp.path().join("p.csv");
    let rows: String = (0..20)
        .map(|i| format!("{i},{}\n", 100.0 + (i % 3) as f64))
        .collect();
    fs::write(&prices, format!("date,close\n{rows}")).unwrap();
    let out = econosim(&["analyze", "p.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn nonpositive_price_is_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("p.csv"), "date,close\n1,100\n2,0\n3,90\n").unwrap();
    let out = econosim(&["analyze", "p.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn geometry_on_edge_list() {
    let tmp = tempfile::tempdir().unwrap();
    // 12 x 12 grid with edges pointing right and down.
    let mut csv = String::from("producer,consumer\n");
    for r in 0..12 {
        for c in 0..12 {
            let v = r * 12 + c;
            if c + 1 < 12 {
                csv += &format!("{},{}\n", v, v + 1);
            }
            if r + 1 < 12 {
                csv += &format!("{},{}\n", v, v + 12);
            }
        }
    }
    fs::write(tmp.path().join("grid.csv"), csv).unwrap();
    let out = econosim(
        &["geometry", "grid.csv", "--seed", "1", "--out", "g"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let g = json(&tmp.path().join("g/geometry.json"));
    for key in ["d_B", "d_k", "ell", "gamma_geo", "r2", "boxes"] {
        assert!(!g[key].is_null(), "{key} missing");
    }

    fs::write(tmp.path().join("tiny.csv"), "producer,consumer\n0,1\n1,2\n").unwrap();
    let out = econosim(&["geometry", "tiny.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_writes_surface() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("b.cfg"), "steps = 3000\nwarmup = 500\n").unwrap();
    let out = econosim(
        &[
            "sweep",
            "--config",
            "b.cfg",
            "--cth",
            "-0.5:-0.45:0.05",
            "--L",
            "150,200",
            "--parallel",
            "2",
            "--out",
            "s",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("c_th,L,omega_level,m,m_normalized,n_avalanches")
    );
    assert_eq!(lines.count(), 4);
    assert!(tmp.path().join("s/manifest.json").exists());
}

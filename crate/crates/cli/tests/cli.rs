use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aimcsim"))
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn shipped_config_validates() {
    let cfg = repo_file("configs/reference.toml");
    let o = run(&["validate-config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("eval 46 cycles"));
    let parsed = aimcsim::parse_config(&fs::read_to_string(&cfg).unwrap()).unwrap();
    assert_eq!(parsed, aimcsim::ArchConfig::reference());
    let wl = repo_file("configs/wireless_256.toml");
    assert!(run(&["validate-config", wl.to_str().unwrap()]).status.success());
}

#[test]
fn malformed_config_exits_one_with_violations() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "f_clock = 350e6\nn_clusters = 100\n[cluster]\nl1_banks = 12\n[cluster.ima]\nrows = 256\ncols = 256\nports = 16\nport_width_bytes = 4\nt_eval_ns = 130\n[interconnect]\nkind = \"wired\"\nbandwidth_bits_per_cycle = 64\n",
    )
    .unwrap();
    for args in [
        vec!["validate-config", bad.to_str().unwrap()],
        vec!["run", "--config", bad.to_str().unwrap()],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1));
        let err = stderr(&o);
        assert!(err.contains("n_clusters") && err.contains("l1_banks"), "{err}");
    }
}

#[test]
fn syntax_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "f_clock = = 3\n").unwrap();
    let o = run(&["validate-config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"));
}

#[test]
fn missing_file_exits_two() {
    let o = run(&["run", "--config", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["run", "--layers", "/definitely/not/here.txt"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seedless_takes_no_value() {
    assert!(run(&["run", "--seedless", "--clusters", "1", "--iterations", "1"]).status.success());
    assert!(!run(&["run", "--seedless=yes"]).status.success());
}

#[test]
fn run_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let json = dir.path().join("report.json");
    let o = run(&[
        "run",
        "--clusters",
        "2",
        "--strategy",
        "data_parallel",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        json.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("strategy,n_clusters,"));
    assert!(out.lines().nth(1).unwrap().starts_with("data_parallel,2,wired,"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["n_clusters"], 2);
    assert!(report["eta_pct"].as_f64().unwrap() > 0.0);
    let lines = fs::read_to_string(&trace).unwrap();
    assert!(lines.lines().count() > 10);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["end"].as_u64().unwrap() > v["start"].as_u64().unwrap());
    }
}

#[test]
fn run_with_layer_table_and_plan() {
    let dir = tempfile::tempdir().unwrap();
    let layers = repo_file("configs/example_layers.txt");
    let o = run(&["run", "--clusters", "3", "--layers", layers.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let plan = aimcsim::mapping::map_data_parallel(&aimcsim::harness::data_parallel_benchmark(2), 2).unwrap();
    let p = dir.path().join("plan.json");
    fs::write(&p, plan.to_json()).unwrap();
    let o = run(&["run", "--plan", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("data_parallel,2,"));

    fs::write(&p, "{\"strategy\": \"pipelining\"}").unwrap();
    assert_eq!(run(&["run", "--plan", p.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(
        &spec,
        "n_clusters = [1, 2]\niterations = 2\n[[variants]]\nkind = \"wired\"\nbandwidth_bits_per_cycle = 64\n[[variants]]\nkind = \"wireless\"\nbandwidth_bits_per_cycle = 256\n",
    )
    .unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = run(&["sweep", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(&a).unwrap();
    assert_eq!(a, fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn sweep_cap_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(
        &spec,
        "n_clusters = [1, 2, 4]\nmax_points = 2\n[[variants]]\nkind = \"wired\"\nbandwidth_bits_per_cycle = 64\n",
    )
    .unwrap();
    let o = run(&["sweep", "--spec", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cap"));
}

#[test]
fn reproduce_fig4_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["reproduce-fig4", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("wired-64"));
    for f in ["fig4_efficiency.csv", "fig4_throughput.csv", "fig4_runs.csv", "fig4_summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let eff = fs::read_to_string(dir.path().join("fig4_efficiency.csv")).unwrap();
    assert_eq!(eff.lines().count(), 41);
}

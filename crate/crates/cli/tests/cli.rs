use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(tables: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tsdensity"));
    c.env("TSDENSITY_TABLE_DIR", tables);
    c
}

fn run(tables: &Path, args: &[&str]) -> Output {
    bin(tables).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_fixture(dir: &Path, testbed: &str, n: usize, seed: u64) -> String {
    let path = dir.join(format!("{testbed}_{n}_{seed}.txt"));
    let o = run(
        dir,
        &[
            "fixtures",
            "--testbed",
            testbed,
            "--n",
            &n.to_string(),
            "--seed",
            &seed.to_string(),
            "--out",
            path.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_summary_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "simulate", "--testbed", "U,N2,claw,neumann", "--n", "100,400", "--reps", "40",
            "--method", "kolmogorov", "--seed", "11",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let golden = include_str!("golden/simulate_kolmogorov.csv");
    assert_eq!(String::from_utf8(o.stdout).unwrap(), golden);
}

#[test]
fn density_fit_writes_json_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), "claw", 300, 4);
    let out = dir.path().join("fit.json");
    let prefix = dir.path().join("claw");
    let o = run(
        dir.path(),
        &[
            "density", "--input", &input, "--method", "kolmogorov", "--out",
            out.to_str().unwrap(), "--plot-data", prefix.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["method", "config", "knots", "segments", "modes", "diagnostics"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["mode_count"].as_u64().unwrap() >= 1);
    assert!(text.contains("e-1") || text.contains("e0"));

    let tube = fs::read_to_string(dir.path().join("claw_tube.csv")).unwrap();
    for line in tube.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(f[2] - 1e-12 <= f[4] && f[4] <= f[3] + 1e-12, "{line}");
    }
    let steps = fs::read_to_string(dir.path().join("claw_density.csv")).unwrap();
    let segments = v["segments"].as_array().unwrap();
    assert_eq!(steps.lines().count(), segments.len() + 2);
    for (line, s) in steps.lines().skip(1).zip(segments) {
        let h: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(h, s["height"].as_f64().unwrap());
    }
}

#[test]
fn identical_arguments_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), "N2", 200, 9);
    let args = ["density", "--input", &input, "--method", "kolmogorov"];
    let a = run(dir.path(), &args);
    let b = run(dir.path(), &args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "\n\n").unwrap();
    let o = run(dir.path(), &["density", "--input", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let line = String::from_utf8(o.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["kind"], "data");

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "1\n2\nx\n").unwrap();
    let o = run(dir.path(), &["density", "--input", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    assert_eq!(code(&run(dir.path(), &["density", "--frobnicate"])), 1);
    assert_eq!(code(&run(dir.path(), &["simulate", "--testbed", "U", "--n", "50"])), 1);
    assert_eq!(
        code(&run(dir.path(), &["calibrate", "--stat", "ko", "--n", "50", "--alpha", "0.9"])),
        1
    );
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
}

#[test]
fn impossible_mode_count_exits_three_with_partial_result() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("four.txt");
    fs::write(&input, "0\n1\n2\n3\n").unwrap();
    let out = dir.path().join("fit.json");
    let o = run(
        dir.path(),
        &["density", "--input", input.to_str().unwrap(), "--modes", "40", "--out", out.to_str().unwrap()],
    );
    assert_eq!(code(&o), 3);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["diagnostics"]["converged"], false);
}

#[test]
fn spectral_fit_of_neumann_series() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), "neumann", 1024, 3);
    let prefix = dir.path().join("sp");
    let o = run(
        dir.path(),
        &["spectral", "--input", &input, "--plot-data", prefix.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "spectral");
    assert!(v["mode_count"].as_u64().unwrap() >= 1);
    assert!(dir.path().join("sp_tube.csv").exists());
}

#[test]
fn discrete_method_reports_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_fixture(dir.path(), "poisson_mix", 600, 2);
    let o = run(dir.path(), &["density", "--input", &input, "--method", "discrete"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let total: f64 = v["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["p"].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn calibrate_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("tables");
    let o = run(
        dir.path(),
        &[
            "calibrate", "--stat", "ko", "--n", "50", "--alpha", "0.9", "--reps", "400",
            "--seed", "5", "--table", table.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let q: f64 = out.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    // sqrt(50) * q near the asymptotic 1.22
    assert!((q * 50f64.sqrt() - 1.2).abs() < 0.1, "{q}");
    assert!(table.join("kolmogorov_1_0.9.json").exists());
}

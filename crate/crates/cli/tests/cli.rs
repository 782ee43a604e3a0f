use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn devmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devmix"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    p.to_str().unwrap().to_owned()
}

const ONE_D: &str = r#"
name = "one_d"
lambda_star = 0.3
n_grid = [100, 200]
replications = 1
master_seed = 11
metrics = [{ kind = "abs_lambda" }]

[h0]
kind = "gaussian_mixture"
weights = [1.0]
means = [[0.0]]
covariances = [[[1.0]]]

[g_star]
weights = [1.0]
locations = [[3.0]]

[family]
kind = "location"
covariance = [[1.0]]

[fit]
constraint = { class = "exact_fit", k = 1 }
restarts = 2
"#;

fn one_d_config(dir: &Path) -> PathBuf {
    let p = dir.join("one_d.toml");
    fs::write(&p, ONE_D).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("half_circle_exact");
    let run = |out: &Path| {
        let o = devmix(&["--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap(), "simulate", "--n", "120"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out.join("samples.csv")).unwrap()
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 120);
    assert_eq!(a.lines().next().unwrap().split(',').count(), 2);
}

#[test]
fn fit_recovers_a_far_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_d_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(devmix(&["--config", cfg, "--out", out, "simulate", "--n", "2000"]).status.success());
    let data = dir.path().join("samples.csv");
    let o = devmix(&["--config", cfg, "--out", out, "fit", "--data", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let lambda = fit["lambda_hat"].as_f64().unwrap();
    assert!((lambda - 0.3).abs() < 0.08, "lambda_hat = {lambda}");
    assert!(dir.path().join("fit.json").exists());

    // Two free atoms with a weight floor, from the command line.
    let o = devmix(&[
        "--config", cfg, "fit", "--data", data.to_str().unwrap(), "--K", "2", "--exact", "--c0", "0.1", "--restarts", "1", "--max-iter", "50",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let weights = fit["g_hat"]["weights"].as_array().unwrap();
    assert_eq!(weights.len(), 2);
    assert!(weights.iter().all(|w| w.as_f64().unwrap() >= 0.1 - 1e-12));
    assert!(fit["iterations_used"].as_u64().unwrap() <= 50);
}

#[test]
fn rates_output_is_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_d_config(dir.path());
    let run = |jobs: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = devmix(&[
            "--config",
            cfg.to_str().unwrap(),
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
            "rates",
            "--replications",
            "2",
            "--n-grid",
            "100,200,400",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("1", "a");
    let b = run("3", "b");
    let rates = fs::read(a.join("rates.csv")).unwrap();
    assert_eq!(rates, fs::read(b.join("rates.csv")).unwrap());
    let text = String::from_utf8(rates).unwrap();
    assert_eq!(text.lines().next().unwrap(), "scenario,n,replicate,metric,value,lambda_hat,wallclock_seconds,failed");
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 1);
    assert!(a.join("ratefits.csv").exists());
}

#[test]
fn regimes_and_density_commands() {
    let overlap = scenario("two_gaussian_overlap");
    let o = devmix(&["--config", &overlap, "regimes", "classify"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("b_partial_overlap"));

    let o = devmix(&["regimes", "r-bar", "--k", "3"]);
    assert!(stdout(&o).contains("lower_bound"));

    let o = devmix(&["--config", &overlap, "density", "eval", "--x", "-2,3"]);
    assert!(o.status.success());
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!(v > 0.0);

    let o = devmix(&["--config", &overlap, "model", "tv", "--other", &overlap]);
    assert!(o.status.success());
    let est: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(est["value"].as_f64().unwrap() < 1e-12);
}

#[test]
fn inverse_bound_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_d_config(dir.path());
    let o = devmix(&[
        "--config",
        cfg.to_str().unwrap(),
        "verify-inverse-bound",
        "--mode",
        "exact",
        "--r",
        "1",
        "--directions",
        "2",
        "--levels",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["pass"], serde_json::Value::Bool(true));
}

#[test]
fn exit_codes() {
    assert_eq!(devmix(&["--help"]).status.code(), Some(0));
    assert_eq!(devmix(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(devmix(&["--config", "/no/such/file.toml", "simulate", "--n", "3"]).status.code(), Some(1));
    assert_eq!(devmix(&["regimes", "r-bar", "--k", "0"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = one_d_config(dir.path());
    let data = dir.path().join("bad.csv");
    fs::write(&data, "0.1\n1e200\n2.0\n").unwrap();
    let o = devmix(&["--config", cfg.to_str().unwrap(), "fit", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

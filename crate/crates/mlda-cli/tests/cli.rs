//! End-to-end tests of the `mlda` binary: pipeline wiring, exit codes, and
//! bitwise reproducibility of trace files.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

const TINY_CONFIG: &str = "\
[problem]
n_levels = 2
n_modes = 4

[sampling]
subchain_lengths = [3]
n_chains = 2
n_samples = 12
n_burnin = 6
base_seed = 42
";

fn mlda() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mlda"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("binary runs").status.code().unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, TINY_CONFIG).unwrap();
    path
}

fn count_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn full_pipeline_runs_and_produces_consistent_files() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path());

    run_ok(mlda()
        .args(["generate-data", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out));
    assert!(out.join("data.csv").is_file());
    assert!(out.join("truth.csv").is_file());
    assert!(out.join("fields.csv").is_file());
    assert!(out.join("generate.json").is_file());
    assert_eq!(count_rows(&out.join("data.csv")), 25);

    run_ok(mlda()
        .args(["sample", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out));
    for chain in 0..2 {
        assert_eq!(count_rows(&out.join(format!("chain_{chain}.csv"))), 12);
    }
    assert!(out.join("run.json").is_file());

    // No positional traces: diagnose discovers chain_*.csv in --output.
    let output = run_ok(mlda().args(["diagnose", "--output"]).arg(&out));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("theta_1"), "prints per-parameter report");
    assert_eq!(count_rows(&out.join("diagnostics.csv")), 4);
    assert_eq!(count_rows(&out.join("summary.csv")), 2, "one row per level");

    run_ok(mlda()
        .args(["plot-data", "--parameters", "theta_1,theta_3", "--output"])
        .arg(&out));
    assert_eq!(count_rows(&out.join("plot_data.csv")), 2 * 2 * 12);
}

#[test]
fn sampling_is_bitwise_reproducible_across_invocations() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path());
    let data_dir = dir.path().join("data");
    run_ok(mlda()
        .args(["generate-data", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&data_dir));

    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        run_ok(mlda()
            .args(["sample", "--config"])
            .arg(&config)
            .arg("--data")
            .arg(data_dir.join("data.csv"))
            .arg("--output")
            .arg(&out));
        runs.push(out);
    }
    for chain in 0..2 {
        let name = format!("chain_{chain}.csv");
        let a = std::fs::read(runs[0].join(&name)).unwrap();
        let b = std::fs::read(runs[1].join(&name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path());
    let data_dir = dir.path().join("data");
    run_ok(mlda()
        .args(["generate-data", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&data_dir));

    let mut runs = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(format!("t{threads}"));
        run_ok(mlda()
            .env("MLDA_THREADS", threads)
            .args(["sample", "--config"])
            .arg(&config)
            .arg("--data")
            .arg(data_dir.join("data.csv"))
            .arg("--output")
            .arg(&out));
        runs.push(out);
    }
    for chain in 0..2 {
        let name = format!("chain_{chain}.csv");
        let a = std::fs::read(runs[0].join(&name)).unwrap();
        let b = std::fs::read(runs[1].join(&name)).unwrap();
        assert_eq!(a, b, "{name} depends on scheduling");
    }
}

#[test]
fn seed_override_changes_the_data() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(mlda()
        .args(["generate-data", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out_a));
    run_ok(mlda()
        .args(["generate-data", "--seed", "777", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out_b));
    let a = std::fs::read(out_a.join("data.csv")).unwrap();
    let b = std::fs::read(out_b.join("data.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn aem_flag_is_recorded_in_run_metadata() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    run_ok(mlda()
        .args(["generate-data", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out));
    run_ok(mlda()
        .args(["sample", "--aem", "off", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out));
    let metadata: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(metadata["config"]["sampling"]["aem"], false);
    assert!(metadata["chains"][0]["aem_terms"].is_null());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[problem]\nn_levels = 1\n").unwrap();
    let code = exit_code(mlda()
        .args(["generate-data", "--config"])
        .arg(&bad)
        .arg("--output")
        .arg(dir.path().join("out")));
    assert_eq!(code, 2);

    // Typo in a config key.
    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "[sampling]\nn_sample = 10\n").unwrap();
    let code = exit_code(mlda()
        .args(["generate-data", "--config"])
        .arg(&typo)
        .arg("--output")
        .arg(dir.path().join("out")));
    assert_eq!(code, 2);

    // Missing observations file.
    let code = exit_code(mlda()
        .args(["sample", "--data"])
        .arg(dir.path().join("absent.csv"))
        .arg("--output")
        .arg(dir.path().join("out")));
    assert_eq!(code, 2);

    // Unknown command-line flag (clap usage error).
    let code = exit_code(mlda().args(["sample", "--not-a-flag"]));
    assert_eq!(code, 2);
}

#[test]
fn unknown_plot_parameter_exits_with_2() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    run_ok(mlda()
        .args(["generate-data", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out));
    run_ok(mlda()
        .args(["sample", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out));
    let output = mlda()
        .args(["plot-data", "--parameters", "theta_99", "--output"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("theta_99"));
}

#[test]
fn plot_data_round_trips_trace_values_exactly() {
    let dir = tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    run_ok(mlda()
        .args(["generate-data", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out));
    run_ok(mlda()
        .args(["sample", "--config"])
        .arg(&config)
        .arg("--output")
        .arg(&out));
    run_ok(mlda()
        .args(["plot-data", "--parameters", "theta_2", "--output"])
        .arg(&out));

    // theta_2 is the third CSV field (0-based column 1 of the thetas).
    let trace = std::fs::read_to_string(out.join("chain_1.csv")).unwrap();
    let from_trace: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();

    let plot = std::fs::read_to_string(out.join("plot_data.csv")).unwrap();
    let from_plot: Vec<f64> = plot
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("1,"))
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();

    assert_eq!(from_trace.len(), 12);
    assert_eq!(from_plot.len(), 12);
    for (a, b) in from_trace.iter().zip(&from_plot) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

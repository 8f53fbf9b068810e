//! End-to-end checks of the command-line binary: exit codes, artifact
//! presence and shape, and byte-identical reruns under a fixed seed.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poly-bsde"))
}

fn work_dir(label: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("poly-bsde-cli-{}-{label}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const SMALL_HESTON: &str = "\
[model]
kind  = heston
sigma = 0.15
alpha = 0.5
rho   = -0.5
kappa = 0.1
intensity = 8.0 10.0 5.0
intensity_y_range = -1.0 2.0
jump_mu = 0.01
jump_sigma = 0.035

[grid]
t_end = 0.5
ode_steps_per_year = 200

[expansion]
n_max = 4
m_max = 3

[mc]
n_paths = 200
steps_per_year = 50
seed = 7

[pricing]
strike_ratios = 0.95 1.0 1.05
cumulant_orders = 2 3
";

const SMALL_UTILITY: &str = "\
[model]
kind  = utility
sigma = 0.2
alpha = 0.4
rho   = -0.6
kappa = 0.1
c0    = 0.01
c1    = 0.4
gamma = 1.0
g1    = 0.6
g = 0.5 0.8 -0.2

[grid]
t_end = 0.5
ode_steps_per_year = 200

[expansion]
n_max = 4

[mc]
n_paths = 100
steps_per_year = 50
seed = 11
";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str]) {
    let output = bin().args(args).output().unwrap();
    assert!(
        output.status.success(),
        "command {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

#[test]
fn coeffs_and_moments_write_well_formed_reproducible_csvs() {
    let dir = work_dir("coeffs-moments");
    let config = write_config(&dir, SMALL_HESTON);
    let out = dir.join("out");
    let args = |cmd: &'static str| {
        vec![
            cmd.to_string(),
            "--config".to_string(),
            config.display().to_string(),
            "--out".to_string(),
            out.display().to_string(),
        ]
    };

    run_ok(&args("coeffs").iter().map(String::as_str).collect::<Vec<_>>());
    let coeffs = read(&out.join("coefficients.csv"));
    assert!(coeffs.starts_with("n,i,k,t_index,value\n"));
    // 35 table entries (orders 0..=4) on a 101-node grid plus header.
    assert_eq!(coeffs.lines().count(), 1 + 35 * 101);

    run_ok(&args("moments").iter().map(String::as_str).collect::<Vec<_>>());
    let moments = read(&out.join("moments.csv"));
    assert!(moments.starts_with("m,n_truncation,gamma_estimate\n"));
    assert_eq!(moments.lines().count(), 1 + 3 * 5);

    // Byte-identical rerun.
    let before = read(&out.join("coefficients.csv"));
    run_ok(&args("coeffs").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(before, read(&out.join("coefficients.csv")));
}

#[test]
fn price_emits_the_smile_grid_with_puts_below_spot() {
    let dir = work_dir("price");
    let config = write_config(&dir, SMALL_HESTON);
    let out = dir.join("out");
    run_ok(&[
        "price",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let smile = read(&out.join("smile.csv"));
    let lines: Vec<&str> = smile.lines().collect();
    assert_eq!(lines[0], "strike_ratio,price,implied_vol,cumulant_order");
    // 2 cumulant orders x 3 strikes.
    assert_eq!(lines.len(), 1 + 2 * 3);
    for row in &lines[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 4);
        let price: f64 = fields[1].parse().unwrap();
        let vol: f64 = fields[2].parse().unwrap();
        assert!(price > 0.0 && vol > 0.0, "row {row}");
    }
}

#[test]
fn validate_writes_stats_and_scatter_for_every_order() {
    let dir = work_dir("validate");
    let config = write_config(&dir, SMALL_HESTON);
    let out = dir.join("out");
    let run = |seed: Option<&str>| {
        let mut args = vec![
            "validate".to_string(),
            "--config".to_string(),
            config.display().to_string(),
            "--out".to_string(),
            out.display().to_string(),
        ];
        if let Some(s) = seed {
            args.push("--seed".to_string());
            args.push(s.to_string());
        }
        run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        read(&out.join("residual_stats.csv"))
    };

    let stats = run(None);
    assert!(stats.starts_with("order_n,mean,stdev,stderr\n"));
    assert_eq!(stats.lines().count(), 1 + 5);
    let scatter = read(&out.join("residual_scatter.csv"));
    assert!(scatter.starts_with("path_id,order_n,residual\n"));
    assert_eq!(scatter.lines().count(), 1 + 200 * 5);

    // Same seed reproduces bytes; a different seed does not.
    assert_eq!(stats, run(None));
    assert_ne!(stats, run(Some("8")));
}

#[test]
fn utility_command_writes_values_and_validation() {
    let dir = work_dir("utility");
    let config = write_config(&dir, SMALL_UTILITY);
    let out = dir.join("out");
    run_ok(&[
        "utility",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let values = read(&out.join("utility_values.csv"));
    assert!(values.starts_with("n,v0,z0,gamma0\n"));
    assert_eq!(values.lines().count(), 1 + 5);
    assert!(out.join("residual_stats.csv").exists());
    assert!(out.join("residual_scatter.csv").exists());
}

#[test]
fn failures_exit_with_the_documented_codes() {
    let dir = work_dir("failures");

    // Config error: out-of-range correlation.
    let bad = write_config(&dir, &SMALL_HESTON.replace("rho   = -0.5", "rho   = -1.5"));
    let output = bin().args(["coeffs", "--config", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());

    // Config error: price without a pricing block.
    let no_pricing = dir.join("no_pricing.conf");
    let trimmed: String = SMALL_HESTON
        .split("[pricing]")
        .next()
        .unwrap()
        .to_string();
    std::fs::write(&no_pricing, trimmed).unwrap();
    let output =
        bin().args(["price", "--config", no_pricing.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));

    // Config error: missing file.
    let output = bin().args(["coeffs", "--config", "/nonexistent.conf"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));

    // Usage error from the argument parser.
    let output = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

//! Command-line front end: orchestrates solve → price → validate
//! pipelines from a run file and emits CSV artifacts.
//!
//! Exit codes: `0` success, `2` configuration problem (bad file, bad
//! flags, model/command mismatch), `3` solver divergence, `4` numerical
//! failure in simulation or pricing. Reruns with the same run file and
//! seed rewrite byte-identical CSVs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ModelConfig, RunConfig};
use crate::edgeworth::{
    call_price_closed, cumulant_scale_ratios, implied_vol, implied_vol_put, moments_to_cumulants,
    put_price_closed,
};
use crate::error::{Error, Result};
use crate::heston::{heston_moment_convergence, heston_moments, heston_solve};
use crate::mc::{pathwise_residual, simulate_heston, simulate_sabr, simulate_utility,
    PathSet, TerminalFunction};
use crate::sabr::{sabr_moment_convergence, sabr_solve};
use crate::table::{CoefficientTable, TerminalSpec, TruncationOrder};
use crate::utility::utility_solve;

/// Number of paths retained in residual scatter exports.
const SCATTER_MAX_PATHS: usize = 2000;

/// Top-level argument surface.
#[derive(Debug, Parser)]
#[command(
    name = "poly-bsde",
    version,
    about = "Polynomial expansion of backward stochastic systems: solve, price, validate"
)]
pub struct Cli {
    /// Which pipeline to run.
    #[command(subcommand)]
    pub command: Command,
}

/// The five pipelines.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the backward system and write the coefficient table CSV.
    Coeffs(RunArgs),
    /// Write truncated moment estimates per target moment and order.
    Moments(RunArgs),
    /// Price the strike grid through the density expansion (smile CSV).
    Price(RunArgs),
    /// Simulate paths and write residual statistics and scatter CSVs.
    Validate(RunArgs),
    /// Write the utility value/control curve plus its validation CSVs.
    Utility(RunArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the run file's `[output] dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the run file's `[mc] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread count (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let args = match &cli.command {
        Command::Coeffs(a)
        | Command::Moments(a)
        | Command::Price(a)
        | Command::Validate(a)
        | Command::Utility(a) => a,
    };
    if let Some(n) = args.threads {
        // Ignore a second initialization (only possible if a host
        // process embeds several runs); the first pool wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) | Error::Io(_) => 2,
        Error::DivergedSolve { .. } | Error::RankDeficient(_) => 3,
        _ => 4,
    }
}

type CommandFn = fn(&RunConfig, &Path) -> Result<()>;

fn execute(cli: &Cli) -> Result<()> {
    let (args, command): (&RunArgs, CommandFn) = match &cli.command {
        Command::Coeffs(a) => (a, cmd_coeffs),
        Command::Moments(a) => (a, cmd_moments),
        Command::Price(a) => (a, cmd_price),
        Command::Validate(a) => (a, cmd_validate),
        Command::Utility(a) => (a, cmd_utility),
    };
    let mut config = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.mc.seed = seed;
    }
    // --out wins over the run file; the default is the working directory.
    let dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| {
        Error::Config(format!("cannot create output directory {}: {e}", dir.display()))
    })?;
    command(&config, &dir)
}

fn write_artifact(
    dir: &Path,
    name: &str,
    fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let path = dir.join(name);
    std::fs::write(&path, &buf)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Solves the configured model and writes `coefficients.csv`.
pub fn cmd_coeffs(config: &RunConfig, dir: &Path) -> Result<()> {
    let table = solve_on(config, config.ode_grid()?)?;
    write_artifact(dir, "coefficients.csv", |buf| table.write_csv(buf))
}

/// Writes `moments.csv`: truncated estimates of `γ_1..γ_{m_max}` per
/// expansion order.
pub fn cmd_moments(config: &RunConfig, dir: &Path) -> Result<()> {
    let grid = config.ode_grid()?;
    let convergence = match &config.model {
        ModelConfig::Heston(p) => {
            heston_moment_convergence(p, config.m_max, config.n_max, grid)?
        }
        ModelConfig::Sabr(p) => sabr_moment_convergence(p, config.m_max, config.n_max, grid)?,
        ModelConfig::Utility(_) => {
            return Err(Error::Config(
                "the moments command needs a heston or sabr model".to_string(),
            ))
        }
    };
    write_artifact(dir, "moments.csv", |buf| convergence.write_csv(buf))
}

/// Prices the strike grid at each configured cumulant order and writes
/// `smile.csv` (`strike_ratio,price,implied_vol,cumulant_order`).
///
/// Prices are per unit spot (the strike column is `K/S₀`); strikes
/// below 1 are priced as puts, the rest as calls, so every row carries
/// the out-of-the-money side of the smile.
pub fn cmd_price(config: &RunConfig, dir: &Path) -> Result<()> {
    let ModelConfig::Heston(params) = &config.model else {
        return Err(Error::Config(
            "the price command needs a heston model (log-price terminal state)".to_string(),
        ));
    };
    if config.strike_ratios.is_empty() || config.cumulant_orders.is_empty() {
        return Err(Error::Config(
            "the price command needs [pricing] strike_ratios and cumulant_orders".to_string(),
        ));
    }
    let grid = config.ode_grid()?;
    let max_order = *config.cumulant_orders.iter().max().expect("non-empty orders");
    let moments = heston_moments(params, max_order, config.n_max, grid)?;
    let cumulants = moments_to_cumulants(&moments);

    let mut rows = Vec::new();
    for &order in &config.cumulant_orders {
        let truncated = cumulants.truncate(order)?;
        for (n, ratio) in cumulant_scale_ratios(&truncated)? {
            if ratio > config.cumulant_warn_ratio {
                eprintln!(
                    "warning: cumulant {n} is {ratio:.2} times the Gaussian scale — \
                     the order-{order} density expansion may be ill-conditioned"
                );
            }
        }
        for &k in &config.strike_ratios {
            let (price, vol) = if k < 1.0 {
                let price = put_price_closed(1.0, k, &truncated)?;
                (price, implied_vol_put(price, 1.0, k, config.t_end)?)
            } else {
                let price = call_price_closed(1.0, k, &truncated)?;
                (price, implied_vol(price, 1.0, k, config.t_end)?)
            };
            rows.push((k, price, vol, order));
        }
    }
    write_artifact(dir, "smile.csv", |buf| {
        use std::io::Write;
        writeln!(buf, "strike_ratio,price,implied_vol,cumulant_order")?;
        for (k, price, vol, order) in &rows {
            writeln!(buf, "{k},{price},{vol},{order}")?;
        }
        Ok(())
    })
}

fn solve_on(config: &RunConfig, grid: crate::grid::TimeGrid) -> Result<CoefficientTable> {
    match &config.model {
        ModelConfig::Heston(p) => heston_solve(
            p,
            &TerminalSpec::monomial(config.residual_moment, config.n_max),
            config.n_max,
            grid,
        ),
        ModelConfig::Sabr(p) => sabr_solve(
            p,
            &TerminalSpec::monomial(config.residual_moment, config.n_max),
            config.n_max,
            grid,
        ),
        ModelConfig::Utility(p) => utility_solve(p, config.n_max, grid),
    }
}

fn simulate(config: &RunConfig, grid: crate::grid::TimeGrid) -> Result<(PathSet, TerminalFunction)> {
    match &config.model {
        ModelConfig::Heston(p) => Ok((
            simulate_heston(p, config.mc, grid)?,
            TerminalFunction::Monomial(config.residual_moment),
        )),
        ModelConfig::Sabr(p) => Ok((
            simulate_sabr(p, config.mc, grid)?,
            TerminalFunction::Monomial(config.residual_moment),
        )),
        ModelConfig::Utility(p) => Ok((
            simulate_utility(p, config.mc, grid)?,
            TerminalFunction::ExpLiability {
                liability: p.liability.clone(),
                risk_aversion: p.risk_aversion,
            },
        )),
    }
}

/// Simulates the configured model, accumulates residuals against a
/// table solved on the simulation grid, and writes
/// `residual_stats.csv` and `residual_scatter.csv`.
pub fn cmd_validate(config: &RunConfig, dir: &Path) -> Result<()> {
    // Solving on the simulation grid keeps the residual an exact
    // discrete identity — no interpolation between grids.
    let grid = config.mc.grid(config.t_end)?;
    let table = solve_on(config, grid)?;
    let (paths, terminal) = simulate(config, grid)?;
    let matrix = pathwise_residual(&table, &paths, &terminal, config.n_max)?;
    println!(
        "simulated {} paths x {} steps: truncated_steps={} breached_paths={}",
        paths.n_paths(),
        grid.n_steps(),
        matrix.truncated_steps,
        matrix.breached_paths
    );
    write_artifact(dir, "residual_stats.csv", |buf| matrix.write_stats_csv(buf))?;
    write_artifact(dir, "residual_scatter.csv", |buf| {
        matrix.write_scatter_csv(buf, SCATTER_MAX_PATHS)
    })
}

/// Writes `utility_values.csv` — the truncated time-zero value and
/// controls per order — then runs the residual validation.
pub fn cmd_utility(config: &RunConfig, dir: &Path) -> Result<()> {
    if !matches!(config.model, ModelConfig::Utility(_)) {
        return Err(Error::Config("the utility command needs a utility model".to_string()));
    }
    let table = solve_on(config, config.ode_grid()?)?;
    let mut rows = Vec::new();
    for n in 0..=config.n_max {
        let v0 = table.evaluate_value(TruncationOrder(n), 0.0, 0.0, 0.0)?;
        let (z0, g0) = table.evaluate_controls(TruncationOrder(n), 0.0, 0.0, 0.0)?;
        rows.push((n, v0, z0, g0));
    }
    write_artifact(dir, "utility_values.csv", |buf| {
        use std::io::Write;
        writeln!(buf, "n,v0,z0,gamma0")?;
        for (n, v0, z0, g0) in &rows {
            writeln!(buf, "{n},{v0},{z0},{g0}")?;
        }
        Ok(())
    })?;
    cmd_validate(config, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_variants_map_to_the_documented_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::other("x"))),
            2
        );
        assert_eq!(
            exit_code(&Error::DivergedSolve { time: 0.0, component: 0, label: "x".into() }),
            3
        );
        assert_eq!(exit_code(&Error::RankDeficient("x".into())), 3);
        assert_eq!(exit_code(&Error::EmptySample), 4);
        assert_eq!(exit_code(&Error::OutOfBounds("x".into())), 4);
        assert_eq!(exit_code(&Error::QuadratureNotConverged("x".into())), 4);
        assert_eq!(
            exit_code(&Error::GridMismatch("x".into())),
            4
        );
    }

    #[test]
    fn command_lines_parse_into_the_expected_shapes() {
        let cli = Cli::try_parse_from([
            "poly-bsde", "moments", "--config", "run.conf", "--seed", "7", "--threads", "2",
        ])
        .unwrap();
        match cli.command {
            Command::Moments(args) => {
                assert_eq!(args.config, PathBuf::from("run.conf"));
                assert_eq!(args.seed, Some(7));
                assert_eq!(args.threads, Some(2));
                assert_eq!(args.out, None);
            }
            other => panic!("wrong command {other:?}"),
        }
        assert!(Cli::try_parse_from(["poly-bsde", "fit", "--config", "x"]).is_err());
        assert!(Cli::try_parse_from(["poly-bsde", "price"]).is_err());
    }

    #[test]
    fn model_command_mismatches_are_config_errors() {
        let sabr = "\
[model]
kind = sabr
sigma = 0.15
alpha = 0.3
rho = -0.4
kappa = 0.1
beta = 0.4
[grid]
t_end = 0.5
[expansion]
n_max = 3
[pricing]
strike_ratios = 1.0
cumulant_orders = 2
";
        let config = RunConfig::from_text(sabr).unwrap();
        let dir = std::env::temp_dir();
        let err = cmd_price(&config, &dir).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        let err = cmd_utility(&config, &dir).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }
}

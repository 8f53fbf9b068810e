//! Euler-scheme jump-diffusion simulation of the three forward models
//! and the path-wise residual check of a truncated expansion.
//!
//! Each model starts at `(X, Y) = (0, 0)` and steps with left-node
//! coefficients on the solve grid:
//!
//! ```text
//! volatility model:  ΔX = σ√(Y+1)⁺ √h·g₁ − (σ²(Y+1)/2 + λ(Y)⁺β)h + Σ jumps
//!                    ΔY = α√(Y+1)⁺ √h·(ρg₁ + ξg₂) − κY h
//! CEV model:         ΔX = σ(1+Y) √h·g₁ − (β_c/2)σ²b(X)(1+Y)² h
//!                    ΔY = α(1+Y) √h·(ρg₁ + ξg₂) − κY h
//! utility model:     ΔX = σ√(Y+1)⁺ (√h·g₁ + θh) − σ²(Y+1)/2 h
//!                    ΔY = α√(Y+1)⁺ (√h·(ρg₁ + ξg₂) + ρθh) − κY h
//! ```
//!
//! with `ξ = √(1−ρ²)`, `θ = √Θ⁺`, full-truncation square roots (the
//! fraction of truncated steps is reported, never hidden), Poisson jump
//! counts at left-node intensity, and a support clamp for the CEV state
//! (breaches counted per path). Draw order per step is fixed — two
//! normals, then the jump count, then one normal per jump — so path `i`
//! is bit-identical regardless of thread count; antithetic partners
//! share a stream and negate the normals.
//!
//! The residual of an order-`n` table along a path is
//!
//! ```text
//! H(X_T) − [V^{(n)}(0,0,0) + Σ_i f^{(n)} h + Σ_i Z^{(n)} ΔX^c + Σ_i Γ^{(n)} ΔY
//!           + Σ_jumps (V^{(n)}(x+z) − V^{(n)}(x))],
//! ```
//!
//! everything evaluated at left nodes, the continuous increment `ΔX^c`
//! separated exactly from the recorded jump marks. An expansion that
//! solves the pricing equation drives this to zero in distribution as
//! the order grows; its per-order mean and spread are the module's
//! product.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::heston::{gaussian_jump_moment, jump_beta, HestonParams};
use crate::math::factorial;
use crate::sabr::SabrParams;
use crate::table::CoefficientTable;
use crate::utility::{LiabilitySpec, UtilityParams};

/// Default simulation resolution; the published residual tables are
/// stable at a few hundred steps per year and the first-order weak bias
/// of the Euler scheme is absorbed by the validation tolerances.
pub const DEFAULT_MC_STEPS_PER_YEAR: usize = 300;

/// Offset above the CEV support floor applied when a path breaches it.
const FLOOR_NUDGE: f64 = 1e-8;

/// Simulation controls: path count, resolution, seeding, antithetics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    /// Number of simulated paths (≥ 1).
    pub n_paths: usize,
    /// Euler steps per year (≥ 1).
    pub n_steps_per_year: usize,
    /// Master seed; per-path streams are derived from it.
    pub seed: u64,
    /// Pair consecutive paths with negated Gaussian draws.
    pub antithetic: bool,
}

impl McConfig {
    /// Checks the count invariants.
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::InvalidInput("need at least one path".to_string()));
        }
        if self.n_steps_per_year < 1 {
            return Err(Error::InvalidInput(
                "need at least one step per year".to_string(),
            ));
        }
        Ok(())
    }

    /// The simulation grid for a horizon, at this config's resolution.
    pub fn grid(&self, t_end: f64) -> Result<TimeGrid> {
        let steps = ((t_end * self.n_steps_per_year as f64).ceil() as usize).max(1);
        TimeGrid::new(t_end, steps)
    }
}

#[derive(Debug, Clone)]
enum ModelKind {
    Heston(HestonParams),
    Sabr(SabrParams),
    Utility(UtilityParams),
}

/// A reproducible set of simulated paths: a model, a grid, and a
/// seeding scheme. Paths are materialized on demand (path `i` is the
/// same bit pattern however and whenever it is asked for), so half a
/// million paths cost no storage until they are walked.
#[derive(Debug, Clone)]
pub struct PathSet {
    kind: ModelKind,
    grid: TimeGrid,
    config: McConfig,
}

/// One realized path: states on every grid node, jump marks as
/// `(left step index, jump size)`, and per-path diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    /// Log-price-like state on each node.
    pub xs: Vec<f64>,
    /// Factor state on each node.
    pub ys: Vec<f64>,
    /// Jump marks, ordered by step index.
    pub jumps: Vec<(usize, f64)>,
    /// Steps where `Y + 1 < 0` forced the square-root truncation.
    pub truncated_steps: usize,
    /// Whether the CEV support clamp fired anywhere on the path.
    pub support_breached: bool,
}

/// Terminal states of every path plus aggregate diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSample {
    /// `(X_T, Y_T)` per path, in path order.
    pub states: Vec<(f64, f64)>,
    /// Total square-root truncations across all paths and steps.
    pub truncated_steps: u64,
    /// Number of paths on which the CEV support clamp fired.
    pub breached_paths: u64,
}

fn normal(rng: &mut ChaCha8Rng, negate: bool) -> f64 {
    let g: f64 = rng.sample(StandardNormal);
    if negate {
        -g
    } else {
        g
    }
}

/// Poisson draw by cumulative-product inversion; exact for the small
/// per-step rates `λh` the scheme works at.
fn poisson_count(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let limit = (-rate).exp();
    let mut count = 0;
    let mut product = 1.0;
    loop {
        product *= rng.random::<f64>();
        if product <= limit {
            return count;
        }
        count += 1;
    }
}

fn validate_paths(config: &McConfig, grid: TimeGrid) -> Result<()> {
    config.validate()?;
    let _ = grid;
    Ok(())
}

/// Simulation recipe for the stochastic-volatility jump model.
pub fn simulate_heston(
    params: &HestonParams,
    config: McConfig,
    grid: TimeGrid,
) -> Result<PathSet> {
    params.validate()?;
    validate_paths(&config, grid)?;
    Ok(PathSet { kind: ModelKind::Heston(params.clone()), grid, config })
}

/// Simulation recipe for the CEV stochastic-volatility model.
pub fn simulate_sabr(params: &SabrParams, config: McConfig, grid: TimeGrid) -> Result<PathSet> {
    params.validate()?;
    validate_paths(&config, grid)?;
    Ok(PathSet { kind: ModelKind::Sabr(params.clone()), grid, config })
}

/// Simulation recipe for the utility-problem wealth/factor dynamics.
pub fn simulate_utility(
    params: &UtilityParams,
    config: McConfig,
    grid: TimeGrid,
) -> Result<PathSet> {
    params.validate()?;
    validate_paths(&config, grid)?;
    Ok(PathSet { kind: ModelKind::Utility(params.clone()), grid, config })
}

impl PathSet {
    /// Number of paths in the set.
    pub fn n_paths(&self) -> usize {
        self.config.n_paths
    }

    /// The simulation grid.
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Materializes path `index` deterministically.
    ///
    /// # Panics
    /// Panics if `index` is out of range.
    pub fn path(&self, index: usize) -> SimulatedPath {
        assert!(index < self.config.n_paths, "path index {index} out of range");
        let (stream, negate) = if self.config.antithetic {
            ((index / 2) as u64, index % 2 == 1)
        } else {
            (index as u64, false)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);

        let n_steps = self.grid.n_steps();
        let h = self.grid.step();
        let sqrt_h = h.sqrt();
        let mut xs = Vec::with_capacity(n_steps + 1);
        let mut ys = Vec::with_capacity(n_steps + 1);
        let mut jumps = Vec::new();
        let mut truncated = 0usize;
        let mut breached = false;
        let (mut x, mut y) = (0.0_f64, 0.0_f64);
        xs.push(x);
        ys.push(y);
        for s in 0..n_steps {
            let t = self.grid.node(s);
            match &self.kind {
                ModelKind::Heston(p) => {
                    let sig = p.sigma.value(t);
                    let alp = p.alpha.value(t);
                    let rho = p.rho.value(t);
                    let kap = p.kappa.value(t);
                    let xi = (1.0 - rho * rho).max(0.0).sqrt();
                    let vplus = (y + 1.0).max(0.0);
                    if y + 1.0 < 0.0 {
                        truncated += 1;
                    }
                    let sqv = vplus.sqrt();
                    let lam = p.intensity.eval(y).max(0.0);
                    let beta = jump_beta(p.jump);
                    let g1 = normal(&mut rng, negate);
                    let g2 = normal(&mut rng, negate);
                    let mut xn = x + sig * sqv * sqrt_h * g1
                        - (0.5 * sig * sig * (y + 1.0) + lam * beta) * h;
                    let n_jumps = poisson_count(&mut rng, lam * h);
                    for _ in 0..n_jumps {
                        let gz: f64 = rng.sample(StandardNormal);
                        let z = if negate {
                            p.jump.mu - p.jump.sigma * gz
                        } else {
                            p.jump.mu + p.jump.sigma * gz
                        };
                        xn += z;
                        jumps.push((s, z));
                    }
                    let yn = y + alp * sqv * sqrt_h * (rho * g1 + xi * g2) - kap * y * h;
                    (x, y) = (xn, yn);
                }
                ModelKind::Sabr(p) => {
                    let sig = p.sigma.value(t);
                    let alp = p.alpha.value(t);
                    let rho = p.rho.value(t);
                    let kap = p.kappa.value(t);
                    let xi = (1.0 - rho * rho).max(0.0).sqrt();
                    let vol = 1.0 + y;
                    let b = 1.0 / (1.0 + (1.0 - p.beta_exp) * x);
                    let g1 = normal(&mut rng, negate);
                    let g2 = normal(&mut rng, negate);
                    let mut xn = x + sig * vol * sqrt_h * g1
                        - 0.5 * p.beta_exp * sig * sig * b * vol * vol * h;
                    let floor = p.support_floor();
                    if xn <= floor {
                        xn = floor + FLOOR_NUDGE;
                        breached = true;
                    }
                    let yn = y + alp * vol * sqrt_h * (rho * g1 + xi * g2) - kap * y * h;
                    (x, y) = (xn, yn);
                }
                ModelKind::Utility(p) => {
                    let sig = p.sigma.value(t);
                    let alp = p.alpha.value(t);
                    let rho = p.rho.value(t);
                    let kap = p.kappa.value(t);
                    let xi = (1.0 - rho * rho).max(0.0).sqrt();
                    let vplus = (y + 1.0).max(0.0);
                    if y + 1.0 < 0.0 {
                        truncated += 1;
                    }
                    let sqv = vplus.sqrt();
                    let theta = p.risk_premium.value(x, y).max(0.0).sqrt();
                    let g1 = normal(&mut rng, negate);
                    let g2 = normal(&mut rng, negate);
                    let xn = x + sig * sqv * (sqrt_h * g1 + theta * h)
                        - 0.5 * sig * sig * (y + 1.0) * h;
                    let yn = y + alp * sqv * (sqrt_h * (rho * g1 + xi * g2) + rho * theta * h)
                        - kap * y * h;
                    (x, y) = (xn, yn);
                }
            }
            xs.push(x);
            ys.push(y);
        }
        SimulatedPath { xs, ys, jumps, truncated_steps: truncated, support_breached: breached }
    }

    /// Terminal `(X_T, Y_T)` of every path, in path order, with
    /// truncation/breach totals. Deterministic across thread counts.
    pub fn terminal_states(&self) -> TerminalSample {
        let truncated = AtomicU64::new(0);
        let breached = AtomicU64::new(0);
        let states: Vec<(f64, f64)> = (0..self.config.n_paths)
            .into_par_iter()
            .map(|i| {
                let path = self.path(i);
                truncated.fetch_add(path.truncated_steps as u64, Ordering::Relaxed);
                if path.support_breached {
                    breached.fetch_add(1, Ordering::Relaxed);
                }
                (*path.xs.last().expect("non-empty path"), *path.ys.last().expect("non-empty path"))
            })
            .collect();
        TerminalSample {
            states,
            truncated_steps: truncated.into_inner(),
            breached_paths: breached.into_inner(),
        }
    }
}

/// Terminal function `H` whose conditional expectation the expansion
/// approximates.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalFunction {
    /// `H(x) = x^m` — the moment runs.
    Monomial(usize),
    /// `H(x, y) = γ·e^{−g₁x}·G(y)` — the utility-problem terminal.
    ExpLiability {
        /// Liability shape (exponent slope and polynomial factor).
        liability: LiabilitySpec,
        /// Risk-aversion scale `γ`.
        risk_aversion: f64,
    },
}

impl TerminalFunction {
    /// Evaluates `H` at a terminal state.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            TerminalFunction::Monomial(m) => x.powi(*m as i32),
            TerminalFunction::ExpLiability { liability, risk_aversion } => {
                risk_aversion * liability.value(x, y)
            }
        }
    }
}

/// Per-order sample statistics of the path-wise residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    /// Truncation order the statistics belong to.
    pub order: usize,
    /// Sample mean.
    pub mean: f64,
    /// Unbiased sample standard deviation (0 for a single sample).
    pub stdev: f64,
    /// `stdev / √n`.
    pub stderr: f64,
    /// Number of samples.
    pub n_samples: usize,
}

/// Compensated (Neumaier) sum; keeps reductions reproducible to full
/// precision independent of how work was scheduled upstream.
fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Mean / spread / standard error of a residual sample for one order.
pub fn residual_stats(samples: &[f64], order: usize) -> Result<ResidualStats> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = samples.len();
    let mean = neumaier_sum(samples.iter().copied()) / n as f64;
    let stdev = if n >= 2 {
        let ss = neumaier_sum(samples.iter().map(|&s| (s - mean) * (s - mean)));
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ResidualStats { order, mean, stdev, stderr: stdev / (n as f64).sqrt(), n_samples: n })
}

/// Path-wise residuals for every truncation order `0..=max_order`,
/// stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    residuals: Vec<f64>,
    n_paths: usize,
    n_orders: usize,
    /// Total square-root truncations across all paths and steps.
    pub truncated_steps: u64,
    /// Number of paths on which the CEV support clamp fired.
    pub breached_paths: u64,
}

impl ResidualMatrix {
    /// Number of paths.
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Largest truncation order held (orders run `0..=max_order()`).
    pub fn max_order(&self) -> usize {
        self.n_orders - 1
    }

    /// Residual of one path at one order.
    ///
    /// # Panics
    /// Panics if either index is out of range.
    pub fn residual(&self, path: usize, order: usize) -> f64 {
        assert!(path < self.n_paths && order < self.n_orders, "index out of range");
        self.residuals[path * self.n_orders + order]
    }

    /// All residuals of one order, in path order.
    pub fn order_samples(&self, order: usize) -> Vec<f64> {
        assert!(order < self.n_orders, "order {order} out of range");
        (0..self.n_paths).map(|p| self.residuals[p * self.n_orders + order]).collect()
    }

    /// Statistics for every order, ascending.
    pub fn stats(&self) -> Vec<ResidualStats> {
        (0..self.n_orders)
            .map(|n| {
                residual_stats(&self.order_samples(n), n).expect("matrix rows are non-empty")
            })
            .collect()
    }

    /// Writes per-order statistics as CSV with header
    /// `order_n,mean,stdev,stderr`.
    pub fn write_stats_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "order_n,mean,stdev,stderr")?;
        for s in self.stats() {
            writeln!(out, "{},{},{},{}", s.order, s.mean, s.stdev, s.stderr)?;
        }
        Ok(())
    }

    /// Writes a residual scatter as CSV with header
    /// `path_id,order_n,residual`, subsampled to at most `max_paths`
    /// paths by a deterministic stride.
    pub fn write_scatter_csv<W: std::io::Write>(
        &self,
        out: &mut W,
        max_paths: usize,
    ) -> std::io::Result<()> {
        writeln!(out, "path_id,order_n,residual")?;
        let stride = (self.n_paths / max_paths.max(1)).max(1);
        for p in (0..self.n_paths).step_by(stride).take(max_paths) {
            for n in 0..self.n_orders {
                writeln!(out, "{},{},{}", p, n, self.residuals[p * self.n_orders + n])?;
            }
        }
        Ok(())
    }
}

/// Dense triangular index over `(a, k)` pairs ordered by total degree
/// then `k`; entries with `a + k ≤ m` occupy the prefix of length
/// `(m+1)(m+2)/2`.
fn tri(a: usize, k: usize) -> usize {
    let m = a + k;
    m * (m + 1) / 2 + k
}

/// Per-node, per-order coefficient vectors against which the residual
/// pass takes monomial dot products: value (`vc`), x-derivative (`zc`),
/// y-derivative (`gc`), and jump-moment-folded (`jc`) families, plus
/// the model coefficients sampled on the left nodes.
struct NodeCaches {
    tri_len: usize,
    n_orders: usize,
    vc: Vec<f64>,
    zc: Vec<f64>,
    gc: Vec<f64>,
    jc: Vec<f64>,
    inv_fact: Vec<f64>,
    sig: Vec<f64>,
    alp: Vec<f64>,
    rho: Vec<f64>,
    kap: Vec<f64>,
}

impl NodeCaches {
    fn at<'a>(&self, family: &'a [f64], node: usize, order: usize) -> &'a [f64] {
        let base = (node * self.n_orders + order) * self.tri_len;
        &family[base..base + self.tri_len]
    }
}

fn dot(coef: &[f64], mono: &[f64], len: usize) -> f64 {
    coef[..len].iter().zip(&mono[..len]).map(|(c, m)| c * m).sum()
}

fn build_caches(
    table: &CoefficientTable,
    paths: &PathSet,
    max_order: usize,
    jump_moments: Option<&[f64]>,
) -> NodeCaches {
    let grid = paths.grid;
    let n_nodes = grid.n_nodes();
    let n_orders = max_order + 1;
    let tri_len = (max_order + 1) * (max_order + 2) / 2;
    let total = n_nodes * n_orders * tri_len;
    let mut caches = NodeCaches {
        tri_len,
        n_orders,
        vc: vec![0.0; total],
        zc: vec![0.0; total],
        gc: vec![0.0; total],
        jc: vec![0.0; if jump_moments.is_some() { total } else { 0 }],
        inv_fact: (0..tri_len)
            .map(|idx| {
                let mut m = 0;
                while (m + 1) * (m + 2) / 2 <= idx {
                    m += 1;
                }
                let k = idx - m * (m + 1) / 2;
                1.0 / (factorial(m - k) * factorial(k))
            })
            .collect(),
        sig: Vec::with_capacity(n_nodes),
        alp: Vec::with_capacity(n_nodes),
        rho: Vec::with_capacity(n_nodes),
        kap: Vec::with_capacity(n_nodes),
    };
    let (sigma, alpha, rho, kappa) = match &paths.kind {
        ModelKind::Heston(p) => (&p.sigma, &p.alpha, &p.rho, &p.kappa),
        ModelKind::Sabr(p) => (&p.sigma, &p.alpha, &p.rho, &p.kappa),
        ModelKind::Utility(p) => (&p.sigma, &p.alpha, &p.rho, &p.kappa),
    };
    for node in 0..n_nodes {
        let t = grid.node(node);
        caches.sig.push(sigma.value(t));
        caches.alp.push(alpha.value(t));
        caches.rho.push(rho.value(t));
        caches.kap.push(kappa.value(t));
        for j in 0..n_orders {
            let base = (node * n_orders + j) * tri_len;
            for m in 0..=j {
                for k in 0..=m {
                    let a = m - k;
                    caches.vc[base + tri(a, k)] = table.value_at_node(j, a, k, node);
                    if m + 1 <= j {
                        caches.zc[base + tri(a, k)] = table.value_at_node(j, a + 1, k, node);
                        caches.gc[base + tri(a, k)] = table.value_at_node(j, a, k + 1, node);
                        if let Some(q) = jump_moments {
                            let mut folded = 0.0;
                            for l in 1..=(j - m) {
                                folded += q[l] / factorial(l)
                                    * table.value_at_node(j, a + l, k, node);
                            }
                            caches.jc[base + tri(a, k)] = folded;
                        }
                    }
                }
            }
        }
    }
    caches
}

/// Evaluates the residual `H(X_T) − Ṽ^{(n)}(T)` of `table` on every
/// path for every order `0..=max_order` in one fused pass.
///
/// The table must have been solved on the paths' own grid — a residual
/// against coefficients sampled elsewhere would silently interpolate.
pub fn pathwise_residual(
    table: &CoefficientTable,
    paths: &PathSet,
    terminal: &TerminalFunction,
    max_order: usize,
) -> Result<ResidualMatrix> {
    if table.grid() != paths.grid {
        return Err(Error::GridMismatch(format!(
            "table solved on {} steps to t = {}, paths simulated on {} steps to t = {}",
            table.grid().n_steps(),
            table.grid().t_end(),
            paths.grid.n_steps(),
            paths.grid.t_end()
        )));
    }
    if max_order > table.n_max() {
        return Err(Error::OutOfRangeOrder { requested: max_order, available: table.n_max() });
    }

    let (jump_moments, beta) = match &paths.kind {
        ModelKind::Heston(p) => {
            let q: Vec<f64> =
                (0..=table.n_max()).map(|l| gaussian_jump_moment(p.jump, l)).collect();
            (Some(q), jump_beta(p.jump))
        }
        _ => (None, 0.0),
    };
    let caches = build_caches(table, paths, max_order, jump_moments.as_deref());

    let n_orders = max_order + 1;
    let n_paths = paths.config.n_paths;
    let n_steps = paths.grid.n_steps();
    let h = paths.grid.step();
    let truncated = AtomicU64::new(0);
    let breached = AtomicU64::new(0);

    let mut residuals = vec![0.0; n_paths * n_orders];
    residuals.par_chunks_mut(n_orders).enumerate().for_each(|(p, out)| {
        let path = paths.path(p);
        truncated.fetch_add(path.truncated_steps as u64, Ordering::Relaxed);
        if path.support_breached {
            breached.fetch_add(1, Ordering::Relaxed);
        }

        // Ṽ starts from the truncated time-zero values (state is (0,0),
        // so only the constant coefficients contribute).
        let mut acc = vec![0.0; n_orders];
        let mut run = 0.0;
        for j in 0..n_orders {
            run += caches.at(&caches.vc, 0, j)[0];
            acc[j] = run;
        }

        let mut mono = vec![0.0; caches.tri_len];
        let mut mono_shift = vec![0.0; caches.tri_len];
        let mut powx = vec![1.0; max_order + 1];
        let mut powy = vec![1.0; max_order + 1];
        let mut jump_ptr = 0usize;

        for s in 0..n_steps {
            let (x, y) = (path.xs[s], path.ys[s]);
            for d in 1..=max_order {
                powx[d] = powx[d - 1] * x;
                powy[d] = powy[d - 1] * y;
            }
            for m in 0..=max_order {
                for k in 0..=m {
                    let idx = tri(m - k, k);
                    mono[idx] = powx[m - k] * powy[k] * caches.inv_fact[idx];
                }
            }

            let mut jump_sum = 0.0;
            let jump_lo = jump_ptr;
            while jump_ptr < path.jumps.len() && path.jumps[jump_ptr].0 == s {
                jump_sum += path.jumps[jump_ptr].1;
                jump_ptr += 1;
            }
            let dxc = path.xs[s + 1] - x - jump_sum;
            let dy = path.ys[s + 1] - y;

            let (sig, alp, rho, kap) =
                (caches.sig[s], caches.alp[s], caches.rho[s], caches.kap[s]);
            let mut z_run = 0.0;
            let mut g_run = 0.0;
            let mut j_run = 0.0;
            for n in 0..n_orders {
                let len_zg = n * (n + 1) / 2;
                z_run += dot(caches.at(&caches.zc, s, n), &mono, len_zg);
                g_run += dot(caches.at(&caches.gc, s, n), &mono, len_zg);
                let f = match &paths.kind {
                    ModelKind::Heston(p) => {
                        j_run += dot(caches.at(&caches.jc, s, n), &mono, len_zg);
                        let lam = p.intensity.eval(y).max(0.0);
                        z_run * (0.5 * sig * sig * (y + 1.0) + lam * beta) + kap * y * g_run
                            - lam * j_run
                    }
                    ModelKind::Sabr(p) => {
                        let b = 1.0 / (1.0 + (1.0 - p.beta_exp) * x);
                        let vol = 1.0 + y;
                        z_run * 0.5 * p.beta_exp * sig * sig * b * vol * vol + kap * y * g_run
                    }
                    ModelKind::Utility(p) => {
                        let xi2 = 1.0 - rho * rho;
                        0.5 * p.risk_premium.value(x, y)
                            + 0.5 * sig * sig * (y + 1.0) * z_run
                            + kap * y * g_run
                            - 0.5 * alp * alp * xi2 * (y + 1.0) * g_run * g_run
                    }
                };
                acc[n] += f * h + z_run * dxc + g_run * dy;
            }

            // Jump controls: exact truncated-value differences at the
            // left-node state, one per mark.
            for &(_, z) in &path.jumps[jump_lo..jump_ptr] {
                let xz = x + z;
                for d in 1..=max_order {
                    powx[d] = powx[d - 1] * xz;
                }
                for m in 0..=max_order {
                    for k in 0..=m {
                        let idx = tri(m - k, k);
                        mono_shift[idx] = powx[m - k] * powy[k] * caches.inv_fact[idx];
                    }
                }
                let mut u_run = 0.0;
                for n in 0..n_orders {
                    let len_v = (n + 1) * (n + 2) / 2;
                    let coef = caches.at(&caches.vc, s, n);
                    u_run += dot(coef, &mono_shift, len_v) - dot(coef, &mono, len_v);
                    acc[n] += u_run;
                }
                // Restore the unshifted x powers for the next mark.
                for d in 1..=max_order {
                    powx[d] = powx[d - 1] * x;
                }
            }
        }

        let h_term = terminal.value(path.xs[n_steps], path.ys[n_steps]);
        for n in 0..n_orders {
            out[n] = h_term - acc[n];
        }
    });

    Ok(ResidualMatrix {
        residuals,
        n_paths,
        n_orders,
        truncated_steps: truncated.into_inner(),
        breached_paths: breached.into_inner(),
    })
}

//! Dense storage and evaluation of two-factor polynomial expansion tables.
//!
//! A solved expansion is a collection of deterministic time functions
//! `v[n]_{i,k}(t)`, one per order `n` and exponent pair `(i, k)` with
//! `i + k ≤ n`. The order-`n` value correction is the polynomial
//!
//! ```text
//! V[n](t, x, y) = Σ_{i+k≤n} x^i y^k / (i! k!) · v[n]_{i,k}(t)
//! ```
//!
//! and the truncated approximation of order `n` sums the corrections for all
//! orders `j ≤ n`. The first factor's control is the exact `x`-derivative of
//! that polynomial, the second factor's control the exact `y`-derivative,
//! and the jump control is the exact finite difference in `x` — so the three
//! evaluation routines here are plain polynomial arithmetic over the stored
//! coefficients, with the factorial weights applied at evaluation time
//! (keeping the stored values equal to raw derivative data at the terminal).
//!
//! Coefficient-in-time lookups use the left grid node of the step containing
//! `t`, matching the left-point convention of the Euler Monte-Carlo harness.

use crate::error::{Error, Result};
use crate::grid::{SampledFunction, TimeGrid};
use crate::math::factorial;

/// Expansion order at which an evaluation is truncated.
///
/// Wraps the order `n`: the evaluation sums the corrections of all orders
/// `j ≤ n`. Must not exceed the table's own maximum order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationOrder(pub usize);

/// Structural restriction on which entries may be nonzero at the terminal
/// time, checked when a table is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalPattern {
    /// Only `(n, n, 0)` entries may be nonzero at `T` (terminal data are
    /// pure `x`-derivatives; both pricing models).
    XDiagonal,
    /// Only `(n, i, k)` entries with `i + k = n` may be nonzero at `T`
    /// (terminal data are mixed `x`/`y`-derivatives; the utility model).
    XyDiagonal,
    /// No restriction (hand-built tables, tests).
    Unconstrained,
}

/// Terminal-condition data for the pricing models: the payoff derivatives
/// `∂ₓⁿ H(0)` at the expansion point, one per order `0 ≤ n ≤ n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSpec {
    derivs: Vec<f64>,
}

impl TerminalSpec {
    /// Wraps the derivative sequence `derivs[n] = ∂ₓⁿ H(0)`.
    pub fn new(derivs: Vec<f64>) -> Result<Self> {
        if derivs.is_empty() {
            return Err(Error::InvalidInput(
                "terminal spec needs at least the order-0 derivative".to_string(),
            ));
        }
        if derivs.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidInput(
                "terminal derivatives must be finite".to_string(),
            ));
        }
        Ok(Self { derivs })
    }

    /// Terminal data for the monomial payoff `H(x) = x^m`:
    /// `∂ₓⁿ H(0) = m!` at `n = m`, zero elsewhere.
    pub fn monomial(m: usize, n_max: usize) -> Self {
        let mut derivs = vec![0.0; n_max + 1];
        if m <= n_max {
            derivs[m] = factorial(m);
        }
        Self { derivs }
    }

    /// `∂ₓⁿ H(0)`, zero beyond the stored orders.
    pub fn derivative(&self, n: usize) -> f64 {
        self.derivs.get(n).copied().unwrap_or(0.0)
    }

    /// Largest order with stored data.
    pub fn max_order(&self) -> usize {
        self.derivs.len() - 1
    }
}

/// The solved expansion coefficients `v[n]_{i,k}(t)` for all orders
/// `0 ≤ n ≤ n_max`, sampled on a shared time grid.
///
/// Immutable after construction; concurrent reads are safe.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    n_max: usize,
    grid: TimeGrid,
    entries: Vec<SampledFunction>,
}

impl CoefficientTable {
    /// Number of `(n, i, k)` entries a table of maximum order `n_max`
    /// holds: `(n_max+1)(n_max+2)(n_max+3)/6`.
    pub fn total_entries(n_max: usize) -> usize {
        (n_max + 1) * (n_max + 2) * (n_max + 3) / 6
    }

    /// Flat storage index of entry `(n, i, k)`; `None` if `i + k > n`.
    ///
    /// Entries are laid out order-major, then by total degree `m = i + k`,
    /// then by `k` — the same order in which the recursions are evaluated.
    pub fn entry_index(n: usize, i: usize, k: usize) -> Option<usize> {
        let m = i + k;
        if m > n {
            return None;
        }
        Some(n * (n + 1) * (n + 2) / 6 + m * (m + 1) / 2 + k)
    }

    /// Inverse of [`entry_index`](Self::entry_index): the `(n, i, k)` triple
    /// stored at flat index `idx`.
    pub fn entry_triple(idx: usize) -> (usize, usize, usize) {
        let mut n = 0usize;
        while (n + 1) * (n + 2) * (n + 3) / 6 <= idx {
            n += 1;
        }
        let mut rem = idx - n * (n + 1) * (n + 2) / 6;
        let mut m = 0usize;
        while (m + 1) * (m + 2) / 2 <= rem {
            m += 1;
        }
        rem -= m * (m + 1) / 2;
        (n, m - rem, rem)
    }

    /// Builds a table from one [`SampledFunction`] per entry, in
    /// [`entry_index`](Self::entry_index) order, enforcing the terminal
    /// `pattern`.
    pub fn from_entries(
        n_max: usize,
        grid: TimeGrid,
        entries: Vec<SampledFunction>,
        pattern: TerminalPattern,
    ) -> Result<Self> {
        let expected = Self::total_entries(n_max);
        if entries.len() != expected {
            return Err(Error::InvalidInput(format!(
                "table of order {n_max} needs {expected} entries, got {}",
                entries.len()
            )));
        }
        for (idx, e) in entries.iter().enumerate() {
            if e.grid() != grid {
                let (n, i, k) = Self::entry_triple(idx);
                return Err(Error::InvalidInput(format!(
                    "entry ({n}, {i}, {k}) is sampled on a different grid"
                )));
            }
        }
        let terminal_node = grid.n_nodes() - 1;
        for (idx, e) in entries.iter().enumerate() {
            let (n, i, k) = Self::entry_triple(idx);
            let allowed = match pattern {
                TerminalPattern::XDiagonal => i == n && k == 0,
                TerminalPattern::XyDiagonal => i + k == n,
                TerminalPattern::Unconstrained => true,
            };
            if !allowed && e.value_at_node(terminal_node) != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "entry ({n}, {i}, {k}) must vanish at the terminal time, got {}",
                    e.value_at_node(terminal_node)
                )));
            }
        }
        Ok(Self {
            n_max,
            grid,
            entries,
        })
    }

    /// Largest stored expansion order.
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Grid the coefficients are sampled on.
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// The coefficient function of entry `(n, i, k)`, or `None` if
    /// `i + k > n` or `n` exceeds the maximum order.
    pub fn entry(&self, n: usize, i: usize, k: usize) -> Option<&SampledFunction> {
        if n > self.n_max {
            return None;
        }
        Self::entry_index(n, i, k).map(|idx| &self.entries[idx])
    }

    /// Coefficient `v[n]_{i,k}` at grid node `node`.
    ///
    /// # Panics
    /// Panics if the triple is invalid or the node is out of range.
    pub fn value_at_node(&self, n: usize, i: usize, k: usize, node: usize) -> f64 {
        assert!(n <= self.n_max, "order {n} beyond table maximum {}", self.n_max);
        let idx = Self::entry_index(n, i, k).expect("valid (n, i, k) triple");
        self.entries[idx].value_at_node(node)
    }

    fn check_order(&self, order: TruncationOrder) -> Result<usize> {
        if order.0 > self.n_max {
            return Err(Error::OutOfRangeOrder {
                requested: order.0,
                available: self.n_max,
            });
        }
        Ok(order.0)
    }

    /// Truncated value
    /// `Σ_{j≤n} Σ_{i+k≤j} x^i y^k / (i! k!) · v[j]_{i,k}(t)`,
    /// coefficients read at the left grid node of the step containing `t`.
    pub fn evaluate_value(
        &self,
        order: TruncationOrder,
        t: f64,
        x: f64,
        y: f64,
    ) -> Result<f64> {
        let n = self.check_order(order)?;
        let node = self.grid.left_node_index(t)?;
        let mut acc = 0.0;
        for j in 0..=n {
            for m in 0..=j {
                for k in 0..=m {
                    let i = m - k;
                    acc += x.powi(i as i32) * y.powi(k as i32)
                        / (factorial(i) * factorial(k))
                        * self.value_at_node(j, i, k, node);
                }
            }
        }
        Ok(acc)
    }

    /// Truncated controls `(Z, Γ)`: the exact partial derivatives of the
    /// truncated value polynomial in `x` and `y` respectively.
    pub fn evaluate_controls(
        &self,
        order: TruncationOrder,
        t: f64,
        x: f64,
        y: f64,
    ) -> Result<(f64, f64)> {
        let n = self.check_order(order)?;
        let node = self.grid.left_node_index(t)?;
        let mut z = 0.0;
        let mut g = 0.0;
        for j in 0..=n {
            for m in 0..=j {
                for k in 0..=m {
                    let i = m - k;
                    let v = self.value_at_node(j, i, k, node);
                    if i >= 1 {
                        z += x.powi((i - 1) as i32) * y.powi(k as i32)
                            / (factorial(i - 1) * factorial(k))
                            * v;
                    }
                    if k >= 1 {
                        g += x.powi(i as i32) * y.powi((k - 1) as i32)
                            / (factorial(i) * factorial(k - 1))
                            * v;
                    }
                }
            }
        }
        Ok((z, g))
    }

    /// Jump control of a single order: the order-`n` value correction's
    /// exact increment when `x` jumps by `z`,
    ///
    /// ```text
    /// U[n](t, z) = Σ_{m<n} Σ_{k≤m} x^{m−k} y^k / ((m−k)! k!)
    ///              · Σ_{l=m+1}^{n} z^{l−m} / (l−m)! · v[n]_{l−k,k}(t).
    /// ```
    ///
    /// Summing this over orders `j ≤ n` reproduces
    /// `V(t, x+z, y) − V(t, x, y)` of the order-`n` truncation exactly.
    pub fn evaluate_jump_control(
        &self,
        order: TruncationOrder,
        t: f64,
        x: f64,
        y: f64,
        z: f64,
    ) -> Result<f64> {
        let n = self.check_order(order)?;
        let node = self.grid.left_node_index(t)?;
        let mut acc = 0.0;
        for m in 0..n {
            for k in 0..=m {
                let i = m - k;
                let outer = x.powi(i as i32) * y.powi(k as i32)
                    / (factorial(i) * factorial(k));
                let mut inner = 0.0;
                for l in (m + 1)..=n {
                    inner += z.powi((l - m) as i32) / factorial(l - m)
                        * self.value_at_node(n, l - k, k, node);
                }
                acc += outer * inner;
            }
        }
        Ok(acc)
    }

    /// Jump-moment integral of a single order: the order-`n` jump control
    /// integrated against the jump-size distribution, using its raw moments
    /// `jump_moments[j] = q_j` (with `q_0 = 1`),
    ///
    /// ```text
    /// ∫ U[n](t, z) q(dz) = Σ_{m<n} Σ_{k≤m} x^{m−k} y^k / ((m−k)! k!)
    ///                      · Σ_{j=1}^{n−m} q_j / j! · v[n]_{j+m−k,k}(t).
    /// ```
    pub fn evaluate_jump_integral(
        &self,
        order: TruncationOrder,
        t: f64,
        x: f64,
        y: f64,
        jump_moments: &[f64],
    ) -> Result<f64> {
        let n = self.check_order(order)?;
        if jump_moments.len() < n + 1 {
            return Err(Error::InvalidInput(format!(
                "jump-moment integral of order {n} needs moments up to q_{n}, got {}",
                jump_moments.len().saturating_sub(1)
            )));
        }
        let node = self.grid.left_node_index(t)?;
        let mut acc = 0.0;
        for m in 0..n {
            for k in 0..=m {
                let i = m - k;
                let outer = x.powi(i as i32) * y.powi(k as i32)
                    / (factorial(i) * factorial(k));
                let mut inner = 0.0;
                for j in 1..=(n - m) {
                    inner += jump_moments[j] / factorial(j)
                        * self.value_at_node(n, j + i, k, node);
                }
                acc += outer * inner;
            }
        }
        Ok(acc)
    }

    /// Serializes all entries as CSV with header `n,i,k,t_index,value`, one
    /// row per entry per node, in entry-index then node order.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "n,i,k,t_index,value")?;
        for (idx, entry) in self.entries.iter().enumerate() {
            let (n, i, k) = Self::entry_triple(idx);
            for (node, v) in entry.values().iter().enumerate() {
                writeln!(out, "{n},{i},{k},{node},{v}")?;
            }
        }
        Ok(())
    }
}

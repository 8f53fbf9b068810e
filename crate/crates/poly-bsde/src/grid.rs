//! Uniform time grid, grid-sampled functions, and time-dependent parameter
//! curves.
//!
//! Every coefficient function, every backward solve, and every Monte-Carlo
//! discretization in this crate lives on a [`TimeGrid`]: a uniform partition
//! of `[0, T]` with `n_steps + 1` nodes. Sharing one grid between the ODE
//! solutions and the path discretization lets residual evaluation read
//! coefficients by node index, with no interpolation.

use crate::error::{Error, Result};

/// Uniform partition of the interval `[0, T]` into `n_steps` steps.
///
/// Node `i` sits at `T · i / n_steps`, so node `0` is exactly `0.0` and node
/// `n_steps` is exactly `T`. Spacing is uniform to within one floating
/// rounding unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// Builds a grid over `[0, t_end]` with `n_steps` uniform steps.
    ///
    /// `t_end` must be positive and finite; `n_steps` must be at least 1.
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !t_end.is_finite() || t_end <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "grid end time must be positive and finite, got {t_end}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidInput(
                "grid must have at least one step".to_string(),
            ));
        }
        Ok(Self { t_end, n_steps })
    }

    /// Start of the grid (always `0.0`).
    pub fn t_start(&self) -> f64 {
        0.0
    }

    /// End of the grid (the horizon `T`).
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Number of steps.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes (`n_steps + 1`).
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Step width `T / n_steps`.
    pub fn step(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// Time of node `i`, computed as `T · (i / n_steps)` so the first and
    /// last nodes are exactly `0` and `T`.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        self.t_end * (i as f64 / self.n_steps as f64)
    }

    /// Index of the left node of the step containing `t`; for `t = T` this
    /// is the terminal node itself.
    ///
    /// Times within a relative `1e−9` of a node snap to that node, so values
    /// reconstructed as `T · i / n` round-trip. Returns
    /// [`Error::OutOfGridTime`] outside `[0, T]`.
    pub fn left_node_index(&self, t: f64) -> Result<usize> {
        let slack = 1e-12 * self.t_end.max(1.0);
        if !t.is_finite() || t < -slack || t > self.t_end + slack {
            return Err(Error::OutOfGridTime {
                t,
                t_start: 0.0,
                t_end: self.t_end,
            });
        }
        let scaled = t / self.t_end * self.n_steps as f64;
        let idx = (scaled + 1e-9).floor() as i64;
        Ok(idx.clamp(0, self.n_steps as i64) as usize)
    }
}

/// A real function sampled at every node of a [`TimeGrid`].
///
/// All stored values are finite by construction: a solve that produced a
/// non-finite value reports divergence instead of storing it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SampledFunction {
    /// Wraps per-node `values` over `grid`, requiring one finite value per
    /// node.
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::InvalidInput(format!(
                "sampled function needs {} values, got {}",
                grid.n_nodes(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sampled function has a non-finite value at node {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    /// The constant function `value` on `grid`.
    pub fn constant(grid: TimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_nodes()])
    }

    /// Grid the samples live on.
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// All node values, in node order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at node `i`.
    ///
    /// # Panics
    /// Panics if `i` is out of node range.
    pub fn value_at_node(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Value at the left node of the step containing `t`.
    pub fn value_left_of(&self, t: f64) -> Result<f64> {
        Ok(self.values[self.grid.left_node_index(t)?])
    }
}

/// Time dependence hook for model parameters.
///
/// All reproductions in this repository use constants, but the solvers only
/// query parameters through this type, so per-node term structures slot in
/// without touching the recursions. `PerNode` values are interpolated
/// linearly between their own grid's nodes (the integrator evaluates
/// right-hand sides at step midpoints) and clamped at the ends.
#[derive(Debug, Clone, PartialEq)]
pub enum Curve {
    /// A constant value.
    Const(f64),
    /// One value per node of the given grid, interpolated linearly in time.
    PerNode {
        /// Grid the values are attached to.
        grid: TimeGrid,
        /// One value per node of `grid`.
        values: Vec<f64>,
    },
}

impl Curve {
    /// Value at time `t`.
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Curve::Const(c) => *c,
            Curve::PerNode { grid, values } => {
                let s = (t / grid.t_end() * grid.n_steps() as f64)
                    .clamp(0.0, grid.n_steps() as f64);
                let i = (s.floor() as usize).min(grid.n_steps() - 1);
                let w = s - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    /// Smallest and largest stored value (`(c, c)` for a constant).
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Curve::Const(c) => (*c, *c),
            Curve::PerNode { values, .. } => values.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &v| (lo.min(v), hi.max(v)),
            ),
        }
    }

    /// Checks that the stored values are finite and that a `PerNode` curve
    /// has one value per node; `name` labels the parameter in errors.
    pub fn validate(&self, name: &str) -> Result<()> {
        match self {
            Curve::Const(c) => {
                if !c.is_finite() {
                    return Err(Error::InvalidInput(format!("{name} must be finite, got {c}")));
                }
            }
            Curve::PerNode { grid, values } => {
                if values.len() != grid.n_nodes() {
                    return Err(Error::InvalidInput(format!(
                        "{name} needs {} per-node values, got {}",
                        grid.n_nodes(),
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("{name} has a non-finite value")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_hit_endpoints_exactly() {
        let grid = TimeGrid::new(3.0, 900).unwrap();
        assert_eq!(grid.node(0), 0.0);
        assert_eq!(grid.node(900), 3.0);
        assert_eq!(grid.n_nodes(), 901);
        // Uniform within one rounding unit.
        let h = grid.step();
        for i in 0..900 {
            let d = grid.node(i + 1) - grid.node(i);
            assert!((d - h).abs() <= 1e-15 * 3.0, "non-uniform spacing at {i}");
        }
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(-1.0, 10).is_err());
        assert!(TimeGrid::new(f64::NAN, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn left_node_lookup_matches_step_membership() {
        let grid = TimeGrid::new(2.0, 4).unwrap(); // nodes at 0, 0.5, 1, 1.5, 2
        assert_eq!(grid.left_node_index(0.0).unwrap(), 0);
        assert_eq!(grid.left_node_index(0.49).unwrap(), 0);
        assert_eq!(grid.left_node_index(0.5).unwrap(), 1);
        assert_eq!(grid.left_node_index(1.99).unwrap(), 3);
        assert_eq!(grid.left_node_index(2.0).unwrap(), 4);
        assert!(grid.left_node_index(-0.1).is_err());
        assert!(grid.left_node_index(2.1).is_err());
        // Node times round-trip to their own index.
        for i in 0..=4 {
            assert_eq!(grid.left_node_index(grid.node(i)).unwrap(), i);
        }
    }

    #[test]
    fn sampled_function_checks_length_and_finiteness() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        assert!(SampledFunction::new(grid, vec![1.0, 2.0]).is_err());
        assert!(SampledFunction::new(grid, vec![1.0, f64::NAN, 2.0]).is_err());
        let f = SampledFunction::new(grid, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.value_at_node(1), 2.0);
        assert_eq!(f.value_left_of(0.75).unwrap(), 2.0);
    }

    #[test]
    fn curve_interpolates_linearly_and_reports_bounds() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let c = Curve::PerNode {
            grid,
            values: vec![0.0, 1.0, 0.5],
        };
        assert!((c.value(0.25) - 0.5).abs() < 1e-15);
        assert!((c.value(0.75) - 0.75).abs() < 1e-15);
        assert_eq!(c.value(0.0), 0.0);
        assert_eq!(c.value(1.0), 0.5);
        assert_eq!(c.bounds(), (0.0, 1.0));
        assert_eq!(Curve::Const(2.5).value(0.3), 2.5);
        assert!(Curve::Const(f64::INFINITY).validate("sigma").is_err());
    }
}

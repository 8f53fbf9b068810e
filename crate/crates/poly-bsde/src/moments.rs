//! Moment containers produced by the model solvers and consumed by the
//! density-expansion pricer.

use crate::error::{Error, Result};

/// Raw moments `γ_1..γ_M` of the terminal state, `γ_m = E[X_T^m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    gammas: Vec<f64>,
}

impl MomentVector {
    /// Wraps `γ_1..γ_M` (index 0 holds `γ_1`).
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::InvalidInput(
                "moment vector needs at least the first moment".to_string(),
            ));
        }
        if gammas.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("moments must be finite".to_string()));
        }
        Ok(Self { gammas })
    }

    /// Highest stored moment order `M`.
    pub fn order(&self) -> usize {
        self.gammas.len()
    }

    /// `γ_m` for `1 ≤ m ≤ M`.
    ///
    /// # Panics
    /// Panics if `m` is 0 or beyond the stored order.
    pub fn gamma(&self, m: usize) -> f64 {
        assert!(m >= 1 && m <= self.order(), "moment order {m} out of range");
        self.gammas[m - 1]
    }

    /// All stored moments, `γ_1` first.
    pub fn as_slice(&self) -> &[f64] {
        &self.gammas
    }

    /// Central second moment `γ_2 − γ_1²`; requires `M ≥ 2`.
    pub fn variance(&self) -> Result<f64> {
        if self.order() < 2 {
            return Err(Error::InvalidInput(
                "variance needs moments up to order 2".to_string(),
            ));
        }
        Ok(self.gamma(2) - self.gamma(1) * self.gamma(1))
    }
}

/// Per-order truncation history of the moment estimates: for each target
/// moment `m` the running sums `γ_m^{(n)} = Σ_{j≤n} v[j]_{0,0}(0)` over the
/// truncation order `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentConvergence {
    /// `estimates[m−1][n]` is the order-`n` truncated estimate of `γ_m`.
    estimates: Vec<Vec<f64>>,
}

impl MomentConvergence {
    /// Wraps the per-moment truncation histories; all rows must share one
    /// length (the common `n_max + 1`).
    pub fn new(estimates: Vec<Vec<f64>>) -> Result<Self> {
        if estimates.is_empty() || estimates[0].is_empty() {
            return Err(Error::InvalidInput(
                "moment convergence needs at least one moment and one order".to_string(),
            ));
        }
        let width = estimates[0].len();
        if estimates.iter().any(|row| row.len() != width) {
            return Err(Error::InvalidInput(
                "all truncation histories must cover the same orders".to_string(),
            ));
        }
        if estimates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "moment estimates must be finite".to_string(),
            ));
        }
        Ok(Self { estimates })
    }

    /// Highest target moment `M`.
    pub fn m_max(&self) -> usize {
        self.estimates.len()
    }

    /// Highest truncation order `n_max`.
    pub fn n_max(&self) -> usize {
        self.estimates[0].len() - 1
    }

    /// Truncated estimate of `γ_m` at order `n`.
    ///
    /// # Panics
    /// Panics if `m` or `n` is out of range.
    pub fn estimate(&self, m: usize, n: usize) -> f64 {
        assert!(m >= 1 && m <= self.m_max(), "moment order {m} out of range");
        assert!(n <= self.n_max(), "truncation order {n} out of range");
        self.estimates[m - 1][n]
    }

    /// The fully truncated estimates, one `γ_m` per target moment.
    pub fn final_moments(&self) -> Result<MomentVector> {
        let n = self.n_max();
        MomentVector::new((1..=self.m_max()).map(|m| self.estimate(m, n)).collect())
    }

    /// Serializes as CSV with header `m,n_truncation,gamma_estimate`, rows
    /// ordered by `m` then `n`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "m,n_truncation,gamma_estimate")?;
        for m in 1..=self.m_max() {
            for n in 0..=self.n_max() {
                writeln!(out, "{m},{n},{}", self.estimate(m, n))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_vector_accessors_and_variance() {
        let mv = MomentVector::new(vec![0.5, 1.0, 0.2]).unwrap();
        assert_eq!(mv.order(), 3);
        assert_eq!(mv.gamma(1), 0.5);
        assert_eq!(mv.gamma(3), 0.2);
        assert!((mv.variance().unwrap() - 0.75).abs() < 1e-15);
        assert!(MomentVector::new(vec![]).is_err());
        assert!(MomentVector::new(vec![f64::NAN]).is_err());
        assert!(MomentVector::new(vec![1.0]).unwrap().variance().is_err());
    }

    #[test]
    fn convergence_rows_must_align_and_serialize_in_order() {
        let conv =
            MomentConvergence::new(vec![vec![0.0, 0.1, 0.12], vec![0.0, 0.5, 0.55]]).unwrap();
        assert_eq!(conv.m_max(), 2);
        assert_eq!(conv.n_max(), 2);
        assert_eq!(conv.estimate(2, 1), 0.5);
        let finals = conv.final_moments().unwrap();
        assert_eq!(finals.as_slice(), &[0.12, 0.55]);
        let mut buf = Vec::new();
        conv.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "m,n_truncation,gamma_estimate\n\
             1,0,0\n1,1,0.1\n1,2,0.12\n\
             2,0,0\n2,1,0.5\n2,2,0.55\n"
        );
        assert!(MomentConvergence::new(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
    }
}

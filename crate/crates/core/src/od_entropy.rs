//! Most probable correspondence (origin-destination) matrix.
//!
//! Given residence totals `L`, workplace totals `W` and an inter-zone cost
//! matrix `c`, the most probable trip matrix minimizes
//!
//! ```text
//! sum_ij x_ij ln x_ij + 2 sum_ij c_ij x_ij
//! ```
//!
//! over the transportation polytope `{x >= 0, rows sum to L, columns sum to W}`.
//! Its solution has the product form `x_ij = exp(-1 - lambdaL_i - lambdaW_j - 2 c_ij)`
//! and the multipliers are found by alternating row/column balancing carried
//! out on the multipliers themselves (log domain), so that large costs do not
//! underflow the kernel.

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance on `sum(L) == sum(W)`.
pub const MARGINAL_SUM_RTOL: f64 = 1e-12;

/// Zone marginals and the inter-zone cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneData {
    residents: Vec<f64>,
    workers: Vec<f64>,
    cost: Vec<Vec<f64>>,
}

impl ZoneData {
    pub fn new(residents: Vec<f64>, workers: Vec<f64>, cost: Vec<Vec<f64>>) -> Result<Self> {
        let n = residents.len();
        if n == 0 {
            return Err(Error::invalid("zone data needs at least one zone"));
        }
        if workers.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: workers.len() });
        }
        if cost.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: cost.len() });
        }
        for row in &cost {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
        }
        if let Some((i, v)) = residents.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("L[{i}] = {v} must be positive")));
        }
        if let Some((j, v)) = workers.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("W[{j}] = {v} must be positive")));
        }
        for (i, row) in cost.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !(*v >= 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("c[{i}][{j}] = {v} must be nonnegative")));
                }
            }
        }
        let sum_l: f64 = residents.iter().sum();
        let sum_w: f64 = workers.iter().sum();
        if (sum_l - sum_w).abs() > MARGINAL_SUM_RTOL * sum_l.max(sum_w) {
            return Err(Error::InfeasibleMarginals { sum_l, sum_w });
        }
        Ok(Self { residents, workers, cost })
    }

    pub fn n(&self) -> usize {
        self.residents.len()
    }

    pub fn residents(&self) -> &[f64] {
        &self.residents
    }

    pub fn workers(&self) -> &[f64] {
        &self.workers
    }

    pub fn cost(&self) -> &[Vec<f64>] {
        &self.cost
    }

    /// Total population `N`.
    pub fn total(&self) -> f64 {
        self.residents.iter().sum()
    }
}

/// Output of [`balance`]: the primal matrix with its dual multipliers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrespondenceMatrix {
    pub x: Vec<Vec<f64>>,
    pub lambda_l: Vec<f64>,
    pub lambda_w: Vec<f64>,
    /// Largest relative marginal violation at exit.
    pub residual: f64,
    pub iterations: usize,
}

impl CorrespondenceMatrix {
    /// `exp(-1 - lambdaL_i - lambdaW_j - 2 c_ij)`.
    pub fn dual_cell(&self, cost: &[Vec<f64>], i: usize, j: usize) -> f64 {
        (-1.0 - self.lambda_l[i] - self.lambda_w[j] - 2.0 * cost[i][j]).exp()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn primal_from_duals(z: &ZoneData, lambda_l: &[f64], lambda_w: &[f64]) -> Vec<Vec<f64>> {
    let n = z.n();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (-1.0 - lambda_l[i] - lambda_w[j] - 2.0 * z.cost[i][j]).exp())
                .collect()
        })
        .collect()
}

/// Largest relative violation of the row and column marginals.
pub fn marginal_violation(x: &[Vec<f64>], residents: &[f64], workers: &[f64]) -> f64 {
    let n = residents.len();
    let rows = (0..n).map(|i| (x[i].iter().sum::<f64>() - residents[i]).abs() / residents[i]);
    let cols = (0..n).map(|j| ((0..n).map(|i| x[i][j]).sum::<f64>() - workers[j]).abs() / workers[j]);
    rows.chain(cols).fold(0.0, f64::max)
}

/// Bregman (Sinkhorn) balancing of the entropy program in the log domain.
///
/// Each sweep sets the row multipliers so that row sums hit `L`, then the
/// column multipliers so that column sums hit `W`. Stops as soon as the
/// largest relative marginal violation is at most `tol`.
pub fn balance(z: &ZoneData, tol: f64, max_iter: usize) -> Result<CorrespondenceMatrix> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let n = z.n();
    let mut lambda_l = vec![0.0; n];
    let mut lambda_w = vec![0.0; n];
    let mut residual = f64::INFINITY;

    for iteration in 1..=max_iter {
        for i in 0..n {
            let lse = log_sum_exp((0..n).map(|j| -1.0 - lambda_w[j] - 2.0 * z.cost[i][j]));
            lambda_l[i] = lse - z.residents[i].ln();
        }
        for j in 0..n {
            let lse = log_sum_exp((0..n).map(|i| -1.0 - lambda_l[i] - 2.0 * z.cost[i][j]));
            lambda_w[j] = lse - z.workers[j].ln();
        }
        let x = primal_from_duals(z, &lambda_l, &lambda_w);
        residual = marginal_violation(&x, &z.residents, &z.workers);
        if residual <= tol {
            return Ok(CorrespondenceMatrix { x, lambda_l, lambda_w, residual, iterations: iteration });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual })
}

/// `sum x ln x + 2 sum c x`, with `0 ln 0 = 0`.
pub fn entropy_objective(x: &[Vec<f64>], cost: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(cost)
        .flat_map(|(xr, cr)| xr.iter().zip(cr))
        .map(|(&v, &c)| xlogx(v) + 2.0 * c * v)
        .sum()
}

pub(crate) fn xlogx(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v * v.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Marginal {
    Row(usize),
    Column(usize),
}

/// Result of [`check_primal_dual`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimalDualReport {
    /// Largest `|x_ij - exp(-1 - lambdaL_i - lambdaW_j - 2c_ij)|`, relative to `max(1, target)`.
    pub max_dual_deviation: f64,
    pub worst_cell: (usize, usize),
    pub max_marginal_violation: f64,
    pub worst_marginal: Marginal,
    pub pass: bool,
}

/// Verifies that `r` is consistent with its multipliers and with the marginals of `z`.
pub fn check_primal_dual(r: &CorrespondenceMatrix, z: &ZoneData, tol: f64) -> PrimalDualReport {
    let n = z.n();
    let mut max_dual_deviation = 0.0;
    let mut worst_cell = (0, 0);
    for i in 0..n {
        for j in 0..n {
            let target = r.dual_cell(&z.cost, i, j);
            let dev = (r.x[i][j] - target).abs() / target.max(1.0);
            if dev > max_dual_deviation {
                max_dual_deviation = dev;
                worst_cell = (i, j);
            }
        }
    }

    let mut max_marginal_violation = 0.0;
    let mut worst_marginal = Marginal::Row(0);
    for i in 0..n {
        let v = (r.x[i].iter().sum::<f64>() - z.residents[i]).abs() / z.residents[i];
        if v > max_marginal_violation {
            max_marginal_violation = v;
            worst_marginal = Marginal::Row(i);
        }
    }
    for j in 0..n {
        let v = ((0..n).map(|i| r.x[i][j]).sum::<f64>() - z.workers[j]).abs() / z.workers[j];
        if v > max_marginal_violation {
            max_marginal_violation = v;
            worst_marginal = Marginal::Column(j);
        }
    }

    PrimalDualReport {
        max_dual_deviation,
        worst_cell,
        max_marginal_violation,
        worst_marginal,
        pass: max_dual_deviation <= tol && max_marginal_violation <= tol,
    }
}

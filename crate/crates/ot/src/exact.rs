//! Exact transportation simplex for small instances.
//!
//! Northwest-corner start, MODI potentials for reduced costs, and Bland's rule
//! for both the entering and the leaving cell. The basis always holds exactly
//! `rows + cols - 1` cells forming a spanning tree of the bipartite
//! row/column graph, so the returned plan is an extreme point with at most
//! that many nonzeros.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::error::OtError;
use crate::types::{max_violation, CostMatrix, OtResult, TransportPlan};

/// Largest `rows * cols` accepted; the oracle is for tests and diagnostics.
pub const ORACLE_MAX_CELLS: usize = 256;

/// Stand-in mass for zero marginal weights during the solve.
const ZERO_WEIGHT_PERTURBATION: f64 = 1e-12;
const REDUCED_COST_TOL: f64 = 1e-12;
const MAX_PIVOTS: usize = 100_000;

pub fn lp_exact(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<OtResult, OtError> {
    let (rows, cols) = (cost.rows(), cost.cols());
    if rows * cols > ORACLE_MAX_CELLS {
        return Err(OtError::OracleSizeExceeded { rows, cols, max: ORACLE_MAX_CELLS });
    }
    cost.check_marginals(a, b)?;

    let supply = perturb_zeros(a);
    let demand = perturb_zeros(b);
    let mut solver = Simplex::northwest(cost, &supply, &demand);
    let pivots = solver.optimize()?;

    let mut plan = solver.flow;
    // Mass parked on zero-weight rows/columns goes back to zero.
    for (i, &w) in a.iter().enumerate() {
        if w == 0.0 {
            plan.row_mut(i).fill(0.0);
        }
    }
    for (j, &w) in b.iter().enumerate() {
        if w == 0.0 {
            plan.column_mut(j).fill(0.0);
        }
    }
    let violation = max_violation(&plan, a, b);
    let plan = TransportPlan::new(plan);
    Ok(OtResult {
        distance: plan.inner(cost),
        plan,
        outer_iterations_used: pivots,
        converged: true,
        max_marginal_violation: violation,
    })
}

fn perturb_zeros(w: &[f64]) -> Vec<f64> {
    if w.iter().all(|&x| x > 0.0) {
        return w.to_vec();
    }
    let bumped: Vec<f64> = w
        .iter()
        .map(|&x| if x == 0.0 { ZERO_WEIGHT_PERTURBATION } else { x })
        .collect();
    let total: f64 = bumped.iter().sum();
    bumped.into_iter().map(|x| x / total).collect()
}

/// Graph node in the basis tree: rows are `0..m`, columns `m..m+n`.
type Node = usize;

struct Simplex<'a> {
    cost: &'a CostMatrix,
    flow: Array2<f64>,
    basic: Array2<bool>,
    /// Basic cells; always `rows + cols - 1` entries.
    basis: Vec<(usize, usize)>,
}

impl<'a> Simplex<'a> {
    fn northwest(cost: &'a CostMatrix, supply: &[f64], demand: &[f64]) -> Self {
        let (m, n) = (cost.rows(), cost.cols());
        let mut flow = Array2::zeros((m, n));
        let mut basic = Array2::from_elem((m, n), false);
        let mut basis = Vec::with_capacity(m + n - 1);
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]);
            flow[[i, j]] = x;
            basic[[i, j]] = true;
            basis.push((i, j));
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            // Exactly one index advances per cell, giving m + n - 1 cells;
            // ties leave a degenerate zero-flow basic cell behind.
            if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(basis.len(), m + n - 1);
        Self { cost, flow, basic, basis }
    }

    fn adjacency(&self) -> Vec<Vec<Node>> {
        let m = self.cost.rows();
        let mut adj = vec![Vec::new(); m + self.cost.cols()];
        for &(i, j) in &self.basis {
            adj[i].push(m + j);
            adj[m + j].push(i);
        }
        adj
    }

    /// Dual potentials with `u[0] = 0` and `u_i + v_j = c_ij` on basic cells.
    fn potentials(&self, adj: &[Vec<Node>]) -> (Vec<f64>, Vec<f64>) {
        let m = self.cost.rows();
        let mut pot = vec![f64::NAN; adj.len()];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0]);
        while let Some(node) = queue.pop_front() {
            for &next in &adj[node] {
                if pot[next].is_nan() {
                    pot[next] = if node < m {
                        self.cost.get(node, next - m) - pot[node]
                    } else {
                        self.cost.get(next, node - m) - pot[node]
                    };
                    queue.push_back(next);
                }
            }
        }
        let v = pot.split_off(m);
        (pot, v)
    }

    /// First nonbasic cell (row-major) with negative reduced cost.
    fn entering(&self, u: &[f64], v: &[f64]) -> Option<(usize, usize)> {
        let (m, n) = (self.cost.rows(), self.cost.cols());
        (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .find(|&(i, j)| {
                !self.basic[[i, j]] && self.cost.get(i, j) - u[i] - v[j] < -REDUCED_COST_TOL
            })
    }

    /// Tree path from column `j` to row `i` as a list of cells.
    fn path(&self, adj: &[Vec<Node>], i: usize, j: usize) -> Vec<(usize, usize)> {
        let m = self.cost.rows();
        let start = m + j;
        let mut parent = vec![usize::MAX; adj.len()];
        parent[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == i {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = i;
        while node != start {
            let p = parent[node];
            let cell = if node < m { (node, p - m) } else { (p, node - m) };
            cells.push(cell);
            node = p;
        }
        cells.reverse();
        cells
    }

    fn optimize(&mut self) -> Result<usize, OtError> {
        for pivot in 0..MAX_PIVOTS {
            let adj = self.adjacency();
            let (u, v) = self.potentials(&adj);
            let Some((ei, ej)) = self.entering(&u, &v) else {
                return Ok(pivot);
            };
            // The cycle is entering(+), then path cells alternating -, +, -, ...
            // starting from column ej; the path has odd length.
            let path = self.path(&adj, ei, ej);
            let leaving = path
                .iter()
                .step_by(2)
                .copied()
                .min_by(|&p, &q| {
                    self.flow[p]
                        .partial_cmp(&self.flow[q])
                        .expect("finite flows")
                        .then(p.cmp(&q))
                })
                .expect("cycle has a decreasing cell");
            let theta = self.flow[leaving];
            for (k, &cell) in path.iter().enumerate() {
                if k % 2 == 0 {
                    self.flow[cell] -= theta;
                } else {
                    self.flow[cell] += theta;
                }
            }
            self.flow[(ei, ej)] = theta;
            self.flow[leaving] = 0.0;
            self.basic[leaving] = false;
            self.basic[(ei, ej)] = true;
            let slot = self.basis.iter().position(|&c| c == leaving).expect("leaving is basic");
            self.basis[slot] = (ei, ej);
        }
        Err(OtError::PivotLimit(MAX_PIVOTS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_by_two_swap() {
        let cost = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let res = lp_exact(&cost, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(res.distance, 0.0);
        assert_eq!(res.plan.to_rows(), vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
    }

    #[test]
    fn anti_diagonal_needs_pivots() {
        let cost = CostMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let res = lp_exact(&cost, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(res.distance, 0.0);
        assert_eq!(res.plan.to_rows(), vec![vec![0.0, 0.5], vec![0.5, 0.0]]);
        assert!(res.outer_iterations_used >= 1);
    }

    #[test]
    fn identity_uniform_gives_diagonal() {
        let n = 5;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 + (i + j) as f64 }).collect())
            .collect();
        let cost = CostMatrix::from_rows(&rows).unwrap();
        let w = vec![1.0 / n as f64; n];
        let res = lp_exact(&cost, &w, &w).unwrap();
        assert_eq!(res.distance, 0.0);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { w[i] } else { 0.0 };
                assert_abs_diff_eq!(res.plan.get(i, j), want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn rectangular_known_optimum() {
        // With T00 = 0.2 and x = T01 free in [0, 0.3] the objective is 1.6 - x,
        // so the optimum is x = 0.3 with value 1.3.
        let cost = CostMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 1.0, 1.0]]).unwrap();
        let res = lp_exact(&cost, &[0.5, 0.5], &[0.2, 0.3, 0.5]).unwrap();
        assert_abs_diff_eq!(res.distance, 1.3, epsilon = 1e-12);
        let want = [[0.2, 0.3, 0.0], [0.0, 0.0, 0.5]];
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                assert_abs_diff_eq!(res.plan.get(i, j), w, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_are_perturbed_then_cleared() {
        let cost = CostMatrix::from_rows(&[
            vec![0.3, 0.9, 0.1],
            vec![0.5, 0.2, 0.8],
            vec![0.4, 0.6, 0.7],
        ])
        .unwrap();
        let a = [0.5, 0.0, 0.5];
        let b = [0.0, 0.6, 0.4];
        let res = lp_exact(&cost, &a, &b).unwrap();
        assert_eq!(res.plan.row_sums()[1], 0.0);
        assert_eq!(res.plan.col_sums()[0], 0.0);
        assert!(res.max_marginal_violation < 1e-9);
        // Reduced 2x2 problem with y = T02 in [0, 0.4] has objective 0.79 - 0.9 y.
        assert_abs_diff_eq!(res.distance, 0.43, epsilon = 1e-9);
    }

    #[test]
    fn size_limit() {
        let rows = vec![vec![0.0; 17]; 16];
        let cost = CostMatrix::from_rows(&rows).unwrap();
        let a = vec![1.0 / 16.0; 16];
        let b = vec![1.0 / 17.0; 17];
        assert!(matches!(
            lp_exact(&cost, &a, &b),
            Err(OtError::OracleSizeExceeded { rows: 16, cols: 17, .. })
        ));
    }
}

//! Inexact proximal point method for optimal transport.
//!
//! Each outer step solves `argmin_T <T, C> + beta * KL(T || T_prev)` over the
//! coupling polytope. The subproblem is a Sinkhorn projection of the kernel
//! `Q = exp(-C / beta) * T_prev`, which is only approximately solved: a few
//! (usually one) alternating scaling updates per outer step. Because every
//! iterate is pulled back toward the previous one instead of toward the
//! uniform coupling, the sequence approaches the unregularized optimum.
//!
//! The scaling updates use the general marginals `a` and `b`:
//!
//! ```text
//! delta = a / (Q sigma)
//! sigma = b / (Q^T delta)
//! T     = diag(delta) Q diag(sigma)
//! ```
//!
//! With uniform marginals this is exactly `delta = 1 / (n Q sigma)`,
//! `sigma = 1 / (m Q^T delta)`.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::OtError;
use crate::types::{max_violation, CostMatrix, OtResult, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpotConfig {
    /// Proximal weight; `1 / beta` is the generalized step size.
    pub beta: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Stop once both marginals are met to within this max-abs error and the
    /// plan moved by no more than this much (max-abs) in the last outer step.
    pub marginal_tol: f64,
}

impl Default for IpotConfig {
    /// Training-time settings.
    fn default() -> Self {
        Self {
            beta: 0.5,
            outer_iters: 500,
            inner_iters: 1,
            marginal_tol: 1e-4,
        }
    }
}

impl IpotConfig {
    /// Tighter settings for comparisons against the exact solver.
    pub fn oracle() -> Self {
        Self {
            outer_iters: 2000,
            marginal_tol: 1e-6,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), OtError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(OtError::InvalidParameter(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(OtError::InvalidParameter(
                "outer_iters and inner_iters must be >= 1".into(),
            ));
        }
        if !(self.marginal_tol >= 0.0) {
            return Err(OtError::InvalidParameter("marginal_tol must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn ipot_solve(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    config: &IpotConfig,
) -> Result<OtResult, OtError> {
    config.validate()?;
    cost.check_marginals(a, b)?;
    for (name, w) in [("a", a), ("b", b)] {
        if let Some(index) = w.iter().position(|&x| x == 0.0) {
            return Err(OtError::ZeroMarginal { name, index });
        }
    }

    let (n, m) = (cost.rows(), cost.cols());
    let a = Array1::from(a.to_vec());
    let b = Array1::from(b.to_vec());
    let kernel = cost.entries().mapv(|c| (-c / config.beta).exp());

    let mut sigma = Array1::from_elem(m, 1.0 / m as f64);
    let mut delta = Array1::zeros(n);
    let mut plan = Array2::from_elem((n, m), 1.0);
    let mut q = Array2::zeros((n, m));

    let mut used = 0;
    let mut violation = f64::INFINITY;
    let mut converged = false;
    for t in 1..=config.outer_iters {
        used = t;
        Zip::from(&mut q).and(&kernel).and(&plan).for_each(|q, &k, &p| *q = k * p);
        for _ in 0..config.inner_iters {
            delta = &a / &q.dot(&sigma);
            sigma = &b / &q.t().dot(&delta);
        }
        if delta.iter().chain(sigma.iter()).any(|x| !x.is_finite()) {
            return Err(OtError::NumericalOverflow { iteration: t });
        }
        let mut change: f64 = 0.0;
        Zip::indexed(&mut plan).and(&q).for_each(|(i, j), p, &qv| {
            let next = delta[i] * qv * sigma[j];
            change = change.max((next - *p).abs());
            *p = next;
        });

        violation = max_violation(&plan, a.as_slice().unwrap(), b.as_slice().unwrap());
        // Feasibility alone is reached almost immediately; the proximal
        // sequence keeps sharpening toward the LP optimum after that.
        if violation <= config.marginal_tol && change <= config.marginal_tol {
            converged = true;
            break;
        }
    }

    let plan = TransportPlan::new(plan);
    Ok(OtResult {
        distance: plan.inner(cost),
        plan,
        outer_iterations_used: used,
        converged,
        max_marginal_violation: violation,
    })
}

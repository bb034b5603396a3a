//! Entropic OT by matrix scaling.
//!
//! Solves `min_T <T, C> - (1 / epsilon) H(T)` over the coupling polytope, with
//! `H(T) = -sum T_ij (log T_ij - 1)`. Here `epsilon` multiplies the cost, not
//! the entropy: the Gibbs kernel is `exp(-epsilon * C)`, so a *larger*
//! `epsilon` means weaker smoothing and a plan closer to the exact optimum.
//! In the more common `reg * H` convention this is `reg = 1 / epsilon`.
//!
//! Scalings are kept in the plain (non-log) domain. Large `epsilon` therefore
//! underflows the kernel; that surfaces as [`OtError::NumericalOverflow`].

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::OtError;
use crate::types::{max_violation, CostMatrix, OtResult, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub iters: usize,
    pub marginal_tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 100.0,
            iters: 20_000,
            marginal_tol: 1e-6,
        }
    }
}

pub fn sinkhorn_solve(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    config: &SinkhornConfig,
) -> Result<OtResult, OtError> {
    if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
        return Err(OtError::InvalidParameter(format!(
            "epsilon must be > 0, got {}",
            config.epsilon
        )));
    }
    if config.iters == 0 {
        return Err(OtError::InvalidParameter("iters must be >= 1".into()));
    }
    cost.check_marginals(a, b)?;

    let (n, m) = (cost.rows(), cost.cols());
    let av = Array1::from(a.to_vec());
    let bv = Array1::from(b.to_vec());
    let kernel = cost.entries().mapv(|c| (-config.epsilon * c).exp());

    let mut u: Array1<f64>;
    let mut v = Array1::from_elem(m, 1.0);
    let mut plan = Array2::zeros((n, m));
    let mut used = 0;
    let mut violation = f64::INFINITY;
    let mut converged = false;
    for it in 1..=config.iters {
        used = it;
        u = &av / &kernel.dot(&v);
        v = &bv / &kernel.t().dot(&u);
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(OtError::NumericalOverflow { iteration: it });
        }
        Zip::indexed(&mut plan).and(&kernel).for_each(|(i, j), p, &k| *p = u[i] * k * v[j]);
        violation = max_violation(&plan, a, b);
        if violation <= config.marginal_tol {
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

use serde::Serialize;

use crate::types::TransportPlan;

/// Entries above this count as nonzero when measuring plan sparsity.
pub const NONZERO_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanDiagnostics {
    pub grand_sum: f64,
    pub max_marginal_violation: f64,
    pub nonzero_count: usize,
}

/// Mass, feasibility and sparsity of a plan against its target marginals.
///
/// Panics if `a`/`b` do not match the plan's shape.
pub fn plan_diagnostics(plan: &TransportPlan, a: &[f64], b: &[f64]) -> PlanDiagnostics {
    assert_eq!(plan.rows(), a.len(), "row marginal length");
    assert_eq!(plan.cols(), b.len(), "column marginal length");
    let entries = plan.entries();
    let violation = plan
        .row_sums()
        .iter()
        .zip(a)
        .chain(plan.col_sums().iter().zip(b))
        .map(|(s, w)| (s - w).abs())
        .fold(0.0, f64::max);
    PlanDiagnostics {
        grand_sum: entries.sum(),
        max_marginal_violation: violation,
        nonzero_count: entries.iter().filter(|&&t| t > NONZERO_THRESHOLD).count(),
    }
}

//! Discrete optimal transport for aligning word and region embeddings.
//!
//! Three solvers share one problem shape: a `T x K` [`CostMatrix`] and two
//! marginal weight vectors on the probability simplex.
//!
//! | Solver | Use |
//! |--------|-----|
//! | [`ipot_solve`] | proximal-point matrix scaling; the training-time solver |
//! | [`sinkhorn_solve`] | entropic matrix scaling, kept for comparison |
//! | [`lp_exact`] | transportation simplex; exact oracle for small instances |
//!
//! All arithmetic is `f64`. Callers training in `f32` promote before solving.
//!
//! ```
//! use vlpre_ot::{lp_exact, CostMatrix};
//!
//! let cost = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
//! let res = lp_exact(&cost, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
//! assert_eq!(res.distance, 0.0);
//! ```

mod cost;
mod diagnostics;
mod error;
mod exact;
mod ipot;
mod sinkhorn;
mod types;

pub use cost::{cosine_cost, squared_euclidean_cost, Modality};
pub use diagnostics::{plan_diagnostics, PlanDiagnostics, NONZERO_THRESHOLD};
pub use error::OtError;
pub use exact::{lp_exact, ORACLE_MAX_CELLS};
pub use ipot::{ipot_solve, IpotConfig};
pub use sinkhorn::{sinkhorn_solve, SinkhornConfig};
pub use types::{
    check_simplex, uniform_weights, CostMatrix, DiscreteDistribution, OtResult, TransportPlan,
    SIMPLEX_TOL,
};

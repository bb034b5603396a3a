use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::error::OtError;

/// Tolerance on `|sum(weights) - 1|` for simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Validates that `weights` lies on the probability simplex.
pub fn check_simplex(weights: &[f64], name: &'static str) -> Result<(), OtError> {
    if weights.is_empty() {
        return Err(OtError::InvalidMarginal {
            name,
            reason: "empty weight vector".into(),
        });
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(OtError::InvalidMarginal {
            name,
            reason: format!("weight {i} = {w} is negative or non-finite"),
        });
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(OtError::InvalidMarginal {
            name,
            reason: format!("weights sum to {total}, expected 1"),
        });
    }
    Ok(())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Empirical measure `sum_i w_i * delta(x_i)` over embedding supports.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    weights: Array1<f64>,
    supports: Array2<f64>,
}

impl DiscreteDistribution {
    pub fn new(weights: Vec<f64>, supports: Array2<f64>) -> Result<Self, OtError> {
        if weights.len() != supports.nrows() {
            return Err(OtError::DimensionMismatch(format!(
                "{} weights for {} supports",
                weights.len(),
                supports.nrows()
            )));
        }
        check_simplex(&weights, "weights")?;
        Ok(Self {
            weights: Array1::from(weights),
            supports,
        })
    }

    /// Uniform weights over the rows of `supports`.
    pub fn uniform(supports: Array2<f64>) -> Result<Self, OtError> {
        Self::new(uniform_weights(supports.nrows()), supports)
    }

    pub fn weights(&self) -> &[f64] {
        self.weights.as_slice().expect("contiguous weights")
    }

    pub fn supports(&self) -> ArrayView2<'_, f64> {
        self.supports.view()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Pairwise ground cost; rows index words, columns index regions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self, OtError> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(OtError::DimensionMismatch("cost matrix is empty".into()));
        }
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(OtError::InvalidParameter("cost matrix has non-finite entries".into()));
        }
        Ok(Self(entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, OtError> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(OtError::DimensionMismatch("ragged cost rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let entries = Array2::from_shape_vec((rows.len(), ncols), flat)
            .map_err(|e| OtError::DimensionMismatch(e.to_string()))?;
        Self::new(entries)
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.t().to_owned())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.outer_iter().map(|r| r.to_vec()).collect()
    }

    pub(crate) fn check_marginals(&self, a: &[f64], b: &[f64]) -> Result<(), OtError> {
        if a.len() != self.rows() || b.len() != self.cols() {
            return Err(OtError::DimensionMismatch(format!(
                "cost is {}x{} but marginals have lengths {} and {}",
                self.rows(),
                self.cols(),
                a.len(),
                b.len()
            )));
        }
        check_simplex(a, "a")?;
        check_simplex(b, "b")
    }
}

/// Nonnegative coupling between the word and region marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan(Array2<f64>);

impl TransportPlan {
    pub fn new(entries: Array2<f64>) -> Self {
        Self(entries)
    }

    pub fn entries(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.0.sum_axis(Axis(1)).to_vec()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.0.sum_axis(Axis(0)).to_vec()
    }

    /// Frobenius inner product with a cost of the same shape.
    pub fn inner(&self, cost: &CostMatrix) -> f64 {
        self.0
            .iter()
            .zip(cost.entries().iter())
            .map(|(t, c)| t * c)
            .sum()
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.t().to_owned())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.outer_iter().map(|r| r.to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OtResult {
    #[serde(serialize_with = "plan_rows")]
    pub plan: TransportPlan,
    /// `<plan, cost>`.
    pub distance: f64,
    pub outer_iterations_used: usize,
    pub converged: bool,
    pub max_marginal_violation: f64,
}

fn plan_rows<S: serde::Serializer>(plan: &TransportPlan, s: S) -> Result<S::Ok, S::Error> {
    use serde::Serialize;
    plan.to_rows().serialize(s)
}

pub(crate) fn max_violation(plan: &Array2<f64>, a: &[f64], b: &[f64]) -> f64 {
    let rows = plan.sum_axis(Axis(1));
    let cols = plan.sum_axis(Axis(0));
    rows.iter()
        .zip(a)
        .chain(cols.iter().zip(b))
        .map(|(s, w)| (s - w).abs())
        .fold(0.0, f64::max)
}

use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::error::OtError;
use crate::types::CostMatrix;

const MIN_NORM: f64 = 1e-12;

/// Which side of the coupling a support vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Word,
    Region,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Word => f.write_str("word"),
            Modality::Region => f.write_str("region"),
        }
    }
}

fn check_dims(words: ArrayView2<'_, f64>, regions: ArrayView2<'_, f64>) -> Result<(), OtError> {
    if words.nrows() == 0 || regions.nrows() == 0 {
        return Err(OtError::DimensionMismatch("empty support set".into()));
    }
    if words.ncols() != regions.ncols() {
        return Err(OtError::DimensionMismatch(format!(
            "word dim {} != region dim {}",
            words.ncols(),
            regions.ncols()
        )));
    }
    Ok(())
}

fn norms(x: ArrayView2<'_, f64>, modality: Modality) -> Result<Vec<f64>, OtError> {
    x.outer_iter()
        .enumerate()
        .map(|(index, row)| {
            let n = row.dot(&row).sqrt();
            if n < MIN_NORM {
                Err(OtError::ZeroNormVector { index, modality })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// `C[i][j] = 1 - cos(words[i], regions[j])`, so every entry lies in `[0, 2]`.
pub fn cosine_cost(
    words: ArrayView2<'_, f64>,
    regions: ArrayView2<'_, f64>,
) -> Result<CostMatrix, OtError> {
    check_dims(words, regions)?;
    let wn = norms(words, Modality::Word)?;
    let rn = norms(regions, Modality::Region)?;
    let dots = words.dot(&regions.t());
    let cost = Array2::from_shape_fn(dots.raw_dim(), |(i, j)| {
        // Rounding can push |cos| a hair past 1.
        let cos = (dots[[i, j]] / (wn[i] * rn[j])).clamp(-1.0, 1.0);
        1.0 - cos
    });
    CostMatrix::new(cost)
}

/// Squared Euclidean ground cost; only used for solver cross-checks.
pub fn squared_euclidean_cost(
    words: ArrayView2<'_, f64>,
    regions: ArrayView2<'_, f64>,
) -> Result<CostMatrix, OtError> {
    check_dims(words, regions)?;
    let cost = Array2::from_shape_fn((words.nrows(), regions.nrows()), |(i, j)| {
        words
            .row(i)
            .iter()
            .zip(regions.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    });
    CostMatrix::new(cost)
}

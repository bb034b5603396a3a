//! Mismatched image-text pairs for image-text matching.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::TrainingInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Positive,
    NegativeImageSwap,
    NegativeTextSwap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItmSample {
    pub instance: TrainingInstance,
    pub label: bool,
    pub provenance: Provenance,
}

impl ItmSample {
    pub fn positive(instance: TrainingInstance) -> Self {
        Self { instance, label: true, provenance: Provenance::Positive }
    }
}

/// Pairs `dataset[positive]` with the image or (coin flip) the text of a
/// different, uniformly drawn instance.
pub fn sample_negative<R: Rng + ?Sized>(
    dataset: &[TrainingInstance],
    rng: &mut R,
    positive: usize,
) -> Result<ItmSample> {
    if dataset.len() < 2 {
        return Err(Error::DatasetTooSmall { size: dataset.len() });
    }
    assert!(positive < dataset.len(), "positive index out of range");
    let swap_image = rng.random::<bool>();
    let mut other = rng.random_range(0..dataset.len() - 1);
    if other >= positive {
        other += 1;
    }
    let (pos, partner) = (&dataset[positive], &dataset[other]);
    let (instance, provenance) = if swap_image {
        (
            TrainingInstance {
                id: format!("{}+image:{}", pos.id, partner.id),
                tokens: pos.tokens.clone(),
                regions: partner.regions.clone(),
            },
            Provenance::NegativeImageSwap,
        )
    } else {
        (
            TrainingInstance {
                id: format!("{}+text:{}", pos.id, partner.id),
                tokens: partner.tokens.clone(),
                regions: pos.regions.clone(),
            },
            Provenance::NegativeTextSwap,
        )
    };
    Ok(ItmSample { instance, label: false, provenance })
}

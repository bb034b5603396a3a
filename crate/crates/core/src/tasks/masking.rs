//! Mask plans and the samplers behind conditional and joint random masking.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{TrainingInstance, FIRST_WORD_ID, MASK_ID};

pub const MASK_RATE: f64 = 0.15;
pub const MASK_TOKEN_SHARE: f64 = 0.8;
pub const RANDOM_TOKEN_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskModality {
    Text,
    Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    MaskToken,
    RandomToken(u32),
    Keep,
    ZeroFeature,
}

impl MaskAction {
    fn modality(self) -> MaskModality {
        match self {
            MaskAction::ZeroFeature => MaskModality::Region,
            _ => MaskModality::Text,
        }
    }
}

/// Masked indices of a single modality, each with its corruption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    modality: MaskModality,
    actions: Vec<(usize, MaskAction)>,
}

impl MaskPlan {
    /// `len` is the number of tokens or regions the plan will be applied to.
    pub fn new(modality: MaskModality, actions: Vec<(usize, MaskAction)>, len: usize) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::InvalidMaskPlan("no masked index".into()));
        }
        let mut seen = HashSet::new();
        for &(i, a) in &actions {
            if i >= len {
                return Err(Error::InvalidMaskPlan(format!("index {i} out of range for length {len}")));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidMaskPlan(format!("index {i} masked twice")));
            }
            if a.modality() != modality {
                return Err(Error::InvalidMaskPlan(format!("{a:?} in a {modality:?} plan")));
            }
        }
        Ok(Self { modality, actions })
    }

    pub fn modality(&self) -> MaskModality {
        self.modality
    }

    pub fn actions(&self) -> &[(usize, MaskAction)] {
        &self.actions
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.actions.iter().map(|&(i, _)| i)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// The masks applied in one forward pass. Outside ablation mode at most one
/// modality may be masked.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskSet {
    text: Option<MaskPlan>,
    region: Option<MaskPlan>,
    ablation: bool,
}

impl MaskSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(plan: MaskPlan) -> Self {
        match plan.modality {
            MaskModality::Text => Self { text: Some(plan), ..Self::default() },
            MaskModality::Region => Self { region: Some(plan), ..Self::default() },
        }
    }

    pub fn new(text: Option<MaskPlan>, region: Option<MaskPlan>, ablation: bool) -> Result<Self> {
        if text.as_ref().is_some_and(|p| p.modality != MaskModality::Text)
            || region.as_ref().is_some_and(|p| p.modality != MaskModality::Region)
        {
            return Err(Error::InvalidMaskPlan("plan passed for the wrong modality".into()));
        }
        if text.is_some() && region.is_some() && !ablation {
            return Err(Error::DualModalityMask);
        }
        Ok(Self { text, region, ablation })
    }

    pub fn text(&self) -> Option<&MaskPlan> {
        self.text.as_ref()
    }

    pub fn region(&self) -> Option<&MaskPlan> {
        self.region.as_ref()
    }

    pub fn is_ablation(&self) -> bool {
        self.ablation
    }

    pub fn is_dual(&self) -> bool {
        self.text.is_some() && self.region.is_some()
    }
}

fn random_word<R: Rng + ?Sized>(rng: &mut R, vocab_size: usize) -> u32 {
    rng.random_range(FIRST_WORD_ID..vocab_size as u32)
}

fn bernoulli_word_mask<R: Rng + ?Sized>(rng: &mut R, len: usize, vocab_size: usize) -> Vec<(usize, MaskAction)> {
    let mut actions = Vec::new();
    for i in 0..len {
        if rng.random::<f64>() < MASK_RATE {
            let u = rng.random::<f64>();
            let action = if u < MASK_TOKEN_SHARE {
                MaskAction::MaskToken
            } else if u < MASK_TOKEN_SHARE + RANDOM_TOKEN_SHARE {
                MaskAction::RandomToken(random_word(rng, vocab_size))
            } else {
                MaskAction::Keep
            };
            actions.push((i, action));
        }
    }
    actions
}

fn bernoulli_region_mask<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<(usize, MaskAction)> {
    (0..len)
        .filter(|_| rng.random::<f64>() < MASK_RATE)
        .map(|i| (i, MaskAction::ZeroFeature))
        .collect()
}

/// 15% of positions, split 80/10/10 between `[MASK]`, a random word and no
/// change. Redrawn until at least one position is selected.
///
/// # Panics
/// If `num_tokens == 0` or the vocabulary has no real words.
pub fn sample_word_mask<R: Rng + ?Sized>(rng: &mut R, num_tokens: usize, vocab_size: usize) -> MaskPlan {
    assert!(num_tokens > 0, "cannot mask an empty sequence");
    assert!(vocab_size > FIRST_WORD_ID as usize, "vocabulary has no real words");
    loop {
        let actions = bernoulli_word_mask(rng, num_tokens, vocab_size);
        if !actions.is_empty() {
            return MaskPlan { modality: MaskModality::Text, actions };
        }
    }
}

/// 15% of regions get their visual feature zeroed; redrawn until nonempty.
pub fn sample_region_mask<R: Rng + ?Sized>(rng: &mut R, num_regions: usize) -> MaskPlan {
    assert!(num_regions > 0, "cannot mask an empty region set");
    loop {
        let actions = bernoulli_region_mask(rng, num_regions);
        if !actions.is_empty() {
            return MaskPlan { modality: MaskModality::Region, actions };
        }
    }
}

/// Independent 15% masking of both modalities at once (ablation only).
/// Either side may come back empty.
pub fn joint_random_mask<R: Rng + ?Sized>(
    rng: &mut R,
    num_tokens: usize,
    num_regions: usize,
    vocab_size: usize,
) -> MaskSet {
    let text = bernoulli_word_mask(rng, num_tokens, vocab_size);
    let region = bernoulli_region_mask(rng, num_regions);
    MaskSet {
        text: (!text.is_empty()).then_some(MaskPlan { modality: MaskModality::Text, actions: text }),
        region: (!region.is_empty()).then_some(MaskPlan { modality: MaskModality::Region, actions: region }),
        ablation: true,
    }
}

/// Model input after masking: token ids, flattened region features, and
/// region location vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    pub tokens: Vec<u32>,
    pub feats: Vec<f32>,
    pub visual_dim: usize,
    pub locations: Vec<[f64; 7]>,
}

impl SequenceInput {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_regions(&self) -> usize {
        self.locations.len()
    }

    pub fn feat(&self, region: usize) -> &[f32] {
        &self.feats[region * self.visual_dim..(region + 1) * self.visual_dim]
    }

    pub fn from_instance(instance: &TrainingInstance) -> Result<Self> {
        Self::masked(instance, &MaskSet::none())
    }

    /// Applies `masks` to `instance`. Masked regions keep their location.
    pub fn masked(instance: &TrainingInstance, masks: &MaskSet) -> Result<Self> {
        let visual_dim = instance.regions.first().map_or(0, |r| r.feat.len());
        let mut feats = Vec::with_capacity(visual_dim * instance.regions.len());
        let mut locations = Vec::with_capacity(instance.regions.len());
        for r in &instance.regions {
            if r.feat.len() != visual_dim {
                return Err(Error::ShapeMismatch(format!(
                    "instance {}: regions with feature sizes {} and {}",
                    instance.id,
                    visual_dim,
                    r.feat.len()
                )));
            }
            feats.extend_from_slice(&r.feat);
            locations.push(r.location()?);
        }
        let mut tokens = instance.tokens.clone();
        if let Some(plan) = &masks.text {
            for &(i, a) in &plan.actions {
                let slot = tokens.get_mut(i).ok_or_else(|| {
                    Error::InvalidMaskPlan(format!("token index {i} beyond {}", instance.tokens.len()))
                })?;
                match a {
                    MaskAction::MaskToken => *slot = MASK_ID,
                    MaskAction::RandomToken(t) => *slot = t,
                    _ => {}
                }
            }
        }
        if let Some(plan) = &masks.region {
            for i in plan.indices() {
                if i >= locations.len() {
                    return Err(Error::InvalidMaskPlan(format!(
                        "region index {i} beyond {}",
                        locations.len()
                    )));
                }
                feats[i * visual_dim..(i + 1) * visual_dim].fill(0.0);
            }
        }
        Ok(Self { tokens, feats, visual_dim, locations })
    }
}

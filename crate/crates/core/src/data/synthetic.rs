//! Toy image-text pairs whose regions and words share latent classes.
//!
//! Every class has a random unit centroid in feature space. A region of
//! class `c` gets a normalized noisy copy of centroid `c`; its detector
//! distribution is a softmax over cosine similarities to all centroids. The
//! paired text carries the word `FIRST_WORD_ID + class` for each region with
//! probability `alignment_strength`, otherwise a random filler word, and is
//! padded with filler words. Fillers are drawn uniformly from the words
//! after the class words, so a class word in the text always names a region
//! of its own image. At strength 0 the text is pure filler and independent
//! of the image.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{RegionInput, TrainingInstance, FIRST_WORD_ID};

fn default_noise() -> f64 {
    0.5
}

fn default_temperature() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub num_instances: usize,
    /// Embedding table size, special tokens included.
    pub vocab_size: usize,
    pub num_classes: usize,
    pub visual_dim: usize,
    /// Inclusive `[min, max]`.
    pub tokens_per_instance: [usize; 2],
    /// Inclusive `[min, max]`.
    pub regions_per_instance: [usize; 2],
    pub alignment_strength: f64,
    pub seed: u64,
    /// Standard deviation of the feature noise relative to the unit centroid.
    #[serde(default = "default_noise")]
    pub feature_noise: f64,
    /// Inverse temperature of the detector softmax.
    #[serde(default = "default_temperature")]
    pub detector_sharpness: f64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            num_instances: 500,
            vocab_size: 64,
            num_classes: 8,
            visual_dim: 16,
            tokens_per_instance: [4, 8],
            regions_per_instance: [1, 3],
            alignment_strength: 0.9,
            seed: 7,
            feature_noise: default_noise(),
            detector_sharpness: default_temperature(),
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let [tmin, tmax] = self.tokens_per_instance;
        let [kmin, kmax] = self.regions_per_instance;
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classes == 0 || self.visual_dim == 0 {
            return fail("num_classes and visual_dim must be at least 1");
        }
        if self.vocab_size <= FIRST_WORD_ID as usize + self.num_classes {
            return fail("vocab_size must cover the special tokens, one word per class and a filler word");
        }
        if kmin == 0 || kmin > kmax || tmin > tmax {
            return fail("token/region ranges must be nonempty with at least one region");
        }
        if tmin < kmax {
            return fail("tokens_per_instance min must be at least regions_per_instance max");
        }
        if !(0.0..=1.0).contains(&self.alignment_strength) {
            return fail("alignment_strength must lie in [0, 1]");
        }
        if !(self.feature_noise >= 0.0) || !(self.detector_sharpness > 0.0) {
            return fail("feature_noise must be >= 0 and detector_sharpness > 0");
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn region(rng: &mut ChaCha8Rng, spec: &SyntheticCorpusSpec, centroids: &[Vec<f64>]) -> RegionInput {
    let class = rng.random_range(0..spec.num_classes);
    let scale = spec.feature_noise / (spec.visual_dim as f64).sqrt();
    let mut feat: Vec<f64> = centroids[class]
        .iter()
        .map(|&c| {
            let z: f64 = StandardNormal.sample(rng);
            c + scale * z
        })
        .collect();
    let n = feat.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    feat.iter_mut().for_each(|x| *x /= n);
    let logits: Vec<f64> = centroids
        .iter()
        .map(|c| spec.detector_sharpness * c.iter().zip(&feat).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let img_w = rng.random_range(320..=800u32);
    let img_h = rng.random_range(320..=800u32);
    let x1 = rng.random_range(0..img_w - 16);
    let y1 = rng.random_range(0..img_h - 16);
    let x2 = rng.random_range(x1 + 16..=img_w);
    let y2 = rng.random_range(y1 + 16..=img_h);
    RegionInput {
        feat: feat.iter().map(|&x| x as f32).collect(),
        bbox: [x1 as f32, y1 as f32, x2 as f32, y2 as f32],
        img_w,
        img_h,
        cls_probs: exps.iter().map(|e| (e / total) as f32).collect(),
    }
}

pub fn generate_synthetic(spec: &SyntheticCorpusSpec) -> Result<Vec<TrainingInstance>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids: Vec<Vec<f64>> = (0..spec.num_classes).map(|_| unit_vector(&mut rng, spec.visual_dim)).collect();
    let fillers = FIRST_WORD_ID + spec.num_classes as u32..spec.vocab_size as u32;
    let mut out = Vec::with_capacity(spec.num_instances);
    for n in 0..spec.num_instances {
        let k = rng.random_range(spec.regions_per_instance[0]..=spec.regions_per_instance[1]);
        let t = rng.random_range(spec.tokens_per_instance[0]..=spec.tokens_per_instance[1]);
        let regions: Vec<RegionInput> = (0..k).map(|_| region(&mut rng, spec, &centroids)).collect();
        let mut tokens = Vec::with_capacity(t);
        for r in &regions {
            if rng.random::<f64>() < spec.alignment_strength {
                tokens.push(FIRST_WORD_ID + r.class_id() as u32);
            } else {
                tokens.push(rng.random_range(fillers.clone()));
            }
        }
        while tokens.len() < t {
            tokens.push(rng.random_range(fillers.clone()));
        }
        tokens.shuffle(&mut rng);
        out.push(TrainingInstance { id: n.to_string(), tokens, regions });
    }
    Ok(out)
}

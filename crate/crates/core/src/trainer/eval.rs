//! Held-out evaluation with mask plans and negatives fixed once per run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vlpre_ot::IpotConfig;

use crate::error::{Error, Result};
use crate::instance::TrainingInstance;
use crate::model::Model;
use crate::nn::{ParameterStore, Real};
use crate::tasks::masking::{sample_region_mask, sample_word_mask, MaskSet};
use crate::tasks::negatives::{sample_negative, ItmSample};
use crate::tasks::objectives::{itm_logits, mlm_predictions, mrc_predictions, wra_distances, MaskedExample};

const EVAL_CHUNK: usize = 64;
/// Stream of the evaluation RNG, kept apart from the training stream.
pub const EVAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub mlm_accuracy: f64,
    pub mrc_kl_accuracy: f64,
    pub itm_accuracy: f64,
    pub mean_wra_distance: f64,
}

#[derive(Debug, Clone)]
pub struct EvalSet {
    pub instances: Vec<TrainingInstance>,
    text_masks: Vec<(usize, MaskSet)>,
    region_masks: Vec<(usize, MaskSet)>,
    itm: Vec<ItmSample>,
}

impl EvalSet {
    /// Draws `repeats` text plans, region plans and positive/negative ITM
    /// pairs per instance, all from `seed`.
    pub fn build(instances: Vec<TrainingInstance>, vocab_size: usize, repeats: usize, seed: u64) -> Result<Self> {
        if instances.len() < 2 {
            return Err(Error::DatasetTooSmall { size: instances.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EVAL_STREAM);
        let mut text_masks = Vec::new();
        let mut region_masks = Vec::new();
        let mut itm = Vec::new();
        for (i, inst) in instances.iter().enumerate() {
            for _ in 0..repeats {
                text_masks.push((i, MaskSet::single(sample_word_mask(&mut rng, inst.num_tokens(), vocab_size))));
                region_masks.push((i, MaskSet::single(sample_region_mask(&mut rng, inst.num_regions()))));
                itm.push(ItmSample::positive(inst.clone()));
                itm.push(sample_negative(&instances, &mut rng, i)?);
            }
        }
        Ok(Self { instances, text_masks, region_masks, itm })
    }

    fn examples<'a>(&'a self, masks: &'a [(usize, MaskSet)]) -> Vec<MaskedExample<'a>> {
        masks
            .iter()
            .map(|(i, m)| MaskedExample { instance: &self.instances[*i], masks: m.clone() })
            .collect()
    }
}

fn accuracy(pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|(p, t)| p == t).count() as f64 / pairs.len() as f64
}

pub fn evaluate<S: Real>(
    model: &Model,
    store: &ParameterStore<S>,
    set: &EvalSet,
    ipot: &IpotConfig,
    step: u64,
) -> Result<EvalRecord> {
    let mut mlm = Vec::new();
    for chunk in set.examples(&set.text_masks).chunks(EVAL_CHUNK) {
        mlm.extend(mlm_predictions(model, store, chunk)?);
    }
    let mut mrc = Vec::new();
    for chunk in set.examples(&set.region_masks).chunks(EVAL_CHUNK) {
        mrc.extend(mrc_predictions(model, store, chunk)?);
    }
    let mut itm_correct = 0;
    for chunk in set.itm.chunks(EVAL_CHUNK) {
        let refs: Vec<&TrainingInstance> = chunk.iter().map(|s| &s.instance).collect();
        for (logit, s) in itm_logits(model, store, &refs)?.into_iter().zip(chunk) {
            // sigmoid(logit) > 0.5 exactly when logit > 0
            if (logit > 0.0) == s.label {
                itm_correct += 1;
            }
        }
    }
    let mut wra_total = 0.0;
    for chunk in set.instances.chunks(EVAL_CHUNK) {
        let refs: Vec<&TrainingInstance> = chunk.iter().collect();
        let out = wra_distances(model, store, &refs, ipot)?;
        wra_total += out.distances.iter().sum::<f64>();
    }
    Ok(EvalRecord {
        step,
        mlm_accuracy: accuracy(&mlm),
        mrc_kl_accuracy: accuracy(&mrc),
        itm_accuracy: itm_correct as f64 / set.itm.len() as f64,
        mean_wra_distance: wra_total / set.instances.len() as f64,
    })
}

//! Flat TOML training configuration. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vlpre_ot::IpotConfig;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tasks::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    Conditional,
    JointRandom,
}

impl MaskingMode {
    pub fn name(self) -> &'static str {
        match self {
            MaskingMode::Conditional => "conditional",
            MaskingMode::JointRandom => "joint_random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub enabled_tasks: Vec<TaskKind>,
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Linear warmup length; 0 keeps the rate constant.
    pub warmup_steps: u64,
    pub masking_mode: MaskingMode,
    pub seed: u64,
    /// Evaluate every this many steps (and at step 0 and the last step).
    pub eval_every: u64,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
    /// Trailing share of the data held out for evaluation.
    pub val_fraction: f64,
    /// Fixed mask draws per held-out instance for the accuracy metrics.
    pub eval_mask_repeats: usize,
    pub ipot_beta: f64,
    pub ipot_outer_iters: usize,
    pub ipot_inner_iters: usize,
    pub ipot_tol: f64,
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub max_regions: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let ipot = IpotConfig::default();
        Self {
            enabled_tasks: TaskKind::ALL.to_vec(),
            batch_size: 32,
            steps: 3000,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 0,
            masking_mode: MaskingMode::Conditional,
            seed: 42,
            eval_every: 250,
            checkpoint_every: 0,
            val_fraction: 0.1,
            eval_mask_repeats: 4,
            ipot_beta: ipot.beta,
            ipot_outer_iters: ipot.outer_iters,
            ipot_inner_iters: ipot.inner_iters,
            ipot_tol: ipot.marginal_tol,
            num_layers: m.num_layers,
            hidden: m.hidden,
            heads: m.heads,
            ffn_dim: m.ffn_dim,
            vocab_size: m.vocab_size,
            max_tokens: m.max_tokens,
            max_regions: m.max_regions,
            dropout: m.dropout,
            init_std: m.init_std,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.enabled_tasks.is_empty() {
            return Err(Error::EmptyTaskSet);
        }
        let mut sorted = self.enabled_tasks.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.enabled_tasks.len() {
            return fail("enabled_tasks lists a task twice".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 || self.eval_mask_repeats == 0 {
            return fail("eval_every and eval_mask_repeats must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(self.adam_eps > 0.0) {
            return fail("learning_rate and weight_decay must be >= 0, adam_eps > 0".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail("val_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn ipot(&self) -> IpotConfig {
        IpotConfig {
            beta: self.ipot_beta,
            outer_iters: self.ipot_outer_iters,
            inner_iters: self.ipot_inner_iters,
            marginal_tol: self.ipot_tol,
        }
    }

    /// Model shape, with the data-dependent sizes supplied by the caller.
    pub fn model_config(&self, visual_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            hidden: self.hidden,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            vocab_size: self.vocab_size,
            max_tokens: self.max_tokens,
            max_regions: self.max_regions,
            visual_dim,
            num_classes,
            dropout: self.dropout,
            init_std: self.init_std,
        }
    }
}

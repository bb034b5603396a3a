//! Pre-training loop: one uniformly drawn objective per step, AdamW updates,
//! periodic held-out evaluation, metric CSVs and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vlpre_ot::IpotConfig;

pub mod adamw;
pub mod checkpoint;
pub mod config;
pub mod eval;

pub use adamw::{AdamW, AdamWConfig};
pub use checkpoint::{Checkpoint, RngState};
pub use config::{MaskingMode, TrainConfig};
pub use eval::{evaluate, EvalRecord, EvalSet};

use crate::data::dataset_dims;
use crate::error::{Error, Result};
use crate::instance::TrainingInstance;
use crate::model::Model;
use crate::nn::ParameterStore;
use crate::tasks::masking::{joint_random_mask, sample_region_mask, sample_word_mask, MaskModality, MaskSet};
use crate::tasks::negatives::{sample_negative, ItmSample};
use crate::tasks::objectives::{
    itm_loss, mlm_loss, mrc_kl_loss, mrc_loss, mrfr_loss, wra_loss, MaskedExample, Pass,
};
use crate::tasks::TaskKind;

/// Stream of the training RNG (task draws, batches, masks, negatives, dropout).
pub const TRAIN_STREAM: u64 = 1;
pub const STEP_CSV: &str = "steps.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const STEP_CSV_HEADER: &str = "step,task,loss,wallclock_ms";
pub const EVAL_CSV_HEADER: &str = "step,mlm_acc,mrc_kl_acc,itm_acc,wra_dist";
pub const FINAL_CHECKPOINT: &str = "checkpoint.untk";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub task: TaskKind,
    pub loss: f64,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunOutput {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

/// Uniform draw over the enabled tasks.
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, enabled: &[TaskKind]) -> Result<TaskKind> {
    if enabled.is_empty() {
        return Err(Error::EmptyTaskSet);
    }
    Ok(enabled[rng.random_range(0..enabled.len())])
}

/// Masks for one example of a `task` step. Conditional mode corrupts only
/// the task's own modality; joint mode corrupts both independently and
/// redraws until the task's modality has at least one masked index.
pub fn sample_step_masks<R: Rng + ?Sized>(
    rng: &mut R,
    mode: MaskingMode,
    task: TaskKind,
    instance: &TrainingInstance,
    vocab_size: usize,
) -> MaskSet {
    let (t, k) = (instance.num_tokens(), instance.num_regions());
    match (task.masked_modality(), mode) {
        (None, _) => MaskSet::none(),
        (Some(MaskModality::Text), MaskingMode::Conditional) => {
            MaskSet::single(sample_word_mask(rng, t, vocab_size))
        }
        (Some(MaskModality::Region), MaskingMode::Conditional) => MaskSet::single(sample_region_mask(rng, k)),
        (Some(modality), MaskingMode::JointRandom) => loop {
            let set = joint_random_mask(rng, t, k, vocab_size);
            let hit = match modality {
                MaskModality::Text => set.text().is_some(),
                MaskModality::Region => set.region().is_some(),
            };
            if hit {
                return set;
            }
        },
    }
}

/// Per-parameter value and gradient norms, for non-finite loss reports.
fn norm_dump(store: &ParameterStore<f32>) -> String {
    let entries: Vec<serde_json::Value> = store
        .ids()
        .map(|id| {
            let norm = |d: &[f32]| d.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            serde_json::json!({
                "name": store.name(id),
                "value_norm": norm(store.value(id).data()),
                "grad_norm": norm(store.grad(id).data()),
            })
        })
        .collect();
    serde_json::Value::Array(entries).to_string()
}

fn validate_data(data: &[TrainingInstance], config: &TrainConfig) -> Result<()> {
    for inst in data {
        if let Some(&t) = inst.tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(Error::VocabOutOfRange { token: t as usize, vocab_size: config.vocab_size });
        }
        if inst.num_tokens() > config.max_tokens || inst.num_regions() > config.max_regions {
            return Err(Error::SequenceTooLong {
                tokens: inst.num_tokens(),
                regions: inst.num_regions(),
                max_tokens: config.max_tokens,
                max_regions: config.max_regions,
            });
        }
    }
    Ok(())
}

/// Splits off the trailing `val_fraction` (at least two instances each side).
pub fn split(data: &[TrainingInstance], val_fraction: f64) -> Result<(Vec<TrainingInstance>, Vec<TrainingInstance>)> {
    let n = data.len();
    let val = ((n as f64 * val_fraction).round() as usize).max(2);
    if n < val + 2 {
        return Err(Error::DatasetTooSmall { size: n });
    }
    Ok((data[..n - val].to_vec(), data[n - val..].to_vec()))
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub store: ParameterStore<f32>,
    pub optimizer: AdamW<f32>,
    pub step: u64,
    rng: ChaCha8Rng,
    train: Vec<TrainingInstance>,
    eval_set: EvalSet,
    ipot: IpotConfig,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &[TrainingInstance]) -> Result<Self> {
        config.validate()?;
        validate_data(data, &config)?;
        let (visual_dim, num_classes) =
            dataset_dims(data).ok_or(Error::DatasetTooSmall { size: data.len() })?;
        let (model, store) = Model::new::<f32>(config.model_config(visual_dim, num_classes), config.seed)?;
        let optimizer = AdamW::new(checkpoint::adamw_config(&config), &store);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAIN_STREAM);
        Self::assemble(config, model, store, optimizer, 0, rng, data)
    }

    /// Continues from `checkpoint` with `config`, which may change the step
    /// budget and evaluation/checkpoint cadence but nothing that affects the
    /// trajectory.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig, data: &[TrainingInstance]) -> Result<Self> {
        config.validate()?;
        let comparable = TrainConfig {
            steps: checkpoint.train.steps,
            eval_every: checkpoint.train.eval_every,
            checkpoint_every: checkpoint.train.checkpoint_every,
            ..config.clone()
        };
        if comparable != checkpoint.train {
            return Err(Error::Config(
                "resume config differs from the checkpoint beyond steps/eval_every/checkpoint_every".into(),
            ));
        }
        validate_data(data, &config)?;
        if dataset_dims(data) != Some((checkpoint.model.config.visual_dim, checkpoint.model.config.num_classes)) {
            return Err(Error::ShapeMismatch("dataset dimensions differ from the checkpoint model".into()));
        }
        let rng = checkpoint.rng.restore()?;
        Self::assemble(config, checkpoint.model, checkpoint.store, checkpoint.optimizer, checkpoint.step, rng, data)
    }

    fn assemble(
        config: TrainConfig,
        model: Model,
        store: ParameterStore<f32>,
        optimizer: AdamW<f32>,
        step: u64,
        rng: ChaCha8Rng,
        data: &[TrainingInstance],
    ) -> Result<Self> {
        let (train, val) = split(data, config.val_fraction)?;
        let eval_set = EvalSet::build(val, config.vocab_size, config.eval_mask_repeats, config.seed)?;
        let ipot = config.ipot();
        Ok(Self { config, model, store, optimizer, step, rng, train, eval_set, ipot })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            store: self.store.clone(),
            optimizer: self.optimizer.clone(),
            train: self.config.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn evaluate(&self) -> Result<EvalRecord> {
        evaluate(&self.model, &self.store, &self.eval_set, &self.ipot, self.step)
    }

    fn learning_rate(&self) -> f64 {
        let w = self.config.warmup_steps;
        if w == 0 || self.step >= w {
            self.config.learning_rate
        } else {
            self.config.learning_rate * (self.step + 1) as f64 / w as f64
        }
    }

    /// Runs `task` on a freshly drawn batch and returns its mean loss, with
    /// gradients left in the store.
    fn task_loss(&mut self, task: TaskKind) -> Result<f64> {
        let n = self.train.len();
        let idx: Vec<usize> = (0..self.config.batch_size).map(|_| self.rng.random_range(0..n)).collect();
        let vocab = self.config.vocab_size;
        let (model, store, ipot) = (&self.model, &mut self.store, &self.ipot);
        match task {
            TaskKind::Itm => {
                let mut batch = Vec::with_capacity(idx.len());
                for &i in &idx {
                    batch.push(if self.rng.random::<bool>() {
                        ItmSample::positive(self.train[i].clone())
                    } else {
                        sample_negative(&self.train, &mut self.rng, i)?
                    });
                }
                itm_loss(model, store, &batch, Pass::train(&mut self.rng as &mut dyn RngCore))
            }
            TaskKind::Wra => {
                let refs: Vec<&TrainingInstance> = idx.iter().map(|&i| &self.train[i]).collect();
                Ok(wra_loss(model, store, &refs, ipot, None, Pass::train(&mut self.rng as &mut dyn RngCore))?.loss)
            }
            _ => {
                let mode = self.config.masking_mode;
                let batch: Vec<MaskedExample<'_>> = idx
                    .iter()
                    .map(|&i| MaskedExample {
                        instance: &self.train[i],
                        masks: sample_step_masks(&mut self.rng, mode, task, &self.train[i], vocab),
                    })
                    .collect();
                let pass = Pass::train(&mut self.rng as &mut dyn RngCore);
                match task {
                    TaskKind::Mlm => mlm_loss(model, store, &batch, pass),
                    TaskKind::Mrfr => mrfr_loss(model, store, &batch, pass),
                    TaskKind::Mrc => mrc_loss(model, store, &batch, pass),
                    _ => mrc_kl_loss(model, store, &batch, pass),
                }
            }
        }
    }

    /// One sampled objective, one AdamW update.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let start = Instant::now();
        let task = sample_task(&mut self.rng, &self.config.enabled_tasks)?;
        self.store.zero_grads();
        let loss = self.task_loss(task)?;
        let step = self.step + 1;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, task: task.to_string(), dump: norm_dump(&self.store) });
        }
        let lr = self.learning_rate();
        self.optimizer.step_with_lr(&mut self.store, lr);
        self.store.zero_grads();
        self.step = step;
        Ok(StepRecord { step, task, loss, wallclock_ms: start.elapsed().as_secs_f64() * 1e3 })
    }

    /// Trains until `config.steps`, evaluating at the start of a fresh run,
    /// every `eval_every` steps and at the end. With `out_dir`, appends to
    /// the metric CSVs and writes checkpoints there.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<RunOutput> {
        let mut sinks = match out_dir {
            Some(dir) => Some(MetricSinks::open(dir)?),
            None => None,
        };
        let mut out = RunOutput::default();
        if self.step == 0 {
            let rec = self.evaluate()?;
            if let Some(s) = sinks.as_mut() {
                s.eval(&rec)?;
            }
            out.evals.push(rec);
        }
        while self.step < self.config.steps {
            let rec = self.train_step()?;
            if let Some(s) = sinks.as_mut() {
                s.step(&rec)?;
            }
            out.steps.push(rec);
            if self.step % self.config.eval_every == 0 || self.step == self.config.steps {
                let rec = self.evaluate()?;
                if let Some(s) = sinks.as_mut() {
                    s.eval(&rec)?;
                }
                out.evals.push(rec);
            }
            if let Some(dir) = out_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 {
                    self.checkpoint().save(dir.join(format!("checkpoint-{}.untk", self.step)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(out)
    }
}

struct MetricSinks {
    steps: File,
    evals: File,
}

fn open_csv(path: PathBuf, header: &str) -> Result<File> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    Ok(f)
}

impl MetricSinks {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            steps: open_csv(dir.join(STEP_CSV), STEP_CSV_HEADER)?,
            evals: open_csv(dir.join(EVAL_CSV), EVAL_CSV_HEADER)?,
        })
    }

    fn step(&mut self, r: &StepRecord) -> Result<()> {
        writeln!(self.steps, "{},{},{},{:.3}", r.step, r.task, r.loss, r.wallclock_ms)?;
        Ok(())
    }

    fn eval(&mut self, r: &EvalRecord) -> Result<()> {
        writeln!(
            self.evals,
            "{},{},{},{},{}",
            r.step, r.mlm_accuracy, r.mrc_kl_accuracy, r.itm_accuracy, r.mean_wra_distance
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationOutput {
    pub conditional: RunOutput,
    pub joint_random: RunOutput,
}

/// Two runs that differ only in `masking_mode`, written to
/// `out_dir/conditional` and `out_dir/joint_random`.
pub fn run_ablation(config: &TrainConfig, data: &[TrainingInstance], out_dir: Option<&Path>) -> Result<AblationOutput> {
    let run = |mode: MaskingMode| -> Result<RunOutput> {
        let cfg = TrainConfig { masking_mode: mode, ..config.clone() };
        let dir = out_dir.map(|d| d.join(mode.name()));
        Trainer::new(cfg, data)?.run(dir.as_deref())
    };
    Ok(AblationOutput { conditional: run(MaskingMode::Conditional)?, joint_random: run(MaskingMode::JointRandom)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticCorpusSpec};

    fn corpus(n: usize) -> Vec<TrainingInstance> {
        generate_synthetic(&SyntheticCorpusSpec { num_instances: n, ..SyntheticCorpusSpec::default() }).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            steps: 6,
            eval_every: 3,
            hidden: 16,
            heads: 2,
            ffn_dim: 32,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_task_is_always_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_task(&mut rng, &[TaskKind::Wra]).unwrap(), TaskKind::Wra);
        }
        assert!(matches!(sample_task(&mut rng, &[]), Err(Error::EmptyTaskSet)));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = corpus(20);
        let mut t = Trainer::new(TrainConfig { learning_rate: 0.0, ..small_config() }, &data).unwrap();
        let before = t.store.clone();
        for _ in 0..6 {
            t.train_step().unwrap();
        }
        for id in before.ids() {
            let a: Vec<u32> = before.value(id).data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = t.store.value(id).data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b, "{}", before.name(id));
        }
    }

    #[test]
    fn run_evaluates_on_schedule() {
        let data = corpus(20);
        let out = Trainer::new(small_config(), &data).unwrap().run(None).unwrap();
        assert_eq!(out.steps.len(), 6);
        assert_eq!(out.evals.iter().map(|e| e.step).collect::<Vec<_>>(), [0, 3, 6]);
        for e in &out.evals {
            for v in [e.mlm_accuracy, e.mrc_kl_accuracy, e.itm_accuracy] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn evaluation_is_repeatable() {
        let data = corpus(20);
        let t = Trainer::new(small_config(), &data).unwrap();
        assert_eq!(t.evaluate().unwrap(), t.evaluate().unwrap());
    }

    #[test]
    fn split_keeps_the_tail() {
        let data = corpus(20);
        let (train, val) = split(&data, 0.1).unwrap();
        assert_eq!((train.len(), val.len()), (18, 2));
        assert_eq!(val[1], data[19]);
        assert!(split(&data[..3], 0.1).is_err());
    }

    #[test]
    fn joint_masks_cover_the_task_modality() {
        let data = corpus(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = sample_step_masks(&mut rng, MaskingMode::JointRandom, TaskKind::Mrc, &data[0], 64);
            assert!(m.region().is_some() && m.is_ablation());
            let c = sample_step_masks(&mut rng, MaskingMode::Conditional, TaskKind::Mlm, &data[0], 64);
            assert!(c.text().is_some() && c.region().is_none());
            assert_eq!(sample_step_masks(&mut rng, MaskingMode::Conditional, TaskKind::Itm, &data[0], 64), MaskSet::none());
        }
    }
}

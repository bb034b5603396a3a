use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlpre_core::data::{generate_synthetic, SyntheticCorpusSpec};
use vlpre_core::instance::TrainingInstance;
use vlpre_core::tasks::{mlm_loss, sample_word_mask, MaskSet, MaskedExample, Pass, TaskKind};
use vlpre_core::trainer::{Checkpoint, TrainConfig, Trainer, EVAL_CSV, STEP_CSV};

fn corpus(n: usize) -> Vec<TrainingInstance> {
    generate_synthetic(&SyntheticCorpusSpec { num_instances: n, ..SyntheticCorpusSpec::default() }).unwrap()
}

fn small(steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        steps,
        eval_every: 10,
        hidden: 16,
        heads: 2,
        ffn_dim: 32,
        dropout: 0.1,
        ..TrainConfig::default()
    }
}

/// The step log without its wallclock column.
fn step_log(dir: &std::path::Path) -> Vec<String> {
    fs::read_to_string(dir.join(STEP_CSV))
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = corpus(40);
    let full = Trainer::new(small(30), &data).unwrap().run(None).unwrap();

    let mut first = Trainer::new(small(12), &data).unwrap();
    first.run(None).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.to_bytes(), bytes);
    let rest = Trainer::resume(ck, small(30), &data).unwrap().run(None).unwrap();

    assert_eq!(rest.steps.len(), 18);
    for (a, b) in full.steps[12..].iter().zip(&rest.steps) {
        assert_eq!((a.step, a.task), (b.step, b.task));
        assert!((a.loss - b.loss).abs() <= 1e-6, "step {}: {} vs {}", a.step, a.loss, b.loss);
    }
    assert_eq!(full.evals.last(), rest.evals.last());
}

#[test]
fn resume_rejects_a_different_trajectory() {
    let data = corpus(40);
    let ck = Trainer::new(small(4), &data).unwrap().checkpoint();
    let other = TrainConfig { learning_rate: 5e-4, ..small(8) };
    assert!(Trainer::resume(ck, other, &data).is_err());
}

#[test]
fn same_seed_same_metric_files() {
    let data = corpus(40);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let cfg = TrainConfig { checkpoint_every: 10, ..small(20) };
        Trainer::new(cfg, &data).unwrap().run(Some(d.path())).unwrap();
    }
    let [a, b] = &dirs;
    assert_eq!(step_log(a.path()), step_log(b.path()));
    assert_eq!(step_log(a.path()).len(), 21);
    assert_eq!(fs::read(a.path().join(EVAL_CSV)).unwrap(), fs::read(b.path().join(EVAL_CSV)).unwrap());
    for name in ["checkpoint-10.untk", "checkpoint-20.untk", "checkpoint.untk"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }

    let other = tempfile::tempdir().unwrap();
    Trainer::new(TrainConfig { seed: 43, ..small(20) }, &data).unwrap().run(Some(other.path())).unwrap();
    assert_ne!(step_log(a.path()), step_log(other.path()));
}

#[test]
fn single_pair_is_memorized() {
    // Copies of one pair, so the held-out split sees the same tokens.
    let base = corpus(1).remove(0);
    let data: Vec<TrainingInstance> =
        (0..6).map(|i| TrainingInstance { id: i.to_string(), ..base.clone() }).collect();
    let cfg = TrainConfig {
        enabled_tasks: vec![TaskKind::Mlm],
        learning_rate: 3e-3,
        weight_decay: 0.0,
        val_fraction: 0.34,
        dropout: 0.0,
        ..small(300)
    };
    let out = Trainer::new(cfg, &data).unwrap().run(None).unwrap();
    assert_eq!(out.evals.last().unwrap().mlm_accuracy, 1.0, "{:?}", out.evals.last());
}

#[test]
fn trained_mlm_depends_on_regions() {
    let data = corpus(200);
    let cfg = TrainConfig {
        enabled_tasks: vec![TaskKind::Mlm],
        learning_rate: 3e-3,
        hidden: 32,
        ffn_dim: 64,
        dropout: 0.0,
        ..small(600)
    };
    let mut trainer = Trainer::new(cfg, &data).unwrap();
    trainer.run(None).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let blind: Vec<TrainingInstance> = data
        .iter()
        .map(|inst| {
            let mut inst = inst.clone();
            inst.regions.iter_mut().for_each(|r| r.feat.iter_mut().for_each(|x| *x = 0.0));
            inst
        })
        .collect();
    let masks: Vec<MaskSet> = data
        .iter()
        .map(|inst| MaskSet::single(sample_word_mask(&mut rng, inst.num_tokens(), 64)))
        .collect();
    let loss = |set: &[TrainingInstance], trainer: &mut Trainer| {
        let batch: Vec<MaskedExample<'_>> =
            set.iter().zip(&masks).map(|(i, m)| MaskedExample { instance: i, masks: m.clone() }).collect();
        mlm_loss(&trainer.model, &mut trainer.store, &batch, Pass::eval()).unwrap()
    };
    let seen = loss(&data, &mut trainer);
    let zeroed = loss(&blind, &mut trainer);
    // Class words are predictable only from the regions.
    assert!(zeroed > seen + 0.05, "{seen} vs {zeroed}");
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlpre_core::instance::{RegionInput, TrainingInstance};
use vlpre_core::tasks::{joint_random_mask, MaskAction, MaskSet, TaskKind};
use vlpre_core::trainer::{sample_step_masks, sample_task, MaskingMode};

fn instance(tokens: usize, regions: usize) -> TrainingInstance {
    let region = RegionInput {
        feat: vec![1.0, 0.0],
        bbox: [0.0, 0.0, 10.0, 10.0],
        img_w: 20,
        img_h: 20,
        cls_probs: vec![1.0],
    };
    TrainingInstance { id: "x".into(), tokens: vec![3; tokens], regions: vec![region; regions] }
}

#[test]
fn conditional_steps_never_mask_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let short = instance(4, 1);
    for _ in 0..20_000 {
        let task = sample_task(&mut rng, &TaskKind::ALL).unwrap();
        let m = sample_step_masks(&mut rng, MaskingMode::Conditional, task, &short, 64);
        assert!(!m.is_dual() && !m.is_ablation());
        assert_eq!(m.text().is_some(), task.masked_modality() == Some(vlpre_core::tasks::MaskModality::Text));
    }
}

#[test]
fn joint_masks_use_the_same_rate_on_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut words, mut regions, mut dual, mut draws) = (0usize, 0usize, 0usize, 0usize);
    let mut random = 0usize;
    for _ in 0..4_000 {
        let m: MaskSet = joint_random_mask(&mut rng, 25, 25, 64);
        draws += 25;
        words += m.text().map_or(0, |p| p.len());
        regions += m.region().map_or(0, |p| p.len());
        random += m.text().map_or(0, |p| {
            p.actions().iter().filter(|(_, a)| matches!(a, MaskAction::RandomToken(_))).count()
        });
        dual += usize::from(m.is_dual());
    }
    let (w, r) = (words as f64 / draws as f64, regions as f64 / draws as f64);
    assert!((w - 0.15).abs() < 0.01, "word rate {w}");
    assert!((r - 0.15).abs() < 0.01, "region rate {r}");
    assert!((random as f64 / words as f64 - 0.1).abs() < 0.02);
    assert!(dual > 3_000, "dual masks: {dual}");
}

use super::*;
use crate::expert_reward::{
    build_demonstrations, synthesize_negatives, train_expert_reward, ExpertHyper, RecipeConfig,
};
use crate::segnet::train_supervised;

fn blob_image(id: u64, dr: i32, dc: i32) -> (SampleGrid, MaskGrid) {
    let (h, w) = (16usize, 16usize);
    let (cy, cx) = ((h as i32 / 2 + dr) as f32, (w as i32 / 2 + dc) as f32);
    let mut px = vec![0.2f32; h * w];
    let mut mask = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f32 - cy).powi(2) + (c as f32 - cx).powi(2);
            if d2 <= 9.0 {
                px[r * w + c] = 0.9;
                mask[r * w + c] = 1;
            }
        }
    }
    (SampleGrid::new(id, h, w, px), MaskGrid::new(h, w, mask))
}

fn jitter(i: usize) -> (i32, i32) {
    let js = [(0, 0), (1, -1), (-2, 2), (2, 1), (-1, -2), (0, 2), (2, -2), (-2, 0), (1, 2), (-1, 1)];
    js[i % js.len()]
}

struct Fixture {
    split: DatasetSplit,
    seg: SegModel,
    rew: crate::expert_reward::ExpertRewardModel,
    seg_hyper: SegHyper,
}

fn fixture() -> Fixture {
    let labeled: Vec<_> = (0..12)
        .map(|i| {
            let (dr, dc) = jitter(i);
            blob_image(i as u64, dr, dc)
        })
        .collect();
    let unlabeled: Vec<_> = (100..120)
        .map(|i| {
            let (dr, dc) = jitter(i as usize);
            blob_image(i, dc, dr).0
        })
        .collect();
    let folds = vec![(0..10u64).collect(), vec![10, 11]];
    let split = DatasetSplit { labeled, unlabeled, folds, labeled_fraction: 1.0 };
    let seg_hyper = SegHyper { batch_size: 4, max_epochs: 20, seed: 3, ..SegHyper::default() };
    let (seg, _) = train_supervised(&split, 1, &seg_hyper).unwrap();
    let pos = build_demonstrations(&seg, &split.labeled).unwrap();
    let negs = synthesize_negatives(
        &pos,
        5,
        &RecipeConfig { min_shift: 5, max_shift: 10, ..RecipeConfig::default() },
    )
    .unwrap();
    let rew = train_expert_reward(&pos, &negs, &ExpertHyper::default()).unwrap();
    Fixture { split, seg, rew, seg_hyper }
}

fn meta() -> RunMeta {
    RunMeta {
        run_id: "t".into(),
        method: "rest".into(),
        labeled_fraction: 1.0,
        repeat: 0,
        fold: 1,
    }
}

fn quick_cfg() -> RestConfig {
    RestConfig {
        k_iterations: 5,
        batch_size: 6,
        epsilon: EpsilonSchedule { epsilon: 0.2, decay: 0.9, floor: 0.05 },
        seed: 7,
        ..RestConfig::default()
    }
}

#[test]
fn unreachable_gate_never_fine_tunes() {
    let fx = fixture();
    let digest0 = fx.seg.params.digest();
    let pol = PolicyModel::new(16, 16, 1).unwrap();
    let cfg = RestConfig { tau_phase: 1.5, ..quick_cfg() };
    let (seg, _, hist) = run_rest(fx.seg, pol, &fx.rew, &fx.split, &fx.seg_hyper, &cfg, &meta()).unwrap();
    assert_eq!(seg.params.digest(), digest0);
    for log in &hist.iterations {
        assert_eq!(log.phase, Phase::Exploration);
        assert_eq!(log.reward_source, Some(RewardSource::Expert));
        assert!(log.delta_f1.is_none());
        assert_eq!(log.seg_digest, digest0);
    }
}

#[test]
fn gate_soundness_and_phase_tagging() {
    let fx = fixture();
    let digest0 = fx.seg.params.digest();
    let pol = PolicyModel::new(16, 16, 1).unwrap();
    // all-heuristic labels: the expert should accept the batch
    let cfg = RestConfig {
        epsilon: EpsilonSchedule { epsilon: 1.0, decay: 1.0, floor: 1.0 },
        k_iterations: 4,
        ..quick_cfg()
    };
    let (_, _, hist) = run_rest(fx.seg, pol, &fx.rew, &fx.split, &fx.seg_hyper, &cfg, &meta()).unwrap();
    assert!(
        hist.iterations.iter().any(|l| l.phase == Phase::Exploitation),
        "gate never opened; batch rewards {:?}",
        hist.iterations.iter().map(|l| l.batch_reward).collect::<Vec<_>>()
    );
    let mut prev_digest = digest0;
    for log in &hist.iterations {
        match log.phase {
            Phase::Exploitation => {
                assert!(log.batch_reward > cfg.tau_phase);
                assert_eq!(log.reward_source, Some(RewardSource::Validation));
                assert!(log.delta_f1.is_some());
            }
            Phase::Exploration => {
                assert_eq!(log.reward_source, Some(RewardSource::Expert));
                assert_eq!(log.seg_digest, prev_digest, "seg changed outside exploitation");
            }
        }
        prev_digest = log.seg_digest;
    }
}

#[test]
fn history_is_complete_and_finite() {
    let fx = fixture();
    let pol = PolicyModel::new(16, 16, 2).unwrap();
    let cfg = quick_cfg();
    let (_, _, hist) = run_rest(fx.seg, pol, &fx.rew, &fx.split, &fx.seg_hyper, &cfg, &meta()).unwrap();
    assert_eq!(hist.iterations.len(), cfg.k_iterations);
    for (i, log) in hist.iterations.iter().enumerate() {
        assert_eq!(log.iteration, i + 1);
        assert_eq!(log.record.iteration, i + 1);
        assert!(log.val_f1.is_finite());
        assert!(log.record.f1.is_finite());
        assert!(log.record.sensitivity.is_finite());
        assert!(log.record.fps_per_image.is_finite());
        assert!(log.record.reward.unwrap().is_finite());
        assert!(log.batch_reward.is_finite());
    }
}

#[test]
fn expert_model_stays_frozen() {
    let fx = fixture();
    let digest = fx.rew.digest();
    let pol = PolicyModel::new(16, 16, 3).unwrap();
    let (_, _, hist) =
        run_rest(fx.seg, pol, &fx.rew, &fx.split, &fx.seg_hyper, &quick_cfg(), &meta()).unwrap();
    assert_eq!(hist.expert_digest_start, digest);
    assert_eq!(hist.expert_digest_end, digest);
    assert_eq!(fx.rew.digest(), digest);
}

#[test]
fn rest_is_deterministic_per_seed() {
    let fx = fixture();
    let run = || {
        let pol = PolicyModel::new(16, 16, 4).unwrap();
        let (seg, pol, hist) = run_rest(
            fx.seg.clone(),
            pol,
            &fx.rew,
            &fx.split,
            &fx.seg_hyper,
            &quick_cfg(),
            &meta(),
        )
        .unwrap();
        let trace: Vec<(Phase, u64, u64)> = hist
            .iterations
            .iter()
            .map(|l| (l.phase, l.val_f1.to_bits(), l.seg_digest))
            .collect();
        (seg.params.digest(), pol.digest(), trace)
    };
    assert_eq!(run(), run());
}

#[test]
fn config_validation_rejects_bad_values() {
    let fx = fixture();
    let bads = [
        RestConfig { k_iterations: 0, ..RestConfig::default() },
        RestConfig { tau_phase: 0.0, ..RestConfig::default() },
        RestConfig { batch_size: 0, ..RestConfig::default() },
        RestConfig { stab_window: 1, ..RestConfig::default() },
        RestConfig { stab_delta: 0.0, ..RestConfig::default() },
    ];
    for cfg in bads {
        let pol = PolicyModel::new(16, 16, 0).unwrap();
        assert!(matches!(
            run_rest(fx.seg.clone(), pol, &fx.rew, &fx.split, &fx.seg_hyper, &cfg, &meta()),
            Err(RestError::BadConfig(_))
        ));
    }
}

#[test]
fn empty_unlabeled_pool_is_rejected() {
    let fx = fixture();
    let mut split = fx.split.clone();
    split.unlabeled.clear();
    let pol = PolicyModel::new(16, 16, 0).unwrap();
    assert!(matches!(
        run_rest(fx.seg, pol, &fx.rew, &split, &fx.seg_hyper, &quick_cfg(), &meta()),
        Err(RestError::EmptyUnlabeled)
    ));
}

#[test]
fn self_training_runs_and_is_deterministic() {
    let fx = fixture();
    let cfg = SelfTrainConfig { k_iterations: 4, batch_size: 6, seed: 11, ..SelfTrainConfig::default() };
    let run = || {
        let (seg, hist) =
            run_standard_self_training(fx.seg.clone(), &fx.split, &fx.seg_hyper, &cfg, &meta())
                .unwrap();
        let trace: Vec<(Phase, u64)> =
            hist.iterations.iter().map(|l| (l.phase, l.val_f1.to_bits())).collect();
        (seg.params.digest(), trace)
    };
    let (d1, t1) = run();
    let (d2, t2) = run();
    assert_eq!(d1, d2);
    assert_eq!(t1, t2);
    assert_eq!(t1.len(), 4);
}

#[test]
fn self_training_no_accepts_is_a_logged_noop() {
    let fx = fixture();
    let digest0 = fx.seg.params.digest();
    // impossible acceptance bar: every image has some ambiguous pixels
    let cfg = SelfTrainConfig { max_ambiguous_frac: -1.0, k_iterations: 3, ..SelfTrainConfig::default() };
    let (seg, hist) =
        run_standard_self_training(fx.seg, &fx.split, &fx.seg_hyper, &cfg, &meta()).unwrap();
    assert_eq!(seg.params.digest(), digest0);
    assert_eq!(hist.iterations.len(), 3);
    for log in &hist.iterations {
        assert_eq!(log.phase, Phase::Exploration);
        assert_eq!(log.batch_reward, 0.0);
        assert!(log.reward_source.is_none());
    }
}

#[test]
fn pseudonegative_mining_only_uses_empty_masks() {
    let fx = fixture();
    let digest0 = fx.seg.params.digest();
    // the pool is all lesions, so a trained model finds no confident negatives
    let cfg = SelfTrainConfig { k_iterations: 3, seed: 2, ..SelfTrainConfig::default() };
    let (seg, hist) =
        run_pseudonegative_mining(fx.seg.clone(), &fx.split, &fx.seg_hyper, &cfg, &meta()).unwrap();
    assert_eq!(seg.params.digest(), digest0, "no confident negatives must mean no fine-tuning");
    assert!(hist.iterations.iter().all(|l| l.batch_reward == 0.0));

    // an all-background pool is mined and fine-tuned on
    let mut split = fx.split.clone();
    split.unlabeled = (200..210)
        .map(|i| SampleGrid::new(i, 16, 16, vec![0.2; 256]))
        .collect();
    let maxp = split
        .unlabeled
        .iter()
        .map(|img| predict(&fx.seg, img).unwrap().max())
        .fold(0.0f32, f32::max);
    let cfg = SelfTrainConfig { theta_neg: (maxp + 0.01).min(0.99), ..cfg };
    let (seg2, hist2) =
        run_pseudonegative_mining(fx.seg, &split, &fx.seg_hyper, &cfg, &meta()).unwrap();
    assert!(hist2.iterations.iter().any(|l| l.batch_reward > 0.0));
    assert!(hist2.iterations.iter().any(|l| l.phase == Phase::Exploitation));
    let _ = seg2;
}

#[test]
fn partition_fold_splits_by_ids() {
    let fx = fixture();
    let (train, val) = partition_fold(&fx.split, 1).unwrap();
    assert_eq!(train.len(), 10);
    assert_eq!(val.len(), 2);
    assert!(val.iter().all(|(img, _)| img.id >= 10));
    assert!(matches!(partition_fold(&fx.split, 9), Err(RestError::BadFold { .. })));
}

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rest_lab::expert_reward::{
    build_demonstrations, synthesize_negatives, train_expert_reward, ExpertHyper, RecipeConfig,
};
use rest_lab::metrics::welch_t_test;
use rest_lab::policy::PolicyModel;
use rest_lab::rest_loop::{partition_fold, run_rest, RestConfig, RunMeta};
use rest_lab::segnet::{eval_on, train_supervised, SegHyper};
use rest_lab::synthdata::{generate_dataset, make_folds, DatasetSplit, ShapeConfig};

fn cell_split(full: &DatasetSplit, folds: &[Vec<u64>], fold: usize, fraction: f64, seed: u64) -> DatasetSplit {
    let shaped = DatasetSplit { folds: folds.to_vec(), ..full.clone() };
    let (train, val) = partition_fold(&shaped, fold).unwrap();
    let n_keep = ((train.len() as f64) * fraction).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf7ac);
    use rand::Rng;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by_key(|&i| (train[i].1.foreground_count(), train[i].0.id));
    let mut idx: Vec<usize> = (0..n_keep)
        .map(|s| {
            let lo = s * train.len() / n_keep;
            let hi = ((s + 1) * train.len() / n_keep).max(lo + 1);
            order[rng.random_range(lo..hi)]
        })
        .collect();
    idx.sort_unstable();
    let kept: Vec<_> = idx.iter().map(|&i| train[i].clone()).collect();
    let train_ids: Vec<u64> = kept.iter().map(|(img, _)| img.id).collect();
    let val_ids: Vec<u64> = val.iter().map(|(img, _)| img.id).collect();
    DatasetSplit {
        labeled: kept.into_iter().chain(val.into_iter()).collect(),
        unlabeled: full.unlabeled.clone(),
        folds: vec![train_ids, val_ids],
        labeled_fraction: fraction,
    }
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut x = a
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(b)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(c);
    x ^= x >> 31;
    x
}

#[test]
#[ignore]
fn c6_rehearsal() {
    let mut shape = ShapeConfig::with_size(32, 32);
    shape.r_min = 2.5;
    shape.r_max = 7.0;
    shape.amp_min = 0.18;
    shape.amp_max = 0.6;
    shape.noise_sigma = 0.03;
    shape.texture_amp = 0.1;
    shape.max_blobs = 4;
    shape.area_budget_frac = 0.12;
    let full = generate_dataset(40, 120, 11, &shape, 5).unwrap();

    let t_all = Instant::now();
    for (fi, fraction) in [0.25f64, 0.5, 0.75, 1.0].into_iter().enumerate() {
        let mut pres = Vec::new();
        let mut posts = Vec::new();
        for repeat in 0..2u64 {
            let folds = make_folds(&full, 5, repeat).unwrap();
            for fold in 0..5usize {
                let seed = mix(fi as u64, repeat, fold as u64);
                let split = cell_split(&full, &folds, fold, fraction, seed);
                let max_epochs = (60.0 / fraction).round() as usize;
                let hyper = SegHyper {
                    lr: 5e-3,
                    max_epochs,
                    patience: max_epochs,
                    seed,
                    fine_tune_lr_scale: 0.4,
                    ..SegHyper::default()
                };
                let (seg, _) = train_supervised(&split, 1, &hyper).unwrap();
                let (train_pairs, val) = partition_fold(&split, 1).unwrap();
                let (pre, _, _) = eval_on(&seg, &val, 0.25).unwrap();

                let positives = build_demonstrations(&seg, &train_pairs).unwrap();
                let rc = RecipeConfig { min_shift: 4, max_shift: 12, ..RecipeConfig::default() };
                let negatives = synthesize_negatives(&positives, seed ^ 0x77, &rc).unwrap();
                let eh = ExpertHyper { abort_accuracy: 0.0, ..ExpertHyper::default() };
                let rew = train_expert_reward(&positives, &negatives, &eh).unwrap();

                let pol = PolicyModel::new(32, 32, seed ^ 0x99).unwrap();
                let mut rcfg = RestConfig::default();
                rcfg.heuristic.theta_pos = 0.5001;
                rcfg.tau_phase = 0.6;
                rcfg.epsilon =
                    rest_lab::policy::EpsilonSchedule { epsilon: 0.95, decay: 0.98, floor: 0.8 };
                rcfg.k_iterations = 20;
                rcfg.seed = seed ^ 0x55;
                let meta = RunMeta {
                    run_id: "c6".into(),
                    method: "rest".into(),
                    labeled_fraction: fraction,
                    repeat: repeat as usize,
                    fold: 1,
                };
                let (seg2, _, _) = run_rest(seg, pol, &rew, &split, &hyper, &rcfg, &meta).unwrap();
                let (post, _, _) = eval_on(&seg2, &val, 0.25).unwrap();
                pres.push(pre);
                posts.push(post);
            }
        }
        let mp = pres.iter().sum::<f64>() / pres.len() as f64;
        let mq = posts.iter().sum::<f64>() / posts.len() as f64;
        let p = welch_t_test(&posts, &pres).unwrap();
        println!(
            "frac {fraction}: pre {mp:.3} post {mq:.3} delta {:+.3} welch_p {p:.4} ({:.0}s) pres {:?} posts {:?}",
            mq - mp,
            t_all.elapsed().as_secs_f64(),
            pres.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            posts.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        );
    }
}

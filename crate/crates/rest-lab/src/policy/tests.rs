use super::*;
use std::collections::HashMap;

fn flat_image(h: usize, w: usize, v: f32) -> SampleGrid {
    SampleGrid::new(0, h, w, vec![v; h * w])
}

fn flat_state(h: usize, w: usize, v: f32) -> ProbMap {
    ProbMap { h, w, data: vec![v; h * w] }
}

#[test]
fn saturated_probabilities_sample_deterministically() {
    let probs = ProbMap { h: 1, w: 4, data: vec![1.0, 0.0, 1.0, 0.0] };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let (mask, _) = sample_from_probs(&probs, &mut rng);
        assert_eq!(mask.pixels, vec![1, 0, 1, 0]);
    }
}

#[test]
fn huge_temperature_flattens_acceptance_to_half() {
    let mut model = PolicyModel::new(8, 8, 1).unwrap();
    model.temperature = 1e6;
    let img = flat_image(8, 8, 0.7);
    let state = flat_state(8, 8, 0.3);
    let probs = acceptance_probs(&model, &img, &state).unwrap();
    assert!(probs.data.iter().all(|&p| (p - 0.5).abs() < 1e-3));
}

#[test]
fn sampled_mask_frequencies_match_log_prob() {
    let probs = ProbMap { h: 2, w: 2, data: vec![0.8, 0.3, 0.5, 0.9] };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 40_000usize;
    let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
    for _ in 0..n {
        let (mask, _) = sample_from_probs(&probs, &mut rng);
        *counts.entry(mask.pixels).or_default() += 1;
    }
    for bits in 0..16u8 {
        let pixels: Vec<u8> = (0..4).map(|i| (bits >> i) & 1).collect();
        let mask = MaskGrid::new(2, 2, pixels.clone());
        let expected = log_prob(&probs, &mask).exp();
        let observed = *counts.get(&pixels).unwrap_or(&0) as f64 / n as f64;
        assert!(
            (observed - expected).abs() < 0.015,
            "mask {:?}: observed {} expected {}",
            pixels,
            observed,
            expected
        );
    }
}

#[test]
fn log_prob_of_certain_mask_is_near_zero() {
    let probs = ProbMap { h: 1, w: 3, data: vec![1.0, 0.0, 1.0] };
    let mask = MaskGrid::new(1, 3, vec![1, 0, 1]);
    assert!(log_prob(&probs, &mask).abs() < 1e-4);
    let wrong = MaskGrid::new(1, 3, vec![0, 0, 1]);
    assert!(log_prob(&probs, &wrong) < -10.0);
}

#[test]
fn epsilon_boundaries_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        assert!(!epsilon_greedy_select(0.0, &mut rng));
        assert!(epsilon_greedy_select(1.0, &mut rng));
    }
}

#[test]
fn epsilon_midrange_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 20_000;
    let hits = (0..n).filter(|_| epsilon_greedy_select(0.3, &mut rng)).count();
    let frac = hits as f64 / n as f64;
    assert!((frac - 0.3).abs() < 0.02, "explore fraction {}", frac);
}

#[test]
fn epsilon_schedule_decays_to_floor() {
    let mut s = EpsilonSchedule { epsilon: 0.9, decay: 0.5, floor: 0.05 };
    let mut seen = vec![s.current()];
    for _ in 0..10 {
        s.step();
        seen.push(s.current());
    }
    assert!(seen.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(s.current(), 0.05);
    s.step();
    assert_eq!(s.current(), 0.05);
}

#[test]
fn heuristic_keeps_confident_blobs_and_drops_speckle() {
    let (h, w) = (8usize, 8usize);
    let mut data = vec![0.5f32; h * w];
    // 2x2 confident blob
    for &(r, c) in &[(1usize, 1usize), (1, 2), (2, 1), (2, 2)] {
        data[r * w + c] = 0.97;
    }
    // isolated confident speckle, below min area
    data[6 * w + 6] = 0.99;
    let state = ProbMap { h, w, data };
    let cfg = HeuristicConfig::default();
    let mask = heuristic_pseudolabel(&state, &cfg).unwrap();
    assert_eq!(mask.pixels.iter().map(|&p| p as usize).sum::<usize>(), 4);
    assert_eq!(mask.pixels[6 * w + 6], 0);
    assert_eq!(mask.pixels[1 * w + 1], 1);
}

#[test]
fn heuristic_labels_confident_normals_and_skips_ambiguous() {
    let cfg = HeuristicConfig::default();
    // entirely below theta_neg: labeled normal
    let quiet = flat_state(4, 4, 0.02);
    let mask = heuristic_pseudolabel(&quiet, &cfg).unwrap();
    assert!(mask.is_empty_mask());
    // ambiguous mid-range state with nothing confident: skipped
    let murky = flat_state(4, 4, 0.5);
    assert!(heuristic_pseudolabel(&murky, &cfg).is_none());
    // confident speckle only, below min area: still uninformative
    let mut data = vec![0.5f32; 16];
    data[5] = 0.99;
    assert!(heuristic_pseudolabel(&ProbMap { h: 4, w: 4, data }, &cfg).is_none());
}

#[test]
fn heuristic_min_area_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let (h, w) = (12usize, 12usize);
        let data: Vec<f32> = (0..h * w).map(|_| rng.random::<f32>()).collect();
        let cfg = HeuristicConfig { min_area_px: 4, ..HeuristicConfig::default() };
        if let Some(mask) = heuristic_pseudolabel(&ProbMap { h, w, data }, &cfg) {
            for comp in crate::metrics::connected_components(&mask) {
                assert!(comp.len() >= cfg.min_area_px);
            }
        }
    }
}

#[test]
fn ambiguous_fraction_counts_the_band() {
    let state = ProbMap { h: 1, w: 5, data: vec![0.05, 0.5, 0.95, 0.2, 0.8] };
    let frac = ambiguous_fraction(&state, &HeuristicConfig::default());
    assert!((frac - 0.6).abs() < 1e-9);
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let model = PolicyModel::new(8, 8, 2).unwrap();
    let img = flat_image(8, 8, 0.4);
    let state = flat_state(8, 8, 0.6);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_mask(&model, &img, &state, &mut rng).unwrap()
    };
    let (m1, lp1) = draw(7);
    let (m2, lp2) = draw(7);
    assert_eq!(m1.pixels, m2.pixels);
    assert_eq!(lp1.to_bits(), lp2.to_bits());
    let (m3, _) = draw(8);
    assert_ne!(m1.pixels, m3.pixels);
}

#[test]
fn shape_mismatch_is_rejected() {
    let model = PolicyModel::new(8, 8, 0).unwrap();
    let img = flat_image(4, 4, 0.5);
    let state = flat_state(8, 8, 0.5);
    assert!(matches!(
        acceptance_probs(&model, &img, &state),
        Err(PolicyError::ShapeMismatch { .. })
    ));
}

#[test]
fn empty_batch_is_rejected() {
    let mut model = PolicyModel::new(4, 4, 0).unwrap();
    let mut opt = Optimizer::adam(1e-2);
    let mut baseline = EmaBaseline::new(0.9);
    assert!(matches!(
        reinforce_update(&mut model, &mut opt, &[], &mut baseline),
        Err(PolicyError::EmptyBatch)
    ));
}

#[test]
fn positive_advantage_raises_sampled_mask_log_prob() {
    let mut model = PolicyModel::new(4, 4, 3).unwrap();
    let img = flat_image(4, 4, 0.5);
    let state = flat_state(4, 4, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mask, _) = sample_mask(&model, &img, &state, &mut rng).unwrap();
    let before = log_prob(&acceptance_probs(&model, &img, &state).unwrap(), &mask);

    let mut baseline = EmaBaseline::new(0.9);
    baseline.advantage_and_update(0.0);
    let mut opt = Optimizer::sgd(1e-2);
    let batch = vec![Transition {
        image: img.clone(),
        state: state.clone(),
        mask: mask.clone(),
        reward: 1.0,
    }];
    let adv = reinforce_update(&mut model, &mut opt, &batch, &mut baseline).unwrap();
    assert!(adv > 0.0);
    let after = log_prob(&acceptance_probs(&model, &img, &state).unwrap(), &mask);
    assert!(after > before, "log prob {} -> {}", before, after);
}

#[test]
fn baseline_tracks_rewards() {
    let mut b = EmaBaseline::new(0.9);
    assert_eq!(b.advantage_and_update(0.5), 0.0);
    assert_eq!(b.value(), 0.5);
    let adv = b.advantage_and_update(1.0);
    assert!((adv - 0.5).abs() < 1e-12);
    assert!((b.value() - 0.55).abs() < 1e-12);
}

#[test]
fn annealing_reduces_entropy_and_respects_floor() {
    let mut model = PolicyModel::new(8, 8, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = SampleGrid::new(0, 8, 8, (0..64).map(|_| rng.random::<f32>()).collect());
    let state = flat_state(8, 8, 0.5);
    let h1 = mean_entropy(&acceptance_probs(&model, &img, &state).unwrap());
    model.anneal_temperature(0.5, 0.25);
    assert_eq!(model.temperature, 0.5);
    let h2 = mean_entropy(&acceptance_probs(&model, &img, &state).unwrap());
    assert!(h2 < h1, "entropy {} -> {}", h1, h2);
    model.anneal_temperature(0.1, 0.25);
    assert_eq!(model.temperature, 0.25);
}

/// Two-pixel bandit: reward 1 only for mask [1, 0]. REINFORCE should
/// drive the policy to near-deterministic correct labeling.
#[test]
fn two_pixel_bandit_converges() {
    let mut model = PolicyModel::new(1, 2, 17).unwrap();
    let img = flat_image(1, 2, 0.5);
    let state = flat_state(1, 2, 0.5);
    let mut opt = Optimizer::adam(5e-2);
    let mut baseline = EmaBaseline::new(0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let batch: Vec<Transition> = (0..8)
            .map(|_| {
                let (mask, _) = sample_mask(&model, &img, &state, &mut rng).unwrap();
                let reward = f64::from(mask.pixels == [1, 0]);
                Transition { image: img.clone(), state: state.clone(), mask, reward }
            })
            .collect();
        reinforce_update(&mut model, &mut opt, &batch, &mut baseline).unwrap();
    }
    let probs = acceptance_probs(&model, &img, &state).unwrap();
    let p_correct = probs.data[0] as f64 * (1.0 - probs.data[1] as f64);
    assert!(p_correct > 0.9, "P(correct mask) = {} (probs {:?})", p_correct, probs.data);
}

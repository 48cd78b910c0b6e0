//! The reinforced self-training loop and its two comparison baselines.
//!
//! Each iteration draws a fresh batch of unlabeled images, pseudolabels
//! them (epsilon-greedy between the stochastic policy and the confidence
//! heuristic), scores the batch with the frozen expert reward, and
//! updates the policy from the expert decisions. While the batch reward
//! stays below the phase threshold that is all an iteration does
//! (exploration). Once it crosses the threshold the retained pseudolabels
//! join a persistent pseudolabel set (latest mask per image), the
//! segmentation network is fine-tuned on that set, and the policy
//! receives a second update from the resulting change in validation F1
//! (exploitation). When validation F1 stabilizes the loop returns to
//! exploration. The returned segmentation model is the iterate with the
//! best validation F1.

use std::collections::hash_map::Entry;
use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expert_reward::{score, ExpertError, ExpertRewardModel};
use crate::metrics::MetricsRecord;
use crate::numcore::{NumError, Optimizer};
use crate::policy::{
    acceptance_probs, epsilon_greedy_select, heuristic_pseudolabel, sample_from_probs,
    EmaBaseline, EpsilonSchedule, HeuristicConfig, PolicyError, PolicyModel, Transition,
};
use crate::segnet::{eval_on, fine_tune, predict, ProbMap, SegError, SegHyper, SegModel};
use crate::synthdata::{DatasetSplit, MaskGrid, SampleGrid};

#[derive(Debug, Error)]
pub enum RestError {
    #[error("bad config: {0}")]
    BadConfig(&'static str),
    #[error("fold {fold} out of range for {nfolds} folds")]
    BadFold { fold: usize, nfolds: usize },
    #[error("no unlabeled images to pseudolabel")]
    EmptyUnlabeled,
    #[error("fold {0} leaves an empty validation or training set")]
    DegenerateFold(usize),
    #[error("non-finite loss at iteration {iteration}; models reverted to last good state")]
    NanHalt { iteration: usize },
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Exploration,
    Exploitation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardSource {
    Expert,
    Validation,
}

/// Which pseudolabels reach the fine-tuning set once the gate opens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetentionPolicy {
    /// Only pairs the expert reward accepted (the default).
    AcceptedOnly,
    /// The whole sampled batch.
    FullBatch,
}

#[derive(Clone, Debug)]
pub struct RestConfig {
    pub k_iterations: usize,
    /// Gate threshold on the batch expert reward.
    pub tau_phase: f64,
    /// Unlabeled images pseudolabeled per iteration.
    pub batch_size: usize,
    /// Validation-F1 stabilization window and tolerance.
    pub stab_window: usize,
    pub stab_delta: f64,
    /// Policy temperature annealing applied when the gate opens.
    pub anneal_factor: f32,
    pub temperature_min: f32,
    pub policy_lr: f32,
    pub baseline_decay: f64,
    pub epsilon: EpsilonSchedule,
    pub heuristic: HeuristicConfig,
    pub retention: RetentionPolicy,
    /// Lesion-match IoU threshold for sensitivity/FP metrics.
    pub iou_thresh: f64,
    pub seed: u64,
}

impl Default for RestConfig {
    fn default() -> Self {
        RestConfig {
            k_iterations: 12,
            tau_phase: 0.7,
            batch_size: 16,
            stab_window: 3,
            stab_delta: 0.005,
            anneal_factor: 0.9,
            temperature_min: 0.25,
            policy_lr: 1e-2,
            baseline_decay: 0.9,
            epsilon: EpsilonSchedule::default(),
            heuristic: HeuristicConfig::default(),
            retention: RetentionPolicy::AcceptedOnly,
            iou_thresh: 0.25,
            seed: 0,
        }
    }
}

impl RestConfig {
    fn validate(&self) -> Result<(), RestError> {
        if self.k_iterations == 0 {
            return Err(RestError::BadConfig("k_iterations must be >= 1"));
        }
        if self.tau_phase <= 0.0 {
            return Err(RestError::BadConfig("tau_phase must be positive"));
        }
        if self.batch_size == 0 {
            return Err(RestError::BadConfig("batch_size must be >= 1"));
        }
        if self.stab_window < 2 {
            return Err(RestError::BadConfig("stab_window must be >= 2"));
        }
        if self.stab_delta <= 0.0 {
            return Err(RestError::BadConfig("stab_delta must be positive"));
        }
        Ok(())
    }
}

/// Labels identifying one run in the metrics log.
#[derive(Clone, Debug)]
pub struct RunMeta {
    pub run_id: String,
    pub method: String,
    pub labeled_fraction: f64,
    pub repeat: usize,
    pub fold: usize,
}

#[derive(Clone, Debug)]
pub struct IterationLog {
    pub iteration: usize,
    pub phase: Phase,
    /// None for the policy-free baselines.
    pub reward_source: Option<RewardSource>,
    /// Mean expert acceptance of the batch (accepted fraction for baselines).
    pub batch_reward: f64,
    pub val_f1: f64,
    /// Post-minus-pre fine-tune F1; None outside exploitation.
    pub delta_f1: Option<f64>,
    pub epsilon: f64,
    pub temperature: f32,
    pub seg_digest: u64,
    pub record: MetricsRecord,
}

#[derive(Clone, Debug, Default)]
pub struct RestHistory {
    pub iterations: Vec<IterationLog>,
    pub expert_digest_start: u64,
    pub expert_digest_end: u64,
}

impl RestHistory {
    pub fn records(&self) -> Vec<MetricsRecord> {
        self.iterations.iter().map(|l| l.record.clone()).collect()
    }

    pub fn final_val_f1(&self) -> Option<f64> {
        self.iterations.last().map(|l| l.val_f1)
    }
}

/// Split labeled pairs into fold-out validation and the remainder.
pub fn partition_fold(
    split: &DatasetSplit,
    fold: usize,
) -> Result<(Vec<(SampleGrid, MaskGrid)>, Vec<(SampleGrid, MaskGrid)>), RestError> {
    if fold >= split.folds.len() {
        return Err(RestError::BadFold { fold, nfolds: split.folds.len() });
    }
    let val_ids: BTreeSet<u64> = split.folds[fold].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for pair in &split.labeled {
        if val_ids.contains(&pair.0.id) {
            val.push(pair.clone());
        } else {
            train.push(pair.clone());
        }
    }
    if train.is_empty() || val.is_empty() {
        return Err(RestError::DegenerateFold(fold));
    }
    Ok((train, val))
}

fn sample_batch<'a>(
    unlabeled: &'a [SampleGrid],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a SampleGrid> {
    if unlabeled.len() >= n {
        let mut idx: Vec<usize> = (0..unlabeled.len()).collect();
        for i in 0..n {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| &unlabeled[i]).collect()
    } else {
        (0..n).map(|_| &unlabeled[rng.random_range(0..unlabeled.len())]).collect()
    }
}

fn make_record(meta: &RunMeta, iteration: usize, f1: f64, sens: f64, fps: f64, reward: f64) -> MetricsRecord {
    MetricsRecord {
        run_id: meta.run_id.clone(),
        method: meta.method.clone(),
        labeled_fraction: meta.labeled_fraction,
        repeat: meta.repeat,
        fold: meta.fold,
        iteration,
        f1,
        sensitivity: sens,
        fps_per_image: fps,
        reward: Some(reward),
    }
}

/// Run the full loop. `seg` must be trained, `rew` trained and frozen,
/// `pol` freshly initialized. The returned segmentation model is the
/// iterate with the best validation F1, matching the snapshot rule of
/// supervised early stopping.
pub fn run_rest(
    mut seg: SegModel,
    mut pol: PolicyModel,
    rew: &ExpertRewardModel,
    split: &DatasetSplit,
    seg_hyper: &SegHyper,
    cfg: &RestConfig,
    meta: &RunMeta,
) -> Result<(SegModel, PolicyModel, RestHistory), RestError> {
    cfg.validate()?;
    if split.unlabeled.is_empty() {
        return Err(RestError::EmptyUnlabeled);
    }
    let (train_true, val) = partition_fold(split, meta.fold)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::adam(cfg.policy_lr);
    let mut expert_baseline = EmaBaseline::new(cfg.baseline_decay);
    let mut val_baseline = EmaBaseline::new(cfg.baseline_decay);
    let mut epsilon = cfg.epsilon;
    let mut val_window: VecDeque<f64> = VecDeque::new();
    let mut explore_forced = false;

    let mut history = RestHistory {
        iterations: Vec::with_capacity(cfg.k_iterations),
        expert_digest_start: rew.digest(),
        expert_digest_end: rew.digest(),
    };
    // best-by-validation-F1 checkpoint over the run, mirroring the
    // snapshot rule used by supervised early stopping; the incoming
    // model is the first candidate
    let (mut best_f1, _, _) = eval_on(&seg, &val, cfg.iou_thresh)?;
    let mut best_params = Some(seg.params.clone());
    // pseudolabel set P, accumulated across exploitation iterations
    let mut pseudo_set: Vec<(SampleGrid, MaskGrid)> = Vec::new();
    let mut pseudo_index: HashMap<u64, usize> = HashMap::new();

    for iteration in 1..=cfg.k_iterations {
        let batch = sample_batch(&split.unlabeled, cfg.batch_size, &mut rng);
        // pseudolabel entries that survive selection; uninformative
        // heuristic picks are skipped per the dual-threshold rule
        let mut images: Vec<&SampleGrid> = Vec::with_capacity(batch.len());
        let mut states: Vec<ProbMap> = Vec::with_capacity(batch.len());
        let mut masks: Vec<MaskGrid> = Vec::with_capacity(batch.len());
        let mut from_policy: Vec<bool> = Vec::with_capacity(batch.len());
        for img in &batch {
            let state = predict(&seg, img)?;
            if epsilon_greedy_select(epsilon.current(), &mut rng) {
                match heuristic_pseudolabel(&state, &cfg.heuristic) {
                    Some(mask) => {
                        images.push(img);
                        states.push(state);
                        masks.push(mask);
                        from_policy.push(false);
                    }
                    None => continue,
                }
            } else {
                let probs = acceptance_probs(&pol, img, &state)?;
                let mask = sample_from_probs(&probs, &mut rng).0;
                images.push(img);
                states.push(state);
                masks.push(mask);
                from_policy.push(true);
            }
        }

        if images.is_empty() {
            // nothing informative this round; log a quiet exploration step
            epsilon.step();
            let (f1, sens, fps) = eval_on(&seg, &val, cfg.iou_thresh)?;
            if f1 > best_f1 {
                best_f1 = f1;
                best_params = Some(seg.params.clone());
            }
            history.iterations.push(IterationLog {
                iteration,
                phase: Phase::Exploration,
                reward_source: Some(RewardSource::Expert),
                batch_reward: 0.0,
                val_f1: f1,
                delta_f1: None,
                epsilon: epsilon.current(),
                temperature: pol.temperature,
                seg_digest: seg.params.digest(),
                record: make_record(meta, iteration, f1, sens, fps, 0.0),
            });
            continue;
        }

        let mut decisions = Vec::with_capacity(images.len());
        for (state, mask) in states.iter().zip(&masks) {
            decisions.push(score(rew, state, mask)?.0);
        }
        let batch_reward =
            decisions.iter().map(|&d| d as f64).sum::<f64>() / decisions.len() as f64;

        let gate_open = !explore_forced && batch_reward > cfg.tau_phase;
        explore_forced = false;

        // heuristic-sourced entries carry no log-prob and thus no gradient
        let transitions = |rewards: &dyn Fn(usize) -> f64| -> Vec<Transition> {
            images
                .iter()
                .zip(states.iter().zip(&masks))
                .enumerate()
                .filter(|(i, _)| from_policy[*i])
                .map(|(i, (img, (state, mask)))| Transition {
                    image: (*img).clone(),
                    state: state.clone(),
                    mask: mask.clone(),
                    reward: rewards(i),
                })
                .collect()
        };

        // the policy always learns from the expert decisions; exploitation
        // iterations add a second update from the validation reward below
        let expert_t = transitions(&|i| decisions[i] as f64);
        if !expert_t.is_empty() {
            reinforce_update(&mut pol, &mut opt, &expert_t, &mut expert_baseline, iteration)?;
        }

        let (phase, reward_source, delta_f1);
        if gate_open {
            pol.anneal_temperature(cfg.anneal_factor, cfg.temperature_min);
            // fold retained entries into the persistent pseudolabel set,
            // replacing any stale mask for a resampled image
            for (i, (img, mask)) in images.iter().zip(&masks).enumerate() {
                if cfg.retention == RetentionPolicy::FullBatch || decisions[i] == 1 {
                    match pseudo_index.entry(img.id) {
                        Entry::Occupied(e) => {
                            pseudo_set[*e.get()] = ((*img).clone(), mask.clone());
                        }
                        Entry::Vacant(e) => {
                            e.insert(pseudo_set.len());
                            pseudo_set.push(((*img).clone(), mask.clone()));
                        }
                    }
                }
            }
            let (f1_before, _, _) = eval_on(&seg, &val, cfg.iou_thresh)?;
            let ft_hyper = SegHyper { seed: seg_hyper.seed ^ iteration as u64, ..*seg_hyper };
            let f1_after = match fine_tune(&mut seg, &pseudo_set, &train_true, &val, &ft_hyper) {
                Ok(f1) => f1,
                Err(SegError::FineTuneNan { .. }) => {
                    return Err(RestError::NanHalt { iteration });
                }
                Err(e) => return Err(e.into()),
            };
            let d = f1_after - f1_before;
            let batch_t = transitions(&|_| d);
            if !batch_t.is_empty() {
                reinforce_update(&mut pol, &mut opt, &batch_t, &mut val_baseline, iteration)?;
            }
            val_window.push_back(f1_after);
            while val_window.len() > cfg.stab_window {
                val_window.pop_front();
            }
            if val_window.len() == cfg.stab_window {
                let max = val_window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = val_window.iter().cloned().fold(f64::INFINITY, f64::min);
                if max - min < cfg.stab_delta {
                    explore_forced = true;
                    val_window.clear();
                }
            }
            phase = Phase::Exploitation;
            reward_source = Some(RewardSource::Validation);
            delta_f1 = Some(d);
        } else {
            phase = Phase::Exploration;
            reward_source = Some(RewardSource::Expert);
            delta_f1 = None;
        }

        if phase == Phase::Exploration {
            epsilon.step();
        }
        let (f1, sens, fps) = eval_on(&seg, &val, cfg.iou_thresh)?;
        if f1 > best_f1 {
            best_f1 = f1;
            best_params = Some(seg.params.clone());
        }
        let logged_reward = delta_f1.unwrap_or(batch_reward);
        history.iterations.push(IterationLog {
            iteration,
            phase,
            reward_source,
            batch_reward,
            val_f1: f1,
            delta_f1,
            epsilon: epsilon.current(),
            temperature: pol.temperature,
            seg_digest: seg.params.digest(),
            record: make_record(meta, iteration, f1, sens, fps, logged_reward),
        });
    }

    history.expert_digest_end = rew.digest();
    if let Some(params) = best_params {
        seg.params = params;
    }
    Ok((seg, pol, history))
}

fn reinforce_update(
    pol: &mut PolicyModel,
    opt: &mut Optimizer,
    batch: &[Transition],
    baseline: &mut EmaBaseline,
    iteration: usize,
) -> Result<f64, RestError> {
    crate::policy::reinforce_update(pol, opt, batch, baseline).map_err(|e| match e {
        PolicyError::Num(NumError::NonFinite { .. }) => RestError::NanHalt { iteration },
        other => other.into(),
    })
}

/// Dual-threshold acceptance for the policy-free baselines.
#[derive(Clone, Copy, Debug)]
pub struct SelfTrainConfig {
    pub k_iterations: usize,
    pub batch_size: usize,
    pub theta_pos: f32,
    pub theta_neg: f32,
    /// A sample is accepted when at most this fraction of its pixels
    /// falls between the two thresholds.
    pub max_ambiguous_frac: f64,
    pub iou_thresh: f64,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            k_iterations: 12,
            batch_size: 16,
            theta_pos: 0.9,
            theta_neg: 0.1,
            max_ambiguous_frac: 0.05,
            iou_thresh: 0.25,
            seed: 0,
        }
    }
}

fn run_threshold_baseline<F>(
    mut seg: SegModel,
    split: &DatasetSplit,
    seg_hyper: &SegHyper,
    cfg: &SelfTrainConfig,
    meta: &RunMeta,
    mut accept: F,
) -> Result<(SegModel, RestHistory), RestError>
where
    F: FnMut(&ProbMap, &SelfTrainConfig) -> Option<MaskGrid>,
{
    if split.unlabeled.is_empty() {
        return Err(RestError::EmptyUnlabeled);
    }
    let (train_true, val) = partition_fold(split, meta.fold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = RestHistory::default();
    // same best-by-validation-F1 snapshot rule as run_rest
    let (mut best_f1, _, _) = eval_on(&seg, &val, cfg.iou_thresh)?;
    let mut best_params = Some(seg.params.clone());
    // same accumulating pseudolabel set as run_rest
    let mut pseudo_set: Vec<(SampleGrid, MaskGrid)> = Vec::new();
    let mut pseudo_index: HashMap<u64, usize> = HashMap::new();

    for iteration in 1..=cfg.k_iterations {
        let batch = sample_batch(&split.unlabeled, cfg.batch_size, &mut rng);
        let mut n_accepted = 0usize;
        for img in &batch {
            let state = predict(&seg, img)?;
            if let Some(mask) = accept(&state, cfg) {
                n_accepted += 1;
                match pseudo_index.entry(img.id) {
                    Entry::Occupied(e) => pseudo_set[*e.get()] = ((*img).clone(), mask),
                    Entry::Vacant(e) => {
                        e.insert(pseudo_set.len());
                        pseudo_set.push(((*img).clone(), mask));
                    }
                }
            }
        }
        let accepted_frac = n_accepted as f64 / batch.len() as f64;

        let (phase, delta_f1);
        if n_accepted == 0 {
            phase = Phase::Exploration;
            delta_f1 = None;
        } else {
            let (f1_before, _, _) = eval_on(&seg, &val, cfg.iou_thresh)?;
            let ft_hyper = SegHyper { seed: seg_hyper.seed ^ iteration as u64, ..*seg_hyper };
            let f1_after = match fine_tune(&mut seg, &pseudo_set, &train_true, &val, &ft_hyper) {
                Ok(f1) => f1,
                Err(SegError::FineTuneNan { .. }) => {
                    return Err(RestError::NanHalt { iteration });
                }
                Err(e) => return Err(e.into()),
            };
            phase = Phase::Exploitation;
            delta_f1 = Some(f1_after - f1_before);
        }

        let (f1, sens, fps) = eval_on(&seg, &val, cfg.iou_thresh)?;
        if f1 > best_f1 {
            best_f1 = f1;
            best_params = Some(seg.params.clone());
        }
        history.iterations.push(IterationLog {
            iteration,
            phase,
            reward_source: None,
            batch_reward: accepted_frac,
            val_f1: f1,
            delta_f1,
            epsilon: 0.0,
            temperature: 0.0,
            seg_digest: seg.params.digest(),
            record: make_record(meta, iteration, f1, sens, fps, accepted_frac),
        });
    }
    if let Some(params) = best_params {
        seg.params = params;
    }
    Ok((seg, history))
}

/// Confidence-threshold self-training: no size filter, no policy, no
/// expert reward.
pub fn run_standard_self_training(
    seg: SegModel,
    split: &DatasetSplit,
    seg_hyper: &SegHyper,
    cfg: &SelfTrainConfig,
    meta: &RunMeta,
) -> Result<(SegModel, RestHistory), RestError> {
    run_threshold_baseline(seg, split, seg_hyper, cfg, meta, |state, cfg| {
        let n = state.data.len().max(1) as f64;
        let ambiguous = state
            .data
            .iter()
            .filter(|&&p| p > cfg.theta_neg && p < cfg.theta_pos)
            .count() as f64
            / n;
        (ambiguous <= cfg.max_ambiguous_frac).then(|| state.threshold(cfg.theta_pos))
    })
}

/// Fine-tune only on confidently lesion-free images, labeled all
/// background.
pub fn run_pseudonegative_mining(
    seg: SegModel,
    split: &DatasetSplit,
    seg_hyper: &SegHyper,
    cfg: &SelfTrainConfig,
    meta: &RunMeta,
) -> Result<(SegModel, RestHistory), RestError> {
    run_threshold_baseline(seg, split, seg_hyper, cfg, meta, |state, cfg| {
        (state.max() < cfg.theta_neg).then(|| MaskGrid::zeros(state.h, state.w))
    })
}

#[cfg(test)]
mod tests;

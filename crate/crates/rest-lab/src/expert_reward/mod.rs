//! The expert reward function: a small convolutional scorer over the
//! (probability map, candidate label) stack, trained with a max-margin
//! hinge objective on expert demonstrations versus synthesized
//! non-expert labels. Frozen after training; acts as a binary
//! "sufficiently similar to the expert" decision.

mod negatives;

pub use negatives::{synthesize_negatives, NegativeRecipe, RecipeConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numcore::{kaiming_uniform, NumError, Optimizer, ParamSet, Tape, Tensor};
use crate::segnet::{predict, ProbMap, SegError, SegModel};
use crate::synthdata::{MaskGrid, SampleGrid};

pub const IRL_ARCH_ID: &str = "irl-v1";

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("no demonstrations of class {0}")]
    EmptyClass(&'static str),
    #[error("no negative recipes enabled")]
    NoRecipes,
    #[error("state {state:?} and label {label:?} shapes differ")]
    ShapeMismatch { state: (usize, usize), label: (usize, usize) },
    #[error("reward model unusable: held-out accuracy {accuracy:.3} below 0.75")]
    Unusable { accuracy: f64 },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Seg(#[from] SegError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    ExpertPositive,
    SyntheticNegative,
}

/// One (state, label) pair shown to the scorer.
#[derive(Clone, Debug)]
pub struct Demonstration {
    pub state: ProbMap,
    pub label: MaskGrid,
    pub polarity: Polarity,
    /// Recipe used for synthetic negatives; None for expert pairs.
    pub recipe: Option<NegativeRecipe>,
    /// Dataset id of the source image.
    pub source_id: u64,
}

/// Positives per Algorithm's demonstration set: the trained model's
/// output on each labeled image paired with its true mask.
pub fn build_demonstrations(
    model: &SegModel,
    labeled: &[(SampleGrid, MaskGrid)],
) -> Result<Vec<Demonstration>, ExpertError> {
    labeled
        .iter()
        .map(|(img, mask)| {
            Ok(Demonstration {
                state: predict(model, img)?,
                label: mask.clone(),
                polarity: Polarity::ExpertPositive,
                recipe: None,
                source_id: img.id,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct ExpertHyper {
    pub lr: f32,
    pub weight_decay: f32,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Fraction of demonstrations held out for accuracy and threshold calibration.
    pub holdout_frac: f64,
    pub target_accuracy: f64,
    pub abort_accuracy: f64,
    pub seed: u64,
}

impl Default for ExpertHyper {
    fn default() -> Self {
        ExpertHyper {
            lr: 2e-3,
            weight_decay: 1e-4,
            max_epochs: 40,
            batch_size: 8,
            holdout_frac: 0.25,
            target_accuracy: 0.9,
            abort_accuracy: 0.75,
            seed: 0,
        }
    }
}

const E1: usize = 8;
const E2: usize = 16;

/// Frozen binary similarity classifier. No mutating API after training.
#[derive(Clone, Debug)]
pub struct ExpertRewardModel {
    params: ParamSet,
    decision_threshold: f32,
    holdout_accuracy: f64,
}

impl ExpertRewardModel {
    fn init(seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        set.push("c1.w", kaiming_uniform(vec![E1, 2, 3, 3], 18, &mut rng));
        set.push("c1.b", Tensor::zeros(vec![E1]));
        set.push("c2.w", kaiming_uniform(vec![E2, E1, 3, 3], E1 * 9, &mut rng));
        set.push("c2.b", Tensor::zeros(vec![E2]));
        set.push("c3.w", kaiming_uniform(vec![1, E2, 3, 3], E2 * 9, &mut rng));
        set.push("c3.b", Tensor::zeros(vec![1]));
        set
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn decision_threshold(&self) -> f32 {
        self.decision_threshold
    }

    pub fn holdout_accuracy(&self) -> f64 {
        self.holdout_accuracy
    }

    pub fn digest(&self) -> u64 {
        self.params.digest()
    }

    pub fn from_parts(params: ParamSet, decision_threshold: f32) -> Self {
        ExpertRewardModel { params, decision_threshold, holdout_accuracy: f64::NAN }
    }
}

/// Raw margin score: 3 conv layers with 2x pooling between, global mean.
fn raw_score(params: &ParamSet, state: &ProbMap, label: &MaskGrid) -> Result<f32, NumError> {
    let (h, w) = (state.h, state.w);
    let mut stack = Vec::with_capacity(2 * h * w);
    stack.extend_from_slice(&state.data);
    stack.extend(label.pixels.iter().map(|&p| p as f32));
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 2, h, w], stack)?)?;
    let s = score_forward(&mut tape, params, x)?;
    Ok(tape.value(s).data()[0])
}

fn score_forward(
    tape: &mut Tape,
    params: &ParamSet,
    x: crate::numcore::TensorRef,
) -> Result<crate::numcore::TensorRef, NumError> {
    let p = tape.params(params)?;
    let y = tape.conv2d(x, p[0], p[1])?;
    let y = tape.relu(y)?;
    let y = tape.max_pool2(y)?;
    let y = tape.conv2d(y, p[2], p[3])?;
    let y = tape.relu(y)?;
    let y = tape.max_pool2(y)?;
    let y = tape.conv2d(y, p[4], p[5])?;
    tape.mean(y)
}

/// Binary decision plus the raw margin score. Pure function.
pub fn score(
    model: &ExpertRewardModel,
    state: &ProbMap,
    label: &MaskGrid,
) -> Result<(u8, f32), ExpertError> {
    if state.h != label.h || state.w != label.w {
        return Err(ExpertError::ShapeMismatch {
            state: (state.h, state.w),
            label: (label.h, label.w),
        });
    }
    let s = raw_score(&model.params, state, label)?;
    Ok((u8::from(s >= model.decision_threshold), s))
}

/// Mean binary score over a pseudolabel set.
pub fn batch_reward(
    model: &ExpertRewardModel,
    pairs: &[(&ProbMap, &MaskGrid)],
) -> Result<f64, ExpertError> {
    if pairs.is_empty() {
        return Err(ExpertError::EmptyClass("pairs"));
    }
    let mut acc = 0u64;
    for (state, label) in pairs {
        acc += score(model, state, label)?.0 as u64;
    }
    Ok(acc as f64 / pairs.len() as f64)
}

/// Calibrate the decision threshold on held-out scores to balance
/// false-accept and false-reject rates, then report accuracy.
fn calibrate(pos_scores: &[f32], neg_scores: &[f32]) -> (f32, f64) {
    let mut candidates: Vec<f32> = pos_scores.iter().chain(neg_scores).copied().collect();
    candidates.sort_by(f32::total_cmp);
    candidates.dedup();
    let mut thresholds = vec![0.0f32];
    for w in candidates.windows(2) {
        thresholds.push((w[0] + w[1]) / 2.0);
    }
    if let (Some(&lo), Some(&hi)) = (candidates.first(), candidates.last()) {
        thresholds.push(lo - 0.1);
        thresholds.push(hi + 0.1);
    }
    let mut best = (0.0f32, f64::INFINITY, 0.0f64);
    for &t in &thresholds {
        let frr = pos_scores.iter().filter(|&&s| s < t).count() as f64 / pos_scores.len().max(1) as f64;
        let far = neg_scores.iter().filter(|&&s| s >= t).count() as f64 / neg_scores.len().max(1) as f64;
        let gap = (far - frr).abs();
        let acc = 1.0 - (far * neg_scores.len() as f64 + frr * pos_scores.len() as f64)
            / (pos_scores.len() + neg_scores.len()) as f64;
        // prefer balanced error rates, break ties on accuracy
        if gap < best.1 - 1e-12 || (gap <= best.1 + 1e-12 && acc > best.2) {
            best = (t, gap, acc);
        }
    }
    (best.0, best.2)
}

/// Train the scorer with hinge loss + L2 until the held-out accuracy
/// target is reached or the epoch budget runs out. The returned model is
/// frozen; training below the abort accuracy fails.
pub fn train_expert_reward(
    positives: &[Demonstration],
    negatives: &[Demonstration],
    hyper: &ExpertHyper,
) -> Result<ExpertRewardModel, ExpertError> {
    if positives.is_empty() {
        return Err(ExpertError::EmptyClass("positive"));
    }
    if negatives.is_empty() {
        return Err(ExpertError::EmptyClass("negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);

    let split_class = |demos: &[Demonstration], rng: &mut ChaCha8Rng| {
        let mut order: Vec<usize> = (0..demos.len()).collect();
        order.shuffle(rng);
        let n_hold = ((demos.len() as f64 * hyper.holdout_frac).round() as usize)
            .clamp(1, demos.len().saturating_sub(1).max(1));
        let hold: Vec<usize> = order[..n_hold].to_vec();
        let train: Vec<usize> = order[n_hold..].to_vec();
        (train, hold)
    };
    let (pos_train, pos_hold) = split_class(positives, &mut rng);
    let (neg_train, neg_hold) = split_class(negatives, &mut rng);

    let mut all_train: Vec<(&Demonstration, f32)> = pos_train
        .iter()
        .map(|&i| (&positives[i], 1.0f32))
        .chain(neg_train.iter().map(|&i| (&negatives[i], -1.0f32)))
        .collect();

    let mut params = ExpertRewardModel::init(hyper.seed);
    let mut opt = Optimizer::adam(hyper.lr).with_weight_decay(hyper.weight_decay);

    let mut best = (f64::NEG_INFINITY, params.clone(), 0.0f32);
    for _epoch in 0..hyper.max_epochs {
        all_train.shuffle(&mut rng);
        for chunk in all_train.chunks(hyper.batch_size.max(1)) {
            // accumulate hinge gradients over the minibatch, then step once
            for (demo, y) in chunk {
                let (h, w) = (demo.state.h, demo.state.w);
                let mut stack = Vec::with_capacity(2 * h * w);
                stack.extend_from_slice(&demo.state.data);
                stack.extend(demo.label.pixels.iter().map(|&p| p as f32));
                let mut tape = Tape::new();
                let x = tape.leaf(Tensor::new(vec![1, 2, h, w], stack)?)?;
                let s = score_forward(&mut tape, &params, x)?;
                let yv = tape.leaf(Tensor::scalar(*y))?;
                let l = tape.hinge(s, yv)?;
                let loss = tape.mul_scalar(l, 1.0 / chunk.len() as f32)?;
                tape.backward(loss)?;
                tape.apply_grads(&mut params)?;
            }
            opt.step(&mut params)?;
        }

        let hold_scores = |idx: &[usize], demos: &[Demonstration]| -> Result<Vec<f32>, ExpertError> {
            idx.iter().map(|&i| Ok(raw_score(&params, &demos[i].state, &demos[i].label)?)).collect()
        };
        let ps = hold_scores(&pos_hold, positives)?;
        let ns = hold_scores(&neg_hold, negatives)?;
        let (thresh, acc) = calibrate(&ps, &ns);
        if acc > best.0 {
            best = (acc, params.clone(), thresh);
        }
        if acc >= hyper.target_accuracy {
            break;
        }
    }

    let (accuracy, params, decision_threshold) = best;
    if accuracy < hyper.abort_accuracy {
        return Err(ExpertError::Unusable { accuracy });
    }
    Ok(ExpertRewardModel { params, decision_threshold, holdout_accuracy: accuracy })
}

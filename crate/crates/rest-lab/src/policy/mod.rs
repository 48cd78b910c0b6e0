//! The pseudolabeling policy: a stochastic per-pixel labeler over the
//! environment state (image plus current probability map). Trained with
//! REINFORCE against the expert reward and, later, validation accuracy.
//! An epsilon-greedy switch mixes policy samples with a confidence
//! heuristic during exploration.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numcore::{kaiming_uniform, NumError, Optimizer, ParamSet, Tape, Tensor, TensorRef};
use crate::segnet::ProbMap;
use crate::synthdata::{MaskGrid, SampleGrid};

pub const POLICY_ARCH_ID: &str = "pol-v1";

const P1: usize = 8;
const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("image {image:?}, state {state:?} and policy {policy:?} shapes must agree")]
    ShapeMismatch {
        image: (usize, usize),
        state: (usize, usize),
        policy: (usize, usize),
    },
    #[error("empty transition batch")]
    EmptyBatch,
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Fully convolutional head over a 2-channel state; logits are divided
/// by a temperature before the Bernoulli acceptance probability.
#[derive(Clone, Debug)]
pub struct PolicyModel {
    pub params: ParamSet,
    pub temperature: f32,
    pub h: usize,
    pub w: usize,
}

impl PolicyModel {
    pub fn new(h: usize, w: usize, seed: u64) -> Result<Self, PolicyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.push("p1.w", kaiming_uniform(vec![P1, 2, 3, 3], 18, &mut rng));
        params.push("p1.b", Tensor::zeros(vec![P1]));
        params.push("p2.w", kaiming_uniform(vec![P1, P1, 3, 3], P1 * 9, &mut rng));
        params.push("p2.b", Tensor::zeros(vec![P1]));
        params.push("head.w", kaiming_uniform(vec![1, P1, 3, 3], P1 * 9, &mut rng));
        params.push("head.b", Tensor::zeros(vec![1]));
        Ok(PolicyModel { params, temperature: 1.0, h, w })
    }

    pub fn digest(&self) -> u64 {
        self.params.digest()
    }

    /// Multiply the temperature by `factor`, clamped below at `t_min`.
    pub fn anneal_temperature(&mut self, factor: f32, t_min: f32) {
        self.temperature = (self.temperature * factor).max(t_min);
    }
}

fn stack_input(model: &PolicyModel, image: &SampleGrid, state: &ProbMap) -> Result<Tensor, PolicyError> {
    if image.h != model.h || image.w != model.w || state.h != model.h || state.w != model.w {
        return Err(PolicyError::ShapeMismatch {
            image: (image.h, image.w),
            state: (state.h, state.w),
            policy: (model.h, model.w),
        });
    }
    let mut data = Vec::with_capacity(2 * model.h * model.w);
    data.extend_from_slice(&image.pixels);
    data.extend_from_slice(&state.data);
    Ok(Tensor::new(vec![1, 2, model.h, model.w], data)?)
}

/// Acceptance probabilities sigmoid(logits / T) on the tape.
fn probs_forward(
    tape: &mut Tape,
    params: &ParamSet,
    temperature: f32,
    x: TensorRef,
) -> Result<TensorRef, NumError> {
    let p = tape.params(params)?;
    let y = tape.conv2d(x, p[0], p[1])?;
    let y = tape.relu(y)?;
    let y = tape.conv2d(y, p[2], p[3])?;
    let y = tape.relu(y)?;
    let y = tape.conv2d(y, p[4], p[5])?;
    let y = tape.mul_scalar(y, 1.0 / temperature)?;
    tape.sigmoid(y)
}

/// Per-pixel probability that the policy labels a pixel foreground.
pub fn acceptance_probs(
    model: &PolicyModel,
    image: &SampleGrid,
    state: &ProbMap,
) -> Result<ProbMap, PolicyError> {
    let x = stack_input(model, image, state)?;
    let mut tape = Tape::new();
    let xr = tape.leaf(x)?;
    let pr = probs_forward(&mut tape, &model.params, model.temperature, xr)?;
    Ok(ProbMap { h: model.h, w: model.w, data: tape.value(pr).data().to_vec() })
}

/// Exact log-probability of a mask under independent per-pixel Bernoullis.
pub fn log_prob(probs: &ProbMap, mask: &MaskGrid) -> f64 {
    probs
        .data
        .iter()
        .zip(&mask.pixels)
        .map(|(&p, &m)| {
            let p = (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
            if m == 1 { p.ln() } else { (1.0 - p).ln() }
        })
        .sum()
}

/// Draw one mask from per-pixel acceptance probabilities.
pub fn sample_from_probs(probs: &ProbMap, rng: &mut ChaCha8Rng) -> (MaskGrid, f64) {
    let pixels: Vec<u8> = probs
        .data
        .iter()
        .map(|&p| u8::from(rng.random::<f32>() < p))
        .collect();
    let mask = MaskGrid::new(probs.h, probs.w, pixels);
    let lp = log_prob(probs, &mask);
    (mask, lp)
}

/// Sample a pseudolabel for one image and report its log-probability.
pub fn sample_mask(
    model: &PolicyModel,
    image: &SampleGrid,
    state: &ProbMap,
    rng: &mut ChaCha8Rng,
) -> Result<(MaskGrid, f64), PolicyError> {
    let probs = acceptance_probs(model, image, state)?;
    Ok(sample_from_probs(&probs, rng))
}

/// Mean per-pixel Bernoulli entropy (nats) of the policy on one input.
pub fn mean_entropy(probs: &ProbMap) -> f64 {
    let n = probs.data.len().max(1) as f64;
    probs
        .data
        .iter()
        .map(|&p| {
            let p = (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Confidence thresholds for the non-learned pseudolabel heuristic.
#[derive(Clone, Copy, Debug)]
pub struct HeuristicConfig {
    pub theta_pos: f32,
    pub theta_neg: f32,
    /// Connected foreground components smaller than this are dropped.
    pub min_area_px: usize,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig { theta_pos: 0.9, theta_neg: 0.1, min_area_px: 3 }
    }
}

/// Confidence-threshold pseudolabeler. A state entirely below theta_neg
/// is labeled normal (all zero). Otherwise the label is the union of
/// confident components at or above theta_pos, minus speckle below
/// min_area_px; if nothing confident survives, the sample is
/// uninformative and None is returned so the caller can skip it.
pub fn heuristic_pseudolabel(state: &ProbMap, cfg: &HeuristicConfig) -> Option<MaskGrid> {
    if state.max() < cfg.theta_neg {
        return Some(MaskGrid::zeros(state.h, state.w));
    }
    let mut mask = state.threshold(cfg.theta_pos);
    for comp in crate::metrics::connected_components(&mask) {
        if comp.len() < cfg.min_area_px {
            for idx in comp {
                mask.pixels[idx] = 0;
            }
        }
    }
    if mask.is_empty_mask() {
        None
    } else {
        Some(mask)
    }
}

/// Fraction of pixels in the ambiguous confidence band (theta_neg, theta_pos).
pub fn ambiguous_fraction(state: &ProbMap, cfg: &HeuristicConfig) -> f64 {
    let n = state.data.len().max(1) as f64;
    state
        .data
        .iter()
        .filter(|&&p| p > cfg.theta_neg && p < cfg.theta_pos)
        .count() as f64
        / n
}

/// Multiplicative-decay exploration schedule with a floor.
#[derive(Clone, Copy, Debug)]
pub struct EpsilonSchedule {
    pub epsilon: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { epsilon: 0.9, decay: 0.95, floor: 0.05 }
    }
}

impl EpsilonSchedule {
    pub fn current(&self) -> f64 {
        self.epsilon
    }

    pub fn step(&mut self) {
        self.epsilon = (self.epsilon * self.decay).max(self.floor);
    }
}

/// True: take the heuristic action (probability epsilon). False: take
/// the stochastic policy sample.
pub fn epsilon_greedy_select(epsilon: f64, rng: &mut ChaCha8Rng) -> bool {
    rng.random::<f64>() < epsilon
}

/// Exponential moving average reward baseline for variance reduction.
#[derive(Clone, Copy, Debug)]
pub struct EmaBaseline {
    value: f64,
    decay: f64,
    initialized: bool,
}

impl EmaBaseline {
    pub fn new(decay: f64) -> Self {
        EmaBaseline { value: 0.0, decay, initialized: false }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Baseline used for the current batch, then folded toward `reward`.
    pub fn advantage_and_update(&mut self, reward: f64) -> f64 {
        let baseline = if self.initialized { self.value } else { reward };
        self.value = if self.initialized {
            self.decay * self.value + (1.0 - self.decay) * reward
        } else {
            reward
        };
        self.initialized = true;
        reward - baseline
    }
}

/// One sampled pseudolabel with the reward it earned.
#[derive(Clone, Debug)]
pub struct Transition {
    pub image: SampleGrid,
    pub state: ProbMap,
    pub mask: MaskGrid,
    pub reward: f64,
}

/// One REINFORCE step: minimize mean advantage * (-log pi(mask | state)),
/// where -log pi is the summed Bernoulli cross entropy of the sampled
/// mask under the acceptance probabilities. Returns the batch advantage.
pub fn reinforce_update(
    model: &mut PolicyModel,
    opt: &mut Optimizer,
    batch: &[Transition],
    baseline: &mut EmaBaseline,
) -> Result<f64, PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let mean_reward = batch.iter().map(|t| t.reward).sum::<f64>() / batch.len() as f64;
    let advantage = baseline.advantage_and_update(mean_reward);
    for t in batch {
        let x = stack_input(model, &t.image, &t.state)?;
        let target = Tensor::new(
            vec![1, 1, model.h, model.w],
            t.mask.pixels.iter().map(|&m| m as f32).collect(),
        )?;
        let mut tape = Tape::new();
        let xr = tape.leaf(x)?;
        let probs = probs_forward(&mut tape, &model.params, model.temperature, xr)?;
        let tr = tape.leaf(target)?;
        let nll = tape.bce(probs, tr)?;
        let nll = tape.sum(nll)?;
        let per_sample = (t.reward - (mean_reward - advantage)) as f32 / batch.len() as f32;
        let loss = tape.mul_scalar(nll, per_sample)?;
        tape.backward(loss)?;
        tape.apply_grads(&mut model.params)?;
    }
    opt.step(&mut model.params)?;
    Ok(advantage)
}

#[cfg(test)]
mod tests;

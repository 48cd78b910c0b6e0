//! The environment: a micro U-Net style encoder/decoder (3 levels,
//! widths 6/12/24, skip connections) with supervised training, inference
//! and pseudolabel fine-tuning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::{lesion_metrics, ConfusionCounts, LesionMatch, MetricsError};
use crate::numcore::{kaiming_uniform, NumError, Optimizer, ParamSet, Tape, Tensor, TensorRef};
use crate::synthdata::{DatasetSplit, MaskGrid, SampleGrid};

pub const SEG_ARCH_ID: &str = "seg-v1";

#[derive(Debug, Error)]
pub enum SegError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty pseudolabel set")]
    EmptyPseudoSet,
    #[error("empty validation set")]
    EmptyValidationSet,
    #[error("fold index {fold} out of range for {nfolds} folds")]
    BadFold { fold: usize, nfolds: usize },
    #[error("image {got:?} does not match model input {expect:?}")]
    ShapeMismatch { got: (usize, usize), expect: (usize, usize) },
    #[error("image sides must be divisible by 4, got {0}x{1}")]
    BadImageSize(usize, usize),
    #[error("non-finite loss at epoch {epoch}; last finite loss {last_finite}")]
    NanLoss { epoch: usize, last_finite: f32 },
    #[error("non-finite loss during fine-tune at step {step}; parameters reverted")]
    FineTuneNan { step: usize },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Segmentation probability map; values strictly inside (0,1).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl ProbMap {
    pub fn threshold(&self, t: f32) -> MaskGrid {
        MaskGrid::new(self.h, self.w, self.data.iter().map(|&p| u8::from(p >= t)).collect())
    }

    pub fn max(&self) -> f32 {
        self.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn mean(&self) -> f32 {
        self.data.iter().sum::<f32>() / self.data.len() as f32
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SegHyper {
    pub lr: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stop patience in epochs of non-improving validation F1.
    pub patience: usize,
    pub fine_tune_lr_scale: f32,
    pub fine_tune_steps: usize,
    pub seed: u64,
}

impl Default for SegHyper {
    fn default() -> Self {
        SegHyper {
            lr: 2e-3,
            batch_size: 8,
            max_epochs: 30,
            patience: 10,
            fine_tune_lr_scale: 0.1,
            fine_tune_steps: 15,
            seed: 0,
        }
    }
}

/// Channel widths per level; fixed for the "seg-v1" architecture id.
const C1: usize = 6;
const C2: usize = 12;
const C3: usize = 24;

#[derive(Clone, Debug)]
pub struct SegModel {
    pub params: ParamSet,
    pub input_h: usize,
    pub input_w: usize,
}

fn push_conv(set: &mut ParamSet, name: &str, cout: usize, cin: usize, rng: &mut ChaCha8Rng, scale: f32) {
    let fan_in = cin * 9;
    let mut w = kaiming_uniform(vec![cout, cin, 3, 3], fan_in, rng);
    if scale != 1.0 {
        for v in w.data_mut() {
            *v *= scale;
        }
    }
    set.push(format!("{name}.w"), w);
    set.push(format!("{name}.b"), Tensor::zeros(vec![cout]));
}

impl SegModel {
    pub fn new(input_h: usize, input_w: usize, seed: u64) -> Result<Self, SegError> {
        if input_h % 4 != 0 || input_w % 4 != 0 {
            return Err(SegError::BadImageSize(input_h, input_w));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        push_conv(&mut set, "enc1a", C1, 1, &mut rng, 1.0);
        push_conv(&mut set, "enc1b", C1, C1, &mut rng, 1.0);
        push_conv(&mut set, "enc2a", C2, C1, &mut rng, 1.0);
        push_conv(&mut set, "enc2b", C2, C2, &mut rng, 1.0);
        push_conv(&mut set, "bot_a", C3, C2, &mut rng, 1.0);
        push_conv(&mut set, "bot_b", C3, C3, &mut rng, 1.0);
        push_conv(&mut set, "dec2a", C2, C3 + C2, &mut rng, 1.0);
        push_conv(&mut set, "dec2b", C2, C2, &mut rng, 1.0);
        push_conv(&mut set, "dec1a", C1, C2 + C1, &mut rng, 1.0);
        push_conv(&mut set, "dec1b", C1, C1, &mut rng, 1.0);
        // small head init keeps the untrained output near 0.5
        push_conv(&mut set, "head", 1, C1, &mut rng, 0.1);
        Ok(SegModel { params: set, input_h, input_w })
    }

    pub fn from_params(params: ParamSet, input_h: usize, input_w: usize) -> Self {
        SegModel { params, input_h, input_w }
    }

    /// Forward to per-pixel probabilities; `x` is [N,1,H,W].
    pub fn forward(&self, tape: &mut Tape, x: TensorRef) -> Result<TensorRef, NumError> {
        let p = tape.params(&self.params)?;
        let conv = |tape: &mut Tape, x, i: usize| -> Result<TensorRef, NumError> {
            let y = tape.conv2d(x, p[2 * i], p[2 * i + 1])?;
            tape.relu(y)
        };
        let e1 = conv(tape, x, 0)?;
        let e1 = conv(tape, e1, 1)?;
        let p1 = tape.max_pool2(e1)?;
        let e2 = conv(tape, p1, 2)?;
        let e2 = conv(tape, e2, 3)?;
        let p2 = tape.max_pool2(e2)?;
        let b = conv(tape, p2, 4)?;
        let b = conv(tape, b, 5)?;
        let u2 = tape.upsample2(b)?;
        let c2 = tape.concat_c(u2, e2)?;
        let d2 = conv(tape, c2, 6)?;
        let d2 = conv(tape, d2, 7)?;
        let u1 = tape.upsample2(d2)?;
        let c1 = tape.concat_c(u1, e1)?;
        let d1 = conv(tape, c1, 8)?;
        let d1 = conv(tape, d1, 9)?;
        let logits = tape.conv2d(d1, p[20], p[21])?;
        tape.sigmoid(logits)
    }
}

/// Deterministic inference; output values strictly in (0,1).
pub fn predict(model: &SegModel, image: &SampleGrid) -> Result<ProbMap, SegError> {
    if image.h != model.input_h || image.w != model.input_w {
        return Err(SegError::ShapeMismatch {
            got: (image.h, image.w),
            expect: (model.input_h, model.input_w),
        });
    }
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 1, image.h, image.w], image.pixels.clone())?)?;
    let probs = model.forward(&mut tape, x)?;
    let data = tape
        .value(probs)
        .data()
        .iter()
        .map(|&p| p.clamp(1e-6, 1.0 - 1e-6))
        .collect();
    Ok(ProbMap { h: image.h, w: image.w, data })
}

fn batch_tensors(pairs: &[&(SampleGrid, MaskGrid)]) -> (Tensor, Tensor) {
    let (h, w) = (pairs[0].0.h, pairs[0].0.w);
    let n = pairs.len();
    let mut xs = Vec::with_capacity(n * h * w);
    let mut ys = Vec::with_capacity(n * h * w);
    for (img, mask) in pairs {
        xs.extend_from_slice(&img.pixels);
        ys.extend(mask.pixels.iter().map(|&p| p as f32));
    }
    (
        Tensor::new(vec![n, 1, h, w], xs).expect("consistent"),
        Tensor::new(vec![n, 1, h, w], ys).expect("consistent"),
    )
}

/// One BCE training step over a minibatch; returns the loss.
fn train_step(
    model: &mut SegModel,
    opt: &mut Optimizer,
    batch: &[&(SampleGrid, MaskGrid)],
) -> Result<f32, NumError> {
    let (x, y) = batch_tensors(batch);
    let mut tape = Tape::new();
    let xr = tape.leaf(x)?;
    let yr = tape.leaf(y)?;
    let probs = model.forward(&mut tape, xr)?;
    let l = tape.bce(probs, yr)?;
    let loss = tape.mean(l)?;
    let loss_v = tape.value(loss).data()[0];
    tape.backward(loss)?;
    tape.apply_grads(&mut model.params)?;
    opt.step(&mut model.params)?;
    Ok(loss_v)
}

/// Aggregate (micro) evaluation of a model over labeled pairs:
/// pixel F1 from pooled confusion counts, lesion sensitivity over all
/// ground-truth lesions, and mean false positives per image.
pub fn eval_on(
    model: &SegModel,
    pairs: &[(SampleGrid, MaskGrid)],
    iou_thresh: f64,
) -> Result<(f64, f64, f64), SegError> {
    assert!(!pairs.is_empty());
    let mut conf = ConfusionCounts::default();
    let mut lesions = LesionMatch::default();
    for (img, gt) in pairs {
        let pred = predict(model, img)?.threshold(0.5);
        conf.merge(&ConfusionCounts::count(&pred, gt)?);
        lesions.merge(&lesion_metrics(&pred, gt, iou_thresh)?);
    }
    let fps = lesions.false_positives as f64 / pairs.len() as f64;
    Ok((conf.f1(), lesions.sensitivity(), fps))
}

#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f32,
    pub val_f1: f64,
}

/// Train on all labeled pairs outside `fold`; validate on `fold`.
/// Early-stops on non-improving validation F1 and returns the best model.
pub fn train_supervised(
    split: &DatasetSplit,
    fold: usize,
    hyper: &SegHyper,
) -> Result<(SegModel, Vec<EpochStats>), SegError> {
    if fold >= split.folds.len() {
        return Err(SegError::BadFold { fold, nfolds: split.folds.len() });
    }
    let val_ids: std::collections::BTreeSet<u64> = split.folds[fold].iter().copied().collect();
    let train: Vec<&(SampleGrid, MaskGrid)> =
        split.labeled.iter().filter(|(img, _)| !val_ids.contains(&img.id)).collect();
    let val: Vec<(SampleGrid, MaskGrid)> =
        split.labeled.iter().filter(|(img, _)| val_ids.contains(&img.id)).cloned().collect();
    if train.is_empty() {
        return Err(SegError::EmptyTrainingSet);
    }
    if val.is_empty() {
        return Err(SegError::EmptyValidationSet);
    }
    let (h, w) = (train[0].0.h, train[0].0.w);
    let mut model = SegModel::new(h, w, hyper.seed)?;
    let mut opt = Optimizer::adam(hyper.lr);
    let mut curve = Vec::new();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;
    let mut last_finite = f32::NAN;

    for epoch in 0..hyper.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(hyper.seed ^ (epoch as u64).wrapping_mul(0x9e37)));
        let mut losses = Vec::new();
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch: Vec<&(SampleGrid, MaskGrid)> = chunk.iter().map(|&i| train[i]).collect();
            let loss = train_step(&mut model, &mut opt, &batch).map_err(|e| match e {
                NumError::NonFinite { .. } => SegError::NanLoss { epoch, last_finite },
                other => SegError::Num(other),
            })?;
            if !loss.is_finite() {
                return Err(SegError::NanLoss { epoch, last_finite });
            }
            last_finite = loss;
            losses.push(loss);
        }
        let train_loss = losses.iter().sum::<f32>() / losses.len() as f32;
        let (val_f1, _, _) = eval_on(&model, &val, 0.25)?;
        curve.push(EpochStats { epoch, train_loss, val_f1 });
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }
    model.params = best_params;
    Ok((model, curve))
}

/// Fine-tune on a pseudolabel batch, mixing pseudolabels 1:1 with true
/// labeled pairs, at a reduced learning rate for a small number of steps.
/// Returns validation pixel F1 after the update. A non-finite loss
/// reverts the parameters before returning the error.
pub fn fine_tune(
    model: &mut SegModel,
    pseudo: &[(SampleGrid, MaskGrid)],
    train_true: &[(SampleGrid, MaskGrid)],
    val: &[(SampleGrid, MaskGrid)],
    hyper: &SegHyper,
) -> Result<f64, SegError> {
    if pseudo.is_empty() {
        return Err(SegError::EmptyPseudoSet);
    }
    if val.is_empty() {
        return Err(SegError::EmptyValidationSet);
    }
    let snapshot = model.params.clone();
    let mut opt = Optimizer::adam(hyper.lr * hyper.fine_tune_lr_scale);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_f17e);
    let half = (hyper.batch_size / 2).max(1);
    for step in 0..hyper.fine_tune_steps {
        use rand::Rng;
        let mut batch: Vec<&(SampleGrid, MaskGrid)> = Vec::with_capacity(hyper.batch_size);
        for _ in 0..half {
            batch.push(&pseudo[rng.random_range(0..pseudo.len())]);
        }
        if !train_true.is_empty() {
            for _ in 0..half {
                batch.push(&train_true[rng.random_range(0..train_true.len())]);
            }
        }
        let res = train_step(model, &mut opt, &batch);
        let bad = match &res {
            Ok(l) => !l.is_finite(),
            Err(NumError::NonFinite { .. }) => true,
            Err(_) => false,
        };
        if bad {
            model.params = snapshot;
            return Err(SegError::FineTuneNan { step });
        }
        res?;
    }
    let (f1, _, _) = eval_on(model, val, 0.25)?;
    Ok(f1)
}

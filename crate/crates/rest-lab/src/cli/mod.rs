//! Experiment front-end: config parsing, dataset persistence, one
//! subcommand per pipeline stage, and report generation.

mod config;
pub mod report;

pub use config::{
    DatasetCfg, ExperimentConfig, ExpertCfg, OutputCfg, PolicyCfg, ProtocolCfg, RestCfg, SegCfg,
};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::expert_reward::{
    build_demonstrations, synthesize_negatives, train_expert_reward, ExpertError, ExpertHyper,
    ExpertRewardModel, RecipeConfig, IRL_ARCH_ID,
};
use crate::metrics::{csv, MetricsError, MetricsRecord};
use crate::numcore::{checkpoint, NumError};
use crate::policy::{EpsilonSchedule, HeuristicConfig, PolicyModel};
use crate::rest_loop::{
    partition_fold, run_pseudonegative_mining, run_rest, run_standard_self_training, RestConfig,
    RestError, RunMeta, SelfTrainConfig,
};
use crate::segnet::{eval_on, train_supervised, SegError, SegHyper, SegModel, SEG_ARCH_ID};
use crate::synthdata::{
    dataset_digest, generate_dataset, make_folds, manifest, pgm, DatasetSplit, ShapeConfig,
    SynthError,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Failure category; the number is the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: configuration or usage problems.
    Config(String),
    /// Exit 3: missing or malformed data artifacts.
    Data(String),
    /// Exit 4: numerical aborts (NaN, unusable reward model).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m)) = self;
        write!(f, "error[{}]: {}", self.code(), m.replace('\n', " "))
    }
}

impl std::error::Error for CliError {}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NumError> for CliError {
    fn from(e: NumError) -> Self {
        match e {
            NumError::Io { .. } | NumError::Checkpoint { .. } => CliError::Data(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<SegError> for CliError {
    fn from(e: SegError) -> Self {
        match e {
            SegError::NanLoss { .. } | SegError::FineTuneNan { .. } => {
                CliError::Numeric(e.to_string())
            }
            SegError::Num(n) => n.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ExpertError> for CliError {
    fn from(e: ExpertError) -> Self {
        match e {
            ExpertError::Unusable { .. } => CliError::Numeric(e.to_string()),
            ExpertError::Num(n) => n.into(),
            ExpertError::Seg(s) => s.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<RestError> for CliError {
    fn from(e: RestError) -> Self {
        match e {
            RestError::NanHalt { .. } => CliError::Numeric(e.to_string()),
            RestError::BadConfig(_) => CliError::Config(e.to_string()),
            RestError::Seg(s) => s.into(),
            RestError::Expert(x) => x.into(),
            RestError::Policy(p) => CliError::Numeric(p.to_string()),
            RestError::Num(n) => n.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

/// Output directory: REST_LAB_OUT overrides the config value.
pub fn resolve_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var("REST_LAB_OUT") {
        Ok(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&cfg.output.dir),
    }
}

fn fnv64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stable run identifier: hash of config text, method, and fraction.
pub fn run_id(cfg: &ExperimentConfig, method: &str, fraction: f64) -> String {
    let mut bytes: Vec<u8> = cfg.serialize().into_bytes();
    bytes.extend_from_slice(method.as_bytes());
    bytes.extend_from_slice(&fraction.to_bits().to_le_bytes());
    bytes.extend_from_slice(&cfg.protocol.master_seed.to_le_bytes());
    format!("{:016x}", fnv64(bytes))[..12].to_string()
}

fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn cell_seed(cfg: &ExperimentConfig, tag: u64, fraction: f64, repeat: usize, fold: usize) -> u64 {
    let base = mix_seed(cfg.protocol.master_seed, tag);
    let base = mix_seed(base, fraction.to_bits());
    mix_seed(base, (repeat as u64) << 32 | fold as u64)
}

pub fn pct(fraction: f64) -> u32 {
    (fraction * 100.0).round() as u32
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Dataset persistence

pub fn cmd_generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<u64, CliError> {
    let data_dir = out_dir.join("data");
    fs::create_dir_all(data_dir.join("images")).map_err(io_err(&data_dir))?;
    fs::create_dir_all(data_dir.join("masks")).map_err(io_err(&data_dir))?;

    let mut shape = ShapeConfig::with_size(cfg.dataset.height, cfg.dataset.width);
    shape.presence_prob = cfg.dataset.presence_prob;
    shape.max_blobs = cfg.dataset.max_blobs;
    shape.r_min = cfg.dataset.r_min;
    shape.r_max = cfg.dataset.r_max;
    shape.amp_min = cfg.dataset.amp_min;
    shape.amp_max = cfg.dataset.amp_max;
    shape.texture_amp = cfg.dataset.texture_amp;
    shape.noise_sigma = cfg.dataset.noise_sigma;
    shape.area_budget_frac = cfg.dataset.area_budget_frac;
    let mut split = generate_dataset(
        cfg.dataset.n_labeled,
        cfg.dataset.n_unlabeled,
        cfg.dataset.seed,
        &shape,
        cfg.protocol.folds,
    )?;
    split.folds = make_folds(&split, cfg.protocol.folds, cfg.protocol.master_seed)?;

    let mut rows = Vec::new();
    for (img, mask) in &split.labeled {
        let image_path = format!("images/img_{:05}.pgm", img.id);
        let mask_path = format!("masks/mask_{:05}.pgm", img.id);
        pgm::write_image(&data_dir.join(&image_path), img)?;
        pgm::write_mask(&data_dir.join(&mask_path), mask)?;
        let fold = split.folds.iter().position(|f| f.contains(&img.id));
        rows.push(manifest::ManifestRow {
            id: img.id,
            role: manifest::Role::Labeled,
            image_path,
            mask_path: Some(mask_path),
            fold,
        });
    }
    for img in &split.unlabeled {
        let image_path = format!("images/img_{:05}.pgm", img.id);
        pgm::write_image(&data_dir.join(&image_path), img)?;
        rows.push(manifest::ManifestRow {
            id: img.id,
            role: manifest::Role::Unlabeled,
            image_path,
            mask_path: None,
            fold: None,
        });
    }
    manifest::write(&data_dir.join("manifest.tsv"), &rows)?;
    Ok(dataset_digest(&split))
}

pub fn load_dataset(out_dir: &Path) -> Result<DatasetSplit, CliError> {
    let data_dir = out_dir.join("data");
    let manifest_path = data_dir.join("manifest.tsv");
    if !manifest_path.exists() {
        return Err(CliError::Data(format!(
            "no dataset at {}; run `restlab generate` first",
            manifest_path.display()
        )));
    }
    let rows = manifest::read(&manifest_path)?;
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut fold_of = Vec::new();
    for row in rows {
        let img = pgm::read_image(&data_dir.join(&row.image_path), row.id)?;
        match row.role {
            manifest::Role::Labeled => {
                let mask_path = row.mask_path.ok_or_else(|| {
                    CliError::Data(format!("labeled sample {} has no mask path", row.id))
                })?;
                let mask = pgm::read_mask(&data_dir.join(&mask_path))?;
                labeled.push((img, mask));
                fold_of.push((row.id, row.fold));
            }
            manifest::Role::Unlabeled => unlabeled.push(img),
        }
    }
    let nfolds = fold_of.iter().filter_map(|&(_, f)| f).max().map_or(0, |m| m + 1);
    let mut folds = vec![Vec::new(); nfolds];
    for (id, fold) in fold_of {
        if let Some(f) = fold {
            folds[f].push(id);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(DatasetSplit { labeled, unlabeled, folds, labeled_fraction: 1.0 })
}

// ---------------------------------------------------------------------------
// Training stages

/// Epochs and patience scale with 1/fraction so every labeled fraction
/// gets the same gradient-step budget (steps per epoch shrink with the
/// training subset).
fn seg_hyper(cfg: &ExperimentConfig, seed: u64, fraction: f64) -> SegHyper {
    let scale = |e: usize| ((e as f64) / fraction).round() as usize;
    SegHyper {
        lr: cfg.segnet.lr,
        batch_size: cfg.segnet.batch_size,
        max_epochs: scale(cfg.segnet.max_epochs),
        patience: scale(cfg.segnet.patience),
        fine_tune_lr_scale: cfg.segnet.fine_tune_lr_scale,
        fine_tune_steps: cfg.segnet.fine_tune_steps,
        seed,
    }
}

fn ckpt_path(out_dir: &Path, stage: &str, fraction: f64, repeat: usize, fold: usize) -> PathBuf {
    out_dir
        .join("ckpt")
        .join(format!("{stage}_{:03}p_r{repeat}_f{fold}.ckpt", pct(fraction)))
}

fn metrics_path(out_dir: &Path, stem: &str, fraction: f64) -> PathBuf {
    out_dir.join("metrics").join(format!("{stem}_{:03}p.csv", pct(fraction)))
}

/// The per-cell split shared by every method. Folds are drawn over the
/// full labeled set per repeat; the labeled fraction subsets only the
/// training side, so the held-out fold keeps its full size at every
/// fraction. The returned folds keep the held-out ids at index `fold`
/// and pack the (subset) training ids into the next slot, so downstream
/// `partition_fold(split, fold)` calls see the right partition.
fn cell_split(
    cfg: &ExperimentConfig,
    full: &DatasetSplit,
    fraction: f64,
    repeat: usize,
    fold: usize,
) -> Result<DatasetSplit, CliError> {
    let folds = make_folds(full, cfg.protocol.folds, cfg.protocol.master_seed + repeat as u64)?;
    let shaped = DatasetSplit { folds, ..full.clone() };
    let (train, val) = partition_fold(&shaped, fold).map_err(CliError::from)?;
    let n_keep = ((train.len() as f64) * fraction).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(cfg, 0x5b5e7, fraction, repeat, fold));
    // Stratified systematic draw: order the training pool by foreground
    // area and keep one random image per contiguous stratum, so every
    // labeled fraction trains on a representative spread of empty, small
    // and large lesions instead of whatever a plain shuffle happens to
    // pick (an 8-image subset dominated by empty masks cripples training).
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
    idx.dedup();
    let kept: Vec<_> = idx.iter().map(|&i| train[i].clone()).collect();
    let mut folds = vec![Vec::new(); cfg.protocol.folds];
    folds[fold] = val.iter().map(|(img, _)| img.id).collect();
    folds[(fold + 1) % cfg.protocol.folds] = kept.iter().map(|(img, _)| img.id).collect();
    Ok(DatasetSplit {
        labeled: kept.into_iter().chain(val.into_iter()).collect(),
        unlabeled: full.unlabeled.clone(),
        folds,
        labeled_fraction: fraction,
    })
}

pub fn cmd_train_supervised(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    fraction: f64,
) -> Result<Vec<MetricsRecord>, CliError> {
    let full = load_dataset(out_dir)?;
    let id = run_id(cfg, "supervised", fraction);
    fs::create_dir_all(out_dir.join("ckpt")).map_err(io_err(out_dir))?;
    fs::create_dir_all(out_dir.join("metrics")).map_err(io_err(out_dir))?;

    let mut records = Vec::new();
    for repeat in 0..cfg.protocol.repeats {
        for fold in 0..cfg.protocol.folds {
            let split = cell_split(cfg, &full, fraction, repeat, fold)?;
            let seed = cell_seed(cfg, 0x5e6, fraction, repeat, fold);
            let (model, _) = train_supervised(&split, fold, &seg_hyper(cfg, seed, fraction))?;
            let (_, val) = partition_fold(&split, fold).map_err(CliError::from)?;
            let (f1, sens, fps) = eval_on(&model, &val, cfg.rest.iou_thresh)?;
            checkpoint::save(&ckpt_path(out_dir, "sup", fraction, repeat, fold), SEG_ARCH_ID, &model.params)?;
            records.push(MetricsRecord {
                run_id: id.clone(),
                method: "supervised".into(),
                labeled_fraction: fraction,
                repeat,
                fold,
                iteration: 0,
                f1,
                sensitivity: sens,
                fps_per_image: fps,
                reward: None,
            });
        }
    }
    csv::append(&metrics_path(out_dir, "supervised", fraction), &records)?;
    Ok(records)
}

fn load_seg_checkpoint(
    cfg: &ExperimentConfig,
    path: &Path,
) -> Result<SegModel, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!(
            "missing supervised checkpoint {}; run `restlab train-supervised` first",
            path.display()
        )));
    }
    let params = checkpoint::load(path, SEG_ARCH_ID)?;
    Ok(SegModel::from_params(params, cfg.dataset.height, cfg.dataset.width))
}

fn expert_sidecar(path: &Path) -> PathBuf {
    path.with_extension("thr")
}

fn save_expert(path: &Path, model: &ExpertRewardModel) -> Result<(), CliError> {
    checkpoint::save(path, IRL_ARCH_ID, model.params())?;
    fs::write(
        expert_sidecar(path),
        format!("{}\n{}\n", model.decision_threshold(), model.holdout_accuracy()),
    )
    .map_err(io_err(path))?;
    Ok(())
}

fn load_expert(path: &Path) -> Result<ExpertRewardModel, CliError> {
    let params = checkpoint::load(path, IRL_ARCH_ID)?;
    let sidecar = expert_sidecar(path);
    let text = fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
    let thr: f32 = text
        .lines()
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| CliError::Data(format!("bad threshold sidecar {}", sidecar.display())))?;
    Ok(ExpertRewardModel::from_parts(params, thr))
}

fn train_cell_expert(
    cfg: &ExperimentConfig,
    seg: &SegModel,
    split: &DatasetSplit,
    fold: usize,
    seed: u64,
) -> Result<ExpertRewardModel, CliError> {
    let (train_pairs, _) = partition_fold(split, fold).map_err(CliError::from)?;
    let positives = build_demonstrations(seg, &train_pairs)?;
    let recipes = RecipeConfig {
        per_positive: cfg.expert.negatives_per_positive,
        min_shift: cfg.expert.min_shift,
        max_shift: cfg.expert.max_shift,
        ..RecipeConfig::default()
    };
    let negatives = synthesize_negatives(&positives, mix_seed(seed, 0x6e65_67), &recipes)?;
    let hyper = ExpertHyper {
        lr: cfg.expert.lr,
        weight_decay: cfg.expert.weight_decay,
        max_epochs: cfg.expert.max_epochs,
        batch_size: cfg.expert.batch_size,
        holdout_frac: cfg.expert.holdout_frac,
        target_accuracy: cfg.expert.target_accuracy,
        abort_accuracy: cfg.expert.abort_accuracy,
        seed,
    };
    Ok(train_expert_reward(&positives, &negatives, &hyper)?)
}

pub fn cmd_train_irl(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    fraction: f64,
) -> Result<Vec<f64>, CliError> {
    let full = load_dataset(out_dir)?;
    let mut accuracies = Vec::new();
    for repeat in 0..cfg.protocol.repeats {
        for fold in 0..cfg.protocol.folds {
            let split = cell_split(cfg, &full, fraction, repeat, fold)?;
            let sup = ckpt_path(out_dir, "sup", fraction, repeat, fold);
            let seg = load_seg_checkpoint(cfg, &sup)?;
            let seed = cell_seed(cfg, 0x1a1, fraction, repeat, fold);
            let expert = train_cell_expert(cfg, &seg, &split, fold, seed)?;
            save_expert(&ckpt_path(out_dir, "irl", fraction, repeat, fold), &expert)?;
            accuracies.push(expert.holdout_accuracy());
        }
    }
    Ok(accuracies)
}

fn rest_config(cfg: &ExperimentConfig, seed: u64) -> RestConfig {
    RestConfig {
        k_iterations: cfg.rest.k_iterations,
        tau_phase: cfg.rest.tau_phase,
        batch_size: cfg.rest.batch_size,
        stab_window: cfg.rest.stab_window,
        stab_delta: cfg.rest.stab_delta,
        anneal_factor: cfg.rest.anneal_factor,
        temperature_min: cfg.rest.temperature_min,
        policy_lr: cfg.policy.lr,
        baseline_decay: cfg.policy.baseline_decay,
        epsilon: EpsilonSchedule {
            epsilon: cfg.policy.epsilon_start,
            decay: cfg.policy.epsilon_decay,
            floor: cfg.policy.epsilon_floor,
        },
        heuristic: HeuristicConfig {
            theta_pos: cfg.policy.theta_pos,
            theta_neg: cfg.policy.theta_neg,
            min_area_px: cfg.policy.min_area_px,
        },
        retention: crate::rest_loop::RetentionPolicy::AcceptedOnly,
        iou_thresh: cfg.rest.iou_thresh,
        seed,
    }
}

/// One closing metrics row for the model a training command actually
/// returns (the best-validation iterate), so the per-cell summary matches
/// the saved checkpoint even when no logged iteration held that model.
fn selected_model_record(
    cfg: &ExperimentConfig,
    seg: &SegModel,
    split: &DatasetSplit,
    fold: usize,
    meta: &RunMeta,
    iteration: usize,
) -> Result<MetricsRecord, CliError> {
    let (_, val) = partition_fold(split, fold).map_err(CliError::from)?;
    let (f1, sensitivity, fps_per_image) = eval_on(seg, &val, cfg.rest.iou_thresh)?;
    Ok(MetricsRecord {
        run_id: meta.run_id.clone(),
        method: meta.method.clone(),
        labeled_fraction: meta.labeled_fraction,
        repeat: meta.repeat,
        fold: meta.fold,
        iteration,
        f1,
        sensitivity,
        fps_per_image,
        reward: None,
    })
}

pub fn cmd_rest(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    fraction: f64,
) -> Result<Vec<MetricsRecord>, CliError> {
    let full = load_dataset(out_dir)?;
    let id = run_id(cfg, "rest", fraction);
    fs::create_dir_all(out_dir.join("metrics")).map_err(io_err(out_dir))?;

    let mut records = Vec::new();
    for repeat in 0..cfg.protocol.repeats {
        for fold in 0..cfg.protocol.folds {
            let split = cell_split(cfg, &full, fraction, repeat, fold)?;
            let seg = load_seg_checkpoint(cfg, &ckpt_path(out_dir, "sup", fraction, repeat, fold))?;
            let irl_path = ckpt_path(out_dir, "irl", fraction, repeat, fold);
            let seed = cell_seed(cfg, 0x1a1, fraction, repeat, fold);
            let expert = if irl_path.exists() {
                load_expert(&irl_path)?
            } else {
                let e = train_cell_expert(cfg, &seg, &split, fold, seed)?;
                fs::create_dir_all(out_dir.join("ckpt")).map_err(io_err(out_dir))?;
                save_expert(&irl_path, &e)?;
                e
            };
            let rest_seed = cell_seed(cfg, 0x4e5, fraction, repeat, fold);
            let pol = PolicyModel::new(cfg.dataset.height, cfg.dataset.width, mix_seed(rest_seed, 1))
                .map_err(|e| CliError::Numeric(e.to_string()))?;
            let meta = RunMeta {
                run_id: id.clone(),
                method: "rest".into(),
                labeled_fraction: fraction,
                repeat,
                fold,
            };
            let (seg_after, _, hist) = run_rest(
                seg,
                pol,
                &expert,
                &split,
                &seg_hyper(cfg, rest_seed, fraction),
                &rest_config(cfg, rest_seed),
                &meta,
            )?;
            checkpoint::save(
                &ckpt_path(out_dir, "rest", fraction, repeat, fold),
                SEG_ARCH_ID,
                &seg_after.params,
            )?;
            records.extend(hist.records());
            records.push(selected_model_record(
                cfg, &seg_after, &split, fold, &meta, hist.iterations.len() + 1,
            )?);
        }
    }
    csv::append(&metrics_path(out_dir, "rest", fraction), &records)?;
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMethod {
    SelfTrain,
    NegMine,
}

impl BaselineMethod {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "self-train" => Ok(BaselineMethod::SelfTrain),
            "neg-mine" => Ok(BaselineMethod::NegMine),
            other => Err(CliError::Config(format!(
                "unknown baseline method {other:?}; expected self-train or neg-mine"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            BaselineMethod::SelfTrain => "self-train",
            BaselineMethod::NegMine => "neg-mine",
        }
    }

    fn stem(self) -> &'static str {
        match self {
            BaselineMethod::SelfTrain => "selftrain",
            BaselineMethod::NegMine => "negmine",
        }
    }
}

pub fn cmd_baseline(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    method: BaselineMethod,
    fraction: f64,
) -> Result<Vec<MetricsRecord>, CliError> {
    let full = load_dataset(out_dir)?;
    let id = run_id(cfg, method.name(), fraction);
    fs::create_dir_all(out_dir.join("metrics")).map_err(io_err(out_dir))?;

    let mut records = Vec::new();
    for repeat in 0..cfg.protocol.repeats {
        for fold in 0..cfg.protocol.folds {
            let split = cell_split(cfg, &full, fraction, repeat, fold)?;
            let seg = load_seg_checkpoint(cfg, &ckpt_path(out_dir, "sup", fraction, repeat, fold))?;
            // same seed as ReST so batch draws line up across methods
            let seed = cell_seed(cfg, 0x4e5, fraction, repeat, fold);
            let st_cfg = SelfTrainConfig {
                k_iterations: cfg.rest.k_iterations,
                batch_size: cfg.rest.batch_size,
                theta_pos: cfg.policy.theta_pos,
                theta_neg: cfg.policy.theta_neg,
                iou_thresh: cfg.rest.iou_thresh,
                seed,
                ..SelfTrainConfig::default()
            };
            let meta = RunMeta {
                run_id: id.clone(),
                method: method.name().into(),
                labeled_fraction: fraction,
                repeat,
                fold,
            };
            let hyper = seg_hyper(cfg, seed, fraction);
            let (seg_after, hist) = match method {
                BaselineMethod::SelfTrain => {
                    run_standard_self_training(seg, &split, &hyper, &st_cfg, &meta)?
                }
                BaselineMethod::NegMine => {
                    run_pseudonegative_mining(seg, &split, &hyper, &st_cfg, &meta)?
                }
            };
            checkpoint::save(
                &ckpt_path(out_dir, method.stem(), fraction, repeat, fold),
                SEG_ARCH_ID,
                &seg_after.params,
            )?;
            records.extend(hist.records());
            records.push(selected_model_record(
                cfg, &seg_after, &split, fold, &meta, hist.iterations.len() + 1,
            )?);
        }
    }
    csv::append(&metrics_path(out_dir, method.stem(), fraction), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests;

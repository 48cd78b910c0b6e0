//! Line-oriented experiment configuration: `[section]` headers and
//! `key = value` pairs. Every key has a default; parsing starts from the
//! defaults and overrides, so partial files are valid. `serialize` then
//! `parse` reproduces the config exactly.

use std::fmt::Write as _;

use super::CliError;
use crate::synthdata::SUPPORTED_FRACTIONS;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetCfg {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub presence_prob: f64,
    pub max_blobs: usize,
    pub r_min: f32,
    pub r_max: f32,
    pub amp_min: f32,
    pub amp_max: f32,
    pub texture_amp: f32,
    pub noise_sigma: f32,
    pub area_budget_frac: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolCfg {
    pub fractions: Vec<f64>,
    pub folds: usize,
    pub repeats: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegCfg {
    pub lr: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub fine_tune_lr_scale: f32,
    pub fine_tune_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertCfg {
    pub lr: f32,
    pub weight_decay: f32,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub holdout_frac: f64,
    pub target_accuracy: f64,
    pub abort_accuracy: f64,
    pub negatives_per_positive: usize,
    pub min_shift: usize,
    pub max_shift: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyCfg {
    pub theta_pos: f32,
    pub theta_neg: f32,
    pub min_area_px: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub lr: f32,
    pub baseline_decay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestCfg {
    pub k_iterations: usize,
    pub tau_phase: f64,
    pub batch_size: usize,
    pub stab_window: usize,
    pub stab_delta: f64,
    pub anneal_factor: f32,
    pub temperature_min: f32,
    pub iou_thresh: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputCfg {
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetCfg,
    pub protocol: ProtocolCfg,
    pub segnet: SegCfg,
    pub expert: ExpertCfg,
    pub policy: PolicyCfg,
    pub rest: RestCfg,
    pub output: OutputCfg,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetCfg {
                n_labeled: 40,
                n_unlabeled: 120,
                height: 32,
                width: 32,
                seed: 11,
                presence_prob: 0.7,
                max_blobs: 4,
                r_min: 2.5,
                r_max: 7.0,
                amp_min: 0.18,
                amp_max: 0.6,
                texture_amp: 0.1,
                noise_sigma: 0.03,
                area_budget_frac: 0.12,
            },
            protocol: ProtocolCfg {
                fractions: SUPPORTED_FRACTIONS.to_vec(),
                folds: 5,
                repeats: 5,
                master_seed: 0,
            },
            segnet: SegCfg {
                lr: 5e-3,
                batch_size: 8,
                max_epochs: 60,
                patience: 60,
                fine_tune_lr_scale: 0.4,
                fine_tune_steps: 15,
            },
            expert: ExpertCfg {
                lr: 2e-3,
                weight_decay: 1e-4,
                max_epochs: 40,
                batch_size: 8,
                holdout_frac: 0.25,
                target_accuracy: 0.9,
                abort_accuracy: 0.75,
                negatives_per_positive: 2,
                min_shift: 4,
                max_shift: 12,
            },
            policy: PolicyCfg {
                theta_pos: 0.5001,
                theta_neg: 0.1,
                min_area_px: 3,
                epsilon_start: 0.95,
                epsilon_decay: 0.98,
                epsilon_floor: 0.8,
                lr: 1e-2,
                baseline_decay: 0.9,
            },
            rest: RestCfg {
                k_iterations: 20,
                tau_phase: 0.6,
                batch_size: 16,
                stab_window: 3,
                stab_delta: 0.005,
                anneal_factor: 0.9,
                temperature_min: 0.25,
                iou_thresh: 0.25,
            },
            output: OutputCfg { dir: "out".into() },
        }
    }
}

fn fmt_fractions(fs: &[f64]) -> String {
    fs.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let d = &self.dataset;
        let _ = writeln!(s, "[dataset]");
        let _ = writeln!(s, "n_labeled = {}", d.n_labeled);
        let _ = writeln!(s, "n_unlabeled = {}", d.n_unlabeled);
        let _ = writeln!(s, "height = {}", d.height);
        let _ = writeln!(s, "width = {}", d.width);
        let _ = writeln!(s, "seed = {}", d.seed);
        let _ = writeln!(s, "presence_prob = {}", d.presence_prob);
        let _ = writeln!(s, "max_blobs = {}", d.max_blobs);
        let _ = writeln!(s, "r_min = {}", d.r_min);
        let _ = writeln!(s, "r_max = {}", d.r_max);
        let _ = writeln!(s, "amp_min = {}", d.amp_min);
        let _ = writeln!(s, "amp_max = {}", d.amp_max);
        let _ = writeln!(s, "texture_amp = {}", d.texture_amp);
        let _ = writeln!(s, "noise_sigma = {}", d.noise_sigma);
        let _ = writeln!(s, "area_budget_frac = {}", d.area_budget_frac);
        let p = &self.protocol;
        let _ = writeln!(s, "\n[protocol]");
        let _ = writeln!(s, "fractions = {}", fmt_fractions(&p.fractions));
        let _ = writeln!(s, "folds = {}", p.folds);
        let _ = writeln!(s, "repeats = {}", p.repeats);
        let _ = writeln!(s, "master_seed = {}", p.master_seed);
        let g = &self.segnet;
        let _ = writeln!(s, "\n[segnet]");
        let _ = writeln!(s, "lr = {}", g.lr);
        let _ = writeln!(s, "batch_size = {}", g.batch_size);
        let _ = writeln!(s, "max_epochs = {}", g.max_epochs);
        let _ = writeln!(s, "patience = {}", g.patience);
        let _ = writeln!(s, "fine_tune_lr_scale = {}", g.fine_tune_lr_scale);
        let _ = writeln!(s, "fine_tune_steps = {}", g.fine_tune_steps);
        let e = &self.expert;
        let _ = writeln!(s, "\n[expert]");
        let _ = writeln!(s, "lr = {}", e.lr);
        let _ = writeln!(s, "weight_decay = {}", e.weight_decay);
        let _ = writeln!(s, "max_epochs = {}", e.max_epochs);
        let _ = writeln!(s, "batch_size = {}", e.batch_size);
        let _ = writeln!(s, "holdout_frac = {}", e.holdout_frac);
        let _ = writeln!(s, "target_accuracy = {}", e.target_accuracy);
        let _ = writeln!(s, "abort_accuracy = {}", e.abort_accuracy);
        let _ = writeln!(s, "negatives_per_positive = {}", e.negatives_per_positive);
        let _ = writeln!(s, "min_shift = {}", e.min_shift);
        let _ = writeln!(s, "max_shift = {}", e.max_shift);
        let l = &self.policy;
        let _ = writeln!(s, "\n[policy]");
        let _ = writeln!(s, "theta_pos = {}", l.theta_pos);
        let _ = writeln!(s, "theta_neg = {}", l.theta_neg);
        let _ = writeln!(s, "min_area_px = {}", l.min_area_px);
        let _ = writeln!(s, "epsilon_start = {}", l.epsilon_start);
        let _ = writeln!(s, "epsilon_decay = {}", l.epsilon_decay);
        let _ = writeln!(s, "epsilon_floor = {}", l.epsilon_floor);
        let _ = writeln!(s, "lr = {}", l.lr);
        let _ = writeln!(s, "baseline_decay = {}", l.baseline_decay);
        let r = &self.rest;
        let _ = writeln!(s, "\n[rest]");
        let _ = writeln!(s, "k_iterations = {}", r.k_iterations);
        let _ = writeln!(s, "tau_phase = {}", r.tau_phase);
        let _ = writeln!(s, "batch_size = {}", r.batch_size);
        let _ = writeln!(s, "stab_window = {}", r.stab_window);
        let _ = writeln!(s, "stab_delta = {}", r.stab_delta);
        let _ = writeln!(s, "anneal_factor = {}", r.anneal_factor);
        let _ = writeln!(s, "temperature_min = {}", r.temperature_min);
        let _ = writeln!(s, "iou_thresh = {}", r.iou_thresh);
        let o = &self.output;
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", o.dir);
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {lineno}: expected key = value, got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(&section, key, value)
                .map_err(|msg| CliError::Config(format!("line {lineno}: {msg}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
        }
        match (section, key) {
            ("dataset", "n_labeled") => self.dataset.n_labeled = num(key, value)?,
            ("dataset", "n_unlabeled") => self.dataset.n_unlabeled = num(key, value)?,
            ("dataset", "height") => self.dataset.height = num(key, value)?,
            ("dataset", "width") => self.dataset.width = num(key, value)?,
            ("dataset", "seed") => self.dataset.seed = num(key, value)?,
            ("dataset", "presence_prob") => self.dataset.presence_prob = num(key, value)?,
            ("dataset", "max_blobs") => self.dataset.max_blobs = num(key, value)?,
            ("dataset", "r_min") => self.dataset.r_min = num(key, value)?,
            ("dataset", "r_max") => self.dataset.r_max = num(key, value)?,
            ("dataset", "amp_min") => self.dataset.amp_min = num(key, value)?,
            ("dataset", "amp_max") => self.dataset.amp_max = num(key, value)?,
            ("dataset", "texture_amp") => self.dataset.texture_amp = num(key, value)?,
            ("dataset", "noise_sigma") => self.dataset.noise_sigma = num(key, value)?,
            ("dataset", "area_budget_frac") => self.dataset.area_budget_frac = num(key, value)?,
            ("protocol", "fractions") => {
                self.protocol.fractions = value
                    .split(',')
                    .map(|v| num("fractions", v.trim()))
                    .collect::<Result<_, _>>()?;
            }
            ("protocol", "folds") => self.protocol.folds = num(key, value)?,
            ("protocol", "repeats") => self.protocol.repeats = num(key, value)?,
            ("protocol", "master_seed") => self.protocol.master_seed = num(key, value)?,
            ("segnet", "lr") => self.segnet.lr = num(key, value)?,
            ("segnet", "batch_size") => self.segnet.batch_size = num(key, value)?,
            ("segnet", "max_epochs") => self.segnet.max_epochs = num(key, value)?,
            ("segnet", "patience") => self.segnet.patience = num(key, value)?,
            ("segnet", "fine_tune_lr_scale") => self.segnet.fine_tune_lr_scale = num(key, value)?,
            ("segnet", "fine_tune_steps") => self.segnet.fine_tune_steps = num(key, value)?,
            ("expert", "lr") => self.expert.lr = num(key, value)?,
            ("expert", "weight_decay") => self.expert.weight_decay = num(key, value)?,
            ("expert", "max_epochs") => self.expert.max_epochs = num(key, value)?,
            ("expert", "batch_size") => self.expert.batch_size = num(key, value)?,
            ("expert", "holdout_frac") => self.expert.holdout_frac = num(key, value)?,
            ("expert", "target_accuracy") => self.expert.target_accuracy = num(key, value)?,
            ("expert", "abort_accuracy") => self.expert.abort_accuracy = num(key, value)?,
            ("expert", "negatives_per_positive") => {
                self.expert.negatives_per_positive = num(key, value)?
            }
            ("expert", "min_shift") => self.expert.min_shift = num(key, value)?,
            ("expert", "max_shift") => self.expert.max_shift = num(key, value)?,
            ("policy", "theta_pos") => self.policy.theta_pos = num(key, value)?,
            ("policy", "theta_neg") => self.policy.theta_neg = num(key, value)?,
            ("policy", "min_area_px") => self.policy.min_area_px = num(key, value)?,
            ("policy", "epsilon_start") => self.policy.epsilon_start = num(key, value)?,
            ("policy", "epsilon_decay") => self.policy.epsilon_decay = num(key, value)?,
            ("policy", "epsilon_floor") => self.policy.epsilon_floor = num(key, value)?,
            ("policy", "lr") => self.policy.lr = num(key, value)?,
            ("policy", "baseline_decay") => self.policy.baseline_decay = num(key, value)?,
            ("rest", "k_iterations") => self.rest.k_iterations = num(key, value)?,
            ("rest", "tau_phase") => self.rest.tau_phase = num(key, value)?,
            ("rest", "batch_size") => self.rest.batch_size = num(key, value)?,
            ("rest", "stab_window") => self.rest.stab_window = num(key, value)?,
            ("rest", "stab_delta") => self.rest.stab_delta = num(key, value)?,
            ("rest", "anneal_factor") => self.rest.anneal_factor = num(key, value)?,
            ("rest", "temperature_min") => self.rest.temperature_min = num(key, value)?,
            ("rest", "iou_thresh") => self.rest.iou_thresh = num(key, value)?,
            ("output", "dir") => self.output.dir = value.to_string(),
            _ => return Err(format!("unknown key {key:?} in section [{section}]")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        for &f in &self.protocol.fractions {
            if !SUPPORTED_FRACTIONS.iter().any(|&s| (s - f).abs() < 1e-9) {
                return bad(format!("unsupported labeled fraction {f}; pick from {SUPPORTED_FRACTIONS:?}"));
            }
        }
        if self.protocol.fractions.is_empty() {
            return bad("at least one labeled fraction required".into());
        }
        if self.protocol.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.protocol.folds));
        }
        if self.protocol.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.dataset.height % 4 != 0 || self.dataset.width % 4 != 0 {
            return bad(format!(
                "image size {}x{} must be divisible by 4",
                self.dataset.height, self.dataset.width
            ));
        }
        if self.dataset.n_labeled < self.protocol.folds * 4 {
            return bad(format!(
                "n_labeled {} too small for {} folds (need >= 4 per fold)",
                self.dataset.n_labeled, self.protocol.folds
            ));
        }
        let d = &self.dataset;
        if !(0.0..=1.0).contains(&d.presence_prob) {
            return bad(format!("presence_prob {} must be in [0, 1]", d.presence_prob));
        }
        if d.r_min <= 0.0 || d.r_min > d.r_max {
            return bad(format!("radius range {}..{} invalid", d.r_min, d.r_max));
        }
        if d.amp_min <= 0.0 || d.amp_min > d.amp_max {
            return bad(format!("amplitude range {}..{} invalid", d.amp_min, d.amp_max));
        }
        if d.noise_sigma < 0.0 || d.texture_amp < 0.0 {
            return bad("noise_sigma and texture_amp must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&d.area_budget_frac) || d.area_budget_frac == 0.0 {
            return bad(format!("area_budget_frac {} must be in (0, 1]", d.area_budget_frac));
        }
        if self.policy.theta_neg >= self.policy.theta_pos {
            return bad(format!(
                "theta_neg {} must be below theta_pos {}",
                self.policy.theta_neg, self.policy.theta_pos
            ));
        }
        if self.expert.min_shift == 0 || self.expert.min_shift > self.expert.max_shift {
            return bad(format!(
                "translation shift range {}..{} invalid (min >= 1 and min <= max)",
                self.expert.min_shift, self.expert.max_shift
            ));
        }
        if self.rest.tau_phase <= 0.0 {
            return bad("tau_phase must be positive".into());
        }
        if self.rest.stab_window < 2 || self.rest.stab_delta <= 0.0 {
            return bad("stabilization needs window >= 2 and delta > 0".into());
        }
        Ok(())
    }
}

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetSplit, MaskGrid, SampleGrid, SynthError};

/// Elliptical blob with a Gaussian-like radial profile. `r1`/`r2` are the
/// half-maximum semi-axes, so the exact ground-truth mask is the ellipse
/// (u/r1)^2 + (v/r2)^2 <= 1 in the blob's rotated frame.
#[derive(Clone, Copy, Debug)]
pub struct Blob {
    pub cx: f32,
    pub cy: f32,
    pub r1: f32,
    pub r2: f32,
    pub theta: f32,
    pub amp: f32,
}

impl Blob {
    /// Additive intensity at pixel (row, col); half the amplitude on the
    /// mask boundary.
    pub fn contribution(&self, row: usize, col: usize) -> f32 {
        let d2 = self.norm_dist2(row, col);
        self.amp * (-std::f32::consts::LN_2 * d2).exp()
    }

    pub fn covers(&self, row: usize, col: usize) -> bool {
        self.norm_dist2(row, col) <= 1.0
    }

    fn norm_dist2(&self, row: usize, col: usize) -> f32 {
        let dx = col as f32 - self.cx;
        let dy = row as f32 - self.cy;
        let (s, c) = self.theta.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.r1).powi(2) + (v / self.r2).powi(2)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ShapeConfig {
    pub h: usize,
    pub w: usize,
    /// Probability that an image contains at least one blob.
    pub presence_prob: f64,
    pub max_blobs: usize,
    /// Half-maximum radius range in pixels.
    pub r_min: f32,
    pub r_max: f32,
    /// Blob peak intensity above the local background.
    pub amp_min: f32,
    pub amp_max: f32,
    /// Background base level range.
    pub base_min: f32,
    pub base_max: f32,
    /// Amplitude of the low-frequency background texture waves.
    pub texture_amp: f32,
    /// Per-pixel white noise sigma.
    pub noise_sigma: f32,
    /// Cap on total half-maximum mask area, as a fraction of the image.
    pub area_budget_frac: f32,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            h: 64,
            w: 64,
            presence_prob: 0.7,
            max_blobs: 3,
            r_min: 3.0,
            r_max: 8.0,
            amp_min: 0.22,
            amp_max: 0.55,
            base_min: 0.25,
            base_max: 0.40,
            texture_amp: 0.05,
            noise_sigma: 0.04,
            area_budget_frac: 0.07,
        }
    }
}

impl ShapeConfig {
    /// Default geometry rescaled to another square-ish resolution.
    pub fn with_size(h: usize, w: usize) -> Self {
        let mut cfg = ShapeConfig::default();
        let scale = (h.min(w) as f32) / 64.0;
        cfg.h = h;
        cfg.w = w;
        cfg.r_min = (cfg.r_min * scale).max(2.0);
        cfg.r_max = (cfg.r_max * scale).max(cfg.r_min + 1.0);
        cfg
    }
}

fn mix_seed(seed: u64, id: u64) -> u64 {
    // splitmix64 round over (seed ^ golden-ratio*id)
    let mut z = seed ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministically render one image, its exact mask, and the blob
/// parameters the mask was derived from.
pub fn generate_image(id: u64, seed: u64, cfg: &ShapeConfig) -> (SampleGrid, MaskGrid, Vec<Blob>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, id));
    let (h, w) = (cfg.h, cfg.w);

    // background: base level + a few low-frequency waves + white noise
    let base = rng.random_range(cfg.base_min..cfg.base_max);
    let mut waves = Vec::new();
    for _ in 0..3 {
        let fx = rng.random_range(0.5..3.0) * std::f32::consts::TAU / w as f32;
        let fy = rng.random_range(0.5..3.0) * std::f32::consts::TAU / h as f32;
        let phase = rng.random_range(0.0..std::f32::consts::TAU);
        let amp = rng.random_range(0.3..1.0) * cfg.texture_amp;
        waves.push((fx, fy, phase, amp));
    }
    let mut pixels = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut v = base;
            for &(fx, fy, phase, amp) in &waves {
                v += amp * (fx * c as f32 + fy * r as f32 + phase).cos();
            }
            v += cfg.noise_sigma * (rng.random::<f32>() * 2.0 - 1.0);
            pixels[r * w + c] = v;
        }
    }

    // blobs under a total mask-area budget
    let count = if rng.random::<f64>() < cfg.presence_prob {
        rng.random_range(1..=cfg.max_blobs)
    } else {
        0
    };
    let mut budget = cfg.area_budget_frac * (h * w) as f32;
    let mut blobs: Vec<Blob> = Vec::new();
    for _ in 0..count {
        let mut r1 = rng.random_range(cfg.r_min..cfg.r_max);
        let mut r2 = rng.random_range(cfg.r_min..cfg.r_max);
        let area = std::f32::consts::PI * r1 * r2;
        if area > budget {
            let s = (budget / area).sqrt();
            r1 *= s;
            r2 *= s;
            if r1.min(r2) < 2.0 {
                continue; // budget exhausted
            }
        }
        let margin = r1.max(r2).ceil() as usize + 1;
        if 2 * margin >= w || 2 * margin >= h {
            continue;
        }
        let mut placed = None;
        for _ in 0..20 {
            let cx = rng.random_range(margin as f32..(w - margin) as f32);
            let cy = rng.random_range(margin as f32..(h - margin) as f32);
            let far = blobs.iter().all(|b| {
                let d = ((b.cx - cx).powi(2) + (b.cy - cy).powi(2)).sqrt();
                d >= b.r1.max(b.r2) + r1.max(r2) + 2.0
            });
            if far {
                placed = Some((cx, cy));
                break;
            }
        }
        let (cx, cy) = match placed {
            Some(p) => p,
            None => continue,
        };
        let blob = Blob {
            cx,
            cy,
            r1,
            r2,
            theta: rng.random_range(0.0..std::f32::consts::PI),
            amp: rng.random_range(cfg.amp_min..cfg.amp_max),
        };
        budget -= std::f32::consts::PI * r1 * r2;
        blobs.push(blob);
    }

    let mut mask = vec![0u8; h * w];
    for blob in &blobs {
        let r0 = (blob.cy - blob.r1.max(blob.r2) - 1.0).floor().max(0.0) as usize;
        let r1e = ((blob.cy + blob.r1.max(blob.r2) + 1.0).ceil() as usize).min(h - 1);
        let c0 = (blob.cx - blob.r1.max(blob.r2) - 1.0).floor().max(0.0) as usize;
        let c1e = ((blob.cx + blob.r1.max(blob.r2) + 1.0).ceil() as usize).min(w - 1);
        for r in r0..=r1e {
            for c in c0..=c1e {
                pixels[r * w + c] += blob.contribution(r, c);
                if blob.covers(r, c) {
                    mask[r * w + c] = 1;
                }
            }
        }
    }
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }
    (SampleGrid::new(id, h, w, pixels), MaskGrid::new(h, w, mask), blobs)
}

/// Generate `n_labeled` image/mask pairs plus `n_unlabeled` bare images,
/// deterministically per (seed, config). `k` is the later fold count.
pub fn generate_dataset(
    n_labeled: usize,
    n_unlabeled: usize,
    seed: u64,
    cfg: &ShapeConfig,
    k: usize,
) -> Result<DatasetSplit, SynthError> {
    if n_labeled < k {
        return Err(SynthError::TooFewLabeled { n: n_labeled, k });
    }
    let labeled = (0..n_labeled as u64)
        .map(|id| {
            let (img, mask, _) = generate_image(id, seed, cfg);
            (img, mask)
        })
        .collect();
    let unlabeled = (n_labeled as u64..(n_labeled + n_unlabeled) as u64)
        .map(|id| generate_image(id, seed, cfg).0)
        .collect();
    Ok(DatasetSplit { labeled, unlabeled, folds: Vec::new(), labeled_fraction: 1.0 })
}

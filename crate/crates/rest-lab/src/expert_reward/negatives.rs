//! Synthetic non-expert labels: corrupted copies of expert labels used
//! as the negative class for the margin objective. Recipes span spatial
//! error (translation), shape error (dilate/erode), unrelated structure
//! (random blobs), missed findings (empty mask) and incoherent labeling
//! (pixel noise, the signature of an untrained policy).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Demonstration, ExpertError, Polarity};
use crate::synthdata::MaskGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeRecipe {
    Translate,
    Morph,
    RandomBlob,
    Empty,
    Noise,
}

#[derive(Clone, Copy, Debug)]
pub struct RecipeConfig {
    pub translate: bool,
    pub morph: bool,
    pub random_blob: bool,
    pub empty: bool,
    pub noise: bool,
    /// Negatives synthesized per positive (>= 2 by default).
    pub per_positive: usize,
    /// Translation distance range in pixels; zero shift is forbidden.
    pub min_shift: usize,
    pub max_shift: usize,
    /// Morphological dilation/erosion iteration range.
    pub min_morph: usize,
    pub max_morph: usize,
    /// A negative must differ from its source label in at least this
    /// fraction of the foreground-relevant (union) pixels.
    pub min_diff_frac: f64,
}

impl Default for RecipeConfig {
    fn default() -> Self {
        RecipeConfig {
            translate: true,
            morph: true,
            random_blob: true,
            empty: true,
            noise: true,
            per_positive: 2,
            min_shift: 8,
            max_shift: 24,
            min_morph: 2,
            max_morph: 4,
            min_diff_frac: 0.05,
        }
    }
}

impl RecipeConfig {
    fn enabled(&self) -> Vec<NegativeRecipe> {
        let mut v = Vec::new();
        if self.translate {
            v.push(NegativeRecipe::Translate);
        }
        if self.morph {
            v.push(NegativeRecipe::Morph);
        }
        if self.random_blob {
            v.push(NegativeRecipe::RandomBlob);
        }
        if self.empty {
            v.push(NegativeRecipe::Empty);
        }
        if self.noise {
            v.push(NegativeRecipe::Noise);
        }
        v
    }
}

fn translate(mask: &MaskGrid, dr: i64, dc: i64) -> MaskGrid {
    let mut out = MaskGrid::zeros(mask.h, mask.w);
    for r in 0..mask.h {
        for c in 0..mask.w {
            if mask.pixels[r * mask.w + c] == 1 {
                let nr = r as i64 + dr;
                let nc = c as i64 + dc;
                if nr >= 0 && nr < mask.h as i64 && nc >= 0 && nc < mask.w as i64 {
                    out.pixels[nr as usize * mask.w + nc as usize] = 1;
                }
            }
        }
    }
    out
}

fn morph_once(mask: &MaskGrid, dilate: bool) -> MaskGrid {
    let mut out = MaskGrid::zeros(mask.h, mask.w);
    for r in 0..mask.h {
        for c in 0..mask.w {
            let idx = r * mask.w + c;
            let neighbors = [
                Some(idx),
                r.checked_sub(1).map(|rr| rr * mask.w + c),
                (r + 1 < mask.h).then(|| (r + 1) * mask.w + c),
                c.checked_sub(1).map(|cc| r * mask.w + cc),
                (c + 1 < mask.w).then(|| r * mask.w + c + 1),
            ];
            let vals = neighbors.iter().flatten().map(|&i| mask.pixels[i]);
            out.pixels[idx] = if dilate {
                vals.max().unwrap()
            } else {
                vals.min().unwrap()
            };
        }
    }
    out
}

fn random_blob_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> MaskGrid {
    let mut out = MaskGrid::zeros(h, w);
    let scale = (h.min(w) as f32 / 64.0).max(0.25);
    let n = rng.random_range(1..=3);
    for _ in 0..n {
        let r1 = rng.random_range(3.0 * scale..8.0 * scale).max(1.5);
        let r2 = rng.random_range(3.0 * scale..8.0 * scale).max(1.5);
        let cy = rng.random_range(0.0..h as f32);
        let cx = rng.random_range(0.0..w as f32);
        for r in 0..h {
            for c in 0..w {
                let d2 = ((r as f32 - cy) / r2).powi(2) + ((c as f32 - cx) / r1).powi(2);
                if d2 <= 1.0 {
                    out.pixels[r * w + c] = 1;
                }
            }
        }
    }
    out
}

fn noise_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> MaskGrid {
    let p = rng.random_range(0.05..0.5);
    let pixels = (0..h * w).map(|_| u8::from(rng.random::<f64>() < p)).collect();
    MaskGrid::new(h, w, pixels)
}

fn diff_fraction(a: &MaskGrid, b: &MaskGrid) -> f64 {
    let mut diff = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.pixels.iter().zip(&b.pixels) {
        if x == 1 || y == 1 {
            union += 1;
        }
        if x != y {
            diff += 1;
        }
    }
    diff as f64 / union.max(1) as f64
}

fn apply_recipe(
    recipe: NegativeRecipe,
    label: &MaskGrid,
    cfg: &RecipeConfig,
    rng: &mut ChaCha8Rng,
) -> (NegativeRecipe, MaskGrid) {
    // recipes that need foreground fall back to random blobs on empty labels
    let needs_foreground =
        !matches!(recipe, NegativeRecipe::RandomBlob | NegativeRecipe::Noise);
    let effective = if label.is_empty_mask() && needs_foreground {
        NegativeRecipe::RandomBlob
    } else {
        recipe
    };
    let mask = match effective {
        NegativeRecipe::Translate => {
            let max_shift = cfg.max_shift.min(label.w.max(label.h).saturating_sub(2)).max(cfg.min_shift);
            let dist = rng.random_range(cfg.min_shift..=max_shift) as f64;
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let dr = (dist * angle.sin()).round() as i64;
            let dc = (dist * angle.cos()).round() as i64;
            translate(label, dr, dc)
        }
        NegativeRecipe::Morph => {
            let iters = rng.random_range(cfg.min_morph..=cfg.max_morph);
            let dilate = rng.random::<bool>();
            let mut m = label.clone();
            for _ in 0..iters {
                m = morph_once(&m, dilate);
            }
            if m.is_empty_mask() {
                // erosion wiped the lesion; dilate instead
                m = label.clone();
                for _ in 0..iters {
                    m = morph_once(&m, true);
                }
            }
            m
        }
        NegativeRecipe::RandomBlob => random_blob_mask(label.h, label.w, rng),
        NegativeRecipe::Empty => MaskGrid::zeros(label.h, label.w),
        NegativeRecipe::Noise => noise_mask(label.h, label.w, rng),
    };
    (effective, mask)
}

/// For each positive, emit `per_positive` corrupted-label negatives.
/// Deterministic per seed; every emitted negative differs from its
/// source label in at least `min_diff_frac` of the union pixels.
pub fn synthesize_negatives(
    positives: &[Demonstration],
    seed: u64,
    cfg: &RecipeConfig,
) -> Result<Vec<Demonstration>, ExpertError> {
    if positives.is_empty() {
        return Err(ExpertError::EmptyClass("positive"));
    }
    let recipes = cfg.enabled();
    if recipes.is_empty() {
        return Err(ExpertError::NoRecipes);
    }
    assert!(cfg.min_shift >= 1, "zero translation shift is forbidden");
    assert!(cfg.min_shift <= cfg.max_shift);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len() * cfg.per_positive);
    for (i, pos) in positives.iter().enumerate() {
        for j in 0..cfg.per_positive {
            let recipe = recipes[(i + j) % recipes.len()];
            let mut chosen = None;
            for _attempt in 0..10 {
                let (used, mask) = apply_recipe(recipe, &pos.label, cfg, &mut rng);
                if diff_fraction(&mask, &pos.label) >= cfg.min_diff_frac {
                    chosen = Some((used, mask));
                    break;
                }
            }
            let (used, mask) = chosen.unwrap_or_else(|| {
                // guaranteed-different fallback
                if pos.label.is_empty_mask() {
                    loop {
                        let m = random_blob_mask(pos.label.h, pos.label.w, &mut rng);
                        if !m.is_empty_mask() {
                            break (NegativeRecipe::RandomBlob, m);
                        }
                    }
                } else {
                    (NegativeRecipe::Empty, MaskGrid::zeros(pos.label.h, pos.label.w))
                }
            });
            out.push(Demonstration {
                state: pos.state.clone(),
                label: mask,
                polarity: Polarity::SyntheticNegative,
                recipe: Some(used),
                source_id: pos.source_id,
            });
        }
    }
    Ok(out)
}

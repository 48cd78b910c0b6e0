use super::SampleGrid;

const BINS: usize = 256;

/// Per-image histogram equalization over 256 bins. Standard CDF remap;
/// a single-level image maps to itself. Pixel rank order is preserved
/// (non-strictly) because the CDF is monotone.
pub fn hist_equalize(image: &SampleGrid) -> SampleGrid {
    let n = image.pixels.len();
    let mut counts = [0usize; BINS];
    for &p in &image.pixels {
        counts[bin_of(p)] += 1;
    }
    let mut cdf = [0usize; BINS];
    let mut acc = 0;
    for (i, &c) in counts.iter().enumerate() {
        acc += c;
        cdf[i] = acc;
    }
    let cdf_min = *cdf.iter().find(|&&c| c > 0).unwrap_or(&0);
    if cdf_min == n {
        // degenerate histogram: every pixel in one bin
        return image.clone();
    }
    let denom = (n - cdf_min) as f32;
    let pixels = image
        .pixels
        .iter()
        .map(|&p| {
            let level = ((cdf[bin_of(p)] - cdf_min) as f32 / denom * 255.0).round() / 255.0;
            level.clamp(0.0, 1.0)
        })
        .collect();
    SampleGrid::new(image.id, image.h, image.w, pixels)
}

fn bin_of(p: f32) -> usize {
    ((p * BINS as f32) as usize).min(BINS - 1)
}

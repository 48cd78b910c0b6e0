use super::{connected_components, MetricsError};
use crate::synthdata::MaskGrid;

/// Lesion-level matching outcome for one (pred, gt) pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LesionMatch {
    /// Indices of ground-truth components matched with IoU >= threshold.
    pub detected_gt: Vec<usize>,
    /// Total ground-truth components.
    pub gt_total: usize,
    /// Predicted components left unmatched (false positives).
    pub false_positives: usize,
}

impl LesionMatch {
    pub fn merge(&mut self, other: &LesionMatch) {
        let offset = self.gt_total;
        self.detected_gt.extend(other.detected_gt.iter().map(|i| i + offset));
        self.gt_total += other.gt_total;
        self.false_positives += other.false_positives;
    }

    pub fn sensitivity(&self) -> f64 {
        if self.gt_total == 0 {
            1.0
        } else {
            self.detected_gt.len() as f64 / self.gt_total as f64
        }
    }
}

fn iou(a: &[usize], b: &[usize]) -> f64 {
    // both sorted; linear merge intersection
    let mut i = 0;
    let mut j = 0;
    let mut inter = 0usize;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Greedy one-to-one matching of predicted to ground-truth components by
/// descending IoU. A GT component counts as detected when its match has
/// IoU >= `iou_thresh`; unmatched predicted components are false positives.
pub fn lesion_metrics(pred: &MaskGrid, gt: &MaskGrid, iou_thresh: f64) -> Result<LesionMatch, MetricsError> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(MetricsError::ShapeMismatch { pred: (pred.h, pred.w), gt: (gt.h, gt.w) });
    }
    if !(0.0..1.0).contains(&iou_thresh) || iou_thresh <= 0.0 {
        return Err(MetricsError::BadIouThreshold(iou_thresh));
    }
    let pc = connected_components(pred);
    let gc = connected_components(gt);

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (gi, g) in gc.iter().enumerate() {
        for (pi, p) in pc.iter().enumerate() {
            let v = iou(g, p);
            if v >= iou_thresh {
                pairs.push((v, gi, pi));
            }
        }
    }
    // descending IoU, deterministic tie-break on (gt, pred) index
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut gt_used = vec![false; gc.len()];
    let mut pred_used = vec![false; pc.len()];
    let mut detected_gt = Vec::new();
    for (_, gi, pi) in pairs {
        if !gt_used[gi] && !pred_used[pi] {
            gt_used[gi] = true;
            pred_used[pi] = true;
            detected_gt.push(gi);
        }
    }
    detected_gt.sort_unstable();
    let false_positives = pred_used.iter().filter(|&&u| !u).count();
    Ok(LesionMatch { detected_gt, gt_total: gc.len(), false_positives })
}

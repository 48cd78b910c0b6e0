use super::*;
use crate::synthdata::MaskGrid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask16(fg: &[usize]) -> MaskGrid {
    let mut m = MaskGrid::zeros(16, 16);
    for &i in fg {
        m.pixels[i] = 1;
    }
    m
}

fn row_span(row: usize, c0: usize, c1: usize) -> Vec<usize> {
    (c0..=c1).map(|c| row * 16 + c).collect()
}

#[test]
fn f1_identity_is_one() {
    let m = mask16(&row_span(2, 3, 7));
    assert_eq!(pixel_f1(&m, &m).unwrap(), 1.0);
}

#[test]
fn f1_overlap_four_sevenths() {
    // pred 3 px, gt 4 px, overlap 2 px -> 2*2/(2*2+1+2) = 4/7
    let gt = mask16(&row_span(0, 0, 3));
    let pred = mask16(&row_span(0, 2, 4));
    let f1 = pixel_f1(&pred, &gt).unwrap();
    assert!((f1 - 4.0 / 7.0).abs() < 1e-12);
}

#[test]
fn f1_empty_pred_nonempty_gt_is_zero() {
    let gt = mask16(&row_span(0, 0, 3));
    assert_eq!(pixel_f1(&mask16(&[]), &gt).unwrap(), 0.0);
}

#[test]
fn f1_both_empty_is_one() {
    assert_eq!(pixel_f1(&mask16(&[]), &mask16(&[])).unwrap(), 1.0);
}

#[test]
fn f1_shape_mismatch_fails() {
    let a = MaskGrid::zeros(8, 8);
    let b = MaskGrid::zeros(16, 16);
    assert!(pixel_f1(&a, &b).is_err());
}

#[test]
fn components_empty_mask() {
    assert!(connected_components(&mask16(&[])).is_empty());
}

#[test]
fn components_diagonal_pixels_are_two() {
    // diagonal neighbors are not 4-connected
    let m = mask16(&[0, 17]);
    assert_eq!(connected_components(&m).len(), 2);
}

/// Independent oracle: union-find over foreground pixels.
fn components_oracle(mask: &MaskGrid) -> Vec<Vec<usize>> {
    let n = mask.h * mask.w;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for r in 0..mask.h {
        for c in 0..mask.w {
            let i = r * mask.w + c;
            if mask.pixels[i] != 1 {
                continue;
            }
            if c + 1 < mask.w && mask.pixels[i + 1] == 1 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, i + 1));
                parent[a] = b;
            }
            if r + 1 < mask.h && mask.pixels[i + mask.w] == 1 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, i + mask.w));
                parent[a] = b;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        if mask.pixels[i] == 1 {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(i);
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    for g in &mut out {
        g.sort_unstable();
    }
    out.sort_by_key(|g| g[0]);
    out
}

#[test]
fn components_match_union_find_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let pixels: Vec<u8> = (0..256).map(|_| u8::from(rng.random::<f32>() < 0.4)).collect();
        let m = MaskGrid::new(16, 16, pixels);
        assert_eq!(connected_components(&m), components_oracle(&m));
    }
}

#[test]
fn lesion_identity_two_lesions() {
    let mut fg = row_span(0, 0, 2);
    fg.extend(row_span(5, 4, 8));
    let m = mask16(&fg);
    let lm = lesion_metrics(&m, &m, 0.25).unwrap();
    assert_eq!(lm.detected_gt, vec![0, 1]);
    assert_eq!(lm.false_positives, 0);
}

#[test]
fn lesion_disjoint_blob_is_false_positive() {
    let gt = mask16(&row_span(0, 0, 2));
    let pred = mask16(&row_span(8, 0, 2));
    let lm = lesion_metrics(&pred, &gt, 0.25).unwrap();
    assert!(lm.detected_gt.is_empty());
    assert_eq!(lm.false_positives, 1);
}

#[test]
fn lesion_constructed_ious_at_half_threshold() {
    // gt0 4px / pred0 4px overlap 3 -> IoU 3/5 = 0.6
    // gt1 6px / pred1 7px overlap 3 -> IoU 3/10 = 0.3
    // pred2 disjoint -> IoU 0.0
    let mut gt_fg = row_span(0, 0, 3);
    gt_fg.extend(row_span(4, 0, 5));
    let gt = mask16(&gt_fg);
    let mut pred_fg = row_span(0, 1, 4);
    pred_fg.extend(row_span(4, 3, 9));
    pred_fg.extend(row_span(8, 0, 2));
    let pred = mask16(&pred_fg);

    // exhaustive oracle over all one-to-one assignments
    let best = exhaustive_best_match(&pred, &gt, 0.5);
    assert_eq!(best, 1);

    let lm = lesion_metrics(&pred, &gt, 0.5).unwrap();
    assert_eq!(lm.detected_gt.len(), 1);
    assert_eq!(lm.detected_gt, vec![0]);
    assert_eq!(lm.false_positives, 2);
}

/// Maximum number of GT components matchable at `thresh` over all
/// one-to-one assignments (brute force over pred permutations).
fn exhaustive_best_match(pred: &MaskGrid, gt: &MaskGrid, thresh: f64) -> usize {
    let pc = connected_components(pred);
    let gc = connected_components(gt);
    let iou = |a: &[usize], b: &[usize]| {
        let sa: std::collections::BTreeSet<_> = a.iter().collect();
        let sb: std::collections::BTreeSet<_> = b.iter().collect();
        let inter = sa.intersection(&sb).count();
        inter as f64 / (sa.len() + sb.len() - inter) as f64
    };
    fn rec(
        gi: usize,
        used: &mut Vec<bool>,
        gc: &[Vec<usize>],
        pc: &[Vec<usize>],
        iou: &dyn Fn(&[usize], &[usize]) -> f64,
        thresh: f64,
    ) -> usize {
        if gi == gc.len() {
            return 0;
        }
        let mut best = rec(gi + 1, used, gc, pc, iou, thresh); // leave gi unmatched
        for pi in 0..pc.len() {
            if !used[pi] && iou(&gc[gi], &pc[pi]) >= thresh {
                used[pi] = true;
                best = best.max(1 + rec(gi + 1, used, gc, pc, iou, thresh));
                used[pi] = false;
            }
        }
        best
    }
    let mut used = vec![false; pc.len()];
    rec(0, &mut used, &gc, &pc, &iou, thresh)
}

#[test]
fn welch_identical_samples_p_is_one() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(welch_t_test(&a, &a).unwrap(), 1.0);
}

#[test]
fn welch_small_shift_reference_value() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let p = welch_t_test(&a, &b).unwrap();
    assert!((p - 0.3466).abs() < 5e-4, "p = {}", p);
}

#[test]
fn welch_degenerate_variance_fails() {
    let a = [1.0, 1.0, 1.0];
    let b = [1.0, 2.0, 3.0];
    assert!(matches!(welch_t_test(&a, &b), Err(MetricsError::DegenerateVariance(..))));
}

#[test]
fn welch_symmetry_and_monotonicity() {
    let base: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
    let mut last_p = f64::INFINITY;
    for shift in [0.1, 0.3, 0.6, 1.0, 2.0] {
        let shifted: Vec<f64> = base.iter().map(|v| v + shift).collect();
        let p1 = welch_t_test(&base, &shifted).unwrap();
        let p2 = welch_t_test(&shifted, &base).unwrap();
        assert_eq!(p1, p2, "two-sided test is symmetric");
        assert!(p1 < last_p, "p decreases as the mean gap grows");
        last_p = p1;
    }
}

fn tiny_split() -> crate::synthdata::DatasetSplit {
    let cfg = crate::synthdata::ShapeConfig::with_size(16, 16);
    crate::synthdata::generate_dataset(10, 0, 5, &cfg, 5).unwrap()
}

#[test]
fn cross_validate_constant_runner() {
    let split = tiny_split();
    let runner = |_: &crate::synthdata::DatasetSplit, _: &[Vec<u64>], fold: usize, repeat: usize| {
        Ok::<_, MetricsError>(MetricsRecord {
            run_id: "t".into(),
            method: "const".into(),
            labeled_fraction: 1.0,
            repeat,
            fold,
            iteration: 0,
            f1: 0.5,
            sensitivity: 0.5,
            fps_per_image: 0.0,
            reward: None,
        })
    };
    let (records, summary) = cross_validate(runner, &split, 5, 5, 100).unwrap();
    assert_eq!(records.len(), 25);
    assert_eq!(summary.f1_mean, 0.5);
    assert_eq!(summary.f1_sd, 0.0);
}

#[test]
fn cross_validate_folds_partition_ids() {
    let split = tiny_split();
    let all_ids: std::collections::BTreeSet<u64> =
        split.labeled.iter().map(|(img, _)| img.id).collect();
    let mut seen_partitions = Vec::new();
    let runner = |s: &crate::synthdata::DatasetSplit, folds: &[Vec<u64>], fold: usize, repeat: usize| {
        if fold == 0 {
            let union: std::collections::BTreeSet<u64> = folds.iter().flatten().copied().collect();
            let total: usize = folds.iter().map(|f| f.len()).sum();
            assert_eq!(union.len(), total, "folds are pairwise disjoint");
            let expect: std::collections::BTreeSet<u64> = s.labeled.iter().map(|(i, _)| i.id).collect();
            assert_eq!(union, expect);
            seen_partitions.push(folds.to_vec());
        }
        Ok::<_, MetricsError>(MetricsRecord {
            run_id: "t".into(),
            method: "m".into(),
            labeled_fraction: 1.0,
            repeat,
            fold,
            iteration: 0,
            f1: 0.0,
            sensitivity: 0.0,
            fps_per_image: 0.0,
            reward: None,
        })
    };
    cross_validate(runner, &split, 5, 2, 7).unwrap();
    assert_eq!(seen_partitions.len(), 2);
    assert_ne!(seen_partitions[0], seen_partitions[1], "repeat seeds give distinct partitions");
    let _ = all_ids;
}

#[test]
fn csv_round_trip_and_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let rec = MetricsRecord {
        run_id: "abc123".into(),
        method: "rest".into(),
        labeled_fraction: 0.5,
        repeat: 1,
        fold: 2,
        iteration: 3,
        f1: 0.75,
        sensitivity: 0.8,
        fps_per_image: 0.25,
        reward: Some(0.9),
    };
    let rec2 = MetricsRecord { reward: None, iteration: 4, ..rec.clone() };
    csv::write(&path, &[rec.clone()]).unwrap();
    csv::append(&path, &[rec2.clone()]).unwrap();
    let back = csv::read(&path).unwrap();
    assert_eq!(back, vec![rec, rec2]);

    std::fs::write(&path, format!("{}\nbad,row\n", csv::HEADER)).unwrap();
    match csv::read(&path) {
        Err(MetricsError::Csv { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected csv error, got {:?}", other.map(|_| ())),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f1_is_symmetric(fg_a in proptest::collection::vec(0usize..256, 0..40),
                       fg_b in proptest::collection::vec(0usize..256, 0..40)) {
        let a = mask16(&fg_a);
        let b = mask16(&fg_b);
        prop_assert_eq!(pixel_f1(&a, &b).unwrap(), pixel_f1(&b, &a).unwrap());
    }

    #[test]
    fn fps_zero_when_pred_subset_matches(fg in proptest::collection::vec(0usize..256, 1..40)) {
        // pred == gt componentwise implies IoU 1 >= thresh for every component
        let gt = mask16(&fg);
        let lm = lesion_metrics(&gt, &gt, 0.25).unwrap();
        prop_assert_eq!(lm.false_positives, 0);
        prop_assert_eq!(lm.detected_gt.len(), lm.gt_total);
    }
}

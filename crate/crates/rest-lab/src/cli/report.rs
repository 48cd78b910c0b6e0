//! Report generation: per-fraction summary table with Welch p-values,
//! per-iteration convergence curves (CSV plus a rasterized plot), and
//! ground-truth / pre / post overlay triptychs.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::{ckpt_path, load_dataset, CliError, ExperimentConfig};
use crate::metrics::{csv, mean_sd, welch_t_test, MetricsRecord};
use crate::numcore::checkpoint;
use crate::segnet::{predict, SegModel, SEG_ARCH_ID};
use crate::synthdata::{MaskGrid, SampleGrid};

/// All CSV files in the metrics directory, merged.
pub fn read_all_metrics(metrics_dir: &Path) -> Result<Vec<MetricsRecord>, CliError> {
    if !metrics_dir.is_dir() {
        return Err(CliError::Data(format!("no metrics directory at {}", metrics_dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(metrics_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", metrics_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        out.extend(csv::read(&p)?);
    }
    Ok(out)
}

/// Best-validation-F1 record per (repeat, fold) cell for one
/// method+fraction (ties broken by the later iteration). This mirrors the
/// checkpoint the training commands save: the iterate with the best
/// validation F1, not necessarily the last one.
pub fn final_records(records: &[MetricsRecord], method: &str, fraction: f64) -> Vec<MetricsRecord> {
    let mut best: Vec<MetricsRecord> = Vec::new();
    for r in records {
        if r.method != method || (r.labeled_fraction - fraction).abs() > 1e-9 {
            continue;
        }
        match best
            .iter_mut()
            .find(|b| b.repeat == r.repeat && b.fold == r.fold)
        {
            Some(b) if r.f1 > b.f1 || (r.f1 == b.f1 && r.iteration >= b.iteration) => {
                *b = r.clone()
            }
            Some(_) => {}
            None => best.push(r.clone()),
        }
    }
    best.sort_by_key(|r| (r.repeat, r.fold));
    best
}

/// Welch p-value with the degenerate cases pinned: identical samples
/// give 1.0, constant-but-different samples give 0.0.
pub fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    if sa == sb {
        return 1.0;
    }
    match welch_t_test(a, b) {
        Ok(p) => p,
        Err(_) => {
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            if (ma - mb).abs() < 1e-12 { 1.0 } else { 0.0 }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TableRow {
    pub fraction: f64,
    pub n_cells: usize,
    pub pre_f1: (f64, f64),
    pub post_f1: (f64, f64),
    pub p_f1: f64,
    pub pre_sens: (f64, f64),
    pub post_sens: (f64, f64),
    pub pre_fps: (f64, f64),
    pub post_fps: (f64, f64),
}

/// Per-fraction pre (supervised) vs post (ReST) comparison, fractions
/// ascending. Fails if the two methods cover different CV cells.
pub fn summary_table(records: &[MetricsRecord]) -> Result<Vec<TableRow>, CliError> {
    let fractions: BTreeSet<u64> = records
        .iter()
        .filter(|r| r.method == "rest")
        .map(|r| r.labeled_fraction.to_bits())
        .collect();
    let mut rows = Vec::new();
    for bits in fractions {
        let fraction = f64::from_bits(bits);
        let pre = final_records(records, "supervised", fraction);
        let post = final_records(records, "rest", fraction);
        if pre.is_empty() {
            continue;
        }
        let cells = |rs: &[MetricsRecord]| -> Vec<(usize, usize)> {
            rs.iter().map(|r| (r.repeat, r.fold)).collect()
        };
        if cells(&pre) != cells(&post) {
            return Err(CliError::Data(format!(
                "fold mismatch at fraction {fraction}: run {} has {} cells, run {} has {}",
                pre[0].run_id,
                pre.len(),
                post[0].run_id,
                post.len()
            )));
        }
        let take = |rs: &[MetricsRecord], f: fn(&MetricsRecord) -> f64| -> Vec<f64> {
            rs.iter().map(f).collect()
        };
        let (pre_f1, post_f1) = (take(&pre, |r| r.f1), take(&post, |r| r.f1));
        rows.push(TableRow {
            fraction,
            n_cells: pre.len(),
            p_f1: welch_p(&pre_f1, &post_f1),
            pre_f1: mean_sd(&pre_f1),
            post_f1: mean_sd(&post_f1),
            pre_sens: mean_sd(&take(&pre, |r| r.sensitivity)),
            post_sens: mean_sd(&take(&post, |r| r.sensitivity)),
            pre_fps: mean_sd(&take(&pre, |r| r.fps_per_image)),
            post_fps: mean_sd(&take(&post, |r| r.fps_per_image)),
        });
    }
    Ok(rows)
}

pub fn render_table(rows: &[TableRow]) -> String {
    let mut s = String::new();
    s.push_str(
        "fraction |       pre F1 |      post F1 |   p(F1) |     pre Sens |    post Sens |  pre FPs/Img | post FPs/Img\n",
    );
    s.push_str(&"-".repeat(112));
    s.push('\n');
    for r in rows {
        let pm = |(m, sd): (f64, f64)| format!("{:.3}+-{:.3}", m, sd);
        let p = if r.p_f1 < 0.001 { "<0.001".to_string() } else { format!("{:.4}", r.p_f1) };
        s.push_str(&format!(
            "{:>7}% | {:>12} | {:>12} | {:>7} | {:>12} | {:>12} | {:>12} | {:>12}\n",
            super::pct(r.fraction),
            pm(r.pre_f1),
            pm(r.post_f1),
            p,
            pm(r.pre_sens),
            pm(r.post_sens),
            pm(r.pre_fps),
            pm(r.post_fps),
        ));
    }
    s
}

fn table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from(
        "fraction,n,pre_f1_mean,pre_f1_sd,post_f1_mean,post_f1_sd,p_f1,pre_sens_mean,pre_sens_sd,post_sens_mean,post_sens_sd,pre_fps_mean,pre_fps_sd,post_fps_mean,post_fps_sd\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.fraction,
            r.n_cells,
            r.pre_f1.0,
            r.pre_f1.1,
            r.post_f1.0,
            r.post_f1.1,
            r.p_f1,
            r.pre_sens.0,
            r.pre_sens.1,
            r.post_sens.0,
            r.post_sens.1,
            r.pre_fps.0,
            r.pre_fps.1,
            r.post_fps.0,
            r.post_fps.1,
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// Raster canvas (PPM)

pub struct Canvas {
    pub w: usize,
    pub h: usize,
    pub px: Vec<[u8; 3]>,
}

impl Canvas {
    pub fn new(w: usize, h: usize) -> Self {
        Canvas { w, h, px: vec![[255, 255, 255]; w * h] }
    }

    pub fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = c;
        }
    }

    pub fn line(&mut self, mut x0: i64, mut y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), CliError> {
        let mut buf = format!("P6\n{} {}\n255\n", self.w, self.h).into_bytes();
        for p in &self.px {
            buf.extend_from_slice(p);
        }
        let mut f = fs::File::create(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        f.write_all(&buf)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

pub const SERIES_COLORS: [(&str, [u8; 3]); 3] = [
    ("rest", [200, 40, 40]),
    ("self-train", [40, 90, 200]),
    ("neg-mine", [40, 160, 70]),
];

/// Mean F1 per iteration for one method at one fraction.
fn curve_points(records: &[MetricsRecord], method: &str, fraction: f64) -> Vec<(usize, f64)> {
    let mut iters: BTreeSet<usize> = BTreeSet::new();
    for r in records {
        if r.method == method && (r.labeled_fraction - fraction).abs() < 1e-9 {
            iters.insert(r.iteration);
        }
    }
    iters
        .into_iter()
        .map(|it| {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| {
                    r.method == method
                        && (r.labeled_fraction - fraction).abs() < 1e-9
                        && r.iteration == it
                })
                .map(|r| r.f1)
                .collect();
            (it, vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

fn plot_curves(series: &[(&str, [u8; 3], Vec<(usize, f64)>)], path: &Path) -> Result<(), CliError> {
    let (w, h) = (640usize, 420usize);
    let (ml, mr, mt, mb) = (50i64, 20i64, 20i64, 40i64);
    let mut cv = Canvas::new(w, h);
    let x_max = series
        .iter()
        .flat_map(|(_, _, pts)| pts.iter().map(|&(it, _)| it))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let plot_w = w as i64 - ml - mr;
    let plot_h = h as i64 - mt - mb;
    let to_xy = |it: f64, f1: f64| -> (i64, i64) {
        let x = ml + (it / x_max * plot_w as f64).round() as i64;
        let y = mt + ((1.0 - f1.clamp(0.0, 1.0)) * plot_h as f64).round() as i64;
        (x, y)
    };
    // frame and 0.25 gridlines
    let axis = [0u8, 0, 0];
    cv.line(ml, mt, ml, h as i64 - mb, axis);
    cv.line(ml, h as i64 - mb, w as i64 - mr, h as i64 - mb, axis);
    for g in 1..4 {
        let y = mt + (g as f64 / 4.0 * plot_h as f64).round() as i64;
        cv.line(ml, y, w as i64 - mr, y, [220, 220, 220]);
    }
    for (_, color, pts) in series {
        for pair in pts.windows(2) {
            let (x0, y0) = to_xy(pair[0].0 as f64, pair[0].1);
            let (x1, y1) = to_xy(pair[1].0 as f64, pair[1].1);
            cv.line(x0, y0, x1, y1, *color);
            cv.line(x0, y0 + 1, x1, y1 + 1, *color);
        }
        for &(it, f1) in pts {
            let (x, y) = to_xy(it as f64, f1);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    cv.set(x + dx, y + dy, *color);
                }
            }
        }
    }
    // color legend swatches, top-left, in SERIES_COLORS order
    for (i, (_, color, _)) in series.iter().enumerate() {
        for dx in 0..12 {
            for dy in 0..6 {
                cv.set(ml + 8 + dx, mt + 8 + i as i64 * 10 + dy, *color);
            }
        }
    }
    cv.write_ppm(path)
}

// ---------------------------------------------------------------------------
// Triptychs

fn overlay_panel(img: &SampleGrid, mask: &MaskGrid) -> Vec<[u8; 3]> {
    img.pixels
        .iter()
        .zip(&mask.pixels)
        .map(|(&p, &m)| {
            let g = (p * 255.0).round() as u8;
            if m == 1 {
                [255, g / 2, g / 2]
            } else {
                [g, g, g]
            }
        })
        .collect()
}

/// Ground truth | pre-model | post-model, red overlays, 2 px separators.
pub fn triptych(
    img: &SampleGrid,
    gt: &MaskGrid,
    pre: &SegModel,
    post: &SegModel,
) -> Result<Canvas, CliError> {
    let pre_mask = predict(pre, img).map_err(CliError::from)?.threshold(0.5);
    let post_mask = predict(post, img).map_err(CliError::from)?.threshold(0.5);
    let panels = [
        overlay_panel(img, gt),
        overlay_panel(img, &pre_mask),
        overlay_panel(img, &post_mask),
    ];
    let sep = 2usize;
    let mut cv = Canvas::new(img.w * 3 + sep * 2, img.h);
    for (pi, panel) in panels.iter().enumerate() {
        let x0 = pi * (img.w + sep);
        for r in 0..img.h {
            for c in 0..img.w {
                cv.px[r * cv.w + x0 + c] = panel[r * img.w + c];
            }
        }
    }
    Ok(cv)
}

#[derive(Debug, Default)]
pub struct ReportOutput {
    pub table_txt: Option<PathBuf>,
    pub table_rows: Vec<TableRow>,
    pub curve_files: Vec<PathBuf>,
    pub triptych_files: Vec<PathBuf>,
}

pub fn cmd_report(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    sample_ids: &[u64],
) -> Result<ReportOutput, CliError> {
    let records = read_all_metrics(&out_dir.join("metrics"))?;
    if records.is_empty() {
        return Err(CliError::Data("metrics directory contains no records".into()));
    }
    let report_dir = out_dir.join("report");
    fs::create_dir_all(&report_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", report_dir.display())))?;

    let mut out = ReportOutput::default();

    let rows = summary_table(&records)?;
    if !rows.is_empty() {
        let txt = render_table(&rows);
        let txt_path = report_dir.join("table.txt");
        fs::write(&txt_path, &txt).map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(report_dir.join("table.csv"), table_csv(&rows))
            .map_err(|e| CliError::Data(e.to_string()))?;
        out.table_txt = Some(txt_path);
        out.table_rows = rows;
    }

    // convergence curves per fraction with any iterative method present
    let fractions: BTreeSet<u64> = records
        .iter()
        .filter(|r| r.iteration > 0)
        .map(|r| r.labeled_fraction.to_bits())
        .collect();
    for bits in fractions {
        let fraction = f64::from_bits(bits);
        let mut series: Vec<(&str, [u8; 3], Vec<(usize, f64)>)> = Vec::new();
        let mut csv_text = String::from("method,iteration,f1_mean\n");
        for (name, color) in SERIES_COLORS {
            let pts = curve_points(&records, name, fraction);
            for &(it, f1) in &pts {
                csv_text.push_str(&format!("{name},{it},{f1}\n"));
            }
            if !pts.is_empty() {
                series.push((name, color, pts));
            }
        }
        if series.is_empty() {
            continue;
        }
        let stem = format!("curves_{:03}p", super::pct(fraction));
        let csv_path = report_dir.join(format!("{stem}.csv"));
        fs::write(&csv_path, csv_text).map_err(|e| CliError::Data(e.to_string()))?;
        let ppm_path = report_dir.join(format!("{stem}.ppm"));
        plot_curves(&series, &ppm_path)?;
        out.curve_files.push(csv_path);
        out.curve_files.push(ppm_path);
    }

    // triptychs are best-effort: they need the dataset and checkpoints
    out.triptych_files = write_triptychs(cfg, out_dir, &report_dir, &records, sample_ids)?;
    Ok(out)
}

fn write_triptychs(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    report_dir: &Path,
    records: &[MetricsRecord],
    sample_ids: &[u64],
) -> Result<Vec<PathBuf>, CliError> {
    let Some(bits) = records
        .iter()
        .filter(|r| r.method == "rest")
        .map(|r| r.labeled_fraction.to_bits())
        .max()
    else {
        return Ok(Vec::new());
    };
    let fraction = f64::from_bits(bits);
    let pre_path = ckpt_path(out_dir, "sup", fraction, 0, 0);
    let post_path = ckpt_path(out_dir, "rest", fraction, 0, 0);
    if !pre_path.exists() || !post_path.exists() || !out_dir.join("data/manifest.tsv").exists() {
        return Ok(Vec::new());
    }
    let split = load_dataset(out_dir)?;
    let pre = SegModel::from_params(
        checkpoint::load(&pre_path, SEG_ARCH_ID)?,
        cfg.dataset.height,
        cfg.dataset.width,
    );
    let post = SegModel::from_params(
        checkpoint::load(&post_path, SEG_ARCH_ID)?,
        cfg.dataset.height,
        cfg.dataset.width,
    );
    let default_ids: Vec<u64> = split.labeled.iter().take(3).map(|(i, _)| i.id).collect();
    let ids = if sample_ids.is_empty() { &default_ids } else { sample_ids };
    let mut written = Vec::new();
    for &id in ids {
        let Some((img, gt)) = split.labeled.iter().find(|(i, _)| i.id == id) else {
            return Err(CliError::Data(format!("sample id {id} is not a labeled image")));
        };
        let cv = triptych(img, gt, &pre, &post)?;
        let path = report_dir.join(format!("triptych_{id:05}.ppm"));
        cv.write_ppm(&path)?;
        written.push(path);
    }
    Ok(written)
}

//! Metrics CSV with a fixed schema:
//! `run_id,method,labeled_fraction,repeat,fold,iteration,f1,sensitivity,fps_per_image,reward`

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{MetricsError, MetricsRecord};

pub const HEADER: &str = "run_id,method,labeled_fraction,repeat,fold,iteration,f1,sensitivity,fps_per_image,reward";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |e| MetricsError::Io { path: path.display().to_string(), source: e }
}

fn format_row(r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.run_id,
        r.method,
        r.labeled_fraction,
        r.repeat,
        r.fold,
        r.iteration,
        r.f1,
        r.sensitivity,
        r.fps_per_image,
        r.reward.map(|v| v.to_string()).unwrap_or_default(),
    )
}

/// Write a fresh metrics file (header + rows).
pub fn write(path: &Path, records: &[MetricsRecord]) -> Result<(), MetricsError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(f);
    (|| {
        writeln!(out, "{}", HEADER)?;
        for r in records {
            writeln!(out, "{}", format_row(r))?;
        }
        out.flush()
    })()
    .map_err(io_err(path))
}

/// Append rows, creating the file (with header) if missing.
pub fn append(path: &Path, records: &[MetricsRecord]) -> Result<(), MetricsError> {
    let fresh = !path.exists();
    let f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(f);
    (|| {
        if fresh {
            writeln!(out, "{}", HEADER)?;
        }
        for r in records {
            writeln!(out, "{}", format_row(r))?;
        }
        out.flush()
    })()
    .map_err(io_err(path))
}

pub fn read(path: &Path) -> Result<Vec<MetricsRecord>, MetricsError> {
    let f = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(f);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let perr = |detail: String| MetricsError::Csv {
            path: path.display().to_string(),
            line: lineno,
            detail,
        };
        let line = line.map_err(io_err(path))?;
        if lineno == 1 {
            if line.trim() != HEADER {
                return Err(perr(format!("bad header '{}'", line)));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fs: Vec<&str> = line.split(',').collect();
        if fs.len() != 10 {
            return Err(perr(format!("expected 10 fields, got {}", fs.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64, MetricsError> {
            s.parse::<f64>().map_err(|_| MetricsError::Csv {
                path: path.display().to_string(),
                line: lineno,
                detail: format!("bad {} '{}'", what, s),
            })
        };
        let int = |s: &str, what: &str| -> Result<usize, MetricsError> {
            s.parse::<usize>().map_err(|_| MetricsError::Csv {
                path: path.display().to_string(),
                line: lineno,
                detail: format!("bad {} '{}'", what, s),
            })
        };
        records.push(MetricsRecord {
            run_id: fs[0].to_string(),
            method: fs[1].to_string(),
            labeled_fraction: num(fs[2], "labeled_fraction")?,
            repeat: int(fs[3], "repeat")?,
            fold: int(fs[4], "fold")?,
            iteration: int(fs[5], "iteration")?,
            f1: num(fs[6], "f1")?,
            sensitivity: num(fs[7], "sensitivity")?,
            fps_per_image: num(fs[8], "fps_per_image")?,
            reward: if fs[9].is_empty() { None } else { Some(num(fs[9], "reward")?) },
        });
    }
    Ok(records)
}

//! Line-oriented dataset manifest: one row per grid,
//! `id <TAB> role <TAB> image-path <TAB> mask-path-or-dash <TAB> fold-or-dash`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::SynthError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Labeled,
    Unlabeled,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Labeled => "labeled",
            Role::Unlabeled => "unlabeled",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: u64,
    pub role: Role,
    pub image_path: String,
    pub mask_path: Option<String>,
    pub fold: Option<usize>,
}

pub fn write(path: &Path, rows: &[ManifestRow]) -> Result<(), SynthError> {
    let io = |e| SynthError::Io { path: path.display().to_string(), source: e };
    let f = File::create(path).map_err(io)?;
    let mut out = BufWriter::new(f);
    (|| {
        for r in rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.id,
                r.role.as_str(),
                r.image_path,
                r.mask_path.as_deref().unwrap_or("-"),
                r.fold.map(|f| f.to_string()).unwrap_or_else(|| "-".into()),
            )?;
        }
        out.flush()
    })()
    .map_err(io)
}

pub fn read(path: &Path) -> Result<Vec<ManifestRow>, SynthError> {
    let f = File::open(path).map_err(|e| SynthError::Io { path: path.display().to_string(), source: e })?;
    let reader = BufReader::new(f);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let perr = |detail: String| SynthError::Parse {
            what: "manifest",
            path: path.display().to_string(),
            line: lineno,
            detail,
        };
        let line = line.map_err(|e| SynthError::Io { path: path.display().to_string(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(perr(format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let id = fields[0].parse::<u64>().map_err(|_| perr(format!("bad id '{}'", fields[0])))?;
        let role = match fields[1] {
            "labeled" => Role::Labeled,
            "unlabeled" => Role::Unlabeled,
            other => return Err(perr(format!("bad role '{}'", other))),
        };
        let mask_path = match fields[3] {
            "-" => None,
            p => Some(p.to_string()),
        };
        let fold = match fields[4] {
            "-" => None,
            p => Some(p.parse::<usize>().map_err(|_| perr(format!("bad fold '{}'", p)))?),
        };
        if role == Role::Labeled && mask_path.is_none() {
            return Err(perr("labeled row without mask path".into()));
        }
        rows.push(ManifestRow { id, role, image_path: fields[2].to_string(), mask_path, fold });
    }
    Ok(rows)
}

//! Parameter checkpoint file:
//! magic "RESTCKPT", u32 format version, architecture id string, then
//! per parameter: name, shape, little-endian f32 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{ParamSet, Tensor};
use super::NumError;

const MAGIC: &[u8; 8] = b"RESTCKPT";
const VERSION: u32 = 1;

pub fn save(path: &Path, arch_id: &str, set: &ParamSet) -> Result<(), NumError> {
    let f = File::create(path).map_err(|e| NumError::Io { path: path.display().to_string(), source: e })?;
    let mut w = BufWriter::new(f);
    let mut go = || -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(arch_id.len() as u16).to_le_bytes())?;
        w.write_all(arch_id.as_bytes())?;
        w.write_all(&(set.params.len() as u32).to_le_bytes())?;
        for p in &set.params {
            w.write_all(&(p.name.len() as u16).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&(p.value.shape().len() as u8).to_le_bytes())?;
            for d in p.value.shape() {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    go().map_err(|e| NumError::Io { path: path.display().to_string(), source: e })
}

pub fn load(path: &Path, expect_arch: &str) -> Result<ParamSet, NumError> {
    let f = File::open(path).map_err(|e| NumError::Io { path: path.display().to_string(), source: e })?;
    let mut r = BufReader::new(f);
    load_from(&mut r, expect_arch).map_err(|e| match e {
        LoadError::Io(e) => NumError::Io { path: path.display().to_string(), source: e },
        LoadError::Format(msg) => NumError::Checkpoint { path: path.display().to_string(), detail: msg },
        LoadError::Num(e) => e,
    })
}

enum LoadError {
    Io(std::io::Error),
    Format(String),
    Num(NumError),
}

impl From<std::io::Error> for LoadError {
    fn from(e: std::io::Error) -> Self {
        LoadError::Io(e)
    }
}

fn load_from(r: &mut impl Read, expect_arch: &str) -> Result<ParamSet, LoadError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LoadError::Format("bad magic".into()));
    }
    let ver = read_u32(r)?;
    if ver != VERSION {
        return Err(LoadError::Format(format!("unsupported version {}", ver)));
    }
    let arch = read_string_u16(r)?;
    if arch != expect_arch {
        return Err(LoadError::Format(format!(
            "architecture id mismatch: file '{}', expected '{}'",
            arch, expect_arch
        )));
    }
    let nparams = read_u32(r)? as usize;
    let mut set = ParamSet::new();
    for _ in 0..nparams {
        let name = read_string_u16(r)?;
        let ndim = {
            let mut b = [0u8; 1];
            r.read_exact(&mut b)?;
            b[0] as usize
        };
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f32; n];
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            data[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        let t = Tensor::new(shape, data).map_err(LoadError::Num)?;
        set.push(name, t);
    }
    Ok(set)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string_u16(r: &mut impl Read) -> Result<String, LoadError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    let len = u16::from_le_bytes(b) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| LoadError::Format("non-utf8 string field".into()))
}

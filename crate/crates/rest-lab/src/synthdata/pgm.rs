//! 8-bit binary PGM (P5) reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{MaskGrid, SampleGrid, SynthError};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |e| SynthError::Io { path: path.display().to_string(), source: e }
}

pub fn write_gray(path: &Path, w: usize, h: usize, bytes: &[u8]) -> Result<(), SynthError> {
    assert_eq!(bytes.len(), w * h);
    let f = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(f);
    (|| {
        write!(out, "P5\n{} {}\n255\n", w, h)?;
        out.write_all(bytes)?;
        out.flush()
    })()
    .map_err(io_err(path))
}

pub fn write_image(path: &Path, img: &SampleGrid) -> Result<(), SynthError> {
    let bytes: Vec<u8> = img.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect();
    write_gray(path, img.w, img.h, &bytes)
}

pub fn write_mask(path: &Path, mask: &MaskGrid) -> Result<(), SynthError> {
    let bytes: Vec<u8> = mask.pixels.iter().map(|&p| if p == 1 { 255 } else { 0 }).collect();
    write_gray(path, mask.w, mask.h, &bytes)
}

pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>), SynthError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(f);
    let mut all = Vec::new();
    r.read_to_end(&mut all).map_err(io_err(path))?;
    parse_p5(&all).map_err(|detail| SynthError::Parse {
        what: "pgm",
        path: path.display().to_string(),
        line: 1,
        detail,
    })
}

pub fn read_image(path: &Path, id: u64) -> Result<SampleGrid, SynthError> {
    let (w, h, bytes) = read_gray(path)?;
    let pixels = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(SampleGrid::new(id, h, w, pixels))
}

pub fn read_mask(path: &Path) -> Result<MaskGrid, SynthError> {
    let (w, h, bytes) = read_gray(path)?;
    let pixels = bytes.iter().map(|&b| u8::from(b > 127)).collect();
    Ok(MaskGrid::new(h, w, pixels))
}

fn parse_p5(data: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> Result<String, String> {
        // skip whitespace and '#' comments
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    if token(data)? != "P5" {
        return Err("not a P5 pgm".into());
    }
    let w: usize = token(data)?.parse().map_err(|_| "bad width".to_string())?;
    let h: usize = token(data)?.parse().map_err(|_| "bad height".to_string())?;
    let maxval: usize = token(data)?.parse().map_err(|_| "bad maxval".to_string())?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {}", maxval));
    }
    pos += 1; // single whitespace after maxval
    if data.len() < pos + w * h {
        return Err(format!("truncated raster: need {} bytes", w * h));
    }
    Ok((w, h, data[pos..pos + w * h].to_vec()))
}

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Result};
use crate::geomdist::PointCloud;

const MAGIC: &[u8; 4] = b"PCD1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// `.xyz`: one `x y z` line per point.
    Text,
    /// `PCD1` magic, u32 count, f32 triples, all little-endian.
    Binary,
}

impl CloudFormat {
    /// `.xyz` is text; every other extension is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xyz") => CloudFormat::Text,
            _ => CloudFormat::Binary,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `x` at f32 precision, via a temporary file and a rename.
pub fn save_cloud(path: &Path, x: &PointCloud, format: CloudFormat) -> Result<()> {
    let mut buf = Vec::with_capacity(x.len() * 40);
    match format {
        CloudFormat::Text => {
            for p in x.points() {
                writeln!(
                    buf,
                    "{:.8e} {:.8e} {:.8e}",
                    p[0] as f32, p[1] as f32, p[2] as f32
                )
                .expect("write to Vec");
            }
        }
        CloudFormat::Binary => {
            buf.extend_from_slice(MAGIC);
            buf.extend_from_slice(&(x.len() as u32).to_le_bytes());
            for v in x.points().iter().flatten() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    write_atomic(path, &buf)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(io_err(tmp))?;
    fs::rename(tmp, path).map_err(io_err(path))
}

/// Reads either format; binary files are recognised by their magic bytes.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let name = path.display().to_string();
    if bytes.starts_with(MAGIC) {
        parse_binary(&name, &bytes)
    } else {
        parse_text(&name, &bytes)
    }
}

fn parse_binary(name: &str, bytes: &[u8]) -> Result<PointCloud> {
    let parse = |msg: &str| DataError::Parse {
        path: name.to_string(),
        line: 0,
        msg: msg.to_string(),
    };
    let count = bytes
        .get(4..8)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| parse("truncated header"))?;
    let body = &bytes[8..];
    if !body.len().is_multiple_of(12) {
        return Err(parse("body is not a whole number of f32 triples"));
    }
    if body.len() / 12 != count {
        return Err(DataError::CountMismatch {
            path: name.to_string(),
            declared: count,
            found: body.len() / 12,
        });
    }
    let vals: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(parse("non-finite coordinate"));
    }
    if count == 0 {
        return Err(parse("no points"));
    }
    Ok(PointCloud::from_flat(&vals)?)
}

fn parse_text(name: &str, bytes: &[u8]) -> Result<PointCloud> {
    let err = |line: usize, msg: String| DataError::Parse {
        path: name.to_string(),
        line,
        msg,
    };
    let text = std::str::from_utf8(bytes).map_err(|e| err(0, e.to_string()))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(i + 1, format!("expected 3 values, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (k, f) in fields.iter().enumerate() {
            let v: f32 = f
                .parse()
                .map_err(|_| err(i + 1, format!("malformed number '{f}'")))?;
            if !v.is_finite() {
                return Err(err(i + 1, format!("non-finite value '{f}'")));
            }
            p[k] = v as f64;
        }
        pts.push(p);
    }
    if pts.is_empty() {
        return Err(err(0, "no points".into()));
    }
    Ok(PointCloud::new(pts)?)
}

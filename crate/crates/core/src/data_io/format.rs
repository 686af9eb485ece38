//! Point-cloud file formats.
//!
//! * `xyz` text: one `x y z` line per point, 9 significant digits.
//! * `pcb` binary: magic `PCB1`, little-endian `u32` count, then
//!   `count × 3` little-endian `f32` coordinates.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud};

pub const PCB_MAGIC: &[u8; 4] = b"PCB1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    XyzText,
    PcbBinary,
}

impl CloudFormat {
    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::XyzText => "xyz",
            CloudFormat::PcbBinary => "pcb",
        }
    }

    /// Guess from the file extension; anything but `.xyz`/`.txt` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xyz") | Some("txt") => CloudFormat::XyzText,
            _ => CloudFormat::PcbBinary,
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" | "xyz-text" | "text" => Ok(CloudFormat::XyzText),
            "pcb" | "pcb-binary" | "binary" => Ok(CloudFormat::PcbBinary),
            other => Err(Error::invalid(format!("unknown cloud format {other}"))),
        }
    }
}

pub fn encode_pcb(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + cloud.len() * 12);
    out.extend_from_slice(PCB_MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for &v in p {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pcb(bytes: &[u8], path: &str) -> Result<PointCloud> {
    let perr = |offset: usize, reason: String| Error::Parse {
        path: path.to_string(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < 4 || &bytes[..4] != PCB_MAGIC {
        return Err(perr(0, "bad magic, expected PCB1".into()));
    }
    if bytes.len() < 8 {
        return Err(perr(bytes.len(), "truncated point count".into()));
    }
    let count = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    if count == 0 {
        return Err(perr(4, "point count is zero".into()));
    }
    let need = 8 + count * 12;
    if bytes.len() < need {
        return Err(perr(bytes.len(), format!("truncated: {count} points need {need} bytes")));
    }
    if bytes.len() > need {
        return Err(perr(need, "trailing bytes after the last point".into()));
    }
    let mut pts = Vec::with_capacity(count);
    for i in 0..count {
        let mut p = [0.0; 3];
        for (k, slot) in p.iter_mut().enumerate() {
            let at = 8 + i * 12 + k * 4;
            let v = f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
            if !v.is_finite() {
                return Err(perr(at, format!("non-finite coordinate {v}")));
            }
            *slot = f64::from(v);
        }
        pts.push(p);
    }
    PointCloud::new(pts)
}

pub fn encode_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        s.push_str(&format!("{:.8e} {:.8e} {:.8e}\n", p[0], p[1], p[2]));
    }
    s
}

pub fn decode_xyz(text: &str, path: &str) -> Result<PointCloud> {
    let mut pts: Vec<Point> = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() {
            let perr = |reason: String| Error::Parse {
                path: path.to_string(),
                offset: offset as u64,
                reason,
            };
            let vals: Vec<&str> = body.split_whitespace().collect();
            if vals.len() != 3 {
                return Err(perr(format!("expected 3 values, found {}", vals.len())));
            }
            let mut p = [0.0; 3];
            for (slot, tok) in p.iter_mut().zip(&vals) {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| perr(format!("not a number: {tok}")))?;
                if !v.is_finite() {
                    return Err(perr(format!("non-finite coordinate {tok}")));
                }
                *slot = v;
            }
            pts.push(p);
        }
        offset += line.len();
    }
    if pts.is_empty() {
        return Err(Error::Parse {
            path: path.to_string(),
            offset: 0,
            reason: "no points".into(),
        });
    }
    PointCloud::new(pts)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let bytes = match format {
        CloudFormat::XyzText => encode_xyz(cloud).into_bytes(),
        CloudFormat::PcbBinary => encode_pcb(cloud),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    match format {
        CloudFormat::PcbBinary => decode_pcb(&bytes, &name),
        CloudFormat::XyzText => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
                path: name.clone(),
                offset: e.valid_up_to() as u64,
                reason: "invalid UTF-8".into(),
            })?;
            decode_xyz(text, &name)
        }
    }
}

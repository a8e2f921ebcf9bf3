//! Portable Float Map and Middlebury `.flo` files.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    DepthPfm,
    FlowFlo,
}

/// Interleaved float channels, rows from the top.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatBuffer {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl FloatBuffer {
    pub fn at(&self, x: u32, y: u32) -> &[f32] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }
}

pub fn load_prior(path: &Path, kind: PriorKind) -> Result<FloatBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match kind {
        PriorKind::DepthPfm => parse_pfm(&bytes),
        PriorKind::FlowFlo => parse_flo(&bytes),
    }
}

/// Little-endian PFM (scale −1), bottom row first as the format requires.
pub fn write_pfm(path: &Path, buf: &FloatBuffer) -> Result<()> {
    let tag = match buf.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Format(format!("PFM supports 1 or 3 channels, not {c}"))),
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", buf.width, buf.height).into_bytes();
    let row = (buf.width * buf.channels) as usize;
    for r in (0..buf.height as usize).rev() {
        for v in &buf.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(path, &out)
}

pub fn write_flo(path: &Path, width: u32, height: u32, uv: &[[f32; 2]]) -> Result<()> {
    if uv.len() != width as usize * height as usize {
        return Err(Error::Format("flow buffer size mismatch".into()));
    }
    let mut out = Vec::with_capacity(12 + uv.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(width as i32).to_le_bytes());
    out.extend_from_slice(&(height as i32).to_le_bytes());
    for p in uv {
        out.extend_from_slice(&p[0].to_le_bytes());
        out.extend_from_slice(&p[1].to_le_bytes());
    }
    write_file(path, &out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn parse_pfm(bytes: &[u8]) -> Result<FloatBuffer> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PFM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("bad PFM magic `{other}`"))),
    };
    let num = |s: String| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad PFM header value `{s}`")))
    };
    let width = num(token()?)? as u32;
    let height = num(token()?)? as u32;
    let scale = num(token()?)?;
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = (width * height * channels) as usize;
    let body = bytes
        .get(pos..pos + 4 * n)
        .ok_or_else(|| Error::Format("truncated PFM raster".into()))?;
    let little = scale < 0.0;
    let vals: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| {
            let a = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(a)
            } else {
                f32::from_be_bytes(a)
            }
        })
        .collect();
    let row = (width * channels) as usize;
    let mut data = Vec::with_capacity(n);
    for r in (0..height as usize).rev() {
        data.extend_from_slice(&vals[r * row..(r + 1) * row]);
    }
    Ok(FloatBuffer {
        width,
        height,
        channels,
        data,
    })
}

fn parse_flo(bytes: &[u8]) -> Result<FloatBuffer> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| [b[0], b[1], b[2], b[3]])
            .ok_or_else(|| Error::Format("truncated .flo file".into()))
    };
    let magic = f32::from_le_bytes(word(0)?);
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!(
            ".flo magic is {magic}, expected {FLO_MAGIC}"
        )));
    }
    let width = i32::from_le_bytes(word(1)?);
    let height = i32::from_le_bytes(word(2)?);
    if width <= 0 || height <= 0 {
        return Err(Error::Format(format!(".flo size {width}x{height}")));
    }
    let n = 2 * width as usize * height as usize;
    let data = (0..n)
        .map(|i| word(3 + i).map(f32::from_le_bytes))
        .collect::<Result<Vec<_>>>()?;
    Ok(FloatBuffer {
        width: width as u32,
        height: height as u32,
        channels: 2,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flo_single_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flo");
        write_flo(&p, 1, 1, &[[1.5, -2.0]]).unwrap();
        let b = load_prior(&p, PriorKind::FlowFlo).unwrap();
        assert_eq!((b.width, b.height, b.channels), (1, 1, 2));
        assert_eq!(b.data, vec![1.5, -2.0]);
    }

    #[test]
    fn flo_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flo");
        let mut bytes = 202021.0f32.to_le_bytes().to_vec();
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&[0; 8]);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_prior(&p, PriorKind::FlowFlo), Err(Error::Format(_))));
    }

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let buf = FloatBuffer {
            width: 3,
            height: 2,
            channels: 1,
            data: vec![0.1, f32::MAX, -3.5, 1e-30, 7.0, f32::MIN_POSITIVE],
        };
        write_pfm(&p, &buf).unwrap();
        let back = load_prior(&p, PriorKind::DepthPfm).unwrap();
        assert_eq!(back, buf);
        assert_eq!(back.at(0, 1), &[1e-30]);
        // the first stored row is the bottom one
        let raw = std::fs::read(&p).unwrap();
        let header = "Pf\n3 2\n-1.0\n".len();
        assert_eq!(&raw[header..header + 4], &1e-30f32.to_le_bytes());
    }

    #[test]
    fn pfm_big_endian_and_color() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let b = parse_pfm(&bytes).unwrap();
        assert_eq!(b.data, vec![1.0, 2.0, 3.0]);
        assert!(matches!(parse_pfm(b"P6\n1 1\n-1\n"), Err(Error::Format(_))));
        assert!(matches!(parse_pfm(b"Pf\n2 2\n-1\n\0\0"), Err(Error::Format(_))));
    }
}

//! Linear float image buffers and their 8-bit PNG encoding.

use std::path::Path;

use crate::error::{Error, Result};

pub const GAMMA: f32 = 2.2;

/// Interleaved linear RGB in `[0, 1]`, row-major from the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

/// Single-channel image, row-major from the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            data: rgb.iter().copied().cycle().take(n * 3).collect(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// BT.601 luma.
    pub fn luma(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }

    /// Reads an 8-bit PNG and undoes the display gamma.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Data(format!("cannot read image {}: {e}", path.display())))?
            .to_rgb8();
        let lut: Vec<f32> = (0..256).map(|v| decode_gamma(v as u8)).collect();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| lut[v as usize]).collect(),
        })
    }

    /// Writes an 8-bit PNG with a 1/2.2 gamma encode.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| encode_gamma(v)).collect();
        image::save_buffer(path, &bytes, self.width, self.height, image::ColorType::Rgb8)
            .map_err(|e| Error::Data(format!("cannot write image {}: {e}", path.display())))
    }

    /// Bilinear resample to a new size.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let mut out = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let px = resample(self.width, self.height, width, height, x, y, |sx, sy| {
                    self.get(sx, sy)
                });
                out.set(x, y, px);
            }
        }
        out
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: u32, height: u32, v: f32) -> Self {
        Self {
            width,
            height,
            data: vec![v; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    /// Reads an 8-bit grayscale PNG as `value / 255` with no gamma.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Data(format!("cannot read mask {}: {e}", path.display())))?
            .to_luma8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::save_buffer(path, &bytes, self.width, self.height, image::ColorType::L8)
            .map_err(|e| Error::Data(format!("cannot write mask {}: {e}", path.display())))
    }

    /// Nearest-neighbour resample; keeps mask values binary.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let mut out = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as u32;
                let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as u32;
                out.set(x, y, self.get(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        out
    }
}

fn resample(
    sw: u32,
    sh: u32,
    dw: u32,
    dh: u32,
    x: u32,
    y: u32,
    fetch: impl Fn(u32, u32) -> [f32; 3],
) -> [f32; 3] {
    let fx = ((x as f32 + 0.5) * sw as f32 / dw as f32 - 0.5).clamp(0.0, (sw - 1) as f32);
    let fy = ((y as f32 + 0.5) * sh as f32 / dh as f32 - 0.5).clamp(0.0, (sh - 1) as f32);
    let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(sw - 1), (y0 + 1).min(sh - 1));
    let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
    let (a, b, c, d) = (fetch(x0, y0), fetch(x1, y0), fetch(x0, y1), fetch(x1, y1));
    std::array::from_fn(|k| {
        let top = a[k] * (1.0 - tx) + b[k] * tx;
        let bot = c[k] * (1.0 - tx) + d[k] * tx;
        top * (1.0 - ty) + bot * ty
    })
}

pub fn encode_gamma(v: f32) -> u8 {
    (v.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

pub fn decode_gamma(v: u8) -> f32 {
    (v as f32 / 255.0).powf(GAMMA)
}

//! Image-quality measures and the evaluation harness.
//!
//! SSIM is single-scale on BT.601 luma with an 11×11 Gaussian window
//! (σ = 1.5), averaged over windows that fit entirely inside the image.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagebuf::{GrayImage, RgbImage};
use crate::renderer::ImageRequest;
use crate::sceneio::SceneDataset;
use crate::training::TrainState;

/// Reported when two images are identical.
pub const PSNR_CAP: f32 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const METRICS_CSV_HEADER: &str = "scene,split,config,psnr,ssim,lpips,frames";

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Usage(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// `10·log10(max²/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage, max_val: f32) -> Result<f32> {
    Ok(psnr_from_mse(mse(a, b)?, max_val))
}

pub fn psnr_from_mse(mse: f64, max_val: f32) -> f32 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    let v = 10.0 * ((max_val as f64).powi(2) / mse).log10();
    (v as f32).min(PSNR_CAP)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - c;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Valid-mode separable filtering of a `w × h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| taps[k] * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| taps[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two grayscale images in `[0, 1]`.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f32> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Usage(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Usage(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let taps = gaussian_taps();
    let x: Vec<f64> = a.data.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, w, h, &taps);
    let my = filter_valid(&y, w, h, &taps);
    let sxx = filter_valid(&prod(&x, &x), w, h, &taps);
    let syy = filter_valid(&prod(&y, &y), w, h, &taps);
    let sxy = filter_valid(&prod(&x, &y), w, h, &taps);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok((total / n as f64) as f32)
}

/// SSIM of two color images through their luma.
pub fn ssim_rgb(a: &RgbImage, b: &RgbImage) -> Result<f32> {
    ssim(&a.luma(), &b.luma())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f32,
    pub ssim: f32,
}

/// Per-scene aggregate; `lpips` is always written empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scene: String,
    pub split: String,
    pub config: String,
    pub psnr: f32,
    pub ssim: f32,
    pub frames: usize,
}

/// Means over per-frame values, folded in frame order.
pub fn aggregate(scene: &str, split: &str, config: &str, frames: &[FrameMetrics]) -> MetricsRow {
    let n = frames.len().max(1) as f64;
    MetricsRow {
        scene: scene.into(),
        split: split.into(),
        config: config.into(),
        psnr: (frames.iter().map(|f| f.psnr as f64).sum::<f64>() / n) as f32,
        ssim: (frames.iter().map(|f| f.ssim as f64).sum::<f64>() / n) as f32,
        frames: frames.len(),
    }
}

/// Renders one dataset frame at its recorded camera and time.
pub fn render_frame(state: &TrainState, dataset: &SceneDataset, frame: usize) -> Result<RgbImage> {
    let camera = dataset.camera_model(frame);
    let mask = dataset.load_mask(frame)?;
    let renderer = state.renderer();
    let view = ImageRequest {
        camera: &camera,
        pose: &dataset.frames[frame].pose,
        time: dataset.frame_time(frame),
        mask: mask.as_ref(),
        force_dynamic: state.force_dynamic(),
    };
    Ok(renderer
        .render_image(&state.bundle, state.active_grid(), &view)?
        .rgb)
}

/// Renders every frame of `split` and compares it with the ground truth.
pub fn evaluate(state: &TrainState, dataset: &SceneDataset, split: &str) -> Result<Vec<FrameMetrics>> {
    let frames = dataset.split(split)?;
    frames
        .iter()
        .map(|&f| {
            let pred = render_frame(state, dataset, f)?;
            let gt = dataset.load_image(f)?;
            Ok(FrameMetrics {
                frame: f,
                psnr: psnr(&pred, &gt, 1.0)?,
                ssim: ssim_rgb(&pred, &gt)?,
            })
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.4},{:.4},,{}\n",
            r.scene, r.split, r.config, r.psnr, r.ssim, r.frames
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

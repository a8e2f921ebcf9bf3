use rand::Rng;

use super::config::Ablation;
use crate::error::{Error, Result};
use crate::imagebuf::{GrayImage, RgbImage};
use crate::renderer::{blend, pixel_ray, FrameTimes, Ray};
use crate::sceneio::{CameraModel, SceneDataset};

/// Training frames held in memory with their masks and temporal neighbors.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub dataset: SceneDataset,
    /// Dataset frame indices of the training split.
    pub frames: Vec<usize>,
    images: Vec<RgbImage>,
    masks: Vec<GrayImage>,
    cameras: Vec<CameraModel>,
    /// Positions in `frames` of the same-camera frames at `t − 1` and `t + 1`.
    neighbors: Vec<(Option<usize>, Option<usize>)>,
    dynamic_pixels: Vec<Vec<u32>>,
    static_pixels: Vec<Vec<u32>>,
}

impl TrainingSet {
    /// Loads every frame of `split`. Each frame needs a motion mask.
    pub fn load(dataset: SceneDataset, split: &str) -> Result<Self> {
        let frames = dataset.split(split)?;
        let mut images = Vec::with_capacity(frames.len());
        let mut masks = Vec::with_capacity(frames.len());
        let mut cameras = Vec::with_capacity(frames.len());
        for &f in &frames {
            let mask = dataset.load_mask(f)?.ok_or_else(|| {
                Error::Data(format!(
                    "frame {f} ({}) has no motion mask",
                    dataset.frames[f].file
                ))
            })?;
            images.push(dataset.load_image(f)?);
            masks.push(mask);
            cameras.push(dataset.camera_model(f));
        }
        let position = |j: usize| frames.iter().position(|&g| g == j);
        let neighbors = frames
            .iter()
            .map(|&f| {
                (
                    dataset.temporal_neighbor(f, -1, &frames).and_then(position),
                    dataset.temporal_neighbor(f, 1, &frames).and_then(position),
                )
            })
            .collect();
        let mut dynamic_pixels = Vec::with_capacity(frames.len());
        let mut static_pixels = Vec::with_capacity(frames.len());
        for m in &masks {
            let (d, s): (Vec<u32>, Vec<u32>) =
                (0..m.data.len() as u32).partition(|&i| is_dynamic(m.data[i as usize]));
            dynamic_pixels.push(d);
            static_pixels.push(s);
        }
        Ok(Self {
            dataset,
            frames,
            images,
            masks,
            cameras,
            neighbors,
            dynamic_pixels,
            static_pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn time_count(&self) -> usize {
        self.dataset.time_count
    }

    /// Fraction of pixels with `M ≥ 0.5` over the whole set.
    pub fn dynamic_fraction(&self) -> f64 {
        let d: usize = self.dynamic_pixels.iter().map(Vec::len).sum();
        let all: usize = self.masks.iter().map(|m| m.data.len()).sum();
        d as f64 / all.max(1) as f64
    }
}

fn is_dynamic(m: f32) -> bool {
    blend(false, true, m)
}

/// Rays from one frame, split into static and dynamic by the motion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBatch {
    /// Dataset index of the sampled frame.
    pub frame: usize,
    pub prev_frame: Option<usize>,
    pub next_frame: Option<usize>,
    /// Times for dynamic rays; neighbors are present only when supervised.
    pub times: FrameTimes,
    pub pixels: Vec<(u32, u32)>,
    pub rays: Vec<Ray>,
    /// Jitter seed of each ray's stratified samples.
    pub seeds: Vec<u64>,
    pub mask: Vec<f32>,
    pub dynamic: Vec<bool>,
    pub gt: Vec<[f32; 3]>,
    /// Same-pixel colors in the neighbor frames, for dynamic rays only.
    pub gt_prev: Vec<Option<[f32; 3]>>,
    pub gt_next: Vec<Option<[f32; 3]>>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn static_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.dynamic[i]).collect()
    }

    pub fn dynamic_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.dynamic[i]).collect()
    }
}

/// Draws `n` pixels uniformly from one uniformly chosen frame. When the frame
/// has both kinds of pixel, the batch is patched to hold at least one of each.
pub fn sample_ray_batch<R: Rng + ?Sized>(
    set: &TrainingSet,
    rng: &mut R,
    n: usize,
    ablation: Option<Ablation>,
) -> Result<RayBatch> {
    if set.is_empty() {
        return Err(Error::Data("training set has no frames".into()));
    }
    if n == 0 {
        return Err(Error::Config("a ray batch needs at least one ray".into()));
    }
    let k = rng.gen_range(0..set.len());
    let frame = set.frames[k];
    let img = &set.images[k];
    let mask = &set.masks[k];
    let w = img.width;
    let count = img.pixel_count() as u32;
    let background_off = ablation == Some(Ablation::Background);
    let mut idx: Vec<u32> = (0..n).map(|_| rng.gen_range(0..count)).collect();
    if !background_off && n >= 2 {
        let (dyn_px, stat_px) = (&set.dynamic_pixels[k], &set.static_pixels[k]);
        let has_dyn = idx.iter().any(|&i| is_dynamic(mask.data[i as usize]));
        let has_stat = idx.iter().any(|&i| !is_dynamic(mask.data[i as usize]));
        if !has_dyn && !dyn_px.is_empty() {
            idx[n - 1] = dyn_px[rng.gen_range(0..dyn_px.len())];
        } else if !has_stat && !stat_px.is_empty() {
            idx[n - 1] = stat_px[rng.gen_range(0..stat_px.len())];
        }
    }
    let (mut prev, mut next) = set.neighbors[k];
    if ablation == Some(Ablation::Flow) {
        (prev, next) = (None, None);
    }
    let ds = &set.dataset;
    let times = FrameTimes {
        t: ds.frame_time(frame),
        prev: prev.map(|j| ds.frame_time(set.frames[j])),
        next: next.map(|j| ds.frame_time(set.frames[j])),
    };
    let pose = &ds.frames[frame].pose;
    let cam = &set.cameras[k];
    let mut batch = RayBatch {
        frame,
        prev_frame: prev.map(|j| set.frames[j]),
        next_frame: next.map(|j| set.frames[j]),
        times,
        pixels: Vec::with_capacity(n),
        rays: Vec::with_capacity(n),
        seeds: Vec::with_capacity(n),
        mask: Vec::with_capacity(n),
        dynamic: Vec::with_capacity(n),
        gt: Vec::with_capacity(n),
        gt_prev: Vec::with_capacity(n),
        gt_next: Vec::with_capacity(n),
    };
    for &i in &idx {
        let (x, y) = (i % w, i / w);
        let m = if background_off { 1.0 } else { mask.data[i as usize] };
        let dynamic = is_dynamic(m);
        batch.pixels.push((x, y));
        batch.rays.push(pixel_ray(cam, pose, x, y)?);
        batch.seeds.push(rng.gen());
        batch.mask.push(m);
        batch.dynamic.push(dynamic);
        batch.gt.push(img.get(x, y));
        let side = |j: Option<usize>| j.filter(|_| dynamic).map(|j| set.images[j].get(x, y));
        batch.gt_prev.push(side(prev));
        batch.gt_next.push(side(next));
    }
    Ok(batch)
}

//! Ray-traced synthetic dynamic scenes with exact masks and depth.
//!
//! A checkered ground square sits at `y = 0` under an emissive sphere that
//! either translates, deforms into a pulsing ellipsoid, or stays put. The
//! same pixel-ray convention as the renderer is used, and rays that leave
//! `[near, far]` without a hit see black.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{normalized_time, write_scene_file, CameraEntry, FrameRecord, SceneFile};
use super::priors::{write_pfm, FloatBuffer};
use super::{CameraModel, Pose, SceneBox, SceneDataset};
use crate::error::{Error, Result};
use crate::imagebuf::{GrayImage, RgbImage};
use crate::renderer::{pixel_ray, Ray};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Translate,
    Deform,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub resolution: u32,
    pub num_times: usize,
    pub num_cameras: usize,
    pub motion: Motion,
    pub seed: u64,
}

pub const GROUND_HALF: f64 = 1.0;
pub const CHECKER: f64 = 0.25;
pub const SPHERE_RADIUS: f64 = 0.22;
pub const SPHERE_START: [f64; 3] = [-0.35, 0.3, 0.0];
pub const SPHERE_VELOCITY: [f64; 3] = [0.7, 0.0, 0.0];
const REST_CENTER: [f64; 3] = [0.0, 0.3, 0.0];
const ARC_RADIUS: f64 = 2.0;
const ARC_HEIGHT: f64 = 1.1;
const ARC_SPAN: f64 = 1.0;
const TARGET: [f64; 3] = [0.0, 0.2, 0.0];

/// Analytic scene description; traces single rays.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTracer {
    pub motion: Motion,
    pub ground: [[f64; 3]; 2],
    pub sphere_color: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub color: [f64; 3],
    pub depth: f64,
    pub on_sphere: bool,
}

impl SynthTracer {
    pub fn new(motion: Motion, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut color = || -> [f64; 3] { std::array::from_fn(|_| rng.gen_range(0.15..0.9)) };
        let a = color();
        let b = color().map(|v| v * 0.5);
        let s = color();
        Self {
            motion,
            ground: [a, b],
            sphere_color: s,
        }
    }

    /// Center of the sphere at normalized time `t`.
    pub fn sphere_center(&self, t: f64) -> [f64; 3] {
        match self.motion {
            Motion::Translate => std::array::from_fn(|a| SPHERE_START[a] + t * SPHERE_VELOCITY[a]),
            Motion::Deform | Motion::Static => REST_CENTER,
        }
    }

    /// Ellipsoid semi-axes at time `t`.
    pub fn sphere_axes(&self, t: f64) -> [f64; 3] {
        let r = SPHERE_RADIUS;
        match self.motion {
            Motion::Deform => {
                let s = (std::f64::consts::PI * t).sin();
                [r * (1.0 + 0.45 * s), r * (1.0 - 0.3 * s), r * (1.0 + 0.2 * s)]
            }
            _ => [r; 3],
        }
    }

    fn sphere_hit(&self, ray: &Ray, t: f64) -> Option<(f64, [f64; 3])> {
        let c = self.sphere_center(t);
        let ax = self.sphere_axes(t);
        let o: [f64; 3] = std::array::from_fn(|a| (ray.origin[a] - c[a]) / ax[a]);
        let d: [f64; 3] = std::array::from_fn(|a| ray.dir[a] / ax[a]);
        let qa = super::dot(d, d);
        let qb = 2.0 * super::dot(o, d);
        let qc = super::dot(o, o) - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let s = (-qb - disc.sqrt()) / (2.0 * qa);
        (s >= ray.near && s <= ray.far).then(|| (s, std::array::from_fn(|a| o[a] + s * d[a])))
    }

    fn ground_hit(&self, ray: &Ray) -> Option<(f64, [f64; 3])> {
        if ray.dir[1] >= 0.0 {
            return None;
        }
        let s = -ray.origin[1] / ray.dir[1];
        let p = ray.at(s);
        (s >= ray.near && s <= ray.far && p[0].abs() <= GROUND_HALF && p[2].abs() <= GROUND_HALF)
            .then_some((s, p))
    }

    /// Emission along a ray at time `t`; depth is `far` on a miss.
    pub fn trace(&self, ray: &Ray, t: f64) -> Hit {
        let sphere = self.sphere_hit(ray, t);
        let ground = self.ground_hit(ray);
        match (sphere, ground) {
            (Some((s, local)), g) if g.is_none_or(|(gs, _)| s <= gs) => Hit {
                color: self.sphere_shade(local),
                depth: s,
                on_sphere: true,
            },
            (_, Some((s, p))) => {
                let ix = ((p[0] + GROUND_HALF) / CHECKER).floor() as i64;
                let iz = ((p[2] + GROUND_HALF) / CHECKER).floor() as i64;
                Hit {
                    color: self.ground[((ix + iz) & 1) as usize],
                    depth: s,
                    on_sphere: false,
                }
            }
            _ => Hit {
                color: [0.0; 3],
                depth: ray.far,
                on_sphere: false,
            },
        }
    }

    /// Color attached to the body: bands in the object's own frame so that
    /// motion is visible in the images.
    fn sphere_shade(&self, local: [f64; 3]) -> [f64; 3] {
        let band = 0.5 + 0.5 * (3.0 * local[0] + 2.0 * local[1]).sin();
        std::array::from_fn(|k| (self.sphere_color[k] * (0.55 + 0.45 * band)).min(1.0))
    }

    /// Image, motion mask and depth of one view. `moving` decides whether
    /// sphere pixels are marked dynamic.
    pub fn render(&self, model: &CameraModel, pose: &Pose, t: f64, moving: bool) -> Result<(RgbImage, GrayImage, FloatBuffer)> {
        let (w, h) = (model.width, model.height);
        let mut img = RgbImage::new(w, h);
        let mut mask = GrayImage::new(w, h);
        let mut depth = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                let hit = self.trace(&pixel_ray(model, pose, x, y)?, t);
                img.set(x, y, hit.color.map(|c| c as f32));
                if moving && hit.on_sphere {
                    mask.set(x, y, 1.0);
                }
                depth.push(hit.depth as f32);
            }
        }
        let depth = FloatBuffer {
            width: w,
            height: h,
            channels: 1,
            data: depth,
        };
        Ok((img, mask, depth))
    }
}

/// A generated dataset held in memory.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SynthSpec,
    pub tracer: SynthTracer,
    pub file: SceneFile,
    pub images: Vec<RgbImage>,
    pub masks: Vec<GrayImage>,
    pub depths: Vec<FloatBuffer>,
}

/// Camera poses on an arc facing the ground square.
pub fn arc_poses(num_cameras: usize) -> Vec<Pose> {
    (0..num_cameras)
        .map(|k| {
            let az = if num_cameras <= 1 {
                0.0
            } else {
                ARC_SPAN * (k as f64 / (num_cameras - 1) as f64 - 0.5)
            };
            let eye = [ARC_RADIUS * az.sin(), ARC_HEIGHT, ARC_RADIUS * az.cos()];
            Pose::look_at(eye, TARGET, [0.0, 1.0, 0.0])
        })
        .collect()
}

/// Held-out splits: `test_time` takes interior time indices `i % 3 == 2`
/// (sequences of 4+ frames); `test_view` takes the last camera when there
/// are 4+ cameras. Everything else trains.
pub fn synth_splits(num_cameras: usize, num_times: usize) -> BTreeMap<String, Vec<usize>> {
    let held_time = |i: usize| num_times >= 4 && i % 3 == 2 && i + 1 < num_times;
    let held_view = |c: usize| num_cameras >= 4 && c + 1 == num_cameras;
    let mut splits: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for c in 0..num_cameras {
        for i in 0..num_times {
            let idx = c * num_times + i;
            let key = if held_time(i) {
                "test_time"
            } else if held_view(c) {
                "test_view"
            } else {
                "train"
            };
            splits.entry(key.to_string()).or_default().push(idx);
        }
    }
    splits
}

pub fn synth_scene(spec: SynthSpec) -> Result<SynthScene> {
    if spec.resolution < 16 {
        return Err(Error::Config(format!(
            "synthetic resolution must be at least 16, got {}",
            spec.resolution
        )));
    }
    if spec.num_times == 0 || spec.num_cameras == 0 {
        return Err(Error::Config("need at least one time and one camera".into()));
    }
    let res = spec.resolution;
    let model = CameraModel {
        fx: 1.1 * res as f64,
        fy: 1.1 * res as f64,
        cx: res as f64 / 2.0,
        cy: res as f64 / 2.0,
        width: res,
        height: res,
        near: 0.8,
        far: 3.6,
    };
    let tracer = SynthTracer::new(spec.motion, spec.seed);
    let moving = spec.num_times > 1 && spec.motion != Motion::Static;
    let poses = arc_poses(spec.num_cameras);
    let mut frames = Vec::new();
    let mut images = Vec::new();
    let mut masks = Vec::new();
    let mut depths = Vec::new();
    for (c, pose) in poses.iter().enumerate() {
        for i in 0..spec.num_times {
            let t = normalized_time(i, spec.num_times);
            let (img, mask, depth) = tracer.render(&model, pose, t, moving)?;
            let stem = format!("c{c:02}_t{i:03}");
            frames.push(FrameRecord {
                file: format!("images/{stem}.png"),
                mask: Some(format!("masks/{stem}.png")),
                pose: *pose,
                time: i,
                camera: c as u32,
                depth_prior: Some(format!("priors/depth/{stem}.pfm")),
                flow_prior: None,
            });
            images.push(img);
            masks.push(mask);
            depths.push(depth);
        }
    }
    let mut file = SceneFile {
        cameras: (0..spec.num_cameras)
            .map(|c| CameraEntry {
                id: c as u32,
                model,
            })
            .collect(),
        frames,
        time_count: spec.num_times,
        scene_box: None,
        splits: synth_splits(spec.num_cameras, spec.num_times),
    };
    file.scene_box = Some(file.default_scene_box()?);
    file.validate()?;
    Ok(SynthScene {
        spec,
        tracer,
        file,
        images,
        masks,
        depths,
    })
}

impl SynthScene {
    pub fn scene_box(&self) -> SceneBox {
        self.file.scene_box.expect("generator sets the box")
    }

    /// Writes the dataset directory and loads it back.
    pub fn write(&self, dir: &Path) -> Result<SceneDataset> {
        for sub in ["images", "masks", "priors/depth"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for (i, f) in self.file.frames.iter().enumerate() {
            self.images[i].save_png(&dir.join(&f.file))?;
            if let Some(m) = &f.mask {
                self.masks[i].save_png(&dir.join(m))?;
            }
            if let Some(d) = &f.depth_prior {
                write_pfm(&dir.join(d), &self.depths[i])?;
            }
        }
        write_scene_file(dir, &self.file)?;
        SceneDataset::load(dir)
    }
}

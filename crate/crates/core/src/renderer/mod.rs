//! Ray generation, quadrature sampling, compositing, occupancy pruning and
//! the static/dynamic image drivers.
//!
//! Rays live in scene units. Sample positions are mapped into the unit cube
//! through the dataset's [`SceneBox`] before any field query; samples that
//! fall outside the box are treated as empty space.

mod analytic;
mod composite;
mod occupancy;
mod ray;

pub use analytic::{AnalyticSphere, ConstantBox};
pub use composite::{blend, composite, composite_backward, RenderOutput, EMPTY_OPACITY};
pub use occupancy::{DensityProbe, OccupancyConfig, OccupancyGrid};
pub use ray::{generate_ray, pixel_ray, sample_points, Ray, SampleMode, SampleSet};

use std::marker::PhantomData;

use rayon::prelude::*;

use crate::diffnet::Real;
use crate::error::{Error, Result};
use crate::fields::{clamp_unit, FieldBundle};
use crate::imagebuf::{GrayImage, RgbImage};
use crate::sceneio::{CameraModel, Pose, SceneBox};

/// A field with no time dependence, queried in batches of unit-cube points.
pub trait RadianceField<T: Real>: Sync {
    fn density(&self, xs: &[[T; 3]]) -> Result<Vec<T>>;
    fn radiance(&self, xs: &[[T; 3]], ds: &[[T; 3]]) -> Result<(Vec<T>, Vec<[T; 3]>)>;
}

/// The learned background field of a bundle.
pub struct StaticView<'a, T>(pub &'a FieldBundle<T>);

impl<T: Real> RadianceField<T> for StaticView<'_, T> {
    fn density(&self, xs: &[[T; 3]]) -> Result<Vec<T>> {
        self.0.static_field.density(&self.0.store, xs)
    }

    fn radiance(&self, xs: &[[T; 3]], ds: &[[T; 3]]) -> Result<(Vec<T>, Vec<[T; 3]>)> {
        let b = self.0.static_field.eval(&self.0.store, xs, ds, false)?;
        Ok((b.sigma, b.rgb))
    }
}

/// Occupancy probe for any static field.
pub struct FieldProbe<'a, F, T> {
    field: &'a F,
    _t: PhantomData<fn() -> T>,
}

impl<'a, F: RadianceField<T>, T: Real> FieldProbe<'a, F, T> {
    pub fn new(field: &'a F) -> Self {
        Self {
            field,
            _t: PhantomData,
        }
    }
}

impl<F: RadianceField<T>, T: Real> DensityProbe for FieldProbe<'_, F, T> {
    fn max_density(&self, xs: &[[f64; 3]], _: &[[f64; 3]], _: &[f64]) -> Result<Vec<f32>> {
        let pts: Vec<[T; 3]> = xs.iter().map(|p| p.map(T::lit)).collect();
        Ok(self
            .field
            .density(&pts)?
            .into_iter()
            .map(|s| s.as_f64() as f32)
            .collect())
    }
}

/// Occupancy probe over a bundle: static density and dynamic density at the
/// deformed position, maximized over the probe times.
pub struct BundleProbe<'a, T> {
    pub bundle: &'a FieldBundle<T>,
    pub background: bool,
    pub deformation: bool,
}

impl<T: Real> DensityProbe for BundleProbe<'_, T> {
    fn max_density(&self, xs: &[[f64; 3]], dirs: &[[f64; 3]], times: &[f64]) -> Result<Vec<f32>> {
        let b = self.bundle;
        let pts: Vec<[T; 3]> = xs.iter().map(|p| p.map(T::lit)).collect();
        let ds: Vec<[T; 3]> = dirs.iter().map(|d| d.map(T::lit)).collect();
        let mut best = if self.background {
            b.static_field.density(&b.store, &pts)?
        } else {
            vec![T::zero(); pts.len()]
        };
        for &t in times {
            let ts = vec![T::lit(t); pts.len()];
            let warped = if self.deformation {
                b.deform_field.eval(&b.store, &pts, &ds, &ts, false)?.x_star
            } else {
                pts.clone()
            };
            let s = b.dynamic_field.density(&b.store, &warped, &ts)?;
            for (m, v) in best.iter_mut().zip(s) {
                *m = m.max(v);
            }
        }
        Ok(best.into_iter().map(|s| s.as_f64() as f32).collect())
    }
}

/// Times at which one dynamic ray is rendered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTimes {
    pub t: f64,
    pub prev: Option<f64>,
    pub next: Option<f64>,
}

impl FrameTimes {
    /// Frame `index` of a `time_count`-frame sequence, with neighbors where
    /// they exist.
    pub fn of_frame(index: usize, time_count: usize) -> Self {
        let at = |i: usize| {
            if time_count <= 1 {
                0.0
            } else {
                i as f64 / (time_count - 1) as f64
            }
        };
        Self {
            t: at(index),
            prev: (index > 0).then(|| at(index - 1)),
            next: (index + 1 < time_count).then(|| at(index + 1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicRender<T> {
    pub current: RenderOutput<T>,
    pub prev: Option<RenderOutput<T>>,
    pub next: Option<RenderOutput<T>>,
}

/// Sampling settings shared by every render call.
#[derive(Debug, Clone, PartialEq)]
pub struct Renderer {
    pub scene_box: SceneBox,
    pub samples: usize,
    pub mode: SampleMode,
    /// Apply the deformation field before dynamic queries.
    pub deformation: bool,
}

/// Samples of one ray after pruning, ready for a batched field query.
pub(crate) struct Prepared {
    pub samples: SampleSet,
    /// Indices into the batch-wide query arrays, one per kept sample.
    pub slots: Vec<Option<usize>>,
    pub far: f64,
}

const RAY_CHUNK: usize = 256;

impl Renderer {
    pub fn new(scene_box: SceneBox, samples: usize) -> Self {
        Self {
            scene_box,
            samples,
            mode: SampleMode::Midpoint,
            deformation: true,
        }
    }

    /// Samples a ray and applies the scene-box and occupancy rules.
    pub fn prepare_ray(
        &self,
        ray: &Ray,
        mode: SampleMode,
        grid: Option<&OccupancyGrid>,
    ) -> Result<SampleSet> {
        let mut s = sample_points(ray, self.samples, mode)?;
        for (p, keep) in s.positions.iter().zip(s.keep.iter_mut()) {
            let u = self.scene_box.normalize(*p);
            if u.iter().any(|&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
                *keep = false;
            }
        }
        if let Some(g) = grid {
            g.filter(&mut s, &self.scene_box);
        }
        Ok(s)
    }

    /// Collects kept samples of several rays into flat query arrays.
    pub(crate) fn gather<T: Real>(
        &self,
        rays: &[Ray],
        modes: impl Fn(usize) -> SampleMode,
        grid: Option<&OccupancyGrid>,
    ) -> Result<(Vec<Prepared>, Vec<[T; 3]>, Vec<[T; 3]>)> {
        let mut prepared = Vec::with_capacity(rays.len());
        let mut xs = Vec::new();
        let mut ds = Vec::new();
        for (r, ray) in rays.iter().enumerate() {
            check_ray(ray)?;
            let samples = self.prepare_ray(ray, modes(r), grid)?;
            let dir = ray.dir.map(T::lit);
            let mut slots = Vec::with_capacity(samples.len());
            for (p, &keep) in samples.positions.iter().zip(&samples.keep) {
                if keep {
                    slots.push(Some(xs.len()));
                    let u = clamp_unit(self.scene_box.normalize(*p)).0;
                    xs.push(u.map(T::lit));
                    ds.push(dir);
                } else {
                    slots.push(None);
                }
            }
            prepared.push(Prepared {
                samples,
                slots,
                far: ray.far,
            });
        }
        Ok((prepared, xs, ds))
    }

    pub fn render_static<T: Real, F: RadianceField<T>>(
        &self,
        field: &F,
        ray: &Ray,
        grid: Option<&OccupancyGrid>,
    ) -> Result<RenderOutput<T>> {
        Ok(self
            .render_static_batch(field, std::slice::from_ref(ray), grid)?
            .remove(0))
    }

    /// Renders rays with one batched field query.
    pub fn render_static_batch<T: Real, F: RadianceField<T>>(
        &self,
        field: &F,
        rays: &[Ray],
        grid: Option<&OccupancyGrid>,
    ) -> Result<Vec<RenderOutput<T>>> {
        let (prepared, xs, ds) = self.gather::<T>(rays, |_| self.mode, grid)?;
        let (sigma, rgb) = if xs.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            field.radiance(&xs, &ds)?
        };
        prepared
            .iter()
            .map(|p| composite_prepared(p, &sigma, &rgb))
            .collect()
    }

    pub fn render_dynamic<T: Real>(
        &self,
        bundle: &FieldBundle<T>,
        ray: &Ray,
        times: FrameTimes,
        grid: Option<&OccupancyGrid>,
    ) -> Result<DynamicRender<T>> {
        Ok(self
            .render_dynamic_batch(bundle, std::slice::from_ref(ray), &[times], grid)?
            .remove(0))
    }

    /// Deforms every kept sample, queries the dynamic field at `t`, then at
    /// the flow-advected positions for the neighbor times that exist.
    pub fn render_dynamic_batch<T: Real>(
        &self,
        bundle: &FieldBundle<T>,
        rays: &[Ray],
        times: &[FrameTimes],
        grid: Option<&OccupancyGrid>,
    ) -> Result<Vec<DynamicRender<T>>> {
        if times.len() != rays.len() {
            return Err(Error::Usage("one FrameTimes per ray required".into()));
        }
        for ft in times {
            for t in [Some(ft.t), ft.prev, ft.next].into_iter().flatten() {
                crate::fields::check_time(t)?;
            }
        }
        let (prepared, xs, ds) = self.gather::<T>(rays, |_| self.mode, grid)?;
        let owner = owners(&prepared, xs.len());
        let ts: Vec<T> = owner.iter().map(|&r| T::lit(times[r].t)).collect();
        let store = &bundle.store;
        let x_star = if self.deformation && !xs.is_empty() {
            bundle.deform_field.eval(store, &xs, &ds, &ts, false)?.x_star
        } else {
            xs.clone()
        };
        let now = if xs.is_empty() {
            None
        } else {
            Some(bundle.dynamic_field.eval(store, &x_star, &ds, &ts, false)?)
        };
        let neighbor = |pick: fn(&FrameTimes) -> Option<f64>, forward: bool| -> Result<Option<(Vec<T>, Vec<[T; 3]>, Vec<usize>)>> {
            let Some(now) = now.as_ref() else {
                return Ok(None);
            };
            let idx: Vec<usize> = (0..xs.len()).filter(|&i| pick(&times[owner[i]]).is_some()).collect();
            if idx.is_empty() {
                return Ok(None);
            }
            let pts: Vec<[T; 3]> = idx
                .iter()
                .map(|&i| {
                    let f = if forward { now.sf_forward[i] } else { now.sf_backward[i] };
                    clamp_unit(std::array::from_fn(|a| x_star[i][a] + f[a])).0
                })
                .collect();
            let nd: Vec<[T; 3]> = idx.iter().map(|&i| ds[i]).collect();
            let nt: Vec<T> = idx.iter().map(|&i| T::lit(pick(&times[owner[i]]).unwrap())).collect();
            let b = bundle.dynamic_field.eval(store, &pts, &nd, &nt, false)?;
            let mut slot = vec![usize::MAX; xs.len()];
            for (k, &i) in idx.iter().enumerate() {
                slot[i] = k;
            }
            Ok(Some((b.sigma, b.rgb, slot)))
        };
        let next = neighbor(|f| f.next, true)?;
        let prev = neighbor(|f| f.prev, false)?;
        let (sigma, rgb) = match &now {
            Some(b) => (b.sigma.clone(), b.rgb.clone()),
            None => (Vec::new(), Vec::new()),
        };
        let remap = |p: &Prepared, slot: &[usize]| Prepared {
            samples: p.samples.clone(),
            slots: p.slots.iter().map(|s| s.map(|i| slot[i])).collect(),
            far: p.far,
        };
        prepared
            .iter()
            .enumerate()
            .map(|(r, p)| {
                let current = composite_prepared(p, &sigma, &rgb)?;
                let side = |n: &Option<(Vec<T>, Vec<[T; 3]>, Vec<usize>)>, want: bool| -> Result<Option<RenderOutput<T>>> {
                    match (n, want) {
                        (Some((s, c, slot)), true) => Ok(Some(composite_prepared(&remap(p, slot), s, c)?)),
                        (None, true) => Ok(Some(composite_prepared(&remap(p, &[]), &[], &[])?)),
                        _ => Ok(None),
                    }
                };
                Ok(DynamicRender {
                    current,
                    prev: side(&prev, times[r].prev.is_some())?,
                    next: side(&next, times[r].next.is_some())?,
                })
            })
            .collect()
    }

    /// Full-frame render. Pixels with mask value `M ≥ 0.5` use the dynamic
    /// fields, the rest the static one; with no mask every pixel is static.
    /// Only the selected field is evaluated per pixel.
    pub fn render_image<T: Real>(
        &self,
        bundle: &FieldBundle<T>,
        grid: Option<&OccupancyGrid>,
        view: &ImageRequest<'_>,
    ) -> Result<RenderedImage> {
        let (w, h) = (view.camera.width, view.camera.height);
        if let Some(m) = view.mask {
            if (m.width, m.height) != (w, h) {
                return Err(Error::Data(format!(
                    "mask is {}x{} but the camera renders {w}x{h}",
                    m.width, m.height
                )));
            }
        }
        let mask_at = |x: u32, y: u32| -> f32 {
            if view.force_dynamic {
                1.0
            } else {
                view.mask.map_or(0.0, |m| m.get(x, y))
            }
        };
        let mut dynamic_px = Vec::new();
        let mut static_px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if blend(false, true, mask_at(x, y)) {
                    dynamic_px.push((x, y));
                } else {
                    static_px.push((x, y));
                }
            }
        }
        let rays_of = |px: &[(u32, u32)]| -> Result<Vec<Ray>> {
            px.iter()
                .map(|&(x, y)| pixel_ray(view.camera, view.pose, x, y))
                .collect()
        };
        let current_only = FrameTimes {
            t: view.time,
            prev: None,
            next: None,
        };
        let static_out: Vec<RenderOutput<T>> = static_px
            .par_chunks(RAY_CHUNK)
            .map(|px| self.render_static_batch(&StaticView(bundle), &rays_of(px)?, grid))
            .collect::<Result<Vec<_>>>()?
            .concat();
        let dynamic_out: Vec<RenderOutput<T>> = dynamic_px
            .par_chunks(RAY_CHUNK)
            .map(|px| {
                let rays = rays_of(px)?;
                let times = vec![current_only; rays.len()];
                Ok(self
                    .render_dynamic_batch(bundle, &rays, &times, grid)?
                    .into_iter()
                    .map(|d| d.current)
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        let mut rgb = RgbImage::new(w, h);
        let mut depth = GrayImage::new(w, h);
        for (px, out) in static_px.iter().zip(&static_out).chain(dynamic_px.iter().zip(&dynamic_out)) {
            rgb.set(px.0, px.1, out.color.map(|c| c.as_f64() as f32));
            depth.set(px.0, px.1, out.expected_depth.as_f64() as f32);
        }
        Ok(RenderedImage { rgb, depth })
    }
}

/// One frame to render.
#[derive(Debug, Clone, Copy)]
pub struct ImageRequest<'a> {
    pub camera: &'a CameraModel,
    pub pose: &'a Pose,
    /// Normalized time.
    pub time: f64,
    pub mask: Option<&'a GrayImage>,
    /// Render every pixel with the dynamic fields.
    pub force_dynamic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub rgb: RgbImage,
    /// Expected depth in scene units.
    pub depth: GrayImage,
}

fn check_ray(ray: &Ray) -> Result<()> {
    let n = ray.dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-5 || !(ray.far > ray.near && ray.near >= 0.0) {
        return Err(Error::Input(format!(
            "invalid ray (|d| = {n}, near {}, far {})",
            ray.near, ray.far
        )));
    }
    Ok(())
}

/// Ray index owning each flat query slot.
pub(crate) fn owners(prepared: &[Prepared], n: usize) -> Vec<usize> {
    let mut owner = vec![0; n];
    for (r, p) in prepared.iter().enumerate() {
        for s in p.slots.iter().flatten() {
            owner[*s] = r;
        }
    }
    owner
}

/// Scatters query results back onto one ray (σ = 0 for pruned samples) and
/// composites.
pub(crate) fn composite_prepared<T: Real>(
    p: &Prepared,
    sigma: &[T],
    rgb: &[[T; 3]],
) -> Result<RenderOutput<T>> {
    let (s, c) = scatter(p, sigma, rgb);
    let deltas: Vec<T> = p.samples.deltas.iter().map(|&d| T::lit(d)).collect();
    Ok(composite(&s, &c, &deltas)?.with_depth(&p.samples.depths, p.far))
}

pub(crate) fn scatter<T: Real>(p: &Prepared, sigma: &[T], rgb: &[[T; 3]]) -> (Vec<T>, Vec<[T; 3]>) {
    let n = p.slots.len();
    let mut s = vec![T::zero(); n];
    let mut c = vec![[T::zero(); 3]; n];
    for (i, slot) in p.slots.iter().enumerate() {
        if let Some(k) = *slot {
            s[i] = sigma[k];
            c[i] = rgb[k];
        }
    }
    (s, c)
}

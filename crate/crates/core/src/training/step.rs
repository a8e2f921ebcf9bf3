use rayon::prelude::*;

use super::batch::RayBatch;
use super::losses::{loss_sceneflow, loss_static, PhotoTerm, SceneFlowTerms};
use crate::diffnet::{GradBuffer, Real};
use crate::error::Result;
use crate::fields::{clamp_unit, FieldBundle};
use crate::renderer::{
    composite, composite_backward, scatter, OccupancyGrid, Prepared, Renderer, SampleMode,
};

/// Rays per parallel work item. Fixed, so reductions do not depend on the
/// thread count.
pub(crate) const TRAIN_CHUNK: usize = 64;

/// Losses and parameter gradients of one batch.
pub struct BatchGradients<T> {
    pub l_static: f64,
    pub l_sceneflow: f64,
    pub static_pred: Vec<[f64; 3]>,
    pub dynamic_terms: Vec<SceneFlowTerms>,
    /// One buffer per chunk, static chunks first, in ray order.
    pub grads: Vec<GradBuffer<T>>,
}

impl<T: Real> BatchGradients<T> {
    pub fn total(&self) -> f64 {
        super::losses::loss_total(self.l_static, self.l_sceneflow)
    }
}

/// Renders a batch with recorded tapes and backpropagates the mean-per-ray
/// losses. Static rays touch only the static field; dynamic rays only the
/// deformation and dynamic fields.
pub fn batch_gradients<T: Real>(
    bundle: &FieldBundle<T>,
    renderer: &Renderer,
    grid: Option<&OccupancyGrid>,
    batch: &RayBatch,
    stratified: bool,
    sequential: bool,
) -> Result<BatchGradients<T>> {
    let stat = batch.static_indices();
    let dynm = batch.dynamic_indices();
    let ctx = Ctx {
        bundle,
        renderer,
        grid,
        batch,
        stratified,
    };
    let s_scale = T::lit(1.0 / stat.len().max(1) as f64);
    let d_scale = T::lit(1.0 / dynm.len().max(1) as f64);
    let run_static = |rays: &[usize]| ctx.static_chunk(rays, s_scale);
    let run_dynamic = |rays: &[usize]| ctx.dynamic_chunk(rays, d_scale);
    let (s_out, d_out): (Vec<_>, Vec<_>) = if sequential {
        (
            stat.chunks(TRAIN_CHUNK).map(run_static).collect::<Result<_>>()?,
            dynm.chunks(TRAIN_CHUNK).map(run_dynamic).collect::<Result<_>>()?,
        )
    } else {
        (
            stat.par_chunks(TRAIN_CHUNK).map(run_static).collect::<Result<_>>()?,
            dynm.par_chunks(TRAIN_CHUNK).map(run_dynamic).collect::<Result<_>>()?,
        )
    };
    let mut grads = Vec::with_capacity(s_out.len() + d_out.len());
    let mut static_pred = Vec::with_capacity(stat.len());
    for (pred, g) in s_out {
        static_pred.extend(pred);
        grads.push(g);
    }
    let mut dynamic_terms = Vec::with_capacity(dynm.len());
    for (terms, g) in d_out {
        dynamic_terms.extend(terms);
        grads.push(g);
    }
    let static_gt: Vec<[f64; 3]> = stat.iter().map(|&i| batch.gt[i].map(f64::from)).collect();
    Ok(BatchGradients {
        l_static: loss_static(&static_pred, &static_gt)?,
        l_sceneflow: loss_sceneflow(&dynamic_terms),
        static_pred,
        dynamic_terms,
        grads,
    })
}

struct Ctx<'a, T> {
    bundle: &'a FieldBundle<T>,
    renderer: &'a Renderer,
    grid: Option<&'a OccupancyGrid>,
    batch: &'a RayBatch,
    stratified: bool,
}

/// Per-sample upstream gradients of one render.
struct Upstream<T> {
    dsigma: Vec<T>,
    drgb: Vec<[T; 3]>,
}

impl<T: Real> Upstream<T> {
    fn zeros(n: usize) -> Self {
        Self {
            dsigma: vec![T::zero(); n],
            drgb: vec![[T::zero(); 3]; n],
        }
    }
}

/// Composites every ray of a chunk against its target and writes
/// `∂(scale·‖C − gt‖²)/∂(σ, c)` into the flat query slots.
fn photometric<T: Real>(
    prepared: &[Prepared],
    sigma: &[T],
    rgb: &[[T; 3]],
    gt: impl Fn(usize) -> [f32; 3],
    scale: T,
    up: &mut Upstream<T>,
) -> Result<Vec<PhotoTerm>> {
    let two = T::lit(2.0);
    prepared
        .iter()
        .enumerate()
        .map(|(r, p)| {
            let (s, c) = scatter(p, sigma, rgb);
            let deltas: Vec<T> = p.samples.deltas.iter().map(|&d| T::lit(d)).collect();
            let out = composite(&s, &c, &deltas)?;
            let target = gt(r);
            let g: [T; 3] = std::array::from_fn(|k| two * scale * (out.color[k] - T::lit(target[k] as f64)));
            let (ds, dc) = composite_backward(&c, &deltas, &out, g);
            for (i, slot) in p.slots.iter().enumerate() {
                if let Some(k) = *slot {
                    up.dsigma[k] = ds[i];
                    up.drgb[k] = dc[i];
                }
            }
            Ok(PhotoTerm {
                pred: out.color.map(|v| v.as_f64()),
                gt: target.map(f64::from),
            })
        })
        .collect()
}

impl<T: Real> Ctx<'_, T> {
    fn mode(&self, ray: usize) -> SampleMode {
        if self.stratified {
            SampleMode::Stratified {
                seed: self.batch.seeds[ray],
            }
        } else {
            SampleMode::Midpoint
        }
    }

    fn gather(&self, rays: &[usize]) -> Result<(Vec<Prepared>, Vec<[T; 3]>, Vec<[T; 3]>)> {
        let chunk: Vec<_> = rays.iter().map(|&i| self.batch.rays[i]).collect();
        self.renderer.gather::<T>(&chunk, |r| self.mode(rays[r]), self.grid)
    }

    fn static_chunk(&self, rays: &[usize], scale: T) -> Result<(Vec<[f64; 3]>, GradBuffer<T>)> {
        let b = self.bundle;
        let mut grads = GradBuffer::for_store(&b.store);
        let (prepared, xs, ds) = self.gather(rays)?;
        let batch = if xs.is_empty() {
            None
        } else {
            Some(b.static_field.eval(&b.store, &xs, &ds, true)?)
        };
        let (sigma, rgb) = batch.as_ref().map_or((&[][..], &[][..]), |s| (&s.sigma[..], &s.rgb[..]));
        let mut up = Upstream::zeros(xs.len());
        let terms = photometric(&prepared, sigma, rgb, |r| self.batch.gt[rays[r]], scale, &mut up)?;
        if let Some(batch) = &batch {
            b.static_field
                .backward(&b.store, batch, &xs, &up.dsigma, &up.drgb, &mut grads)?;
        }
        Ok((terms.into_iter().map(|t| t.pred).collect(), grads))
    }

    fn dynamic_chunk(&self, rays: &[usize], scale: T) -> Result<(Vec<SceneFlowTerms>, GradBuffer<T>)> {
        let b = self.bundle;
        let store = &b.store;
        let times = self.batch.times;
        let mut grads = GradBuffer::for_store(store);
        let (prepared, xs, ds) = self.gather(rays)?;
        let n = xs.len();
        let ts = vec![T::lit(times.t); n];
        let deform = if self.renderer.deformation && n > 0 {
            Some(b.deform_field.eval(store, &xs, &ds, &ts, true)?)
        } else {
            None
        };
        let x_star = deform.as_ref().map_or_else(|| xs.clone(), |d| d.x_star.clone());
        let now = if n > 0 {
            Some(b.dynamic_field.eval(store, &x_star, &ds, &ts, true)?)
        } else {
            None
        };
        let (sigma, rgb) = now.as_ref().map_or((&[][..], &[][..]), |s| (&s.sigma[..], &s.rgb[..]));
        let mut up = Upstream::zeros(n);
        let current = photometric(&prepared, sigma, rgb, |r| self.batch.gt[rays[r]], scale, &mut up)?;

        let mut dflow_b = vec![[T::zero(); 3]; n];
        let mut dflow_f = vec![[T::zero(); 3]; n];
        let mut dx_star = vec![[T::zero(); 3]; n];
        let mut side_terms = |t_side: Option<f64>, gt_side: &[Option<[f32; 3]>], forward: bool| -> Result<Option<Vec<PhotoTerm>>> {
            let Some(t_side) = t_side else {
                return Ok(None);
            };
            let targets: Option<Vec<[f32; 3]>> = rays.iter().map(|&i| gt_side[i]).collect();
            let Some(targets) = targets else {
                return Ok(None);
            };
            let Some(now) = now.as_ref() else {
                let mut up = Upstream::zeros(0);
                return Ok(Some(photometric(&prepared, &[], &[], |r| targets[r], scale, &mut up)?));
            };
            let flow = if forward { &now.sf_forward } else { &now.sf_backward };
            let (pts, flags): (Vec<[T; 3]>, Vec<[bool; 3]>) = (0..n)
                .map(|i| clamp_unit(std::array::from_fn(|a| x_star[i][a] + flow[i][a])))
                .unzip();
            let nts = vec![T::lit(t_side); n];
            let nb = b.dynamic_field.eval(store, &pts, &ds, &nts, true)?;
            let mut side_up = Upstream::zeros(n);
            let terms = photometric(&prepared, &nb.sigma, &nb.rgb, |r| targets[r], scale, &mut side_up)?;
            let dx = b
                .dynamic_field
                .backward(store, &nb, &pts, &side_up.dsigma, &side_up.drgb, None, &mut grads, true)?
                .expect("position gradient requested");
            let dflow = if forward { &mut dflow_f } else { &mut dflow_b };
            for i in 0..n {
                for a in 0..3 {
                    if !flags[i][a] {
                        dflow[i][a] += dx[i][a];
                        dx_star[i][a] += dx[i][a];
                    }
                }
            }
            Ok(Some(terms))
        };
        let next = side_terms(times.next, &self.batch.gt_next, true)?;
        let prev = side_terms(times.prev, &self.batch.gt_prev, false)?;

        if let Some(now) = &now {
            let dx_now = b.dynamic_field.backward(
                store,
                now,
                &x_star,
                &up.dsigma,
                &up.drgb,
                Some((&dflow_b, &dflow_f)),
                &mut grads,
                deform.is_some(),
            )?;
            if let (Some(d), Some(dx_now)) = (&deform, dx_now) {
                for (acc, g) in dx_star.iter_mut().zip(dx_now) {
                    for a in 0..3 {
                        acc[a] += g[a];
                    }
                }
                b.deform_field.backward(store, d, &xs, &dx_star, &mut grads)?;
            }
        }
        let terms = current
            .into_iter()
            .enumerate()
            .map(|(r, current)| SceneFlowTerms {
                current,
                prev: prev.as_ref().map(|p| p[r]),
                next: next.as_ref().map(|p| p[r]),
            })
            .collect();
        Ok((terms, grads))
    }
}

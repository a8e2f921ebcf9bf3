use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::{fill_rows, FieldConfig};
use crate::diffnet::{Activation, GradBuffer, Init, Mlp, MlpSpec, MlpTape, ParamStore, Real};
use crate::encoding::{freq_encode_into, FreqConfig, HashTape, PositionEncoder};
use crate::error::{Error, Result};

// trunk output layout: [sigma, sf_b(3), sf_f(3), geo...]
const SIGMA: usize = 0;
const SF_B: usize = 1;
const SF_F: usize = 4;
const GEO: usize = 7;

/// Motion-centric field queried at deformed positions and a time:
/// `(sf_b, sf_f, σ, c) = f(x*, d, t)`.
#[derive(Debug, Clone)]
pub struct DynamicField {
    encoder: PositionEncoder,
    trunk: Mlp,
    color: Mlp,
    dir_freq: FreqConfig,
    time_freq: FreqConfig,
    geo: usize,
    max_flow: f64,
}

#[derive(Debug, Clone)]
pub struct DynamicBatch<T> {
    pub sigma: Vec<T>,
    pub rgb: Vec<[T; 3]>,
    pub sf_backward: Vec<[T; 3]>,
    pub sf_forward: Vec<[T; 3]>,
    tape: Option<DynamicTape<T>>,
}

#[derive(Debug, Clone)]
struct DynamicTape<T> {
    hash: HashTape<T>,
    trunk: MlpTape<T>,
    color: MlpTape<T>,
    /// tanh of the raw flow outputs, columns 1..7 of the trunk.
    tanh: Array2<T>,
}

fn specs(cfg: &FieldConfig, pos_width: usize) -> (MlpSpec, MlpSpec) {
    let mut heads = vec![Activation::Softplus];
    heads.extend(std::iter::repeat(Activation::None).take(6 + cfg.geo_features));
    let trunk = MlpSpec::new(pos_width + cfg.time_freq.output_width(1), &cfg.hidden, heads);
    let color = MlpSpec::new(
        cfg.geo_features + cfg.dir_freq.output_width(3),
        &cfg.hidden,
        vec![Activation::Sigmoid; 3],
    );
    (trunk, color)
}

impl DynamicField {
    pub(crate) fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &FieldConfig,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder =
            PositionEncoder::register(store, "dynamic.grid", cfg.grid, cfg.pos_freq, rng)?;
        let (ts, cs) = specs(cfg, encoder.output_width());
        let trunk = Mlp::register(store, "dynamic.trunk", ts, init, rng)?;
        let color = Mlp::register(store, "dynamic.color", cs, init, rng)?;
        Ok(Self::assemble(cfg, encoder, trunk, color))
    }

    pub(crate) fn bind<T: Real>(store: &ParamStore<T>, cfg: &FieldConfig) -> Result<Self> {
        let encoder = PositionEncoder::bind(store, "dynamic.grid", cfg.grid, cfg.pos_freq)?;
        let (ts, cs) = specs(cfg, encoder.output_width());
        let trunk = Mlp::bind(store, "dynamic.trunk", ts)?;
        let color = Mlp::bind(store, "dynamic.color", cs)?;
        Ok(Self::assemble(cfg, encoder, trunk, color))
    }

    fn assemble(cfg: &FieldConfig, encoder: PositionEncoder, trunk: Mlp, color: Mlp) -> Self {
        Self {
            encoder,
            trunk,
            color,
            dir_freq: cfg.dir_freq,
            time_freq: cfg.time_freq,
            geo: cfg.geo_features,
            max_flow: cfg.max_flow as f64,
        }
    }

    pub fn trunk_mlp(&self) -> &Mlp {
        &self.trunk
    }

    fn trunk_input<T: Real>(
        &self,
        store: &ParamStore<T>,
        xs: &[[T; 3]],
        ts: &[T],
        mut hash: Option<&mut HashTape<T>>,
    ) -> Array2<T> {
        let pw = self.encoder.output_width();
        fill_rows(xs.len(), self.trunk.spec().input_width(), |i, row| {
            self.encoder
                .encode_into(store, &xs[i], &mut row[..pw], hash.as_deref_mut());
            let t = ts[i] + ts[i] - T::one();
            freq_encode_into(&[t], &self.time_freq, &mut row[pw..]);
        })
    }

    /// Density only; used by the occupancy grid.
    pub fn density<T: Real>(&self, store: &ParamStore<T>, xs: &[[T; 3]], ts: &[T]) -> Result<Vec<T>> {
        let input = self.trunk_input(store, xs, ts, None);
        let out = self.trunk.forward(store, input.view())?;
        Ok(out.column(SIGMA).to_vec())
    }

    pub fn eval<T: Real>(
        &self,
        store: &ParamStore<T>,
        xs: &[[T; 3]],
        ds: &[[T; 3]],
        ts: &[T],
        record: bool,
    ) -> Result<DynamicBatch<T>> {
        let n = xs.len();
        let mut hash = if record {
            self.encoder.grid().tape(n)
        } else {
            HashTape::default()
        };
        let input = self.trunk_input(store, xs, ts, record.then_some(&mut hash));
        let (trunk, trunk_tape) = if record {
            let (o, t) = self.trunk.forward_taped(store, input.view())?;
            (o, Some(t))
        } else {
            (self.trunk.forward(store, input.view())?, None)
        };
        let geo = self.geo;
        let color_in = fill_rows(n, geo + self.dir_freq.output_width(3), |i, row| {
            for (dst, src) in row[..geo].iter_mut().zip(trunk.row(i).iter().skip(GEO)) {
                *dst = *src;
            }
            freq_encode_into(&ds[i], &self.dir_freq, &mut row[geo..]);
        });
        let (rgb_m, color_tape) = if record {
            let (o, t) = self.color.forward_taped(store, color_in.view())?;
            (o, Some(t))
        } else {
            (self.color.forward(store, color_in.view())?, None)
        };
        let tanh = trunk.slice(s![.., SF_B..GEO]).mapv(|v| v.tanh());
        let scale = T::lit(self.max_flow);
        let flow = |i: usize, off: usize| -> [T; 3] {
            std::array::from_fn(|a| scale * tanh[[i, off - SF_B + a]])
        };
        let sf_backward = (0..n).map(|i| flow(i, SF_B)).collect();
        let sf_forward = (0..n).map(|i| flow(i, SF_F)).collect();
        let sigma = trunk.column(SIGMA).to_vec();
        let rgb = rgb_m
            .rows()
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();
        let tape = match (trunk_tape, color_tape) {
            (Some(trunk), Some(color)) => Some(DynamicTape {
                hash,
                trunk,
                color,
                tanh,
            }),
            _ => None,
        };
        Ok(DynamicBatch {
            sigma,
            rgb,
            sf_backward,
            sf_forward,
            tape,
        })
    }

    /// Reverse pass. Returns `∂L/∂x*` per sample when `want_dx` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        batch: &DynamicBatch<T>,
        xs: &[[T; 3]],
        dsigma: &[T],
        drgb: &[[T; 3]],
        dflow: Option<(&[[T; 3]], &[[T; 3]])>,
        grads: &mut GradBuffer<T>,
        want_dx: bool,
    ) -> Result<Option<Vec<[T; 3]>>> {
        let tape = batch.tape.as_ref().ok_or_else(|| {
            Error::Usage("dynamic backward without a recorded forward pass".into())
        })?;
        let n = xs.len();
        let up_color = fill_rows(n, 3, |i, row| row.copy_from_slice(&drgb[i]));
        let d_color_in = self
            .color
            .backward(store, &tape.color, up_color.view(), grads)?;
        let mut up = Array2::<T>::zeros((n, GEO + self.geo));
        let scale = T::lit(self.max_flow);
        for i in 0..n {
            up[[i, SIGMA]] = dsigma[i];
            if let Some((dsf_b, dsf_f)) = dflow {
                for a in 0..3 {
                    let tb = tape.tanh[[i, a]];
                    let tf = tape.tanh[[i, 3 + a]];
                    up[[i, SF_B + a]] = dsf_b[i][a] * scale * (T::one() - tb * tb);
                    up[[i, SF_F + a]] = dsf_f[i][a] * scale * (T::one() - tf * tf);
                }
            }
        }
        up.slice_mut(s![.., GEO..])
            .assign(&d_color_in.slice(s![.., ..self.geo]));
        let d_input = self.trunk.backward(store, &tape.trunk, up.view(), grads)?;
        let pw = self.encoder.output_width();
        let mut dx = if want_dx {
            Some(vec![[T::zero(); 3]; n])
        } else {
            None
        };
        for (i, row) in d_input.axis_iter(Axis(0)).enumerate() {
            let row = row.as_slice().expect("contiguous");
            let slot = dx.as_mut().map(|v| &mut v[i]);
            self.encoder
                .backward(store, &tape.hash, i, &xs[i], &row[..pw], grads, slot);
        }
        Ok(dx)
    }
}

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::{fill_rows, FieldConfig};
use crate::diffnet::{Activation, GradBuffer, Init, Mlp, MlpSpec, MlpTape, ParamStore, Real};
use crate::encoding::{freq_encode_into, FreqConfig, HashTape, PositionEncoder};
use crate::error::Result;

/// Background field: a density trunk on the encoded position and a color
/// head that additionally sees the encoded view direction.
#[derive(Debug, Clone)]
pub struct StaticField {
    encoder: PositionEncoder,
    density: Mlp,
    color: Mlp,
    dir_freq: FreqConfig,
    geo: usize,
}

#[derive(Debug, Clone)]
pub struct StaticBatch<T> {
    pub sigma: Vec<T>,
    pub rgb: Vec<[T; 3]>,
    tape: Option<StaticTape<T>>,
}

#[derive(Debug, Clone)]
struct StaticTape<T> {
    hash: HashTape<T>,
    density: MlpTape<T>,
    color: MlpTape<T>,
}

fn specs(cfg: &FieldConfig, pos_width: usize) -> (MlpSpec, MlpSpec) {
    let mut heads = vec![Activation::Softplus];
    heads.extend(std::iter::repeat(Activation::None).take(cfg.geo_features));
    let density = MlpSpec::new(pos_width, &cfg.hidden, heads);
    let color = MlpSpec::new(
        cfg.geo_features + cfg.dir_freq.output_width(3),
        &cfg.hidden,
        vec![Activation::Sigmoid; 3],
    );
    (density, color)
}

impl StaticField {
    pub(crate) fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &FieldConfig,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = PositionEncoder::register(store, "static.grid", cfg.grid, cfg.pos_freq, rng)?;
        let (ds, cs) = specs(cfg, encoder.output_width());
        let density = Mlp::register(store, "static.density", ds, init, rng)?;
        let color = Mlp::register(store, "static.color", cs, init, rng)?;
        Ok(Self::assemble(cfg, encoder, density, color))
    }

    pub(crate) fn bind<T: Real>(store: &ParamStore<T>, cfg: &FieldConfig) -> Result<Self> {
        let encoder = PositionEncoder::bind(store, "static.grid", cfg.grid, cfg.pos_freq)?;
        let (ds, cs) = specs(cfg, encoder.output_width());
        let density = Mlp::bind(store, "static.density", ds)?;
        let color = Mlp::bind(store, "static.color", cs)?;
        Ok(Self::assemble(cfg, encoder, density, color))
    }

    fn assemble(cfg: &FieldConfig, encoder: PositionEncoder, density: Mlp, color: Mlp) -> Self {
        Self {
            encoder,
            density,
            color,
            dir_freq: cfg.dir_freq,
            geo: cfg.geo_features,
        }
    }

    pub fn encoder(&self) -> &PositionEncoder {
        &self.encoder
    }

    pub fn density_mlp(&self) -> &Mlp {
        &self.density
    }

    pub fn color_mlp(&self) -> &Mlp {
        &self.color
    }

    /// Density only; skips the color head.
    pub fn density<T: Real>(&self, store: &ParamStore<T>, xs: &[[T; 3]]) -> Result<Vec<T>> {
        let input = fill_rows(xs.len(), self.encoder.output_width(), |i, row| {
            self.encoder.encode_into(store, &xs[i], row, None)
        });
        let out = self.density.forward(store, input.view())?;
        Ok(out.column(0).to_vec())
    }

    pub fn eval<T: Real>(
        &self,
        store: &ParamStore<T>,
        xs: &[[T; 3]],
        ds: &[[T; 3]],
        record: bool,
    ) -> Result<StaticBatch<T>> {
        let n = xs.len();
        let mut hash = HashTape::default();
        if record {
            hash = self.encoder.grid().tape(n);
        }
        let input = fill_rows(n, self.encoder.output_width(), |i, row| {
            let tape = if record { Some(&mut hash) } else { None };
            self.encoder.encode_into(store, &xs[i], row, tape)
        });
        let (trunk, density_tape) = if record {
            let (o, t) = self.density.forward_taped(store, input.view())?;
            (o, Some(t))
        } else {
            (self.density.forward(store, input.view())?, None)
        };
        let geo = self.geo;
        let color_in = fill_rows(n, geo + self.dir_freq.output_width(3), |i, row| {
            for (dst, src) in row[..geo].iter_mut().zip(trunk.row(i).iter().skip(1)) {
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
        let sigma = trunk.column(0).to_vec();
        let rgb = rgb_m
            .rows()
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect();
        let tape = match (density_tape, color_tape) {
            (Some(density), Some(color)) => Some(StaticTape {
                hash,
                density,
                color,
            }),
            _ => None,
        };
        Ok(StaticBatch { sigma, rgb, tape })
    }

    /// Reverse pass for a recorded batch. Adds parameter gradients to `grads`.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        batch: &StaticBatch<T>,
        xs: &[[T; 3]],
        dsigma: &[T],
        drgb: &[[T; 3]],
        grads: &mut GradBuffer<T>,
    ) -> Result<()> {
        let tape = batch.tape.as_ref().ok_or_else(|| {
            crate::Error::Usage("static backward without a recorded forward pass".into())
        })?;
        let n = xs.len();
        let up_color = fill_rows(n, 3, |i, row| row.copy_from_slice(&drgb[i]));
        let d_color_in = self
            .color
            .backward(store, &tape.color, up_color.view(), grads)?;
        let mut up_trunk = Array2::<T>::zeros((n, 1 + self.geo));
        for i in 0..n {
            up_trunk[[i, 0]] = dsigma[i];
        }
        up_trunk
            .slice_mut(s![.., 1..])
            .assign(&d_color_in.slice(s![.., ..self.geo]));
        let d_input = self
            .density
            .backward(store, &tape.density, up_trunk.view(), grads)?;
        for (i, row) in d_input.axis_iter(Axis(0)).enumerate() {
            let row = row.as_slice().expect("contiguous");
            self.encoder
                .backward(store, &tape.hash, i, &xs[i], row, grads, None);
        }
        Ok(())
    }
}

use ndarray::Axis;
use rand::Rng;

use super::{clamp_unit, fill_rows, FieldConfig};
use crate::diffnet::{Activation, GradBuffer, Init, Mlp, MlpSpec, MlpTape, ParamStore, Real};
use crate::encoding::{freq_encode_into, FreqConfig, HashTape, PositionEncoder};
use crate::error::{Error, Result};

/// Offset network: `x* = clamp(x + f(x, d, t))`.
#[derive(Debug, Clone)]
pub struct DeformField {
    encoder: PositionEncoder,
    mlp: Mlp,
    dir_freq: FreqConfig,
    time_freq: FreqConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deformed<T> {
    pub x_star: [T; 3],
    pub clamped: [bool; 3],
}

#[derive(Debug, Clone)]
pub struct DeformBatch<T> {
    pub x_star: Vec<[T; 3]>,
    pub clamped: Vec<[bool; 3]>,
    tape: Option<(HashTape<T>, MlpTape<T>)>,
}

impl DeformField {
    fn spec(cfg: &FieldConfig, pos_width: usize) -> MlpSpec {
        MlpSpec::new(
            pos_width + cfg.dir_freq.output_width(3) + cfg.time_freq.output_width(1),
            &cfg.hidden,
            vec![Activation::None; 3],
        )
    }

    pub(crate) fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: &FieldConfig,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = PositionEncoder::register(store, "deform.grid", cfg.grid, cfg.pos_freq, rng)?;
        let mlp = Mlp::register(
            store,
            "deform.mlp",
            Self::spec(cfg, encoder.output_width()),
            init,
            rng,
        )?;
        Ok(Self {
            encoder,
            mlp,
            dir_freq: cfg.dir_freq,
            time_freq: cfg.time_freq,
        })
    }

    pub(crate) fn bind<T: Real>(store: &ParamStore<T>, cfg: &FieldConfig) -> Result<Self> {
        let encoder = PositionEncoder::bind(store, "deform.grid", cfg.grid, cfg.pos_freq)?;
        let mlp = Mlp::bind(store, "deform.mlp", Self::spec(cfg, encoder.output_width()))?;
        Ok(Self {
            encoder,
            mlp,
            dir_freq: cfg.dir_freq,
            time_freq: cfg.time_freq,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn eval<T: Real>(
        &self,
        store: &ParamStore<T>,
        xs: &[[T; 3]],
        ds: &[[T; 3]],
        ts: &[T],
        record: bool,
    ) -> Result<DeformBatch<T>> {
        let n = xs.len();
        let pw = self.encoder.output_width();
        let dw = self.dir_freq.output_width(3);
        let mut hash = if record {
            self.encoder.grid().tape(n)
        } else {
            HashTape::default()
        };
        let input = fill_rows(n, self.mlp.spec().input_width(), |i, row| {
            let tape = if record { Some(&mut hash) } else { None };
            self.encoder.encode_into(store, &xs[i], &mut row[..pw], tape);
            freq_encode_into(&ds[i], &self.dir_freq, &mut row[pw..pw + dw]);
            let t = ts[i] + ts[i] - T::one();
            freq_encode_into(&[t], &self.time_freq, &mut row[pw + dw..]);
        });
        let (offsets, tape) = if record {
            let (o, t) = self.mlp.forward_taped(store, input.view())?;
            (o, Some((hash, t)))
        } else {
            (self.mlp.forward(store, input.view())?, None)
        };
        let mut x_star = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        for (i, off) in offsets.axis_iter(Axis(0)).enumerate() {
            let (p, c) = clamp_unit(std::array::from_fn(|a| xs[i][a] + off[a]));
            x_star.push(p);
            clamped.push(c);
        }
        Ok(DeformBatch {
            x_star,
            clamped,
            tape,
        })
    }

    /// Backpropagates `∂L/∂x*` into the deformation parameters. Saturated
    /// components pass no gradient.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        batch: &DeformBatch<T>,
        xs: &[[T; 3]],
        dx_star: &[[T; 3]],
        grads: &mut GradBuffer<T>,
    ) -> Result<()> {
        let (hash, tape) = batch
            .tape
            .as_ref()
            .ok_or_else(|| Error::Usage("deform backward without a recorded forward pass".into()))?;
        let up = fill_rows(xs.len(), 3, |i, row| {
            for a in 0..3 {
                row[a] = if batch.clamped[i][a] {
                    T::zero()
                } else {
                    dx_star[i][a]
                };
            }
        });
        let d_input = self.mlp.backward(store, tape, up.view(), grads)?;
        let pw = self.encoder.output_width();
        for (i, row) in d_input.axis_iter(Axis(0)).enumerate() {
            let row = row.as_slice().expect("contiguous");
            self.encoder
                .backward(store, hash, i, &xs[i], &row[..pw], grads, None);
        }
        Ok(())
    }
}

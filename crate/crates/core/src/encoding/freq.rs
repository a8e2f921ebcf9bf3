use serde::{Deserialize, Serialize};

use crate::diffnet::Real;

/// Sinusoidal encoding with `num_bands` octaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreqConfig {
    pub num_bands: usize,
    pub include_input: bool,
}

impl FreqConfig {
    pub fn new(num_bands: usize, include_input: bool) -> Self {
        Self {
            num_bands,
            include_input,
        }
    }

    pub fn output_width(&self, input_dim: usize) -> usize {
        input_dim * (2 * self.num_bands + usize::from(self.include_input))
    }
}

/// Writes `[x?, sin(2^0 π x), cos(2^0 π x), sin(2^1 π x), …]` into `out`.
/// Each band contributes the sines of every component, then the cosines.
pub fn freq_encode_into<T: Real>(x: &[T], cfg: &FreqConfig, out: &mut [T]) {
    let d = x.len();
    debug_assert_eq!(out.len(), cfg.output_width(d));
    let mut o = 0;
    if cfg.include_input {
        out[..d].copy_from_slice(x);
        o = d;
    }
    let pi = T::lit(std::f64::consts::PI);
    for k in 0..cfg.num_bands {
        let scale = T::lit((1u64 << k) as f64) * pi;
        for (j, &v) in x.iter().enumerate() {
            let (s, c) = (scale * v).sin_cos();
            out[o + j] = s;
            out[o + d + j] = c;
        }
        o += 2 * d;
    }
}

pub fn freq_encode<T: Real>(x: &[T], cfg: &FreqConfig) -> Vec<T> {
    let mut out = vec![T::zero(); cfg.output_width(x.len())];
    freq_encode_into(x, cfg, &mut out);
    out
}

/// Chain rule through [`freq_encode_into`]: adds `∂L/∂x` to `dx`.
pub fn freq_backward<T: Real>(x: &[T], cfg: &FreqConfig, upstream: &[T], dx: &mut [T]) {
    let d = x.len();
    let mut o = 0;
    if cfg.include_input {
        for j in 0..d {
            dx[j] += upstream[j];
        }
        o = d;
    }
    let pi = T::lit(std::f64::consts::PI);
    for k in 0..cfg.num_bands {
        let scale = T::lit((1u64 << k) as f64) * pi;
        for (j, &v) in x.iter().enumerate() {
            let (s, c) = (scale * v).sin_cos();
            dx[j] += scale * (c * upstream[o + j] - s * upstream[o + d + j]);
        }
        o += 2 * d;
    }
}

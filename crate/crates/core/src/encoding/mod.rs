//! Input featurization: sinusoidal frequency bands and the multiresolution
//! hash grid. Positions get both; directions and time get frequency bands.

mod freq;
mod hashgrid;

pub use freq::{freq_backward, freq_encode, freq_encode_into, FreqConfig};
pub use hashgrid::{hash_index, level_resolution, HashGrid, HashGridConfig, HashTape};

use rand::Rng;

use crate::diffnet::{GradBuffer, ParamStore, Real};
use crate::error::Result;

/// Hash grid features followed by frequency bands of `2x − 1`, for points in
/// the unit cube.
#[derive(Debug, Clone)]
pub struct PositionEncoder {
    grid: HashGrid,
    freq: FreqConfig,
}

impl PositionEncoder {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        grid: HashGridConfig,
        freq: FreqConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            grid: HashGrid::register(store, prefix, grid, rng)?,
            freq,
        })
    }

    pub fn bind<T: Real>(
        store: &ParamStore<T>,
        prefix: &str,
        grid: HashGridConfig,
        freq: FreqConfig,
    ) -> Result<Self> {
        Ok(Self {
            grid: HashGrid::bind(store, prefix, grid)?,
            freq,
        })
    }

    pub fn grid(&self) -> &HashGrid {
        &self.grid
    }

    pub fn output_width(&self) -> usize {
        self.grid.output_width() + self.freq.output_width(3)
    }

    pub fn encode_into<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &[T; 3],
        out: &mut [T],
        tape: Option<&mut HashTape<T>>,
    ) {
        let g = self.grid.output_width();
        self.grid.encode_into(store, x, &mut out[..g], tape);
        let centered = x.map(|v| v + v - T::one());
        freq_encode_into(&centered, &self.freq, &mut out[g..]);
    }

    /// Backward for sample `i`; `dx` receives the position gradient when
    /// given.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &HashTape<T>,
        i: usize,
        x: &[T; 3],
        upstream: &[T],
        grads: &mut GradBuffer<T>,
        dx: Option<&mut [T; 3]>,
    ) {
        let g = self.grid.output_width();
        match dx {
            Some(dx) => {
                self.grid
                    .backward(store, tape, i, &upstream[..g], grads, Some(&mut *dx));
                let centered = x.map(|v| v + v - T::one());
                let mut dc = [T::zero(); 3];
                freq_backward(&centered, &self.freq, &upstream[g..], &mut dc);
                for a in 0..3 {
                    dx[a] += dc[a] + dc[a];
                }
            }
            None => self.grid.backward(store, tape, i, &upstream[..g], grads, None),
        }
    }
}

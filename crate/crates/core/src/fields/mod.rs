//! The three radiance fields: a static background field, a deformation field
//! and a dynamic field with backward/forward scene-flow heads.
//!
//! All queries take positions in the unit cube (scene-box normalized) and
//! unit view directions. Times are normalized to `[0, 1]` over the sequence.

mod deform;
mod dynamic;
mod statics;

pub use deform::{DeformBatch, DeformField, Deformed};
pub use dynamic::{DynamicBatch, DynamicField};
pub use statics::{StaticBatch, StaticField};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Init, ParamStore, Real};
use crate::encoding::{FreqConfig, HashGridConfig};
use crate::error::{Error, Result};

/// Architecture and encoding constants shared by the three fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub pos_freq: FreqConfig,
    pub dir_freq: FreqConfig,
    pub time_freq: FreqConfig,
    pub hidden: Vec<usize>,
    /// Width of the feature vector handed from a density trunk to its color head.
    pub geo_features: usize,
    /// Scene-flow magnitude bound per frame step, in normalized units.
    pub max_flow: f32,
    pub time_count: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            pos_freq: FreqConfig::new(6, true),
            dir_freq: FreqConfig::new(4, true),
            time_freq: FreqConfig::new(6, true),
            hidden: vec![64, 64],
            geo_features: 15,
            max_flow: 0.15,
            time_count: 1,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.time_count == 0 {
            return Err(Error::Config("time_count must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid hidden widths {:?}",
                self.hidden
            )));
        }
        if !(self.max_flow > 0.0) {
            return Err(Error::Config("max_flow must be positive".into()));
        }
        Ok(())
    }

    /// Normalized time of a frame index.
    pub fn frame_time(&self, index: usize) -> f32 {
        if self.time_count <= 1 {
            0.0
        } else {
            index as f32 / (self.time_count - 1) as f32
        }
    }

    /// Normalized spacing between adjacent frames; zero for a single frame.
    pub fn time_step(&self) -> f32 {
        if self.time_count <= 1 {
            0.0
        } else {
            1.0 / (self.time_count - 1) as f32
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample<T> {
    pub sigma: T,
    pub rgb: [T; 3],
    pub sf_backward: [T; 3],
    pub sf_forward: [T; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Backward,
}

/// Displaces `x_star` by the sample's scene flow and clamps to the unit cube.
pub fn advect<T: Real>(x_star: [T; 3], sample: &FieldSample<T>, direction: FlowDirection) -> [T; 3] {
    let flow = match direction {
        FlowDirection::Forward => sample.sf_forward,
        FlowDirection::Backward => sample.sf_backward,
    };
    clamp_unit(std::array::from_fn(|a| x_star[a] + flow[a])).0
}

/// Clamps each component to `[0, 1]`, reporting which ones saturated.
#[inline]
pub fn clamp_unit<T: Real>(x: [T; 3]) -> ([T; 3], [bool; 3]) {
    let mut flags = [false; 3];
    let mut out = x;
    for a in 0..3 {
        if x[a] < T::zero() {
            out[a] = T::zero();
            flags[a] = true;
        } else if x[a] > T::one() {
            out[a] = T::one();
            flags[a] = true;
        }
    }
    (out, flags)
}

pub(crate) fn check_direction<T: Real>(d: &[T; 3]) -> Result<()> {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if (norm - T::one()).abs().as_f64() > 1e-5 {
        return Err(Error::Input(format!(
            "direction is not unit length (|d| = {})",
            norm.as_f64()
        )));
    }
    Ok(())
}

pub(crate) fn check_time<T: Real>(t: T) -> Result<()> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::Input(format!(
            "time {} outside [0, 1]",
            t.as_f64()
        )));
    }
    Ok(())
}

/// Parameters and bound views of all three fields.
#[derive(Debug, Clone)]
pub struct FieldBundle<T> {
    pub config: FieldConfig,
    pub store: ParamStore<T>,
    pub static_field: StaticField,
    pub deform_field: DeformField,
    pub dynamic_field: DynamicField,
}

impl<T: Real> FieldBundle<T> {
    /// Randomly initialized fields. The deformation output layer starts at
    /// zero so training begins from the identity warp.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, false)
    }

    /// Every MLP weight and bias zero; hash tables keep their tiny random init.
    pub fn zeroed(config: FieldConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, true)
    }

    fn build(config: FieldConfig, seed: u64, zero: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (he, deform_init) = if zero {
            (Init::Zeros, Init::Zeros)
        } else {
            (Init::He, Init::HeZeroOutput)
        };
        let static_field = StaticField::register(&mut store, &config, he, &mut rng)?;
        let deform_field = DeformField::register(&mut store, &config, deform_init, &mut rng)?;
        let dynamic_field = DynamicField::register(&mut store, &config, he, &mut rng)?;
        Ok(Self {
            config,
            store,
            static_field,
            deform_field,
            dynamic_field,
        })
    }

    /// Rebinds fields to a parameter store loaded from elsewhere.
    pub fn from_store(config: FieldConfig, store: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let static_field = StaticField::bind(&store, &config)?;
        let deform_field = DeformField::bind(&store, &config)?;
        let dynamic_field = DynamicField::bind(&store, &config)?;
        Ok(Self {
            config,
            store,
            static_field,
            deform_field,
            dynamic_field,
        })
    }

    /// Same architecture in another precision.
    pub fn cast<U: Real>(&self) -> FieldBundle<U> {
        FieldBundle {
            config: self.config.clone(),
            store: self.store.cast(),
            static_field: self.static_field.clone(),
            deform_field: self.deform_field.clone(),
            dynamic_field: self.dynamic_field.clone(),
        }
    }

    pub fn static_query(&self, x: [T; 3], d: [T; 3]) -> Result<FieldSample<T>> {
        check_direction(&d)?;
        let b = self.static_field.eval(&self.store, &[x], &[d], false)?;
        Ok(FieldSample {
            sigma: b.sigma[0],
            rgb: b.rgb[0],
            sf_backward: [T::zero(); 3],
            sf_forward: [T::zero(); 3],
        })
    }

    pub fn deform(&self, x: [T; 3], d: [T; 3], t: T) -> Result<Deformed<T>> {
        check_direction(&d)?;
        check_time(t)?;
        let b = self.deform_field.eval(&self.store, &[x], &[d], &[t], false)?;
        Ok(Deformed {
            x_star: b.x_star[0],
            clamped: b.clamped[0],
        })
    }

    pub fn dynamic_query(&self, x_star: [T; 3], d: [T; 3], t: T) -> Result<FieldSample<T>> {
        check_direction(&d)?;
        check_time(t)?;
        let b = self
            .dynamic_field
            .eval(&self.store, &[x_star], &[d], &[t], false)?;
        Ok(FieldSample {
            sigma: b.sigma[0],
            rgb: b.rgb[0],
            sf_backward: b.sf_backward[0],
            sf_forward: b.sf_forward[0],
        })
    }
}

/// Row-major `n × width` scratch matrix filled row by row.
pub(crate) fn fill_rows<T: Real>(
    n: usize,
    width: usize,
    mut fill: impl FnMut(usize, &mut [T]),
) -> ndarray::Array2<T> {
    let mut m = ndarray::Array2::<T>::zeros((n, width));
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        fill(i, row.as_slice_mut().expect("contiguous row"));
    }
    m
}

#[cfg(test)]
pub(crate) mod tests;

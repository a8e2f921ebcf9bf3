use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldConfig;
use crate::renderer::OccupancyConfig;

/// Component removed for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Every pixel is treated as dynamic; the static field is never used.
    Background,
    /// Neighbor-time photometric terms are dropped.
    Flow,
    /// The deformation offset is forced to zero.
    Deformation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rays_per_batch: usize,
    pub samples_per_ray: usize,
    /// Base learning rate of MLP weights and biases.
    pub lr_mlp: f32,
    /// Base learning rate of hash-grid tables.
    pub lr_encoding: f32,
    pub decay: f64,
    /// Iterations before the occupancy grid starts pruning.
    pub warmup_prune: u64,
    pub max_iters: u64,
    pub seed: u64,
    pub pruning_enabled: bool,
    /// Target size for real footage. Frames are only ever downscaled.
    pub image_resize: Option<(u32, u32)>,
    pub ablation: Option<Ablation>,
    /// Run ray chunks sequentially on the calling thread.
    pub deterministic: bool,
    /// Jitter samples within their bins; midpoints otherwise.
    pub stratified: bool,
    pub occupancy: OccupancyConfig,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rays_per_batch: 4096,
            samples_per_ray: 256,
            lr_mlp: 1e-3,
            lr_encoding: 1e-2,
            decay: 5e-5,
            warmup_prune: 5000,
            max_iters: 20_000,
            seed: 0,
            pruning_enabled: true,
            image_resize: Some((480, 270)),
            ablation: None,
            deterministic: false,
            stratified: true,
            occupancy: OccupancyConfig::default(),
            field: FieldConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch < 2 {
            return Err(Error::Config("rays_per_batch must be at least 2".into()));
        }
        if self.samples_per_ray == 0 {
            return Err(Error::Config("samples_per_ray must be positive".into()));
        }
        if !(self.lr_mlp > 0.0 && self.lr_encoding > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::Config("decay must be finite and non-negative".into()));
        }
        if let Some((w, h)) = self.image_resize {
            if w == 0 || h == 0 {
                return Err(Error::Config("image_resize must be positive".into()));
            }
        }
        self.occupancy.validate()?;
        self.field.validate()
    }

    /// Occupancy settings with the warm-up taken from `warmup_prune`.
    pub fn occupancy_config(&self) -> OccupancyConfig {
        OccupancyConfig {
            warmup_iters: self.warmup_prune,
            ..self.occupancy
        }
    }

    /// `image_resize` when it shrinks a `width × height` frame.
    pub fn resize_for(&self, width: u32, height: u32) -> Option<(u32, u32)> {
        self.image_resize
            .filter(|&(w, h)| (w, h) != (width, height) && w <= width && h <= height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.rays_per_batch, c.samples_per_ray), (4096, 256));
        assert_eq!((c.lr_mlp, c.lr_encoding, c.decay), (1e-3, 1e-2, 5e-5));
        assert_eq!(c.occupancy_config().warmup_iters, 5000);
        let bad = TrainConfig {
            rays_per_batch: 1,
            ..c.clone()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn resize_only_shrinks() {
        let c = TrainConfig::default();
        assert_eq!(c.resize_for(64, 64), None);
        assert_eq!(c.resize_for(960, 540), Some((480, 270)));
        assert_eq!(c.resize_for(480, 270), None);
    }

    #[test]
    fn toml_overrides_merge_with_defaults() {
        let c: TrainConfig = toml::from_str("rays_per_batch = 128\nablation = \"flow\"\n[occupancy]\nresolution = 32\n").unwrap();
        assert_eq!(c.rays_per_batch, 128);
        assert_eq!(c.ablation, Some(Ablation::Flow));
        assert_eq!(c.occupancy.resolution, 32);
        assert_eq!(c.occupancy.decay, 0.95);
        assert_eq!(c.samples_per_ray, 256);
        assert!(toml::from_str::<TrainConfig>("bogus = 1").is_err());
    }
}

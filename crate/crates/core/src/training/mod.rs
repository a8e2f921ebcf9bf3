//! Mask-partitioned ray batches, the photometric losses, the optimization
//! loop and checkpoints.
//!
//! Static pixels (`M < 0.5`) supervise the static field only. Dynamic pixels
//! supervise the deformation and dynamic fields at `t` and, through the
//! predicted scene flow, at the neighboring frames of the same camera.

mod batch;
mod checkpoint;
mod config;
mod losses;
mod step;

pub use batch::{sample_ray_batch, RayBatch, TrainingSet};
pub use checkpoint::{checkpoint_load, checkpoint_save, CHECKPOINT_MAGIC};
pub use config::{Ablation, TrainConfig};
pub use losses::{loss_sceneflow, loss_static, loss_total, PhotoTerm, SceneFlowTerms};
pub use step::{batch_gradients, BatchGradients};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{lr_schedule_with, AdamState, SectionKind};
use crate::error::{Error, Result};
use crate::fields::FieldBundle;
use crate::renderer::{BundleProbe, OccupancyGrid, Renderer};
use crate::sceneio::SceneBox;

pub const LOSS_CSV_HEADER: &str = "iter,l_static,l_sceneflow,l_total,lr,wall_ms";

/// One row of the loss history. `lr` is the scheduled MLP rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: u64,
    pub l_static: f64,
    pub l_sceneflow: f64,
    pub l_total: f64,
    pub lr: f32,
    pub wall_ms: f64,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub scene_box: SceneBox,
    pub bundle: FieldBundle<f32>,
    pub adam: AdamState<f32>,
    pub grid: OccupancyGrid,
    /// Completed optimizer steps.
    pub iter: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    /// Fresh state. `config.field.time_count` must match the dataset.
    pub fn new(config: TrainConfig, scene_box: SceneBox) -> Result<Self> {
        config.validate()?;
        scene_box.validate()?;
        let bundle = FieldBundle::new(config.field.clone(), config.seed)?;
        let adam = AdamState::new(&bundle.store);
        let grid = OccupancyGrid::new(config.occupancy_config())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            config,
            scene_box,
            bundle,
            adam,
            grid,
            iter: 0,
            rng,
            history: Vec::new(),
        })
    }

    /// Fresh state sized for a training set.
    pub fn for_set(mut config: TrainConfig, set: &TrainingSet) -> Result<Self> {
        config.field.time_count = set.time_count();
        Self::new(config, set.dataset.scene_box)
    }

    /// Renderer used for training: stratified per-ray jitter comes from the
    /// batch, deformation follows the ablation.
    pub fn renderer(&self) -> Renderer {
        let mut r = Renderer::new(self.scene_box, self.config.samples_per_ray);
        r.deformation = self.config.ablation != Some(Ablation::Deformation);
        r
    }

    /// The grid consulted while rendering, if pruning is on.
    pub fn active_grid(&self) -> Option<&OccupancyGrid> {
        self.config.pruning_enabled.then_some(&self.grid)
    }

    /// Whether evaluation must render every pixel with the dynamic fields.
    pub fn force_dynamic(&self) -> bool {
        self.config.ablation == Some(Ablation::Background)
    }

    /// Learning rates `(mlp, encoding)` for the current iteration.
    pub fn learning_rates(&self) -> (f32, f32) {
        let c = &self.config;
        (
            lr_schedule_with(c.lr_mlp, c.decay, self.iter),
            lr_schedule_with(c.lr_encoding, c.decay, self.iter),
        )
    }
}

/// One optimization step: sample, render, backpropagate, update parameters
/// and the occupancy grid.
pub fn train_step(state: &mut TrainState, set: &TrainingSet) -> Result<LossRecord> {
    let start = Instant::now();
    let cfg = &state.config;
    let batch = sample_ray_batch(set, &mut state.rng, cfg.rays_per_batch, cfg.ablation)?;
    let renderer = state.renderer();
    let out = batch_gradients(
        &state.bundle,
        &renderer,
        state.active_grid(),
        &batch,
        cfg.stratified,
        cfg.deterministic,
    )?;
    let total = out.total();
    if !total.is_finite() {
        return Err(Error::Training {
            section: "loss".into(),
            message: format!(
                "non-finite loss at iteration {} (frame {}, neighbors {:?}/{:?})",
                state.iter, batch.frame, batch.prev_frame, batch.next_frame
            ),
        });
    }
    state.bundle.store.zero_grads();
    for g in &out.grads {
        state.bundle.store.accumulate(g);
    }
    let (lr_mlp, lr_enc) = state.learning_rates();
    state.adam.step_with(&mut state.bundle.store, |s| match s.kind {
        SectionKind::Table => lr_enc,
        _ => lr_mlp,
    })?;
    if state.config.pruning_enabled {
        let probe = BundleProbe {
            bundle: &state.bundle,
            background: state.config.ablation != Some(Ablation::Background),
            deformation: renderer.deformation,
        };
        state.grid.update(state.iter, &probe, &mut state.rng)?;
    }
    let record = LossRecord {
        iter: state.iter,
        l_static: out.l_static,
        l_sceneflow: out.l_sceneflow,
        l_total: total,
        lr: lr_mlp,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    state.iter += 1;
    state.history.push(record);
    Ok(record)
}

/// Steps until `state.iter == until`, reporting each record.
pub fn train(
    state: &mut TrainState,
    set: &TrainingSet,
    until: u64,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<()> {
    while state.iter < until {
        let r = train_step(state, set)?;
        on_step(&r);
    }
    Ok(())
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            r.iter, r.l_static, r.l_sceneflow, r.l_total, r.lr, r.wall_ms
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

//! Synthesizes a small moving-sphere dataset, trains a reduced model on it
//! and evaluates train and held-out-time frames.
//!
//! `cargo run --release --example synth_train_eval -- [iterations]`

use std::time::Instant;

use wildnerf::encoding::HashGridConfig;
use wildnerf::fields::FieldConfig;
use wildnerf::metrics::{aggregate, evaluate};
use wildnerf::renderer::OccupancyConfig;
use wildnerf::sceneio::{synth_scene, Motion, SynthSpec};
use wildnerf::training::{train, TrainConfig, TrainState, TrainingSet};

fn main() -> wildnerf::Result<()> {
    let iters: u64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(600);
    let tmp = tempfile::tempdir().expect("temp dir");
    let dataset = synth_scene(SynthSpec {
        resolution: 32,
        num_times: 6,
        num_cameras: 3,
        motion: Motion::Translate,
        seed: 0,
    })?
    .write(tmp.path())?;
    println!(
        "{} frames, {} time steps, splits {:?}",
        dataset.len(),
        dataset.time_count,
        dataset.splits.keys().collect::<Vec<_>>()
    );

    let config = TrainConfig {
        rays_per_batch: 256,
        samples_per_ray: 48,
        lr_mlp: 5e-3,
        lr_encoding: 2e-2,
        warmup_prune: 200,
        max_iters: iters,
        deterministic: true,
        occupancy: OccupancyConfig {
            resolution: 32,
            ..Default::default()
        },
        field: FieldConfig {
            grid: HashGridConfig {
                levels: 8,
                table_size: 1 << 14,
                base_resolution: 8,
                growth_factor: 1.5,
                ..Default::default()
            },
            hidden: vec![32, 32],
            geo_features: 7,
            ..Default::default()
        },
        ..Default::default()
    };
    let set = TrainingSet::load(dataset.clone(), "train")?;
    let mut state = TrainState::for_set(config, &set)?;
    let start = Instant::now();
    train(&mut state, &set, iters, |r| {
        if r.iter % 100 == 0 {
            println!(
                "iter {:>5}  static {:.5}  sceneflow {:.5}  total {:.5}",
                r.iter, r.l_static, r.l_sceneflow, r.l_total
            );
        }
    })?;
    println!("trained {iters} iterations in {:.1} s", start.elapsed().as_secs_f64());
    if let Some(g) = state.active_grid() {
        println!("occupied fraction {:.3}", g.occupied_fraction());
    }

    for split in ["train", "test_time"] {
        let frames = evaluate(&state, &dataset, split)?;
        let row = aggregate("translate", split, "full", &frames);
        println!("{split:<10} psnr {:.2} dB  ssim {:.4}  ({} frames)", row.psnr, row.ssim, row.frames);
    }
    Ok(())
}

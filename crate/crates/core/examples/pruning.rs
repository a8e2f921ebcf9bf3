//! Builds an occupancy grid over a voxelized sphere and compares pruned and
//! unpruned renders of the same view: pixel agreement, samples evaluated and
//! wall time.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wildnerf::renderer::{
    pixel_ray, AnalyticSphere, FieldProbe, OccupancyConfig, OccupancyGrid, Ray, RenderOutput,
    Renderer, SampleMode,
};
use wildnerf::sceneio::{CameraModel, Pose, SceneBox};

fn main() -> wildnerf::Result<()> {
    let res = 64;
    let sphere = AnalyticSphere {
        center: [0.5; 3],
        radius: 0.25,
        sigma: 30.0,
        voxels: Some(res),
    };
    let mut grid = OccupancyGrid::new(OccupancyConfig {
        resolution: res,
        warmup_iters: 0,
        ..Default::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    grid.update(0, &FieldProbe::<_, f64>::new(&sphere), &mut rng)?;
    println!(
        "occupied cells: {} of {} ({:.1}%)",
        grid.occupied_count(),
        grid.cell_count(),
        100.0 * grid.occupied_fraction()
    );

    let camera = CameraModel {
        fx: 80.0,
        fy: 80.0,
        cx: 40.0,
        cy: 40.0,
        width: 80,
        height: 80,
        near: 0.5,
        far: 2.5,
    };
    let pose = Pose::look_at([1.2, 1.1, 1.9], [0.5; 3], [0.0, 1.0, 0.0]);
    let rays: Vec<Ray> = (0..camera.height)
        .flat_map(|y| (0..camera.width).map(move |x| (x, y)))
        .map(|(x, y)| pixel_ray(&camera, &pose, x, y))
        .collect::<wildnerf::Result<_>>()?;
    let renderer = Renderer::new(SceneBox::new([0.0; 3], [1.0; 3])?, 256);

    let timed = |g: Option<&OccupancyGrid>| -> wildnerf::Result<(Vec<RenderOutput<f64>>, f64)> {
        let start = Instant::now();
        let out = renderer.render_static_batch(&sphere, &rays, g)?;
        Ok((out, start.elapsed().as_secs_f64()))
    };
    let (dense, t_dense) = timed(None)?;
    let (pruned, t_pruned) = timed(Some(&grid))?;

    let max_diff = dense
        .iter()
        .zip(&pruned)
        .flat_map(|(a, b)| (0..3).map(move |k| (a.color[k] - b.color[k]).abs()))
        .fold(0.0, f64::max);
    let kept = |g: Option<&OccupancyGrid>| -> wildnerf::Result<usize> {
        rays.iter()
            .map(|r| Ok(renderer.prepare_ray(r, SampleMode::Midpoint, g)?.kept()))
            .sum()
    };
    println!("samples evaluated: {} dense, {} pruned", kept(None)?, kept(Some(&grid))?);
    println!("max per-channel difference {max_diff:.3e}");
    println!(
        "render time {:.1} ms dense, {:.1} ms pruned, speedup {:.2}x",
        1e3 * t_dense,
        1e3 * t_pruned,
        t_dense / t_pruned
    );
    Ok(())
}

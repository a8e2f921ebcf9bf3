//! Writes a small COLMAP text model, reads it back and converts it into
//! frame records in the crate's camera convention.

use wildnerf::sceneio::{
    export_colmap, import_colmap, CameraEntry, CameraModel, ColmapImage, ColmapScene, Pose,
};

fn main() -> wildnerf::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path();

    let model = CameraModel {
        fx: 500.0,
        fy: 500.0,
        cx: 320.0,
        cy: 240.0,
        width: 640,
        height: 480,
        near: 0.1,
        far: 10.0,
    };
    let images = (0..4)
        .map(|i| {
            let a = i as f64 * 0.3;
            let eye = [3.0 * a.sin(), 0.5, 3.0 * a.cos()];
            // look_at yields the local convention; flip y and z for COLMAP axes
            let local = Pose::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0]);
            ColmapImage {
                image_id: i + 1,
                camera_id: 1,
                name: format!("frame_{i:03}.png"),
                pose: local.scale_axes([1.0, -1.0, -1.0]),
            }
        })
        .collect();
    let scene = ColmapScene {
        cameras: vec![CameraEntry { id: 1, model }],
        images,
    };
    export_colmap(dir, &scene)?;
    println!("wrote {}", dir.display());
    println!("{}", std::fs::read_to_string(dir.join("images.txt")).unwrap_or_default());

    let back = import_colmap(dir, model.near, model.far)?;
    let worst = scene
        .images
        .iter()
        .zip(&back.images)
        .map(|(a, b)| {
            (0..3)
                .flat_map(|r| (0..4).map(move |c| (r, c)))
                .map(|(r, c)| (a.pose.0[r][c] - b.pose.0[r][c]).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    println!("round-trip max pose error {worst:.2e}");

    let (frames, time_count) = back.frames("images");
    println!("{} frames over {time_count} time steps", frames.len());
    for f in &frames {
        let c = f.pose.center();
        println!("  t={} {} center ({:.3}, {:.3}, {:.3})", f.time, f.file, c[0], c[1], c[2]);
    }
    Ok(())
}

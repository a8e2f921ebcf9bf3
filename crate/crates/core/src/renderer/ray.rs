use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sceneio::{CameraModel, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, b: f64) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + b * self.dir[a])
    }
}

/// Pinhole ray through pixel `(u, v)` in continuous pixel coordinates;
/// integer values address pixel corners, so `+0.5` hits the center.
/// Image rows grow downward, which maps to −y in camera space.
pub fn generate_ray(model: &CameraModel, pose: &Pose, u: f64, v: f64) -> Result<Ray> {
    if !(u >= 0.0 && u < model.width as f64 && v >= 0.0 && v < model.height as f64) {
        return Err(Error::Input(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            model.width, model.height
        )));
    }
    let det = pose.determinant();
    if !det.is_finite() || det.abs() < 1e-6 {
        return Err(Error::Data(format!(
            "degenerate camera pose (rotation determinant {det})"
        )));
    }
    let cam = [
        (u + 0.5 - model.cx) / model.fx,
        -(v + 0.5 - model.cy) / model.fy,
        -1.0,
    ];
    let w = pose.rotate(cam);
    let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    Ok(Ray {
        origin: pose.center(),
        dir: [w[0] / n, w[1] / n, w[2] / n],
        near: model.near,
        far: model.far,
    })
}

/// Ray through the center of integer pixel `(x, y)`.
pub fn pixel_ray(model: &CameraModel, pose: &Pose, x: u32, y: u32) -> Result<Ray> {
    generate_ray(model, pose, x as f64, y as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Midpoint,
    Stratified { seed: u64 },
}

/// Quadrature points along one ray. `keep` is cleared for samples that
/// the occupancy grid or the scene box rule out; those contribute σ = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub keep: Vec<bool>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Splits `[near, far]` into `n` equal bins with one sample per bin.
///
/// Interval lengths are the gaps between consecutive samples; the last one
/// also absorbs the leading gap `b_0 − near`, so they always sum to the ray
/// extent and the midpoint rule yields uniform bin widths.
pub fn sample_points(ray: &Ray, n: usize, mode: SampleMode) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::Config("samples per ray must be at least 1".into()));
    }
    let (bn, bf) = (ray.near, ray.far);
    let width = (bf - bn) / n as f64;
    let depths: Vec<f64> = match mode {
        SampleMode::Midpoint => (0..n).map(|i| bn + (i as f64 + 0.5) * width).collect(),
        SampleMode::Stratified { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|i| bn + (i as f64 + rng.gen::<f64>()) * width)
                .collect()
        }
    };
    let mut deltas: Vec<f64> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    deltas.push(bf - depths[n - 1] + (depths[0] - bn));
    let positions = depths.iter().map(|&b| ray.at(b)).collect();
    Ok(SampleSet {
        depths,
        deltas,
        positions,
        keep: vec![true; n],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn model(w: u32, h: u32, f: f64, cx: f64, cy: f64) -> CameraModel {
        CameraModel {
            fx: f,
            fy: f,
            cx,
            cy,
            width: w,
            height: h,
            near: 0.5,
            far: 4.0,
        }
    }

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        (0..3).all(|i| (a[i] - b[i]).abs() < tol)
    }

    #[test]
    fn principal_point_looks_forward() {
        let m = model(16, 16, 20.0, 8.0, 8.0);
        let r = generate_ray(&m, &Pose::identity(), 7.5, 7.5).unwrap();
        assert!(close(r.dir, [0.0, 0.0, -1.0], 1e-12));
        assert_eq!(r.origin, [0.0; 3]);
        assert_eq!((r.near, r.far), (0.5, 4.0));
    }

    #[test]
    fn one_focal_length_right() {
        // principal point on the left edge so the pixel stays in the image
        let m = model(16, 16, 16.0, 0.0, 8.0);
        let r = generate_ray(&m, &Pose::identity(), 15.5, 7.5).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!(close(r.dir, [s, 0.0, -s], 1e-12));
    }

    #[test]
    fn rows_grow_downward() {
        let m = model(16, 16, 16.0, 8.0, 8.0);
        let top = pixel_ray(&m, &Pose::identity(), 8, 0).unwrap();
        assert!(top.dir[1] > 0.0);
    }

    #[test]
    fn rejects_bad_pixels_and_poses() {
        let m = model(16, 16, 16.0, 8.0, 8.0);
        assert!(matches!(
            generate_ray(&m, &Pose::identity(), 16.0, 0.0),
            Err(Error::Input(_))
        ));
        let flat = Pose::identity().scale_axes([1.0, 1.0, 0.0]);
        assert!(matches!(
            generate_ray(&m, &flat, 1.0, 1.0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn unit_directions_for_random_pixels() {
        let m = model(64, 48, 50.0, 32.0, 24.0);
        let pose = Pose::look_at([1.0, 2.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let u = rng.gen_range(0.0..64.0);
            let v = rng.gen_range(0.0..48.0);
            let r = generate_ray(&m, &pose, u, v).unwrap();
            let n = (r.dir.iter().map(|d| d * d).sum::<f64>()).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    fn unit_ray(near: f64, far: f64) -> Ray {
        Ray {
            origin: [0.0; 3],
            dir: [0.0, 0.0, -1.0],
            near,
            far,
        }
    }

    #[test]
    fn midpoint_samples() {
        let s = sample_points(&unit_ray(1.0, 2.0), 4, SampleMode::Midpoint).unwrap();
        assert_eq!(s.depths, vec![1.125, 1.375, 1.625, 1.875]);
        assert_eq!(s.deltas, vec![0.25; 4]);
        assert_eq!(s.positions[0], [0.0, 0.0, -1.125]);
        assert_eq!(s.kept(), 4);

        let one = sample_points(&unit_ray(1.0, 2.0), 1, SampleMode::Midpoint).unwrap();
        assert_eq!(one.depths, vec![1.5]);
        assert_eq!(one.deltas, vec![1.0]);
        assert!(sample_points(&unit_ray(1.0, 2.0), 0, SampleMode::Midpoint).is_err());
    }

    #[test]
    fn stratified_is_seeded() {
        let r = unit_ray(0.5, 3.0);
        let a = sample_points(&r, 32, SampleMode::Stratified { seed: 9 }).unwrap();
        let b = sample_points(&r, 32, SampleMode::Stratified { seed: 9 }).unwrap();
        let c = sample_points(&r, 32, SampleMode::Stratified { seed: 10 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.depths, c.depths);
    }

    proptest! {
        #[test]
        fn stratified_invariants(seed in any::<u64>(), n in 1usize..64, near in 0.0f64..2.0, len in 0.1f64..5.0) {
            let r = unit_ray(near, near + len);
            let s = sample_points(&r, n, SampleMode::Stratified { seed }).unwrap();
            prop_assert!(s.depths.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(s.depths[0] >= near && s.depths[n - 1] <= near + len);
            for i in 0..n - 1 {
                prop_assert_eq!(s.deltas[i], s.depths[i + 1] - s.depths[i]);
            }
            prop_assert!(s.deltas.iter().all(|&d| d > 0.0));
            let total: f64 = s.deltas.iter().sum();
            prop_assert!((total - len).abs() < 1e-9);
        }
    }
}

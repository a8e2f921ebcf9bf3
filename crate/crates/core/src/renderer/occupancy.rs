use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SampleSet;
use crate::error::{Error, Result};
use crate::sceneio::SceneBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    pub resolution: usize,
    pub update_interval: u64,
    pub decay: f32,
    pub threshold: f32,
    pub warmup_iters: u64,
    /// Random times per update at which the dynamic field is probed.
    pub probe_times: usize,
    /// Jittered probes per cell and update.
    pub samples_per_cell: usize,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            update_interval: 16,
            decay: 0.95,
            threshold: 0.01,
            warmup_iters: 5000,
            probe_times: 4,
            samples_per_cell: 1,
        }
    }
}

impl OccupancyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution > 1024 {
            return Err(Error::Config(format!(
                "occupancy resolution {} out of range",
                self.resolution
            )));
        }
        if self.update_interval == 0 || self.samples_per_cell == 0 || self.probe_times == 0 {
            return Err(Error::Config(
                "occupancy interval, probe times and samples per cell must be positive".into(),
            ));
        }
        if !(self.decay >= 0.0 && self.decay <= 1.0) || !(self.threshold >= 0.0) {
            return Err(Error::Config("occupancy decay/threshold out of range".into()));
        }
        Ok(())
    }
}

/// Maximum density over every field that can occupy a point, for points in
/// the unit cube. `times` are shared by all points of one update.
pub trait DensityProbe: Sync {
    fn max_density(&self, xs: &[[f64; 3]], dirs: &[[f64; 3]], times: &[f64]) -> Result<Vec<f32>>;
}

/// Dense bitfield over the unit cube plus a decaying density cache.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    config: OccupancyConfig,
    bits: Vec<u64>,
    density: Vec<f32>,
    updates: u64,
}

const PROBE_CHUNK: usize = 4096;

impl OccupancyGrid {
    /// Everything occupied, empty cache.
    pub fn new(config: OccupancyConfig) -> Result<Self> {
        config.validate()?;
        let n = config.resolution.pow(3);
        Ok(Self {
            config,
            bits: full_bits(n),
            density: vec![0.0; n],
            updates: 0,
        })
    }

    /// Rebuilds a grid from a stored cache and bitfield.
    pub fn from_parts(
        config: OccupancyConfig,
        density: Vec<f32>,
        bits: Vec<u64>,
        updates: u64,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.resolution.pow(3);
        if density.len() != n || bits.len() != n.div_ceil(64) {
            return Err(Error::checkpoint(
                "occupancy",
                format!("expected {n} cells for resolution {}", config.resolution),
            ));
        }
        Ok(Self {
            config,
            bits,
            density,
            updates,
        })
    }

    pub fn config(&self) -> &OccupancyConfig {
        &self.config
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn cell_count(&self) -> usize {
        self.density.len()
    }

    pub fn density_cache(&self) -> &[f32] {
        &self.density
    }

    pub fn bits(&self) -> &[u64] {
        &self.bits
    }

    /// Number of completed post-warm-up updates.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn is_cell_occupied(&self, cell: usize) -> bool {
        self.bits[cell / 64] >> (cell % 64) & 1 == 1
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied_count() as f64 / self.cell_count() as f64
    }

    pub fn cell_index(&self, cell: [usize; 3]) -> usize {
        let r = self.config.resolution;
        (cell[2] * r + cell[1]) * r + cell[0]
    }

    pub fn cell_of(&self, u: [f64; 3]) -> usize {
        let r = self.config.resolution;
        let c = u.map(|v| ((v * r as f64).floor().max(0.0) as usize).min(r - 1));
        self.cell_index(c)
    }

    pub fn is_occupied(&self, u: [f64; 3]) -> bool {
        self.is_cell_occupied(self.cell_of(u))
    }

    pub fn set_all_occupied(&mut self) {
        self.bits = full_bits(self.cell_count());
    }

    /// Advances the grid for training iteration `iter`. Returns whether the
    /// cache was refreshed.
    pub fn update<P: DensityProbe + ?Sized, R: Rng + ?Sized>(
        &mut self,
        iter: u64,
        probe: &P,
        rng: &mut R,
    ) -> Result<bool> {
        let cfg = self.config;
        if iter < cfg.warmup_iters {
            self.set_all_occupied();
            return Ok(false);
        }
        if (iter - cfg.warmup_iters) % cfg.update_interval != 0 {
            return Ok(false);
        }
        self.refresh(probe, rng)?;
        Ok(true)
    }

    /// One cache refresh regardless of the schedule.
    pub fn refresh<P: DensityProbe + ?Sized, R: Rng + ?Sized>(
        &mut self,
        probe: &P,
        rng: &mut R,
    ) -> Result<()> {
        let cfg = self.config;
        let r = cfg.resolution;
        let n = self.cell_count();
        let times: Vec<f64> = (0..cfg.probe_times).map(|_| rng.gen()).collect();
        let spc = cfg.samples_per_cell;
        // all jitter is drawn up front so the result does not depend on threading
        let mut points = Vec::with_capacity(n * spc);
        let mut dirs = Vec::with_capacity(n * spc);
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    for _ in 0..spc {
                        let j: [f64; 3] = rng.gen();
                        points.push([
                            (x as f64 + j[0]) / r as f64,
                            (y as f64 + j[1]) / r as f64,
                            (z as f64 + j[2]) / r as f64,
                        ]);
                        dirs.push(random_direction(rng));
                    }
                }
            }
        }
        let sigmas: Vec<f32> = points
            .par_chunks(PROBE_CHUNK)
            .zip(dirs.par_chunks(PROBE_CHUNK))
            .map(|(p, d)| probe.max_density(p, d, &times))
            .collect::<Result<Vec<_>>>()?
            .concat();
        for (i, s) in sigmas.chunks_exact(spc).enumerate() {
            let peak = s.iter().copied().fold(0.0f32, f32::max);
            self.density[i] = (cfg.decay * self.density[i]).max(peak);
        }
        self.bits = vec![0; n.div_ceil(64)];
        for (i, &d) in self.density.iter().enumerate() {
            if d > cfg.threshold {
                self.bits[i / 64] |= 1 << (i % 64);
            }
        }
        self.updates += 1;
        Ok(())
    }

    /// Clears `keep` for samples whose normalized position lies in an empty
    /// cell. Depths and deltas are untouched.
    pub fn filter(&self, samples: &mut SampleSet, scene_box: &SceneBox) {
        for (p, keep) in samples.positions.iter().zip(samples.keep.iter_mut()) {
            if *keep && !self.is_occupied(scene_box.normalize(*p)) {
                *keep = false;
            }
        }
    }
}

fn full_bits(n: usize) -> Vec<u64> {
    let mut bits = vec![u64::MAX; n.div_ceil(64)];
    if n % 64 != 0 {
        *bits.last_mut().unwrap() = (1u64 << (n % 64)) - 1;
    }
    bits
}

pub(crate) fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Zero;
    impl DensityProbe for Zero {
        fn max_density(&self, xs: &[[f64; 3]], _: &[[f64; 3]], _: &[f64]) -> Result<Vec<f32>> {
            Ok(vec![0.0; xs.len()])
        }
    }

    struct Ball;
    impl DensityProbe for Ball {
        fn max_density(&self, xs: &[[f64; 3]], _: &[[f64; 3]], _: &[f64]) -> Result<Vec<f32>> {
            Ok(xs
                .iter()
                .map(|p| {
                    let r2: f64 = p.iter().map(|v| (v - 0.5) * (v - 0.5)).sum();
                    if r2 < 0.04 {
                        10.0
                    } else {
                        0.0
                    }
                })
                .collect())
        }
    }

    fn small() -> OccupancyConfig {
        OccupancyConfig {
            resolution: 16,
            warmup_iters: 10,
            update_interval: 4,
            ..Default::default()
        }
    }

    #[test]
    fn warmup_keeps_everything() {
        let mut g = OccupancyGrid::new(small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(!g.update(0, &Zero, &mut rng).unwrap());
        assert_eq!(g.occupied_count(), 16 * 16 * 16);
        assert!(g.is_occupied([0.99, 0.0, 0.5]));
    }

    #[test]
    fn zero_field_prunes_everything() {
        let mut g = OccupancyGrid::new(small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(!g.update(11, &Zero, &mut rng).unwrap());
        assert!(g.update(14, &Zero, &mut rng).unwrap());
        assert_eq!(g.occupied_count(), 0);
        assert_eq!(g.updates(), 1);
    }

    #[test]
    fn sphere_cells_form_a_strict_superset() {
        let mut g = OccupancyGrid::new(small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for it in 0..400 {
            g.update(it, &Ball, &mut rng).unwrap();
        }
        let r = 16;
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    // cells lying entirely inside the ball are always hit
                    let far: f64 = [x, y, z]
                        .iter()
                        .map(|&c| {
                            let lo = c as f64 / r as f64 - 0.5;
                            let hi = lo + 1.0 / r as f64;
                            lo.abs().max(hi.abs()).powi(2)
                        })
                        .sum();
                    if far < 0.04 {
                        assert!(g.is_cell_occupied(g.cell_index([x, y, z])));
                    }
                }
            }
        }
        assert!(g.occupied_fraction() < 0.1);
        assert!(g.occupied_count() > 0);
    }

    #[test]
    fn refresh_is_reproducible() {
        let mut a = OccupancyGrid::new(small()).unwrap();
        let mut b = a.clone();
        a.refresh(&Ball, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        b.refresh(&Ball, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cache_decays() {
        let mut g = OccupancyGrid::new(small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        g.refresh(&Ball, &mut rng).unwrap();
        let center = g.cell_of([0.5, 0.5, 0.5]);
        assert_eq!(g.density_cache()[center], 10.0);
        g.refresh(&Zero, &mut rng).unwrap();
        assert_eq!(g.density_cache()[center], 9.5);
        assert!(g.is_cell_occupied(center));
    }

    #[test]
    fn partial_word_bits() {
        let g = OccupancyGrid::new(OccupancyConfig {
            resolution: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(g.occupied_count(), 27);
    }
}

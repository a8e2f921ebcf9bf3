use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{GradBuffer, ParamStore, Real, SectionId, SectionKind};
use crate::error::{Error, Result};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];
const INIT_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: usize,
    /// Rows per level; must be a power of two.
    pub table_size: usize,
    pub features_per_level: usize,
    pub base_resolution: u32,
    pub growth_factor: f32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            table_size: 1 << 19,
            features_per_level: 2,
            base_resolution: 16,
            growth_factor: 1.447,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.table_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "hash table size {} is not a power of two",
                self.table_size
            )));
        }
        if self.table_size > u32::MAX as usize {
            return Err(Error::Config("hash table size exceeds u32".into()));
        }
        if self.base_resolution < 2 {
            return Err(Error::Config("base resolution must be at least 2".into()));
        }
        if self.growth_factor.is_nan() || self.growth_factor <= 1.0 {
            return Err(Error::Config("growth factor must exceed 1".into()));
        }
        if self.levels == 0 || self.features_per_level == 0 {
            return Err(Error::Config(
                "hash grid needs at least one level and one feature".into(),
            ));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.levels * self.features_per_level
    }
}

/// Vertices per axis at level `l`: `floor(N_min · b^l)`.
pub fn level_resolution(cfg: &HashGridConfig, level: usize) -> u32 {
    (cfg.base_resolution as f64 * (cfg.growth_factor as f64).powi(level as i32)).floor() as u32
}

fn is_dense(cfg: &HashGridConfig, res: u32) -> bool {
    (res as u64).pow(3) <= cfg.table_size as u64
}

/// Table row for a grid vertex. Dense levels use row-major order, the rest
/// XOR the prime-multiplied coordinates.
pub fn hash_index(cell: [u32; 3], level: usize, cfg: &HashGridConfig) -> usize {
    let res = level_resolution(cfg, level);
    index_at(cell, res, cfg)
}

#[inline]
fn index_at(cell: [u32; 3], res: u32, cfg: &HashGridConfig) -> usize {
    if is_dense(cfg, res) {
        let r = res as usize;
        cell[0] as usize + cell[1] as usize * r + cell[2] as usize * r * r
    } else {
        let h = cell[0].wrapping_mul(PRIMES[0])
            ^ cell[1].wrapping_mul(PRIMES[1])
            ^ cell[2].wrapping_mul(PRIMES[2]);
        (h as usize) & (cfg.table_size - 1)
    }
}

/// Corner rows and in-voxel offsets recorded per sample and level.
#[derive(Debug, Clone, Default)]
pub struct HashTape<T> {
    rows: Vec<u32>,
    frac: Vec<T>,
    levels: usize,
}

impl<T: Real> HashTape<T> {
    pub fn with_capacity(samples: usize, levels: usize) -> Self {
        Self {
            rows: Vec::with_capacity(samples * levels * 8),
            frac: Vec::with_capacity(samples * levels * 3),
            levels,
        }
    }

    pub fn len(&self) -> usize {
        if self.levels == 0 {
            0
        } else {
            self.rows.len() / (8 * self.levels)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[inline]
fn corner_weight<T: Real>(c: usize, f: &[T]) -> T {
    let mut w = T::one();
    for (a, &fa) in f.iter().enumerate() {
        w *= if c >> a & 1 == 1 { fa } else { T::one() - fa };
    }
    w
}

/// Multiresolution hash encoding bound to per-level table sections.
#[derive(Debug, Clone)]
pub struct HashGrid {
    cfg: HashGridConfig,
    tables: Vec<SectionId>,
    resolutions: Vec<u32>,
}

impl HashGrid {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: HashGridConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut tables = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let n = cfg.table_size * cfg.features_per_level;
            let values = (0..n)
                .map(|_| T::lit(rng.gen_range(-INIT_SCALE..INIT_SCALE)))
                .collect();
            tables.push(store.add(
                format!("{prefix}.l{l}"),
                vec![cfg.table_size, cfg.features_per_level],
                SectionKind::Table,
                values,
            )?);
        }
        Ok(Self::from_tables(cfg, tables))
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, prefix: &str, cfg: HashGridConfig) -> Result<Self> {
        cfg.validate()?;
        let mut tables = Vec::with_capacity(cfg.levels);
        for l in 0..cfg.levels {
            let id = store.require(&format!("{prefix}.l{l}"))?;
            if store.section(id).shape != vec![cfg.table_size, cfg.features_per_level] {
                return Err(Error::Config(format!(
                    "hash table `{prefix}.l{l}` has the wrong shape"
                )));
            }
            tables.push(id);
        }
        Ok(Self::from_tables(cfg, tables))
    }

    fn from_tables(cfg: HashGridConfig, tables: Vec<SectionId>) -> Self {
        let resolutions = (0..cfg.levels).map(|l| level_resolution(&cfg, l)).collect();
        Self {
            cfg,
            tables,
            resolutions,
        }
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.cfg
    }

    pub fn output_width(&self) -> usize {
        self.cfg.output_width()
    }

    pub fn tables(&self) -> &[SectionId] {
        &self.tables
    }

    #[inline]
    fn locate<T: Real>(&self, x: &[T; 3], level: usize, rows: &mut [u32; 8], frac: &mut [T; 3]) {
        let res = self.resolutions[level];
        let scale = T::lit((res - 1) as f64);
        let mut base = [0u32; 3];
        for a in 0..3 {
            let p = x[a].max(T::zero()).min(T::one()) * scale;
            let cell = p.floor().to_u32().unwrap_or(0).min(res - 2);
            base[a] = cell;
            frac[a] = p - T::lit(cell as f64);
        }
        for (c, row) in rows.iter_mut().enumerate() {
            let corner = [
                base[0] + (c & 1) as u32,
                base[1] + (c >> 1 & 1) as u32,
                base[2] + (c >> 2 & 1) as u32,
            ];
            *row = index_at(corner, res, &self.cfg) as u32;
        }
    }

    /// Encodes one position in `[0,1]³` into `out` (width `levels·F`).
    pub fn encode_into<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &[T; 3],
        out: &mut [T],
        tape: Option<&mut HashTape<T>>,
    ) {
        let f = self.cfg.features_per_level;
        let mut rows = [0u32; 8];
        let mut frac = [T::zero(); 3];
        let mut tape = tape;
        for level in 0..self.cfg.levels {
            self.locate(x, level, &mut rows, &mut frac);
            let table = store.values(self.tables[level]);
            let dst = &mut out[level * f..(level + 1) * f];
            dst.iter_mut().for_each(|v| *v = T::zero());
            for (c, &row) in rows.iter().enumerate() {
                let w = corner_weight(c, &frac);
                let src = &table[row as usize * f..(row as usize + 1) * f];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.rows.extend_from_slice(&rows);
                t.frac.extend_from_slice(&frac);
            }
        }
    }

    pub fn encode<T: Real>(&self, store: &ParamStore<T>, x: &[T; 3]) -> Vec<T> {
        let mut out = vec![T::zero(); self.output_width()];
        self.encode_into(store, x, &mut out, None);
        out
    }

    /// Starts a tape sized for `samples` encodings.
    pub fn tape<T: Real>(&self, samples: usize) -> HashTape<T> {
        HashTape::with_capacity(samples, self.cfg.levels)
    }

    /// Backward for sample `i` of `tape`: scatters `upstream` into the table
    /// gradients with trilinear weights and, if asked, adds `∂L/∂x` to `dx`.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &HashTape<T>,
        i: usize,
        upstream: &[T],
        grads: &mut GradBuffer<T>,
        dx: Option<&mut [T; 3]>,
    ) {
        let f = self.cfg.features_per_level;
        let levels = self.cfg.levels;
        let mut dx = dx;
        for level in 0..levels {
            let up = &upstream[level * f..(level + 1) * f];
            if up.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let slot = i * levels + level;
            let rows = &tape.rows[slot * 8..slot * 8 + 8];
            let frac = &tape.frac[slot * 3..slot * 3 + 3];
            let table_id = self.tables[level];
            for (c, &row) in rows.iter().enumerate() {
                let w = corner_weight(c, frac);
                if w == T::zero() {
                    continue;
                }
                for (k, &u) in up.iter().enumerate() {
                    grads.scatter(table_id, row as usize * f + k, w * u);
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                let table = store.values(table_id);
                let scale = T::lit((self.resolutions[level] - 1) as f64);
                for (c, &row) in rows.iter().enumerate() {
                    let src = &table[row as usize * f..(row as usize + 1) * f];
                    let dot: T = src.iter().zip(up).map(|(&s, &u)| s * u).sum();
                    if dot == T::zero() {
                        continue;
                    }
                    for a in 0..3 {
                        let mut dw = if c >> a & 1 == 1 { T::one() } else { -T::one() };
                        for (b, &fb) in frac.iter().enumerate() {
                            if b != a {
                                dw *= if c >> b & 1 == 1 { fb } else { T::one() - fb };
                            }
                        }
                        dx[a] += scale * dw * dot;
                    }
                }
            }
        }
    }

    /// Trilinear weights at `x` for one level, in corner order. Exposed for
    /// property tests.
    pub fn corner_weights<T: Real>(&self, x: &[T; 3], level: usize) -> [T; 8] {
        let mut rows = [0u32; 8];
        let mut frac = [T::zero(); 3];
        self.locate(x, level, &mut rows, &mut frac);
        std::array::from_fn(|c| corner_weight(c, &frac))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> HashGridConfig {
        HashGridConfig {
            levels: 3,
            table_size: 1 << 10,
            features_per_level: 2,
            base_resolution: 4,
            growth_factor: 2.0,
        }
    }

    #[test]
    fn resolutions() {
        let cfg = HashGridConfig {
            base_resolution: 16,
            growth_factor: 1.5,
            ..HashGridConfig::default()
        };
        assert_eq!(level_resolution(&cfg, 0), 16);
        assert_eq!(level_resolution(&cfg, 2), 36);
        let d = HashGridConfig::default();
        let res: Vec<u32> = (0..d.levels).map(|l| level_resolution(&d, l)).collect();
        assert!(res.windows(2).all(|w| w[0] <= w[1]));
        // 16·1.447^15 ≈ 4085
        assert!((4000..=4200).contains(res.last().unwrap()));
    }

    #[test]
    fn indices() {
        let cfg = small_cfg();
        assert_eq!(hash_index([0, 0, 0], 2, &cfg), 0);
        assert_eq!(hash_index([1, 2, 3], 0, &cfg), 57);
        // level 2 has resolution 16 → 4096 > 1024 rows, so it is hashed
        for i in 0..500u32 {
            let idx = hash_index([i, i * 7 + 1, i * 13 + 5], 2, &cfg);
            assert!(idx < cfg.table_size);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        cfg.table_size = 1000;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.base_resolution = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.growth_factor = 1.0;
        assert!(cfg.validate().is_err());
    }

    fn grid_with_values(cfg: HashGridConfig) -> (ParamStore<f64>, HashGrid) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = HashGrid::register(&mut store, "g", cfg, &mut rng).unwrap();
        for (k, id) in grid.tables().to_vec().into_iter().enumerate() {
            for (i, v) in store.values_mut(id).iter_mut().enumerate() {
                *v = ((i * 31 + k * 7) as f64 * 0.173).sin();
            }
        }
        (store, grid)
    }

    #[test]
    fn vertex_returns_feature_verbatim() {
        let cfg = small_cfg();
        let (store, grid) = grid_with_values(cfg);
        // (1/3, 2/3, 1) is a vertex of the resolution-4 level: cell (1, 2, 3)
        let x = [1.0 / 3.0, 2.0 / 3.0, 1.0];
        let out = grid.encode(&store, &x);
        let row = hash_index([1, 2, 3], 0, &cfg);
        let table = store.values(grid.tables()[0]);
        assert!((out[0] - table[row * 2]).abs() < 1e-12);
        assert!((out[1] - table[row * 2 + 1]).abs() < 1e-12);
    }

    #[test]
    fn midpoint_averages() {
        let cfg = HashGridConfig {
            levels: 1,
            ..small_cfg()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = HashGrid::register(&mut store, "g", cfg, &mut rng).unwrap();
        let table = grid.tables()[0];
        store.values_mut(table).iter_mut().for_each(|v| *v = 0.0);
        // features a at x-index 0 and b at x-index 1 for the y=z=0 face
        let (a, b) = (0.2, 1.4);
        for c in 0..4u32 {
            let (y, z) = (c & 1, c >> 1);
            let r0 = hash_index([0, y, z], 0, &cfg);
            let r1 = hash_index([1, y, z], 0, &cfg);
            store.values_mut(table)[r0 * 2] = a;
            store.values_mut(table)[r1 * 2] = b;
        }
        let out = grid.encode(&store, &[0.5 / 3.0, 0.1, 0.2]);
        assert!((out[0] - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_table_gives_zero_features() {
        let cfg = small_cfg();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = HashGrid::register(&mut store, "g", cfg, &mut rng).unwrap();
        for id in grid.tables().to_vec() {
            store.values_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let out = grid.encode(&store, &[0.3, 0.9, 0.1]);
        assert_eq!(out, vec![0.0; 6]);
    }

    #[test]
    fn initial_values_are_tiny() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = HashGrid::register(&mut store, "g", small_cfg(), &mut rng).unwrap();
        for &id in grid.tables() {
            assert!(store.values(id).iter().all(|v| v.abs() <= 1e-4));
        }
    }

    #[test]
    fn position_gradient_matches_finite_differences() {
        let (store, grid) = grid_with_values(small_cfg());
        let x = [0.41, 0.27, 0.83];
        let up: Vec<f64> = (0..6).map(|i| 0.3 + i as f64 * 0.2).collect();
        let mut tape = grid.tape(1);
        let mut out = vec![0.0; 6];
        grid.encode_into(&store, &x, &mut out, Some(&mut tape));
        let mut grads = GradBuffer::for_store(&store);
        let mut dx = [0.0; 3];
        grid.backward(&store, &tape, 0, &up, &mut grads, Some(&mut dx));
        let f = |p: [f64; 3]| -> f64 {
            grid.encode(&store, &p).iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let h = 1e-7;
        for a in 0..3 {
            let mut p = x;
            p[a] += h;
            let mut m = x;
            m[a] -= h;
            let numeric = (f(p) - f(m)) / (2.0 * h);
            assert!((numeric - dx[a]).abs() < 1e-5 * numeric.abs().max(1.0), "{a}: {numeric} vs {}", dx[a]);
        }
    }

    #[test]
    fn table_gradient_matches_finite_differences_f32() {
        let cfg = small_cfg();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = HashGrid::register(&mut store, "g", cfg, &mut rng).unwrap();
        let x = [0.62f32, 0.18, 0.47];
        let up = [0.5f32, -1.0, 0.25, 0.75, -0.4, 1.1];
        let mut tape = grid.tape(1);
        let mut out = vec![0.0; 6];
        grid.encode_into(&store, &x, &mut out, Some(&mut tape));
        let mut grads = GradBuffer::for_store(&store);
        grid.backward(&store, &tape, 0, &up, &mut grads, None);
        store.accumulate(&grads);
        let h = 1e-2f32;
        for &id in grid.tables() {
            let touched: Vec<usize> = store
                .grads(id)
                .iter()
                .enumerate()
                .filter(|(_, g)| **g != 0.0)
                .map(|(i, _)| i)
                .collect();
            assert!(!touched.is_empty());
            for i in touched {
                let orig = store.values(id)[i];
                store.values_mut(id)[i] = orig + h;
                let p: f32 = grid.encode(&store, &x).iter().zip(&up).map(|(a, b)| a * b).sum();
                store.values_mut(id)[i] = orig - h;
                let m: f32 = grid.encode(&store, &x).iter().zip(&up).map(|(a, b)| a * b).sum();
                store.values_mut(id)[i] = orig;
                let numeric = (p - m) / (2.0 * h);
                let analytic = store.grads(id)[i];
                assert!(
                    (numeric - analytic).abs() <= 1e-4 * analytic.abs().max(numeric.abs()).max(1e-1),
                    "{numeric} vs {analytic}"
                );
            }
        }
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn weights_sum_to_one(x in 0.0f64..=1.0, y in 0.0f64..=1.0, z in 0.0f64..=1.0) {
            let (_, grid) = grid_with_values(small_cfg());
            for level in 0..3 {
                let w = grid.corner_weights(&[x, y, z], level);
                let s: f64 = w.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(w.iter().all(|v| *v >= -1e-15));
            }
        }

        #[test]
        fn encoding_is_lipschitz_within_a_voxel(x in 0.05f64..0.95, y in 0.05f64..0.95, z in 0.05f64..0.95) {
            let (store, grid) = grid_with_values(small_cfg());
            let eps = 1e-6;
            let a = grid.encode(&store, &[x, y, z]);
            let b = grid.encode(&store, &[x + eps, y, z]);
            // spread of corner values is ≤ 2, finest level has 15 cells per unit
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() <= eps * 2.0 * 15.0 + 1e-12);
            }
        }
    }
}

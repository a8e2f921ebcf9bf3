use super::RadianceField;
use crate::diffnet::Real;
use crate::error::Result;

/// Constant density and color inside an axis-aligned box of the unit cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub sigma: f64,
    pub color: [f64; 3],
}

impl ConstantBox {
    fn inside<T: Real>(&self, x: &[T; 3]) -> bool {
        (0..3).all(|a| {
            let v = x[a].as_f64();
            v >= self.min[a] && v <= self.max[a]
        })
    }
}

impl<T: Real> RadianceField<T> for ConstantBox {
    fn density(&self, xs: &[[T; 3]]) -> Result<Vec<T>> {
        Ok(xs
            .iter()
            .map(|x| if self.inside(x) { T::lit(self.sigma) } else { T::zero() })
            .collect())
    }

    fn radiance(&self, xs: &[[T; 3]], _: &[[T; 3]]) -> Result<(Vec<T>, Vec<[T; 3]>)> {
        let rgb = xs
            .iter()
            .map(|x| {
                if self.inside(x) {
                    self.color.map(T::lit)
                } else {
                    [T::zero(); 3]
                }
            })
            .collect();
        Ok((self.density(xs)?, rgb))
    }
}

/// Emissive ball of constant density. With `voxels = Some(R)` the density
/// is constant per cell of an `R³` lattice: a cell is filled when its
/// center lies inside the ball, so every cell is either empty or uniformly
/// dense.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticSphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub sigma: f64,
    pub voxels: Option<usize>,
}

impl AnalyticSphere {
    pub fn contains(&self, x: [f64; 3]) -> bool {
        let p = match self.voxels {
            Some(r) => {
                let r = r as f64;
                x.map(|v| ((v * r).floor().clamp(0.0, r - 1.0) + 0.5) / r)
            }
            None => x,
        };
        let d2: f64 = (0..3).map(|a| (p[a] - self.center[a]).powi(2)).sum();
        d2 <= self.radius * self.radius
    }

    /// View-independent color varying with position, so renders are not flat.
    fn color(&self, x: [f64; 3]) -> [f64; 3] {
        let rel = std::array::from_fn::<f64, 3, _>(|a| (x[a] - self.center[a]) / self.radius);
        [
            0.5 + 0.4 * rel[0].clamp(-1.0, 1.0),
            0.5 + 0.4 * rel[1].clamp(-1.0, 1.0),
            0.6,
        ]
    }
}

impl<T: Real> RadianceField<T> for AnalyticSphere {
    fn density(&self, xs: &[[T; 3]]) -> Result<Vec<T>> {
        Ok(xs
            .iter()
            .map(|x| {
                if self.contains(x.map(|v| v.as_f64())) {
                    T::lit(self.sigma)
                } else {
                    T::zero()
                }
            })
            .collect())
    }

    fn radiance(&self, xs: &[[T; 3]], _: &[[T; 3]]) -> Result<(Vec<T>, Vec<[T; 3]>)> {
        let rgb = xs
            .iter()
            .map(|x| {
                let p = x.map(|v| v.as_f64());
                if self.contains(p) {
                    self.color(p).map(T::lit)
                } else {
                    [T::zero(); 3]
                }
            })
            .collect();
        Ok((self.density(xs)?, rgb))
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics plus the ray bounds used for every frame of a camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Data(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.near >= 0.0 && self.near < self.far) {
            return Err(Error::Data(format!(
                "near {} must be below far {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Data("camera has an empty image plane".into()));
        }
        Ok(())
    }

    /// Same field of view at another resolution.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..*self
        }
    }
}

/// Camera-to-world rigid transform, row-major 4×4. Cameras look down −z
/// with +y up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct Pose(pub [[f64; 4]; 4]);

impl From<Pose> for Vec<f64> {
    fn from(p: Pose) -> Self {
        p.0.iter().flatten().copied().collect()
    }
}

impl TryFrom<Vec<f64>> for Pose {
    type Error = String;

    fn try_from(v: Vec<f64>) -> std::result::Result<Self, String> {
        if v.len() != 16 {
            return Err(format!("pose needs 16 values, got {}", v.len()));
        }
        Ok(Pose(std::array::from_fn(|r| {
            std::array::from_fn(|c| v[r * 4 + c])
        })))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose(std::array::from_fn(|r| {
            std::array::from_fn(|c| if r == c { 1.0 } else { 0.0 })
        }))
    }

    pub fn from_rotation_translation(r: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        let mut m = Self::identity().0;
        for i in 0..3 {
            m[i][..3].copy_from_slice(&r[i]);
            m[i][3] = t[i];
        }
        Pose(m)
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.0[r][c]))
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.0[0][3], self.0[1][3], self.0[2][3]]
    }

    /// Camera center in world space.
    pub fn center(&self) -> [f64; 3] {
        self.translation()
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        std::array::from_fn(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
    }

    pub fn determinant(&self) -> f64 {
        let r = self.rotation();
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Largest deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation();
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }

    /// Inverse of a rigid transform.
    pub fn inverse(&self) -> Self {
        let r = self.rotation();
        let t = self.translation();
        let rt: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| r[j][i]));
        let ti: [f64; 3] = std::array::from_fn(|i| -(0..3).map(|k| rt[i][k] * t[k]).sum::<f64>());
        Self::from_rotation_translation(rt, ti)
    }

    /// Right-multiplies the rotation block by `diag(sx, sy, sz)`.
    pub fn scale_axes(&self, s: [f64; 3]) -> Self {
        let mut m = self.0;
        for row in m.iter_mut().take(3) {
            for c in 0..3 {
                row[c] *= s[c];
            }
        }
        Pose(m)
    }

    /// Camera at `eye` looking at `target` with `up` roughly vertical.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Self {
        let back = normalize(sub(eye, target));
        let right = normalize(cross(up, back));
        let true_up = cross(back, right);
        let r = std::array::from_fn(|i| [right[i], true_up[i], back[i]]);
        Self::from_rotation_translation(r, eye)
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Axis-aligned box mapped onto the unit cube for field queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|a| !(self.max[a] > self.min[a]) || !self.min[a].is_finite() || !self.max[a].is_finite()) {
            return Err(Error::Data(format!(
                "degenerate scene box {:?}..{:?}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn extent(&self) -> [f64; 3] {
        sub(self.max, self.min)
    }

    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.min[a]) / (self.max[a] - self.min[a]))
    }

    pub fn denormalize(&self, u: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.min[a] + u[a] * (self.max[a] - self.min[a]))
    }

    /// Grows the box by `fraction` of its extent on every side.
    pub fn expanded(&self, fraction: f64) -> Self {
        let e = self.extent();
        Self {
            min: std::array::from_fn(|a| self.min[a] - e[a] * fraction),
            max: std::array::from_fn(|a| self.max[a] + e[a] * fraction),
        }
    }

    pub fn enclosing(points: impl IntoIterator<Item = [f64; 3]>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Some(Self { min, max })
    }
}

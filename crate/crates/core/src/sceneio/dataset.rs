use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CameraModel, Pose, SceneBox};
use crate::error::{Error, Result};
use crate::imagebuf::{GrayImage, RgbImage};

pub const SCENE_FILE: &str = "scene.json";

/// Maximum deviation of `RᵀR` from identity accepted for a pose.
pub const POSE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub id: u32,
    #[serde(flatten)]
    pub model: CameraModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Image path relative to the dataset root.
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub pose: Pose,
    /// Time index in `[0, time_count)`.
    pub time: usize,
    pub camera: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_prior: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_prior: Option<String>,
}

/// On-disk layout of `scene.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub cameras: Vec<CameraEntry>,
    pub frames: Vec<FrameRecord>,
    pub time_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_box: Option<SceneBox>,
    #[serde(default)]
    pub splits: BTreeMap<String, Vec<usize>>,
}

/// A validated dataset. Images are read on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub root: PathBuf,
    pub cameras: Vec<CameraEntry>,
    pub frames: Vec<FrameRecord>,
    pub time_count: usize,
    pub scene_box: SceneBox,
    pub splits: BTreeMap<String, Vec<usize>>,
    /// Target image size; intrinsics are rescaled to match.
    pub resize: Option<(u32, u32)>,
}

impl SceneFile {
    /// Checks every frame and camera; errors name the offending frame.
    pub fn validate(&self) -> Result<()> {
        if self.time_count == 0 {
            return Err(Error::Data("time_count must be at least 1".into()));
        }
        if self.frames.is_empty() {
            return Err(Error::Data("dataset has no frames".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for c in &self.cameras {
            c.model
                .validate()
                .map_err(|e| Error::Data(format!("camera {}: {}", c.id, e)))?;
            if !ids.insert(c.id) {
                return Err(Error::Data(format!("duplicate camera id {}", c.id)));
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            let name = || format!("frame {i} ({})", f.file);
            if !ids.contains(&f.camera) {
                return Err(Error::Data(format!(
                    "{} references unknown camera {}",
                    name(),
                    f.camera
                )));
            }
            if f.time >= self.time_count {
                return Err(Error::Data(format!(
                    "{} has time {} but time_count is {}",
                    name(),
                    f.time,
                    self.time_count
                )));
            }
            if f.pose.0.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("{} has a non-finite pose", name())));
            }
            let err = f.pose.orthonormality_error();
            if err > POSE_TOLERANCE {
                return Err(Error::Data(format!(
                    "{} pose rotation is not orthonormal (error {err:.2e})",
                    name()
                )));
            }
            if f.pose.0[3] != [0.0, 0.0, 0.0, 1.0] {
                return Err(Error::Data(format!(
                    "{} pose bottom row must be 0 0 0 1",
                    name()
                )));
            }
        }
        if let Some(b) = &self.scene_box {
            b.validate()?;
        }
        for (split, idx) in &self.splits {
            if let Some(&bad) = idx.iter().find(|&&i| i >= self.frames.len()) {
                return Err(Error::Data(format!(
                    "split `{split}` references missing frame {bad}"
                )));
            }
        }
        Ok(())
    }

    pub fn camera(&self, id: u32) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| c.id == id).map(|c| &c.model)
    }

    /// Box around every camera frustum truncated at its far plane,
    /// expanded by 10%.
    pub fn default_scene_box(&self) -> Result<SceneBox> {
        let mut pts = Vec::new();
        for f in &self.frames {
            let m = self
                .camera(f.camera)
                .ok_or_else(|| Error::Data(format!("unknown camera {}", f.camera)))?;
            pts.push(f.pose.center());
            for (u, v) in [
                (0.0, 0.0),
                (m.width as f64, 0.0),
                (0.0, m.height as f64),
                (m.width as f64, m.height as f64),
            ] {
                let cam = [(u - m.cx) / m.fx, -(v - m.cy) / m.fy, -1.0];
                let n = super::dot(cam, cam).sqrt();
                let d = f.pose.rotate(cam);
                let c = f.pose.center();
                for depth in [m.near, m.far] {
                    pts.push(std::array::from_fn(|a| c[a] + depth * d[a] / n));
                }
            }
        }
        let b = SceneBox::enclosing(pts)
            .ok_or_else(|| Error::Data("dataset has no frames".into()))?
            .expanded(0.1);
        b.validate()?;
        Ok(b)
    }
}

impl SceneDataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SCENE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: SceneFile = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("malformed {}: {e}", path.display())))?;
        Self::from_file(dir, file)
    }

    /// Validates a parsed scene file and checks that referenced files exist.
    pub fn from_file(dir: &Path, file: SceneFile) -> Result<Self> {
        file.validate()?;
        for (i, f) in file.frames.iter().enumerate() {
            let files = [Some(&f.file), f.mask.as_ref(), f.depth_prior.as_ref(), f.flow_prior.as_ref()];
            for rel in files.into_iter().flatten() {
                let p = dir.join(rel);
                if !p.is_file() {
                    return Err(Error::Data(format!(
                        "frame {i} references missing file {}",
                        p.display()
                    )));
                }
            }
        }
        let scene_box = match file.scene_box {
            Some(b) => b,
            None => file.default_scene_box()?,
        };
        Ok(Self {
            root: dir.to_path_buf(),
            cameras: file.cameras,
            frames: file.frames,
            time_count: file.time_count,
            scene_box,
            splits: file.splits,
            resize: None,
        })
    }

    pub fn with_resize(mut self, size: Option<(u32, u32)>) -> Self {
        self.resize = size;
        self
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            cameras: self.cameras.clone(),
            frames: self.frames.clone(),
            time_count: self.time_count,
            scene_box: Some(self.scene_box),
            splits: self.splits.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Intrinsics of a frame after any resize.
    pub fn camera_of(&self, frame: usize) -> &CameraModel {
        let id = self.frames[frame].camera;
        &self
            .cameras
            .iter()
            .find(|c| c.id == id)
            .expect("validated camera reference")
            .model
    }

    pub fn camera_model(&self, frame: usize) -> CameraModel {
        let m = *self.camera_of(frame);
        match self.resize {
            Some((w, h)) => m.resized(w, h),
            None => m,
        }
    }

    /// Normalized time of a frame.
    pub fn frame_time(&self, frame: usize) -> f64 {
        normalized_time(self.frames[frame].time, self.time_count)
    }

    /// Frame indices of a split. `test` falls back to the union of every
    /// `test_*` split and `all` lists every frame.
    pub fn split(&self, name: &str) -> Result<Vec<usize>> {
        if let Some(v) = self.splits.get(name) {
            return Ok(v.clone());
        }
        let mut out: Vec<usize> = match name {
            "all" => (0..self.frames.len()).collect(),
            "train" if self.splits.is_empty() => (0..self.frames.len()).collect(),
            "test" => self
                .splits
                .iter()
                .filter(|(k, _)| k.starts_with("test_"))
                .flat_map(|(_, v)| v.iter().copied())
                .collect(),
            _ => Vec::new(),
        };
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Usage(format!("split `{name}` is empty or unknown")));
        }
        Ok(out)
    }

    /// Same-camera frame at `time + offset`, restricted to `within`.
    pub fn temporal_neighbor(&self, frame: usize, offset: isize, within: &[usize]) -> Option<usize> {
        let f = &self.frames[frame];
        let t = f.time as isize + offset;
        if t < 0 {
            return None;
        }
        within.iter().copied().find(|&j| {
            let g = &self.frames[j];
            g.camera == f.camera && g.time as isize == t
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_image(&self, frame: usize) -> Result<RgbImage> {
        let img = RgbImage::load_png(&self.path(&self.frames[frame].file))?;
        let m = self.camera_of(frame);
        if (img.width, img.height) != (m.width, m.height) {
            return Err(Error::Data(format!(
                "frame {frame}: image is {}x{} but camera {} is {}x{}",
                img.width, img.height, self.frames[frame].camera, m.width, m.height
            )));
        }
        Ok(match self.resize {
            Some((w, h)) => img.resized(w, h),
            None => img,
        })
    }

    /// `Ok(None)` when the frame has no mask.
    pub fn load_mask(&self, frame: usize) -> Result<Option<GrayImage>> {
        let Some(rel) = &self.frames[frame].mask else {
            return Ok(None);
        };
        let m = GrayImage::load_png(&self.path(rel))?;
        let cam = self.camera_of(frame);
        if (m.width, m.height) != (cam.width, cam.height) {
            return Err(Error::Data(format!(
                "frame {frame}: mask size {}x{} differs from the image",
                m.width, m.height
            )));
        }
        Ok(Some(match self.resize {
            Some((w, h)) => m.resized(w, h),
            None => m,
        }))
    }
}

pub fn normalized_time(index: usize, count: usize) -> f64 {
    if count <= 1 {
        0.0
    } else {
        index as f64 / (count - 1) as f64
    }
}

/// Writes `scene.json` with stable formatting.
pub fn write_scene_file(dir: &Path, file: &SceneFile) -> Result<()> {
    let path = dir.join(SCENE_FILE);
    let text = serde_json::to_string_pretty(file)
        .map_err(|e| Error::Data(format!("cannot serialize scene: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

//! COLMAP text model (`cameras.txt`, `images.txt`) import and export.
//!
//! Poses are returned as camera-to-world transforms in COLMAP's camera
//! axes (x right, y down, looking down +z). [`ColmapScene::frames`]
//! converts them to this crate's convention (y up, looking down −z).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{CameraEntry, CameraModel, FrameRecord, Pose};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub image_id: u32,
    pub camera_id: u32,
    pub name: String,
    /// Camera-to-world in COLMAP camera axes.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapScene {
    pub cameras: Vec<CameraEntry>,
    pub images: Vec<ColmapImage>,
}

/// Rotation matrix of a quaternion `(w, x, y, z)`; normalizes first.
pub fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Quaternion `(w, x, y, z)` with `w ≥ 0` of a rotation matrix.
pub fn matrix_to_quat(r: [[f64; 3]; 3]) -> [f64; 4] {
    let tr = r[0][0] + r[1][1] + r[2][2];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s]
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        [(r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s]
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        [(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s]
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        [(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s]
    };
    if q[0] < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.starts_with('#'))
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, file: &str, line: usize) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Data(format!("{file}:{line}: malformed line")))
}

/// Reads a COLMAP text model. `near`/`far` fill in the ray bounds COLMAP
/// does not record.
pub fn import_colmap(dir: &Path, near: f64, far: f64) -> Result<ColmapScene> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let mut cameras = Vec::new();
    for (ln, line) in data_lines(&read("cameras.txt")?) {
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let id: u32 = parse(tok.next(), "cameras.txt", ln)?;
        let model = tok.next().unwrap_or_default().to_string();
        let width: u32 = parse(tok.next(), "cameras.txt", ln)?;
        let height: u32 = parse(tok.next(), "cameras.txt", ln)?;
        let params = tok
            .map(|t| parse::<f64>(Some(t), "cameras.txt", ln))
            .collect::<Result<Vec<_>>>()?;
        let (fx, fy, cx, cy) = match (model.as_str(), params.as_slice()) {
            ("PINHOLE", [fx, fy, cx, cy]) => (*fx, *fy, *cx, *cy),
            ("SIMPLE_PINHOLE", [f, cx, cy]) => (*f, *f, *cx, *cy),
            ("PINHOLE" | "SIMPLE_PINHOLE", _) => {
                return Err(Error::Data(format!(
                    "cameras.txt:{ln}: wrong parameter count for {model}"
                )))
            }
            _ => return Err(Error::UnsupportedModel(model)),
        };
        let m = CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
            far,
        };
        m.validate()?;
        cameras.push(CameraEntry { id, model: m });
    }
    let text = read("images.txt")?;
    let mut images = Vec::new();
    let mut expect_points = false;
    for (ln, line) in data_lines(&text) {
        // every image line is followed by a (possibly empty) 2D point line
        if expect_points {
            expect_points = false;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let image_id: u32 = parse(tok.next(), "images.txt", ln)?;
        let mut v = [0.0; 7];
        for slot in &mut v {
            *slot = parse(tok.next(), "images.txt", ln)?;
        }
        let camera_id: u32 = parse(tok.next(), "images.txt", ln)?;
        let name = tok
            .next()
            .ok_or_else(|| Error::Data(format!("images.txt:{ln}: missing image name")))?
            .to_string();
        if !cameras.iter().any(|c| c.id == camera_id) {
            return Err(Error::Data(format!(
                "images.txt:{ln}: unknown camera {camera_id}"
            )));
        }
        let w2c = Pose::from_rotation_translation(
            quat_to_matrix([v[0], v[1], v[2], v[3]]),
            [v[4], v[5], v[6]],
        );
        images.push(ColmapImage {
            image_id,
            camera_id,
            name,
            pose: w2c.inverse(),
        });
        expect_points = true;
    }
    Ok(ColmapScene { cameras, images })
}

/// Writes `cameras.txt` and `images.txt` (PINHOLE, no 2D points).
pub fn export_colmap(dir: &Path, scene: &ColmapScene) -> Result<()> {
    let mut cams = String::from("# Camera list with one line of data per camera:\n");
    for c in &scene.cameras {
        let m = &c.model;
        let _ = writeln!(
            cams,
            "{} PINHOLE {} {} {} {} {} {}",
            c.id, m.width, m.height, m.fx, m.fy, m.cx, m.cy
        );
    }
    let mut imgs = String::from("# Image list with two lines of data per image:\n");
    for im in &scene.images {
        let w2c = im.pose.inverse();
        let q = matrix_to_quat(w2c.rotation());
        let t = w2c.translation();
        let _ = writeln!(
            imgs,
            "{} {} {} {} {} {} {} {} {} {}\n",
            im.image_id, q[0], q[1], q[2], q[3], t[0], t[1], t[2], im.camera_id, im.name
        );
    }
    for (name, body) in [("cameras.txt", cams), ("images.txt", imgs)] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// COLMAP camera axes to the crate convention: flip y and z.
pub const COLMAP_TO_LOCAL: [f64; 3] = [1.0, -1.0, -1.0];

impl ColmapScene {
    /// Frame records with poses in the local convention. Each camera's
    /// images are ordered by name and that order becomes the time index.
    /// Returns the frames and the resulting time count.
    pub fn frames(&self, image_dir: &str) -> (Vec<FrameRecord>, usize) {
        let mut per_camera: BTreeMap<u32, Vec<&ColmapImage>> = BTreeMap::new();
        for im in &self.images {
            per_camera.entry(im.camera_id).or_default().push(im);
        }
        let mut frames = Vec::new();
        let mut time_count = 0;
        for list in per_camera.values_mut() {
            list.sort_by(|a, b| a.name.cmp(&b.name));
            time_count = time_count.max(list.len());
            for (t, im) in list.iter().enumerate() {
                frames.push(FrameRecord {
                    file: format!("{image_dir}/{}", im.name),
                    mask: None,
                    pose: im.pose.scale_axes(COLMAP_TO_LOCAL),
                    time: t,
                    camera: im.camera_id,
                    depth_prior: None,
                    flow_prior: None,
                });
            }
        }
        (frames, time_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, cams: &str, imgs: &str) {
        std::fs::write(dir.join("cameras.txt"), cams).unwrap();
        std::fs::write(dir.join("images.txt"), imgs).unwrap();
    }

    #[test]
    fn identity_quaternion_gives_identity_pose() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "# c\n1 SIMPLE_PINHOLE 64 48 50 32 24\n",
            "# i\n1 1 0 0 0 0 0 0 1 a.png\n\n",
        );
        let s = import_colmap(dir.path(), 0.1, 10.0).unwrap();
        assert_eq!(s.cameras[0].model.fx, 50.0);
        assert_eq!(s.cameras[0].model.fy, 50.0);
        assert_eq!(s.images[0].pose, Pose::identity());
        let (frames, tc) = s.frames("images");
        assert_eq!(tc, 1);
        assert_eq!(frames[0].file, "images/a.png");
        // local convention looks down −z where COLMAP looks down +z
        let fwd = frames[0].pose.rotate([0.0, 0.0, -1.0]);
        assert_eq!(fwd, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn quarter_turn_about_y() {
        let h = 0.5f64.sqrt();
        let r = quat_to_matrix([h, 0.0, h, 0.0]);
        let v: [f64; 3] = std::array::from_fn(|i| -r[i][2]);
        assert!((v[0] + 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
        let q = matrix_to_quat(r);
        assert!((q[0] - h).abs() < 1e-12 && (q[2] - h).abs() < 1e-12);
    }

    #[test]
    fn unsupported_model_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "1 OPENCV 64 48 50 50 32 24 0 0 0 0\n", "");
        assert!(matches!(
            import_colmap(dir.path(), 0.1, 10.0),
            Err(Error::UnsupportedModel(m)) if m == "OPENCV"
        ));
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = Vec::new();
        let targets = [[0.0, 0.0, 0.0], [0.3, -0.2, 0.1], [1.0, 1.0, -1.0]];
        for (i, t) in targets.iter().enumerate() {
            let eye = [2.0 * (i as f64 + 0.5).cos(), 0.7 * i as f64, -1.5 + i as f64];
            images.push(ColmapImage {
                image_id: i as u32 + 1,
                camera_id: 3,
                name: format!("f{i}.png"),
                pose: Pose::look_at(eye, *t, [0.0, 1.0, 0.0]),
            });
        }
        // a rotation with negative trace exercises the other quaternion branches
        images.push(ColmapImage {
            image_id: 9,
            camera_id: 3,
            name: "z.png".into(),
            pose: Pose::from_rotation_translation(quat_to_matrix([0.05, 0.9, -0.3, 0.2]), [1.0, 2.0, 3.0]),
        });
        let scene = ColmapScene {
            cameras: vec![CameraEntry {
                id: 3,
                model: CameraModel {
                    fx: 40.0,
                    fy: 41.0,
                    cx: 20.0,
                    cy: 15.5,
                    width: 40,
                    height: 31,
                    near: 0.1,
                    far: 10.0,
                },
            }],
            images,
        };
        export_colmap(dir.path(), &scene).unwrap();
        let back = import_colmap(dir.path(), 0.1, 10.0).unwrap();
        assert_eq!(back.cameras, scene.cameras);
        for (a, b) in back.images.iter().zip(&scene.images) {
            assert_eq!(a.name, b.name);
            for r in 0..4 {
                for c in 0..4 {
                    assert!((a.pose.0[r][c] - b.pose.0[r][c]).abs() < 1e-6);
                }
            }
        }
    }
}

//! Dataset model and directory format, COLMAP text import, prior files and
//! the synthetic scene generator.
//!
//! Poses are camera-to-world, right-handed, with the camera looking down −z
//! and +y up in image space.

mod camera;
pub mod colmap;
mod dataset;
pub mod priors;
pub mod synth;

pub use camera::{CameraModel, Pose, SceneBox};
pub(crate) use camera::dot;
pub use colmap::{export_colmap, import_colmap, ColmapImage, ColmapScene};
pub use dataset::{
    normalized_time, write_scene_file, CameraEntry, FrameRecord, SceneDataset, SceneFile,
    POSE_TOLERANCE, SCENE_FILE,
};
pub use priors::{load_prior, write_flo, write_pfm, FloatBuffer, PriorKind};
pub use synth::{synth_scene, Motion, SynthScene, SynthSpec, SynthTracer};

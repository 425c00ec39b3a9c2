//! Scene state directory: `manifest.json`, `cloud_{t:03}.ply` per
//! timestamp and `occluded_{i:03}.png` per pose. The manifest is written
//! last.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ply::{self, BackgroundBlock, FramePly};
use super::{png, read_json, write_json};
use crate::camera::Camera;
use crate::cloud::{BackgroundLayer, DynamicPointCloud, SceneState};
use crate::error::FormatError;

pub const SCENE_FORMAT_VERSION: u32 = 1;
pub const SCENE_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub format_version: u32,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub poses: Vec<Camera>,
    pub prompts: Vec<String>,
    pub clouds: Vec<String>,
    pub occluded: Vec<String>,
    pub foreground_points: Vec<usize>,
    pub background_points: usize,
    pub config_snapshot: String,
}

pub fn cloud_file(t: usize) -> String {
    format!("cloud_{t:03}.ply")
}

pub fn occluded_file(i: usize) -> String {
    format!("occluded_{i:03}.png")
}

/// Writes every file of the state into `dir`, which must exist.
pub fn write_scene(dir: &Path, state: &SceneState) -> Result<SceneManifest, FormatError> {
    let cloud = &state.cloud;
    let bg = cloud.background();
    let first = state.poses.first().ok_or_else(|| {
        FormatError::malformed("scene", dir, "scene state has no poses")
    })?;
    let mut clouds = Vec::with_capacity(cloud.frame_count());
    for t in 0..cloud.frame_count() {
        let frame = FramePly {
            timestamp: t,
            foreground: cloud.foreground(t).clone(),
            background: BackgroundBlock {
                positions: bg.positions().to_vec(),
                colors: bg.frame_colors(t).to_vec(),
                valid: bg.frame_valid(t).to_vec(),
                source_pose: bg.source_poses().to_vec(),
            },
        };
        let name = cloud_file(t);
        ply::write(&dir.join(&name), &frame)?;
        clouds.push(name);
    }
    let mut occluded = Vec::with_capacity(state.occluded_bg.len());
    for (i, m) in state.occluded_bg.iter().enumerate() {
        let name = occluded_file(i);
        png::write_mask(&dir.join(&name), m)?;
        occluded.push(name);
    }
    let manifest = SceneManifest {
        format_version: SCENE_FORMAT_VERSION,
        frames: cloud.frame_count(),
        width: first.width(),
        height: first.height(),
        poses: state.poses.clone(),
        prompts: state.prompts.clone(),
        clouds,
        occluded,
        foreground_points: cloud.foreground_layers().iter().map(|s| s.len()).collect(),
        background_points: bg.len(),
        config_snapshot: state.config_snapshot.clone(),
    };
    write_json(&dir.join(SCENE_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<SceneManifest, FormatError> {
    let path = dir.join(SCENE_MANIFEST);
    let m: SceneManifest = read_json(&path)?;
    if m.format_version != SCENE_FORMAT_VERSION {
        return Err(FormatError::malformed(
            "scene",
            path,
            format!("unsupported format version {}", m.format_version),
        ));
    }
    if m.clouds.len() != m.frames
        || m.foreground_points.len() != m.frames
        || m.poses.is_empty()
        || m.prompts.len() != m.poses.len()
        || m.occluded.len() != m.poses.len()
    {
        return Err(FormatError::malformed(
            "scene",
            path,
            "file lists disagree with frame and pose counts",
        ));
    }
    Ok(m)
}

pub fn read_scene(dir: &Path) -> Result<SceneState, FormatError> {
    let m = read_manifest(dir)?;
    let mut fg = Vec::with_capacity(m.frames);
    let mut positions = Vec::new();
    let mut source_pose = Vec::new();
    let mut colors = Vec::with_capacity(m.frames);
    let mut valid = Vec::with_capacity(m.frames);
    for (t, name) in m.clouds.iter().enumerate() {
        let path = dir.join(name);
        let frame = ply::read(&path)?;
        if frame.timestamp != t {
            return Err(FormatError::malformed(
                "scene",
                &path,
                format!("holds timestamp {}, expected {t}", frame.timestamp),
            ));
        }
        if frame.foreground.len() != m.foreground_points[t] || frame.background.positions.len() != m.background_points {
            return Err(FormatError::malformed("scene", &path, "point counts disagree with the manifest"));
        }
        if t == 0 {
            positions = frame.background.positions;
            source_pose = frame.background.source_pose;
        } else if frame.background.positions != positions || frame.background.source_pose != source_pose {
            return Err(FormatError::malformed(
                "scene",
                &path,
                "background positions differ from the first timestamp",
            ));
        }
        fg.push(frame.foreground);
        colors.push(frame.background.colors);
        valid.push(frame.background.valid);
    }
    let bg = BackgroundLayer::from_parts(positions, source_pose, colors, valid)
        .map_err(|e| FormatError::malformed("scene", dir, e.to_string()))?;
    let cloud = DynamicPointCloud::new(fg, bg).map_err(|e| FormatError::malformed("scene", dir, e.to_string()))?;
    let mut occluded_bg = Vec::with_capacity(m.occluded.len());
    for name in &m.occluded {
        let path = dir.join(name);
        let mask = png::read_mask(&path)?;
        if mask.dims() != (m.width, m.height) {
            return Err(FormatError::malformed("scene", &path, "mask size differs from the camera"));
        }
        occluded_bg.push(mask);
    }
    Ok(SceneState {
        cloud,
        poses: m.poses,
        occluded_bg,
        prompts: m.prompts,
        config_snapshot: m.config_snapshot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::cloud::PointSet;
    use crate::grid::Grid;

    fn sample() -> SceneState {
        let cam = Camera::new(5.0, 5.0, 2.0, 2.0, 4, 4, Pose::identity()).unwrap();
        let mut fg0 = PointSet::new();
        fg0.push([0.1, -0.2, 1.5], [1, 2, 3], 0);
        let mut fg1 = PointSet::new();
        fg1.push([0.3, 0.2, 1.25], [4, 5, 6], 1);
        fg1.push([f32::MIN_POSITIVE, 1e-7, 3.0], [7, 8, 9], 1);
        let mut bg = BackgroundLayer::new(2);
        bg.push([0.5, 0.5, 4.0], 0, &[[10, 10, 10], [0, 0, 0]], &[true, false]);
        bg.push([-0.5, 0.25, 4.0], 1, &[[20, 20, 20], [30, 30, 30]], &[true, true]);
        SceneState {
            cloud: DynamicPointCloud::new(vec![fg0, fg1], bg).unwrap(),
            poses: vec![cam, cam.with_pose(Pose::from_translation(nalgebra::Vector3::new(0.0, 0.0, -0.0005)))],
            occluded_bg: vec![Grid::from_fn(4, 4, |x, y| x == y), Grid::filled(4, 4, false)],
            prompts: vec!["a".into(), "b \"quoted\"".into()],
            config_snapshot: "splat_radius = 1\n".into(),
        }
    }

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_scene(dir.path(), &s).unwrap();
        assert_eq!(read_scene(dir.path()).unwrap(), s);
        assert!(dir.path().join("cloud_001.ply").is_file());
        assert!(dir.path().join("occluded_001.png").is_file());
    }

    #[test]
    fn tampered_background_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = sample();
        write_scene(dir.path(), &s).unwrap();
        let mut other = s.cloud.background().clone();
        other.extend(&s.cloud.background().clone());
        s.cloud = DynamicPointCloud::new(s.cloud.foreground_layers().to_vec(), other).unwrap();
        let frame = FramePly {
            timestamp: 1,
            foreground: s.cloud.foreground(1).clone(),
            background: BackgroundBlock::default(),
        };
        ply::write(&dir.path().join("cloud_001.ply"), &frame).unwrap();
        assert!(read_scene(dir.path()).is_err());
    }
}

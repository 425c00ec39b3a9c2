//! Layered dynamic point clouds.
//!
//! Foreground points exist per timestamp. Background points have one static
//! position and a color (plus a validity flag) for every timestamp.

use nalgebra::Vector3;

use crate::camera::Camera;
use crate::error::GeometryError;
use crate::grid::{Mask, Rgb};

/// Index into the scene's pose history; 0 is the initialization pose.
pub type PoseIndex = u32;

/// Position stored at the precision used on disk.
pub type Position = [f32; 3];

#[inline]
pub fn to_position(v: &Vector3<f64>) -> Position {
    [v.x as f32, v.y as f32, v.z as f32]
}

#[inline]
pub fn to_vector(p: &Position) -> Vector3<f64> {
    Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
}

/// Colored points with per-point provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    positions: Vec<Position>,
    colors: Vec<Rgb>,
    source_pose: Vec<PoseIndex>,
}

impl PointSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        PointSet {
            positions: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            source_pose: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, position: Position, color: Rgb, pose: PoseIndex) {
        self.positions.push(position);
        self.colors.push(color);
        self.source_pose.push(pose);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn source_poses(&self) -> &[PoseIndex] {
        &self.source_pose
    }

    pub fn extend(&mut self, other: &PointSet) {
        self.positions.extend_from_slice(&other.positions);
        self.colors.extend_from_slice(&other.colors);
        self.source_pose.extend_from_slice(&other.source_pose);
    }
}

/// Background layer: static positions, per-timestamp colors and validity.
///
/// Colors are stored frame-major (`colors[t][i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundLayer {
    positions: Vec<Position>,
    source_pose: Vec<PoseIndex>,
    colors: Vec<Vec<Rgb>>,
    valid: Vec<Vec<bool>>,
}

impl BackgroundLayer {
    pub fn new(frame_count: usize) -> Self {
        BackgroundLayer {
            positions: Vec::new(),
            source_pose: Vec::new(),
            colors: vec![Vec::new(); frame_count],
            valid: vec![Vec::new(); frame_count],
        }
    }

    /// Builds a layer from frame-major color and validity blocks.
    pub fn from_parts(
        positions: Vec<Position>,
        source_pose: Vec<PoseIndex>,
        colors: Vec<Vec<Rgb>>,
        valid: Vec<Vec<bool>>,
    ) -> Result<Self, GeometryError> {
        let n = positions.len();
        if source_pose.len() != n
            || colors.len() != valid.len()
            || colors.iter().any(|c| c.len() != n)
            || valid.iter().any(|v| v.len() != n)
        {
            return Err(GeometryError::DimensionMismatch(
                "background layer arrays disagree in length".into(),
            ));
        }
        Ok(BackgroundLayer {
            positions,
            source_pose,
            colors,
            valid,
        })
    }

    /// Appends one point; `colors` and `valid` hold one entry per timestamp.
    pub fn push(&mut self, position: Position, pose: PoseIndex, colors: &[Rgb], valid: &[bool]) {
        assert_eq!(colors.len(), self.frame_count());
        assert_eq!(valid.len(), self.frame_count());
        self.positions.push(position);
        self.source_pose.push(pose);
        for (t, (&c, &v)) in colors.iter().zip(valid).enumerate() {
            self.colors[t].push(c);
            self.valid[t].push(v);
        }
    }

    pub fn frame_count(&self) -> usize {
        self.colors.len()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn source_poses(&self) -> &[PoseIndex] {
        &self.source_pose
    }

    pub fn frame_colors(&self, t: usize) -> &[Rgb] {
        &self.colors[t]
    }

    pub fn frame_valid(&self, t: usize) -> &[bool] {
        &self.valid[t]
    }

    pub fn extend(&mut self, other: &BackgroundLayer) {
        assert_eq!(self.frame_count(), other.frame_count());
        self.positions.extend_from_slice(&other.positions);
        self.source_pose.extend_from_slice(&other.source_pose);
        for t in 0..self.frame_count() {
            self.colors[t].extend_from_slice(&other.colors[t]);
            self.valid[t].extend_from_slice(&other.valid[t]);
        }
    }
}

/// The points visible at one timestamp: foreground of `t` followed by the
/// whole background layer colored for `t`.
#[derive(Debug, Clone, Default)]
pub struct FrameCloud {
    pub positions: Vec<Position>,
    pub colors: Vec<Rgb>,
    /// False for background points whose color is unknown at this timestamp.
    pub color_valid: Vec<bool>,
}

impl FrameCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn from_point_set(points: &PointSet) -> Self {
        FrameCloud {
            positions: points.positions().to_vec(),
            colors: points.colors().to_vec(),
            color_valid: vec![true; points.len()],
        }
    }
}

/// Layered 4D point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicPointCloud {
    fg: Vec<PointSet>,
    bg: BackgroundLayer,
}

impl DynamicPointCloud {
    pub fn new(fg: Vec<PointSet>, bg: BackgroundLayer) -> Result<Self, GeometryError> {
        if fg.len() != bg.frame_count() {
            return Err(GeometryError::DimensionMismatch(format!(
                "{} foreground timestamps vs {} background color blocks",
                fg.len(),
                bg.frame_count()
            )));
        }
        if fg.is_empty() {
            return Err(GeometryError::InvalidArgument(
                "a dynamic point cloud needs at least one timestamp".into(),
            ));
        }
        Ok(DynamicPointCloud { fg, bg })
    }

    pub fn frame_count(&self) -> usize {
        self.fg.len()
    }

    pub fn foreground(&self, t: usize) -> &PointSet {
        &self.fg[t]
    }

    pub fn foreground_layers(&self) -> &[PointSet] {
        &self.fg
    }

    pub fn background(&self) -> &BackgroundLayer {
        &self.bg
    }

    pub fn foreground_count(&self) -> usize {
        self.fg.iter().map(PointSet::len).sum()
    }

    /// Total points: every per-timestamp foreground point plus each
    /// background point once.
    pub fn total_points(&self) -> usize {
        self.foreground_count() + self.bg.len()
    }

    pub fn frame(&self, t: usize) -> FrameCloud {
        let fg = &self.fg[t];
        let n = fg.len() + self.bg.len();
        let mut positions = Vec::with_capacity(n);
        positions.extend_from_slice(fg.positions());
        positions.extend_from_slice(self.bg.positions());
        let mut colors = Vec::with_capacity(n);
        colors.extend_from_slice(fg.colors());
        colors.extend_from_slice(self.bg.frame_colors(t));
        let mut color_valid = vec![true; fg.len()];
        color_valid.extend_from_slice(self.bg.frame_valid(t));
        FrameCloud {
            positions,
            colors,
            color_valid,
        }
    }

    /// Union with new layers; existing points keep their order and values.
    pub fn merged(&self, fg: &[PointSet], bg: &BackgroundLayer) -> Result<Self, GeometryError> {
        if fg.len() != self.frame_count() || bg.frame_count() != self.frame_count() {
            return Err(GeometryError::DimensionMismatch(format!(
                "merging clouds with {} and {}/{} timestamps",
                self.frame_count(),
                fg.len(),
                bg.frame_count()
            )));
        }
        let mut out = self.clone();
        for (dst, src) in out.fg.iter_mut().zip(fg) {
            dst.extend(src);
        }
        out.bg.extend(bg);
        Ok(out)
    }

    /// Point counts grouped by provenance pose.
    pub fn provenance_counts(&self) -> std::collections::BTreeMap<PoseIndex, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for set in &self.fg {
            for &p in set.source_poses() {
                *counts.entry(p).or_insert(0) += 1;
            }
        }
        for &p in self.bg.source_poses() {
            *counts.entry(p).or_insert(0) += 1;
        }
        counts
    }
}

/// Accumulated scene across outpainting iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub cloud: DynamicPointCloud,
    /// `poses[0]` is the initialization pose.
    pub poses: Vec<Camera>,
    /// Per pose: background pixels never observed at that pose and not yet
    /// completed.
    pub occluded_bg: Vec<Mask>,
    /// Scene prompt per pose, carried verbatim.
    pub prompts: Vec<String>,
    /// Opaque snapshot of the configuration that produced this state.
    pub config_snapshot: String,
}

impl SceneState {
    pub fn current_pose(&self) -> &Camera {
        self.poses.last().expect("scene state always has a pose")
    }

    pub fn pending_completion(&self) -> impl Iterator<Item = usize> + '_ {
        self.occluded_bg
            .iter()
            .enumerate()
            .filter(|(_, m)| m.count() > 0)
            .map(|(i, _)| i)
    }
}

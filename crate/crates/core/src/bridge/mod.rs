//! Conditioning inputs for a video outpainter and the results it returns.
//!
//! A [`RayConditioningBundle`] carries, per timestamp, the partial render,
//! the observed mask, ray depth on observed pixels and ray-to-cloud
//! distance on unseen pixels. Any [`Outpainter`] turns it into a full video:
//! the built-in [`StubFiller`] needs no model, [`ExternalOutpainter`] talks
//! to an external process through an exchange directory.

mod exchange;
mod stub;
mod training;

pub use exchange::{
    echo_responder, read_bundle, read_result, write_bundle, write_result, BundleManifest, ExternalOutpainter,
    ResultManifest, BUNDLE_FORMAT_VERSION, DEFAULT_DRIFT_TOLERANCE, UNDEFINED_SENTINEL,
};
pub use stub::{fill_stub, nearest_fill, StubFiller, StubMode, MID_GRAY};
pub use training::{
    backproject_frame, frustum_survivors, prepare_training_sample, search_offset_for_fraction, TrainingSample,
};

use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::camera::Camera;
use crate::cloud::{DynamicPointCloud, Position};
use crate::error::{FormatError, GeometryError};
use crate::grid::{DepthMap, Mask, RgbImage};
use crate::raster::{rasterize, RasterOutput};
use crate::raygeom::{ray_distance_map, IndexParams, PointIndex, RayDistanceMap};

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningFrame {
    pub partial_rgb: RgbImage,
    pub observed_mask: Mask,
    /// Defined on observed pixels.
    pub ray_depth: DepthMap,
    /// Defined on `ray_distance.computed_mask`, the unseen pixels.
    pub ray_distance: RayDistanceMap,
    /// Observed pixels whose color is unknown and may be re-synthesized.
    pub invalid_color_mask: Mask,
}

impl ConditioningFrame {
    /// Attaches ray distances for every pixel the render left uncovered.
    pub fn from_raster(
        raster: RasterOutput,
        positions: &[Position],
        camera: &Camera,
        params: IndexParams,
    ) -> Result<Self, GeometryError> {
        let unseen = raster.observed_mask.not();
        let ray_distance = if unseen.count() == 0 {
            RayDistanceMap {
                values: DepthMap::filled(unseen.width(), unseen.height(), 0.0),
                computed_mask: unseen,
            }
        } else {
            let index = PointIndex::build(positions, params)?;
            ray_distance_map(&index, camera, &unseen)?
        };
        Ok(ConditioningFrame {
            partial_rgb: raster.partial_rgb,
            observed_mask: raster.observed_mask,
            ray_depth: raster.ray_depth,
            ray_distance,
            invalid_color_mask: raster.invalid_color_mask,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayConditioningBundle {
    pub frames: Vec<ConditioningFrame>,
    /// Passed through verbatim, never interpreted.
    pub prompt: String,
    pub camera: Camera,
}

impl RayConditioningBundle {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn width(&self) -> usize {
        self.camera.width()
    }

    pub fn height(&self) -> usize {
        self.camera.height()
    }

    /// Mean observed fraction over frames.
    pub fn observed_fraction(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.observed_mask.fraction()).sum::<f64>() / self.frames.len() as f64
    }
}

/// Renders the cloud at `camera` and computes the ray maps for every
/// timestamp.
pub fn build_bundle(
    cloud: &DynamicPointCloud,
    camera: &Camera,
    splat_radius: usize,
    params: IndexParams,
    prompt: &str,
) -> Result<RayConditioningBundle, GeometryError> {
    let frames = (0..cloud.frame_count())
        .map(|t| {
            let points = cloud.frame(t);
            let raster = rasterize(&points, camera, splat_radius, t);
            ConditioningFrame::from_raster(raster, &points.positions, camera, params)
        })
        .collect::<Result<_, _>>()?;
    Ok(RayConditioningBundle {
        frames,
        prompt: prompt.to_owned(),
        camera: *camera,
    })
}

/// One broken bundle invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoFrames,
    Dimensions { frame: usize, map: &'static str, width: usize, height: usize },
    MaskOverlap { frame: usize, pixels: usize },
    MaskGap { frame: usize, pixels: usize },
    RayDepth { frame: usize, x: usize, y: usize, value: f64, count: usize },
    RayDistance { frame: usize, x: usize, y: usize, value: f64, count: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoFrames => write!(f, "bundle has no frames"),
            Violation::Dimensions { frame, map, width, height } => {
                write!(f, "frame {frame}: {map} is {width}x{height}, camera size differs")
            }
            Violation::MaskOverlap { frame, pixels } => {
                write!(f, "frame {frame}: mask overlap at {pixels} pixels")
            }
            Violation::MaskGap { frame, pixels } => {
                write!(f, "frame {frame}: {pixels} pixels neither observed nor unseen")
            }
            Violation::RayDepth { frame, x, y, value, count } => write!(
                f,
                "frame {frame}: ray depth {value} at pixel ({x}, {y}) is not finite and positive ({count} pixels)"
            ),
            Violation::RayDistance { frame, x, y, value, count } => write!(
                f,
                "frame {frame}: ray distance {value} at pixel ({x}, {y}) is not finite and non-negative ({count} pixels)"
            ),
        }
    }
}

/// Checks every bundle invariant; never fails itself.
pub fn validate_bundle(bundle: &RayConditioningBundle) -> Vec<Violation> {
    let mut out = Vec::new();
    if bundle.frames.is_empty() {
        out.push(Violation::NoFrames);
    }
    let dims = (bundle.width(), bundle.height());
    for (t, f) in bundle.frames.iter().enumerate() {
        let maps = [
            ("partial_rgb", f.partial_rgb.dims()),
            ("observed_mask", f.observed_mask.dims()),
            ("ray_depth", f.ray_depth.dims()),
            ("ray_distance", f.ray_distance.values.dims()),
            ("computed_mask", f.ray_distance.computed_mask.dims()),
            ("invalid_color_mask", f.invalid_color_mask.dims()),
        ];
        let mut sized = true;
        for (map, d) in maps {
            if d != dims {
                sized = false;
                out.push(Violation::Dimensions {
                    frame: t,
                    map,
                    width: d.0,
                    height: d.1,
                });
            }
        }
        if !sized {
            continue;
        }
        let w = dims.0;
        let observed = f.observed_mask.as_slice();
        let computed = f.ray_distance.computed_mask.as_slice();
        let overlap = observed.iter().zip(computed).filter(|(&a, &b)| a && b).count();
        let gap = observed.iter().zip(computed).filter(|(&a, &b)| !a && !b).count();
        if overlap > 0 {
            out.push(Violation::MaskOverlap { frame: t, pixels: overlap });
        }
        if gap > 0 {
            out.push(Violation::MaskGap { frame: t, pixels: gap });
        }
        let mut first_depth = None;
        let mut bad_depth = 0;
        let mut first_dist = None;
        let mut bad_dist = 0;
        for i in 0..observed.len() {
            if observed[i] {
                let v = f.ray_depth.as_slice()[i];
                if !(v.is_finite() && v > 0.0) {
                    bad_depth += 1;
                    first_depth.get_or_insert((i, v));
                }
            }
            if computed[i] {
                let v = f.ray_distance.values.as_slice()[i];
                if !(v.is_finite() && v >= 0.0) {
                    bad_dist += 1;
                    first_dist.get_or_insert((i, v));
                }
            }
        }
        if let Some((i, value)) = first_depth {
            out.push(Violation::RayDepth {
                frame: t,
                x: i % w,
                y: i / w,
                value,
                count: bad_depth,
            });
        }
        if let Some((i, value)) = first_dist {
            out.push(Violation::RayDistance {
                frame: t,
                x: i % w,
                y: i / w,
                value,
                count: bad_dist,
            });
        }
    }
    out
}

/// Which filler produced a result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Stub(StubMode),
    External(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Stub(m) => write!(f, "stub:{}", m.name()),
            Provenance::External(s) => write!(f, "external:{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutpaintResult {
    pub frames: Vec<RgbImage>,
    pub provenance: Provenance,
    /// False when the filler may repaint observed pixels.
    pub preserving: bool,
    /// Frames where the requested fill fell back to constant gray.
    pub fallback_frames: Vec<usize>,
    /// Optional depth estimate of the outpainted video (affine-ambiguous).
    pub depth: Option<Vec<DepthMap>>,
    /// Optional foreground masks of the outpainted video.
    pub fg_masks: Option<Vec<Mask>>,
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("outpainter did not answer within {0:?}")]
    Timeout(Duration),
    #[error("malformed outpainter result: {0}")]
    Malformed(String),
    #[error("result dimensions do not match the bundle: {0}")]
    DimensionMismatch(String),
    #[error(
        "observed region drifted by {delta}/255 (tolerance {tolerance}) at frame {frame}, pixel ({x}, {y}), channel {channel}"
    )]
    ObservedDrift {
        frame: usize,
        x: usize,
        y: usize,
        channel: usize,
        delta: u8,
        tolerance: u8,
    },
    #[error("invalid bundle: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidBundle(Vec<Violation>),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Anything that can complete a partial video.
pub trait Outpainter: Sync {
    fn outpaint(&self, bundle: &RayConditioningBundle) -> Result<OutpaintResult, BridgeError>;
}

/// Largest per-channel change on observed, color-valid pixels.
pub(crate) fn worst_drift(
    bundle: &RayConditioningBundle,
    frames: &[RgbImage],
) -> Option<(usize, usize, usize, usize, u8)> {
    let w = bundle.width();
    let mut worst: Option<(usize, usize, usize, usize, u8)> = None;
    for (t, (cf, out)) in bundle.frames.iter().zip(frames).enumerate() {
        for i in 0..cf.observed_mask.len() {
            if !cf.observed_mask.as_slice()[i] || cf.invalid_color_mask.as_slice()[i] {
                continue;
            }
            let a = cf.partial_rgb.as_slice()[i];
            let b = out.as_slice()[i];
            for c in 0..3 {
                let d = a[c].abs_diff(b[c]);
                if worst.is_none_or(|w| d > w.4) {
                    worst = Some((t, i % w, i / w, c, d));
                }
            }
        }
    }
    worst
}

//! Self-supervised training pairs: move the camera forward, keep what the
//! moved camera sees, render it back at the original pose.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{ConditioningFrame, RayConditioningBundle};
use crate::camera::{Camera, Pose};
use crate::cloud::{to_position, FrameCloud, Position};
use crate::error::GeometryError;
use crate::grid::{DepthMap, RgbImage};
use crate::init::FrameBundle;
use crate::raster::rasterize;
use crate::raygeom::IndexParams;

#[derive(Debug, Clone)]
pub struct TrainingSample {
    /// Conditioning at the original pose; the prompt is left empty.
    pub bundle: RayConditioningBundle,
    pub ground_truth: Vec<RgbImage>,
    pub closer_offset: f64,
    /// Mean unseen fraction over frames.
    pub unseen_fraction: f64,
    /// Points kept per frame.
    pub kept_points: Vec<usize>,
}

/// Every pixel with finite positive depth, row-major.
pub fn backproject_frame(rgb: &RgbImage, depth: &DepthMap, camera: &Camera) -> FrameCloud {
    let mut out = FrameCloud::default();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let d = *depth.get(x, y);
            if d.is_finite() && d > 0.0 {
                out.positions
                    .push(to_position(&camera.backproject_unchecked(x as f64, y as f64, d)));
                out.colors.push(*rgb.get(x, y));
                out.color_valid.push(true);
            }
        }
    }
    out
}

/// Indices of points in front of `camera` that land inside its image.
pub fn frustum_survivors(positions: &[Position], camera: &Camera) -> Vec<usize> {
    positions
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            camera
                .project(&crate::cloud::to_vector(p))
                .and_then(|pr| camera.pixel_of(pr.x, pr.y))
                .is_some()
        })
        .map(|(i, _)| i)
        .collect()
}

fn subset(cloud: &FrameCloud, keep: &[usize]) -> FrameCloud {
    FrameCloud {
        positions: keep.iter().map(|&i| cloud.positions[i]).collect(),
        colors: keep.iter().map(|&i| cloud.colors[i]).collect(),
        color_valid: vec![true; keep.len()],
    }
}

fn moved_forward(camera: &Camera, offset: f64) -> Result<Camera, GeometryError> {
    if !(offset.is_finite() && offset >= 0.0) {
        return Err(GeometryError::InvalidArgument(format!(
            "closer offset must be finite and non-negative, got {offset}"
        )));
    }
    Ok(camera.with_pose(camera.pose().compose(&Pose::from_translation(Vector3::new(0.0, 0.0, offset)))))
}

fn kept_clouds(clouds: &[FrameCloud], camera: &Camera, offset: f64) -> Result<Vec<FrameCloud>, GeometryError> {
    let moved = moved_forward(camera, offset)?;
    clouds
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let keep = frustum_survivors(&c.positions, &moved);
            if keep.is_empty() {
                return Err(GeometryError::InvalidArgument(format!(
                    "closer offset {offset} leaves an empty frustum at frame {t}"
                )));
            }
            Ok(subset(c, &keep))
        })
        .collect()
}

fn check_frames(frames: &[FrameBundle], camera: &Camera) -> Result<(), GeometryError> {
    if frames.is_empty() {
        return Err(GeometryError::InvalidArgument("no input frames".into()));
    }
    let dims = (camera.width(), camera.height());
    for (t, f) in frames.iter().enumerate() {
        if f.rgb.dims() != dims || f.depth.dims() != dims {
            return Err(GeometryError::DimensionMismatch(format!(
                "frame {t} does not match the {}x{} camera",
                dims.0, dims.1
            )));
        }
    }
    Ok(())
}

fn sample_from_clouds(
    frames: &[FrameBundle],
    clouds: &[FrameCloud],
    camera: &Camera,
    offset: f64,
    splat_radius: usize,
    params: IndexParams,
) -> Result<TrainingSample, GeometryError> {
    let kept = kept_clouds(clouds, camera, offset)?;
    let cond = kept
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let raster = rasterize(c, camera, splat_radius, t);
            ConditioningFrame::from_raster(raster, &c.positions, camera, params)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bundle = RayConditioningBundle {
        frames: cond,
        prompt: String::new(),
        camera: *camera,
    };
    Ok(TrainingSample {
        unseen_fraction: 1.0 - bundle.observed_fraction(),
        bundle,
        ground_truth: frames.iter().map(|f| f.rgb.clone()).collect(),
        closer_offset: offset,
        kept_points: kept.iter().map(|c| c.len()).collect(),
    })
}

/// Builds one training sample. The foreground masks of `frames` are ignored.
pub fn prepare_training_sample(
    frames: &[FrameBundle],
    camera: &Camera,
    closer_offset: f64,
    splat_radius: usize,
    params: IndexParams,
) -> Result<TrainingSample, GeometryError> {
    check_frames(frames, camera)?;
    let clouds: Vec<FrameCloud> = frames
        .par_iter()
        .map(|f| backproject_frame(&f.rgb, &f.depth, camera))
        .collect();
    sample_from_clouds(frames, &clouds, camera, closer_offset, splat_radius, params)
}

/// Bisects the closer offset until the mean unseen fraction is within
/// `tolerance` of `target`.
pub fn search_offset_for_fraction(
    frames: &[FrameBundle],
    camera: &Camera,
    target: f64,
    tolerance: f64,
    splat_radius: usize,
    params: IndexParams,
) -> Result<TrainingSample, GeometryError> {
    if !(target > 0.0 && target < 1.0) || !(tolerance > 0.0) {
        return Err(GeometryError::InvalidArgument(format!(
            "target unseen fraction {target} must lie in (0, 1) with a positive tolerance"
        )));
    }
    check_frames(frames, camera)?;
    let clouds: Vec<FrameCloud> = frames
        .par_iter()
        .map(|f| backproject_frame(&f.rgb, &f.depth, camera))
        .collect();
    let unseen_at = |offset: f64| -> f64 {
        match kept_clouds(&clouds, camera, offset) {
            Ok(kept) => {
                let observed: f64 = kept
                    .iter()
                    .enumerate()
                    .map(|(t, c)| rasterize(c, camera, splat_radius, t).observed_mask.fraction())
                    .sum();
                1.0 - observed / kept.len() as f64
            }
            Err(_) => 1.0,
        }
    };
    let far = clouds
        .iter()
        .flat_map(|c| &c.positions)
        .map(|p| camera.world_to_camera(&crate::cloud::to_vector(p)).z)
        .fold(0.0f64, f64::max);
    if far <= 0.0 {
        return Err(GeometryError::EmptyPointSet);
    }
    let (mut lo, mut hi) = (0.0, far * 1.01);
    let mut found = None;
    let f_lo = unseen_at(lo);
    if (f_lo - target).abs() <= tolerance {
        found = Some(lo);
    } else if f_lo > target {
        return Err(GeometryError::InvalidArgument(format!(
            "unseen fraction is already {f_lo:.3} with no offset, above the target {target}"
        )));
    }
    for _ in 0..60 {
        if found.is_some() {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f = unseen_at(mid);
        if (f - target).abs() <= tolerance {
            found = Some(mid);
        } else if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let offset = found.ok_or_else(|| {
        GeometryError::InvalidArgument(format!(
            "no closer offset reaches unseen fraction {target} within {tolerance}"
        ))
    })?;
    sample_from_clouds(frames, &clouds, camera, offset, splat_radius, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn slanted(w: usize, h: usize, n: usize) -> (Vec<FrameBundle>, Camera) {
        let cam = Camera::new(w as f64, w as f64, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h, Pose::identity()).unwrap();
        let frames = (0..n)
            .map(|t| FrameBundle {
                rgb: Grid::from_fn(w, h, |x, y| [x as u8, y as u8, t as u8]),
                depth: Grid::from_fn(w, h, |x, _| 2.0 + 0.05 * x as f64 + 0.1 * t as f64),
                fg_mask: Grid::filled(w, h, false),
                timestamp: t,
            })
            .collect();
        (frames, cam)
    }

    #[test]
    fn zero_offset_sees_everything() {
        let (frames, cam) = slanted(20, 12, 2);
        let s = prepare_training_sample(&frames, &cam, 0.0, 0, IndexParams::default()).unwrap();
        assert_eq!(s.unseen_fraction, 0.0);
        assert_eq!(s.kept_points, vec![240, 240]);
        assert_eq!(s.bundle.frames[1].partial_rgb, frames[1].rgb);
    }

    #[test]
    fn unseen_grows_with_offset() {
        let (frames, cam) = slanted(24, 16, 1);
        let mut last = 0.0;
        for k in 1..6 {
            let s = prepare_training_sample(&frames, &cam, 0.3 * k as f64, 0, IndexParams::default()).unwrap();
            assert!(s.unseen_fraction >= last);
            assert!(crate::bridge::validate_bundle(&s.bundle).is_empty());
            last = s.unseen_fraction;
        }
        assert!(last > 0.3);
    }

    #[test]
    fn offset_past_scene_is_an_error() {
        let (frames, cam) = slanted(8, 8, 1);
        assert!(prepare_training_sample(&frames, &cam, 50.0, 0, IndexParams::default()).is_err());
        assert!(prepare_training_sample(&frames, &cam, -0.1, 0, IndexParams::default()).is_err());
    }

    #[test]
    fn search_hits_target() {
        let (frames, cam) = slanted(48, 32, 2);
        let s = search_offset_for_fraction(&frames, &cam, 0.4, 0.02, 0, IndexParams::default()).unwrap();
        assert!((s.unseen_fraction - 0.4).abs() <= 0.02, "{}", s.unseen_fraction);
        assert!(s.closer_offset > 0.0);
    }
}

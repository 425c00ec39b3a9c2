//! Merging an outpainted video back into the scene.
//!
//! One step renders the scene at a new pose, asks an [`Outpainter`] for the
//! full video, aligns its depth to the rendered ray depth, lifts only the
//! newly synthesized pixels and appends them. Background hidden by moving
//! foreground is completed separately with [`complete_background`].

use rayon::prelude::*;
use thiserror::Error;

use crate::bridge::{
    build_bundle, nearest_fill, BridgeError, ConditioningFrame, OutpaintResult, Outpainter, RayConditioningBundle,
};
use crate::camera::Camera;
use crate::cloud::{to_position, to_vector, BackgroundLayer, FrameCloud, PointSet, PoseIndex, SceneState};
use crate::error::GeometryError;
use crate::grid::{check_dims, DepthMap, Grid, Mask, RgbImage};
use crate::init::{background_depth_from_presence, init_background, init_foreground, LayerFrame};
use crate::raster::rasterize;
use crate::raygeom::{ray_distance_map, IndexParams, PointIndex};

const VARIANCE_FLOOR: f64 = 1e-12;
/// Neighbours used to interpolate depth for completed background pixels.
pub const COMPLETION_NEIGHBOURS: usize = 8;

#[derive(Debug, Error)]
pub enum UpdateError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

/// Affine map `scale * estimated + shift` fitted to the ray depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDepthFit {
    pub scale: f64,
    pub shift: f64,
    pub rms_residual_before: f64,
    pub rms_residual_after: f64,
    pub n_samples: usize,
    /// True when the scale was fixed at 1.
    pub shift_only: bool,
}

fn rms(est: &[f64], target: &[f64], scale: f64, shift: f64) -> f64 {
    let sum: f64 = est
        .iter()
        .zip(target)
        .map(|(&e, &r)| {
            let d = scale * e + shift - r;
            d * d
        })
        .sum();
    (sum / est.len() as f64).sqrt()
}

/// Least-squares affine alignment of `estimated` onto `ray_depth` over the
/// observed pixels, applied to the whole frame.
pub fn align_depth(
    estimated: &DepthMap,
    ray_depth: &DepthMap,
    observed: &Mask,
) -> Result<(DepthMap, AffineDepthFit), GeometryError> {
    check_dims(estimated, ray_depth, "estimated vs ray depth")?;
    check_dims(estimated, observed, "estimated depth vs observed mask")?;
    let (est, target): (Vec<f64>, Vec<f64>) = observed
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &o)| o)
        .map(|(i, _)| (estimated.as_slice()[i], ray_depth.as_slice()[i]))
        .unzip();
    if est.is_empty() {
        return Err(GeometryError::InvalidArgument(
            "cannot align depth without observed pixels".into(),
        ));
    }
    if est.iter().chain(&target).any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidArgument(
            "non-finite depth on observed pixels".into(),
        ));
    }
    let n = est.len() as f64;
    let mean_e = est.iter().sum::<f64>() / n;
    let mean_r = target.iter().sum::<f64>() / n;
    let mut var = 0.0;
    let mut cov = 0.0;
    for (&e, &r) in est.iter().zip(&target) {
        var += (e - mean_e) * (e - mean_e);
        cov += (e - mean_e) * (r - mean_r);
    }
    var /= n;
    cov /= n;
    let full = var >= VARIANCE_FLOOR && cov / var > 0.0;
    let (scale, shift) = if full {
        let s = cov / var;
        (s, mean_r - s * mean_e)
    } else {
        (1.0, mean_r - mean_e)
    };
    let fit = AffineDepthFit {
        scale,
        shift,
        rms_residual_before: rms(&est, &target, 1.0, 0.0),
        rms_residual_after: rms(&est, &target, scale, shift),
        n_samples: est.len(),
        shift_only: !full,
    };
    Ok((estimated.map(|&e| scale * e + shift), fit))
}

/// Points lifted from the synthesized part of one outpainted video.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedContent {
    pub foreground: Vec<PointSet>,
    pub background: BackgroundLayer,
    /// Pixels whose background stayed hidden behind new foreground.
    pub occluded: Mask,
    pub skipped_foreground: Vec<usize>,
    pub skipped_background: usize,
}

impl LiftedContent {
    pub fn point_count(&self) -> usize {
        self.foreground.iter().map(PointSet::len).sum::<usize>() + self.background.len()
    }
}

/// Lifts the pixels with `observed = false` using the initialization
/// procedure restricted to them. New points carry `pose`.
pub fn lift_new_content(
    video: &[RgbImage],
    depths: &[DepthMap],
    fg_masks: &[Mask],
    observed: &[Mask],
    camera: &Camera,
    pose: PoseIndex,
) -> Result<LiftedContent, GeometryError> {
    let n = video.len();
    if n == 0 || depths.len() != n || fg_masks.len() != n || observed.len() != n {
        return Err(GeometryError::DimensionMismatch(format!(
            "{n} frames, {} depth maps, {} foreground masks, {} observed masks",
            depths.len(),
            fg_masks.len(),
            observed.len()
        )));
    }
    let dims = (camera.width(), camera.height());
    for t in 0..n {
        for (name, d) in [
            ("video", video[t].dims()),
            ("depth", depths[t].dims()),
            ("foreground mask", fg_masks[t].dims()),
            ("observed mask", observed[t].dims()),
        ] {
            if d != dims {
                return Err(GeometryError::DimensionMismatch(format!(
                    "frame {t} {name} is {}x{}, camera is {}x{}",
                    d.0, d.1, dims.0, dims.1
                )));
            }
        }
    }
    let (fg_frames, bg_frames): (Vec<LayerFrame>, Vec<LayerFrame>) = (0..n)
        .into_par_iter()
        .map(|t| {
            let fg = Grid::from_fn(dims.0, dims.1, |x, y| *fg_masks[t].get(x, y) && !*observed[t].get(x, y));
            let bg = Grid::from_fn(dims.0, dims.1, |x, y| !*fg_masks[t].get(x, y) && !*observed[t].get(x, y));
            (LayerFrame::new(t, &video[t], fg), LayerFrame::new(t, &video[t], bg))
        })
        .unzip();
    let depth_refs: Vec<&DepthMap> = depths.iter().collect();
    let (foreground, skipped_foreground) = init_foreground(&fg_frames, &depth_refs, camera, pose)?;
    let presence: Vec<&Mask> = bg_frames.iter().map(|f| &f.present).collect();
    let (bg_depth, never_present) = background_depth_from_presence(&depth_refs, &presence)?;
    // Hidden background: never present, and behind new foreground at least once.
    let occluded = Grid::from_fn(dims.0, dims.1, |x, y| {
        *never_present.get(x, y) && fg_frames.iter().any(|f| *f.present.get(x, y))
    });
    let (background, skipped_background) = init_background(&bg_frames, &bg_depth, &never_present, camera, pose)?;
    Ok(LiftedContent {
        foreground,
        background,
        occluded,
        skipped_foreground,
        skipped_background,
    })
}

/// Appends lifted content and the pose it came from. Existing points keep
/// their indices, positions and colors.
pub fn merge_update(
    state: &SceneState,
    lifted: &LiftedContent,
    camera: &Camera,
    prompt: &str,
) -> Result<SceneState, GeometryError> {
    let pose = state.poses.len() as PoseIndex;
    let tagged_elsewhere = lifted
        .foreground
        .iter()
        .flat_map(|s| s.source_poses())
        .chain(lifted.background.source_poses())
        .any(|&p| p != pose);
    if tagged_elsewhere {
        return Err(GeometryError::InvalidArgument(format!(
            "lifted points must carry pose index {pose}"
        )));
    }
    let cloud = state.cloud.merged(&lifted.foreground, &lifted.background)?;
    let mut next = state.clone();
    next.cloud = cloud;
    next.poses.push(*camera);
    next.occluded_bg.push(lifted.occluded.clone());
    next.prompts.push(prompt.to_owned());
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub splat_radius: usize,
    pub index: IndexParams,
    /// Depth used for frames with nothing observed when the outpainter
    /// gives no depth and the scene has no point in front of the camera.
    pub fallback_depth: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        StepParams {
            splat_radius: 1,
            index: IndexParams::default(),
            fallback_depth: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SceneState,
    pub bundle: RayConditioningBundle,
    pub result: OutpaintResult,
    /// Per frame; `None` where depth was synthesized or could not be aligned.
    pub fits: Vec<Option<AffineDepthFit>>,
    pub depths: Vec<DepthMap>,
    pub lifted_points: usize,
    pub skipped_points: usize,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

fn fallback_depth(state: &SceneState, camera: &Camera, t: usize, default: f64) -> f64 {
    let z: Vec<f64> = state
        .cloud
        .frame(t)
        .positions
        .iter()
        .map(|p| camera.world_to_camera(&to_vector(p)).z)
        .filter(|z| *z > 0.0)
        .collect();
    median(z).unwrap_or(default)
}

/// Depth for the outpainted frames: the outpainter's estimate aligned to
/// the ray depth, or, without an estimate, the ray depth of the nearest
/// observed pixel.
fn outpainted_depths(
    state: &SceneState,
    bundle: &RayConditioningBundle,
    result: &OutpaintResult,
    params: &StepParams,
) -> Result<(Vec<DepthMap>, Vec<Option<AffineDepthFit>>), GeometryError> {
    let camera = &bundle.camera;
    let per_frame = |t: usize, f: &ConditioningFrame| -> Result<(DepthMap, Option<AffineDepthFit>), GeometryError> {
        let observed = f.observed_mask.count();
        match &result.depth {
            Some(est) if observed > 0 => {
                let (aligned, fit) = align_depth(&est[t], &f.ray_depth, &f.observed_mask)?;
                Ok((aligned, Some(fit)))
            }
            Some(est) => {
                log::warn!("frame {t} has no observed pixels, keeping unaligned estimated depth");
                Ok((est[t].clone(), None))
            }
            None => match nearest_fill(&f.ray_depth, &f.observed_mask) {
                Some(d) => Ok((d, None)),
                None => {
                    let d = fallback_depth(state, camera, t, params.fallback_depth);
                    log::warn!("frame {t} has no observed pixels, placing new content at depth {d}");
                    Ok((Grid::filled(camera.width(), camera.height(), d), None))
                }
            },
        }
    };
    let out: Vec<_> = bundle
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| per_frame(t, f))
        .collect::<Result<_, _>>()?;
    Ok(out.into_iter().unzip())
}

/// One full outpainting iteration at `camera`.
pub fn outpaint_step(
    state: &SceneState,
    camera: &Camera,
    prompt: &str,
    outpainter: &dyn Outpainter,
    params: &StepParams,
) -> Result<StepOutcome, UpdateError> {
    let bundle = build_bundle(&state.cloud, camera, params.splat_radius, params.index, prompt)?;
    let result = outpainter.outpaint(&bundle)?;
    let n = bundle.frame_count();
    if result.frames.len() != n
        || result.depth.as_ref().is_some_and(|d| d.len() != n)
        || result.fg_masks.as_ref().is_some_and(|m| m.len() != n)
    {
        return Err(BridgeError::DimensionMismatch(format!("outpainter returned a video of the wrong length, expected {n}")).into());
    }
    let (depths, fits) = outpainted_depths(state, &bundle, &result, params)?;
    let fg_masks = match &result.fg_masks {
        Some(m) => m.clone(),
        None => vec![Grid::filled(camera.width(), camera.height(), false); n],
    };
    let observed: Vec<Mask> = bundle.frames.iter().map(|f| f.observed_mask.clone()).collect();
    let pose = state.poses.len() as PoseIndex;
    let lifted = lift_new_content(&result.frames, &depths, &fg_masks, &observed, camera, pose)?;
    let next = merge_update(state, &lifted, camera, prompt)?;
    Ok(StepOutcome {
        state: next,
        lifted_points: lifted.point_count(),
        skipped_points: lifted.skipped_foreground.iter().sum::<usize>() + lifted.skipped_background,
        bundle,
        result,
        fits,
        depths,
    })
}

/// Inverse-distance-weighted depth from the `k` nearest valid pixels.
/// Ties in distance go to the lower row-major index. Returns `None` when
/// no pixel is valid.
pub fn idw_depth(depth: &DepthMap, valid: &Mask, x: usize, y: usize, k: usize) -> Option<f64> {
    let (w, h) = depth.dims();
    // (squared distance, index)
    let mut best: Vec<(usize, usize)> = Vec::with_capacity(k + 1);
    let max_ring = w.max(h);
    for ring in 0..=max_ring {
        if best.len() == k && ring * ring > best[k - 1].0 {
            break;
        }
        let x0 = x as isize - ring as isize;
        let x1 = x as isize + ring as isize;
        let y0 = y as isize - ring as isize;
        let y1 = y as isize + ring as isize;
        for cy in y0.max(0)..=y1.min(h as isize - 1) {
            let on_edge_row = cy == y0 || cy == y1;
            let step = if on_edge_row { 1 } else { (x1 - x0).max(1) as usize };
            let mut cx = x0;
            while cx <= x1 {
                if cx >= 0 && (cx as usize) < w && *valid.get(cx as usize, cy as usize) {
                    let (ux, uy) = (cx as usize, cy as usize);
                    let cand = (ux.abs_diff(x).pow(2) + uy.abs_diff(y).pow(2), uy * w + ux);
                    let pos = best.partition_point(|b| *b < cand);
                    if pos < k {
                        best.insert(pos, cand);
                        best.truncate(k);
                    }
                }
                cx += step as isize;
            }
        }
    }
    if best.is_empty() {
        return None;
    }
    if best[0].0 == 0 {
        return Some(depth.as_slice()[best[0].1]);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &(d2, i) in &best {
        let wgt = 1.0 / (d2 as f64).sqrt();
        num += wgt * depth.as_slice()[i];
        den += wgt;
    }
    Some(num / den)
}

#[derive(Debug, Clone)]
pub struct CompletionOutcome {
    pub state: SceneState,
    pub pose: usize,
    pub added_points: usize,
    pub bundle: Option<RayConditioningBundle>,
    pub result: Option<OutpaintResult>,
}

/// Fills background hidden behind foreground at pose `pose` and clears its
/// occlusion mask.
pub fn complete_background(
    state: &SceneState,
    pose: usize,
    outpainter: &dyn Outpainter,
    params: &StepParams,
) -> Result<CompletionOutcome, UpdateError> {
    let occluded = state
        .occluded_bg
        .get(pose)
        .ok_or_else(|| GeometryError::InvalidArgument(format!("no pose {pose} in the scene")))?;
    if occluded.count() == 0 {
        return Ok(CompletionOutcome {
            state: state.clone(),
            pose,
            added_points: 0,
            bundle: None,
            result: None,
        });
    }
    let camera = state.poses[pose];
    let bg = state.cloud.background();
    if bg.is_empty() {
        return Err(GeometryError::EmptyPointSet.into());
    }
    let n = state.cloud.frame_count();
    let index = PointIndex::build(bg.positions(), params.index)?;
    let frames = (0..n)
        .map(|t| {
            let cloud = FrameCloud {
                positions: bg.positions().to_vec(),
                colors: bg.frame_colors(t).to_vec(),
                color_valid: bg.frame_valid(t).to_vec(),
            };
            let mut raster = rasterize(&cloud, &camera, params.splat_radius, t);
            for i in 0..occluded.len() {
                if occluded.as_slice()[i] {
                    raster.observed_mask.as_mut_slice()[i] = false;
                    raster.partial_rgb.as_mut_slice()[i] = [0, 0, 0];
                    raster.ray_depth.as_mut_slice()[i] = 0.0;
                    raster.invalid_color_mask.as_mut_slice()[i] = false;
                }
            }
            let unseen = raster.observed_mask.not();
            let ray_distance = ray_distance_map(&index, &camera, &unseen)?;
            Ok(ConditioningFrame {
                partial_rgb: raster.partial_rgb,
                observed_mask: raster.observed_mask,
                ray_depth: raster.ray_depth,
                ray_distance,
                invalid_color_mask: raster.invalid_color_mask,
            })
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;
    let bundle = RayConditioningBundle {
        frames,
        prompt: state.prompts.get(pose).cloned().unwrap_or_default(),
        camera,
    };
    let result = outpainter.outpaint(&bundle)?;
    if result.frames.len() != n {
        return Err(BridgeError::DimensionMismatch(format!(
            "outpainter returned {} frames, expected {n}",
            result.frames.len()
        ))
        .into());
    }
    // Background positions are static, so the depth buffer of any frame serves.
    let valid = &bundle.frames[0].observed_mask;
    let depth = &bundle.frames[0].ray_depth;
    let fallback = {
        let z: Vec<f64> = bg
            .positions()
            .iter()
            .map(|p| camera.world_to_camera(&to_vector(p)).z)
            .filter(|z| *z > 0.0)
            .collect();
        median(z).unwrap_or(params.fallback_depth)
    };
    let w = camera.width();
    let targets: Vec<usize> = (0..occluded.len()).filter(|&i| occluded.as_slice()[i]).collect();
    let depths: Vec<f64> = targets
        .par_iter()
        .map(|&i| idw_depth(depth, valid, i % w, i / w, COMPLETION_NEIGHBOURS).unwrap_or(fallback))
        .collect();
    let mut added = BackgroundLayer::new(n);
    let mut colors = vec![[0u8; 3]; n];
    let valid_all = vec![true; n];
    for (&i, &d) in targets.iter().zip(&depths) {
        if !(d.is_finite() && d > 0.0) {
            continue;
        }
        for (t, c) in colors.iter_mut().enumerate() {
            *c = result.frames[t].as_slice()[i];
        }
        let p = camera.backproject_unchecked((i % w) as f64, (i / w) as f64, d);
        added.push(to_position(&p), pose as PoseIndex, &colors, &valid_all);
    }
    let mut next = state.clone();
    next.cloud = state.cloud.merged(&vec![PointSet::new(); n], &added)?;
    next.occluded_bg[pose] = Grid::filled(occluded.width(), occluded.height(), false);
    Ok(CompletionOutcome {
        state: next,
        pose,
        added_points: added.len(),
        bundle: Some(bundle),
        result: Some(result),
    })
}

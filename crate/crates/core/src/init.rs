//! Initial layered point cloud from a fixed-pose RGB-D video.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::cloud::{to_position, BackgroundLayer, DynamicPointCloud, PointSet, PoseIndex, SceneState};
use crate::error::GeometryError;
use crate::grid::{check_dims, DepthMap, Grid, Mask, RgbImage};

/// One timestamp of the input video at a single pose.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub rgb: RgbImage,
    /// Plane depth in world units.
    pub depth: DepthMap,
    /// True on foreground pixels.
    pub fg_mask: Mask,
    pub timestamp: usize,
}

#[derive(Debug, Clone)]
pub struct InitInput {
    pub frames: Vec<FrameBundle>,
    pub camera: Camera,
    /// Carried as metadata only.
    pub scene_prompt: String,
}

impl InitInput {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.frames.is_empty() {
            return Err(GeometryError::InvalidArgument("no input frames".into()));
        }
        let dims = (self.camera.width(), self.camera.height());
        for (t, f) in self.frames.iter().enumerate() {
            if f.timestamp != t {
                return Err(GeometryError::InvalidArgument(format!(
                    "frame {t} carries timestamp {}",
                    f.timestamp
                )));
            }
            for (name, d) in [
                ("rgb", f.rgb.dims()),
                ("depth", f.depth.dims()),
                ("mask", f.fg_mask.dims()),
            ] {
                if d != dims {
                    return Err(GeometryError::DimensionMismatch(format!(
                        "frame {t} {name} is {}x{}, camera is {}x{}",
                        d.0, d.1, dims.0, dims.1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pixels of one frame belonging to one layer. Colors outside `present` are
/// zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFrame {
    pub timestamp: usize,
    pub rgb: RgbImage,
    pub present: Mask,
}

impl LayerFrame {
    pub fn new(timestamp: usize, rgb: &RgbImage, present: Mask) -> Self {
        let mut rgb = rgb.clone();
        for (c, &p) in rgb.as_mut_slice().iter_mut().zip(present.as_slice()) {
            if !p {
                *c = [0, 0, 0];
            }
        }
        LayerFrame {
            timestamp,
            rgb,
            present,
        }
    }
}

/// Splits every frame into its foreground and background layers.
pub fn split_foreground(frames: &[FrameBundle]) -> (Vec<LayerFrame>, Vec<LayerFrame>) {
    frames
        .iter()
        .map(|f| {
            (
                LayerFrame::new(f.timestamp, &f.rgb, f.fg_mask.clone()),
                LayerFrame::new(f.timestamp, &f.rgb, f.fg_mask.not()),
            )
        })
        .unzip()
}

#[inline]
fn usable_depth(d: f64) -> bool {
    d > 0.0 && d.is_finite()
}

/// Per-timestamp foreground points: one per present pixel with usable depth.
///
/// Returns the point sets and, per timestamp, the number of present pixels
/// skipped for non-positive or non-finite depth.
pub fn init_foreground(
    fg_frames: &[LayerFrame],
    depths: &[&DepthMap],
    camera: &Camera,
    pose: PoseIndex,
) -> Result<(Vec<PointSet>, Vec<usize>), GeometryError> {
    if fg_frames.len() != depths.len() {
        return Err(GeometryError::DimensionMismatch(format!(
            "{} foreground frames vs {} depth maps",
            fg_frames.len(),
            depths.len()
        )));
    }
    for (f, d) in fg_frames.iter().zip(depths) {
        check_dims(&f.present, d, "foreground mask vs depth")?;
        if f.present.dims() != (camera.width(), camera.height()) {
            return Err(GeometryError::DimensionMismatch(
                "foreground frame does not match camera size".into(),
            ));
        }
    }
    Ok(fg_frames
        .par_iter()
        .zip(depths.par_iter())
        .map(|(frame, depth)| {
            let mut set = PointSet::new();
            let mut skipped = 0;
            let w = frame.present.width();
            for (i, &present) in frame.present.as_slice().iter().enumerate() {
                if !present {
                    continue;
                }
                let d = depth.as_slice()[i];
                if !usable_depth(d) {
                    skipped += 1;
                    continue;
                }
                let p = camera.backproject_unchecked((i % w) as f64, (i / w) as f64, d);
                set.push(to_position(&p), frame.rgb.as_slice()[i], pose);
            }
            (set, skipped)
        })
        .unzip())
}

/// Background depth as the temporal mean of depth over the frames where the
/// pixel is not foreground. Pixels that are foreground in every frame fall
/// back to the unmasked temporal mean and are flagged.
pub fn background_depth(
    depths: &[&DepthMap],
    fg_masks: &[&Mask],
) -> Result<(DepthMap, Mask), GeometryError> {
    let presence: Vec<Mask> = fg_masks.iter().map(|m| m.not()).collect();
    let refs: Vec<&Mask> = presence.iter().collect();
    background_depth_from_presence(depths, &refs)
}

/// Same as [`background_depth`] with the background indicator given
/// directly (`present[t]` true where the pixel is usable background).
pub fn background_depth_from_presence(
    depths: &[&DepthMap],
    present: &[&Mask],
) -> Result<(DepthMap, Mask), GeometryError> {
    if depths.is_empty() || depths.len() != present.len() {
        return Err(GeometryError::DimensionMismatch(format!(
            "{} depth maps vs {} masks",
            depths.len(),
            present.len()
        )));
    }
    let (w, h) = depths[0].dims();
    for (d, m) in depths.iter().zip(present) {
        check_dims(depths[0], d, "depth maps")?;
        check_dims(depths[0], m, "depth vs mask")?;
    }
    let n = depths.len() as f64;
    let mut values = vec![0.0f64; w * h];
    let mut flags = vec![false; w * h];
    values
        .par_chunks_mut(w)
        .zip(flags.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (vrow, frow))| {
            let base = y * w;
            for x in 0..w {
                let i = base + x;
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for (d, m) in depths.iter().zip(present) {
                    let weight = if m.as_slice()[i] { 1.0 } else { 0.0 };
                    num += d.as_slice()[i] * weight;
                    den += weight;
                }
                if den == 0.0 {
                    let mut sum = 0.0f64;
                    for d in depths {
                        sum += d.as_slice()[i];
                    }
                    vrow[x] = sum / n;
                    frow[x] = true;
                } else {
                    vrow[x] = num / den;
                }
            }
        });
    Ok((Grid::from_vec(w, h, values)?, Grid::from_vec(w, h, flags)?))
}

/// Background points: one per pixel present in at least one frame and not
/// excluded, positioned by `bg_depth`. Returns the layer and the number of
/// candidate pixels skipped for unusable depth.
pub fn init_background(
    bg_frames: &[LayerFrame],
    bg_depth: &DepthMap,
    excluded: &Mask,
    camera: &Camera,
    pose: PoseIndex,
) -> Result<(BackgroundLayer, usize), GeometryError> {
    if bg_frames.is_empty() {
        return Err(GeometryError::InvalidArgument("no background frames".into()));
    }
    check_dims(bg_depth, excluded, "background depth vs exclusion mask")?;
    for f in bg_frames {
        check_dims(bg_depth, &f.present, "background depth vs frame")?;
    }
    if bg_depth.dims() != (camera.width(), camera.height()) {
        return Err(GeometryError::DimensionMismatch(
            "background depth does not match camera size".into(),
        ));
    }
    let n = bg_frames.len();
    let w = bg_depth.width();
    let mut layer = BackgroundLayer::new(n);
    let mut skipped = 0;
    let mut colors = vec![[0u8; 3]; n];
    let mut valid = vec![false; n];
    for i in 0..bg_depth.len() {
        if excluded.as_slice()[i] {
            continue;
        }
        let mut any = false;
        for (t, f) in bg_frames.iter().enumerate() {
            let p = f.present.as_slice()[i];
            valid[t] = p;
            colors[t] = if p { f.rgb.as_slice()[i] } else { [0, 0, 0] };
            any |= p;
        }
        if !any {
            continue;
        }
        let d = bg_depth.as_slice()[i];
        if !usable_depth(d) {
            skipped += 1;
            continue;
        }
        let p = camera.backproject_unchecked((i % w) as f64, (i / w) as f64, d);
        layer.push(to_position(&p), pose, &colors, &valid);
    }
    Ok((layer, skipped))
}

/// Union of the foreground and background layers.
pub fn merge_init(fg: Vec<PointSet>, bg: BackgroundLayer) -> Result<DynamicPointCloud, GeometryError> {
    DynamicPointCloud::new(fg, bg)
}

/// Pixels dropped during initialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitDiagnostics {
    /// Per timestamp: foreground pixels with unusable depth.
    pub skipped_foreground: Vec<usize>,
    /// Background pixels whose averaged depth was unusable.
    pub skipped_background: usize,
    /// Background pixels hidden by the foreground in every frame.
    pub always_occluded: usize,
}

#[derive(Debug, Clone)]
pub struct InitOutput {
    pub state: SceneState,
    pub diagnostics: InitDiagnostics,
}

/// Full initialization at pose index 0.
pub fn initialize(input: &InitInput) -> Result<InitOutput, GeometryError> {
    input.validate()?;
    let (fg_frames, bg_frames) = split_foreground(&input.frames);
    let depths: Vec<&DepthMap> = input.frames.iter().map(|f| &f.depth).collect();
    let (fg, skipped_foreground) = init_foreground(&fg_frames, &depths, &input.camera, 0)?;
    let presence: Vec<&Mask> = bg_frames.iter().map(|f| &f.present).collect();
    let (bg_depth, always_occluded) = background_depth_from_presence(&depths, &presence)?;
    let (bg, skipped_background) =
        init_background(&bg_frames, &bg_depth, &always_occluded, &input.camera, 0)?;
    let cloud = merge_init(fg, bg)?;
    let diagnostics = InitDiagnostics {
        skipped_foreground,
        skipped_background,
        always_occluded: always_occluded.count(),
    };
    Ok(InitOutput {
        state: SceneState {
            cloud,
            poses: vec![input.camera],
            occluded_bg: vec![always_occluded],
            prompts: vec![input.scene_prompt.clone()],
            config_snapshot: String::new(),
        },
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h, Pose::identity()).unwrap()
    }

    fn frame(t: usize, w: usize, h: usize, depth: f64, mask: impl Fn(usize, usize) -> bool) -> FrameBundle {
        FrameBundle {
            rgb: Grid::from_fn(w, h, |x, y| [x as u8, y as u8, t as u8]),
            depth: Grid::filled(w, h, depth),
            fg_mask: Grid::from_fn(w, h, mask),
            timestamp: t,
        }
    }

    #[test]
    fn split_all_zero_and_all_one() {
        let (fg, bg) = split_foreground(&[frame(0, 8, 6, 1.0, |_, _| false)]);
        assert_eq!(fg[0].present.count(), 0);
        assert_eq!(bg[0].present.count(), 48);
        let (fg, bg) = split_foreground(&[frame(0, 8, 6, 1.0, |_, _| true)]);
        assert_eq!(fg[0].present.count(), 48);
        assert_eq!(bg[0].present.count(), 0);
    }

    #[test]
    fn split_checkerboard_partitions_exactly() {
        let frames = [frame(0, 8, 6, 1.0, |x, y| (x + y) % 2 == 0)];
        let (fg, bg) = split_foreground(&frames);
        assert_eq!(fg[0].present.count(), 24);
        assert_eq!(bg[0].present.count(), 24);
        for i in 0..48 {
            assert_ne!(fg[0].present.as_slice()[i], bg[0].present.as_slice()[i]);
        }
    }

    #[test]
    fn single_foreground_pixel() {
        let cam = Camera::new(100.0, 100.0, 256.0, 256.0, 512, 512, Pose::identity()).unwrap();
        let f = frame(0, 512, 512, 2.0, |x, y| x == 256 && y == 256);
        let (fg, _) = split_foreground(std::slice::from_ref(&f));
        let (sets, skipped) = init_foreground(&fg, &[&f.depth], &cam, 0).unwrap();
        assert_eq!(skipped, vec![0]);
        assert_eq!(sets[0].positions(), &[[0.0, 0.0, 2.0]]);
        assert_eq!(sets[0].colors(), &[[0, 0, 0]]);
        assert_eq!(sets[0].colors()[0], *f.rgb.get(256, 256));
    }

    #[test]
    fn foreground_counts_are_per_frame() {
        let frames: Vec<_> = (0..16)
            .map(|t| frame(t, 10, 10, 1.5, move |x, y| y == t % 10 && x < 3))
            .collect();
        let (fg, _) = split_foreground(&frames);
        let depths: Vec<_> = frames.iter().map(|f| &f.depth).collect();
        let (sets, _) = init_foreground(&fg, &depths, &camera(10, 10), 0).unwrap();
        assert_eq!(sets.iter().map(PointSet::len).sum::<usize>(), 16 * 3);
    }

    #[test]
    fn bad_foreground_depth_is_skipped_and_reported() {
        let mut f = frame(0, 4, 4, 1.0, |x, _| x == 0);
        f.depth.set(0, 1, 0.0);
        f.depth.set(0, 2, f64::NAN);
        let (fg, _) = split_foreground(std::slice::from_ref(&f));
        let (sets, skipped) = init_foreground(&fg, &[&f.depth], &camera(4, 4), 0).unwrap();
        assert_eq!(sets[0].len(), 2);
        assert_eq!(skipped, vec![2]);
    }

    #[test]
    fn background_depth_masked_average() {
        let d: Vec<DepthMap> = [2.0, 4.0, 6.0].iter().map(|&v| Grid::filled(1, 1, v)).collect();
        let m: Vec<Mask> = [false, true, false].iter().map(|&v| Grid::filled(1, 1, v)).collect();
        let (bd, flag) = background_depth(&d.iter().collect::<Vec<_>>(), &m.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(*bd.get(0, 0), 4.0);
        assert!(!*flag.get(0, 0));
    }

    #[test]
    fn background_depth_all_occluded_fallback() {
        let d: Vec<DepthMap> = [2.0, 4.0, 6.0].iter().map(|&v| Grid::filled(1, 1, v)).collect();
        let m: Vec<Mask> = (0..3).map(|_| Grid::filled(1, 1, true)).collect();
        let (bd, flag) = background_depth(&d.iter().collect::<Vec<_>>(), &m.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(*bd.get(0, 0), 4.0);
        assert!(*flag.get(0, 0));
    }

    #[test]
    fn static_mask_gives_all_valid_colors() {
        let frames: Vec<_> = (0..4).map(|t| frame(t, 6, 5, 3.0, |x, _| x < 2)).collect();
        let out = initialize(&InitInput {
            frames,
            camera: camera(6, 5),
            scene_prompt: "p".into(),
        })
        .unwrap();
        let bg = out.state.cloud.background();
        assert_eq!(bg.len(), 4 * 5);
        for t in 0..4 {
            assert!(bg.frame_valid(t).iter().all(|&v| v));
        }
        assert_eq!(out.diagnostics.always_occluded, 10);
        assert_eq!(out.state.occluded_bg[0].count(), 10);
    }

    #[test]
    fn occlusion_at_one_timestamp_invalidates_that_color() {
        let frames: Vec<_> = (0..5)
            .map(|t| frame(t, 3, 3, 2.0, move |x, y| t == 3 && x == 1 && y == 1))
            .collect();
        let out = initialize(&InitInput {
            frames,
            camera: camera(3, 3),
            scene_prompt: String::new(),
        })
        .unwrap();
        let bg = out.state.cloud.background();
        assert_eq!(bg.len(), 9);
        // row-major: pixel (1,1) is the fifth background point
        let valid: Vec<bool> = (0..5).map(|t| bg.frame_valid(t)[4]).collect();
        assert_eq!(valid, vec![true, true, true, false, true]);
        assert_eq!(out.state.cloud.foreground(3).len(), 1);
    }

    #[test]
    fn constant_depth_background_is_a_plane() {
        let frames: Vec<_> = (0..3).map(|t| frame(t, 7, 4, 2.5, |_, _| false)).collect();
        let out = initialize(&InitInput {
            frames,
            camera: camera(7, 4),
            scene_prompt: String::new(),
        })
        .unwrap();
        let bg = out.state.cloud.background();
        assert_eq!(bg.len(), 28);
        assert!(bg.positions().iter().all(|p| p[2] == 2.5));
    }

    #[test]
    fn merge_counts_and_provenance() {
        let frames: Vec<_> = (0..3)
            .map(|t| frame(t, 5, 5, 2.0, move |x, y| x == t && y == 0))
            .collect();
        let out = initialize(&InitInput {
            frames,
            camera: camera(5, 5),
            scene_prompt: String::new(),
        })
        .unwrap();
        let cloud = &out.state.cloud;
        assert_eq!(cloud.foreground_count(), 3);
        assert_eq!(cloud.background().len(), 25);
        assert_eq!(cloud.total_points(), 28);
        assert_eq!(cloud.provenance_counts().into_iter().collect::<Vec<_>>(), vec![(0, 28)]);
    }

    #[test]
    fn empty_foreground_merge_is_background() {
        let bg = BackgroundLayer::new(2);
        let cloud = merge_init(vec![PointSet::new(), PointSet::new()], bg.clone()).unwrap();
        assert_eq!(cloud.background(), &bg);
        assert_eq!(cloud.total_points(), 0);
    }

    #[test]
    fn mismatched_frame_rejected() {
        let mut frames: Vec<_> = (0..2).map(|t| frame(t, 4, 4, 1.0, |_, _| false)).collect();
        frames[1].depth = Grid::filled(3, 4, 1.0);
        let err = initialize(&InitInput {
            frames,
            camera: camera(4, 4),
            scene_prompt: String::new(),
        })
        .unwrap_err();
        assert!(matches!(err, GeometryError::DimensionMismatch(_)));
    }
}

//! Hard z-buffer point rasterization with square splats.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::cloud::{to_vector, DynamicPointCloud, FrameCloud, Position};
use crate::grid::{DepthMap, Grid, Mask, Rgb, RgbImage};

/// Fill color for pixels won by a background point whose color is unknown
/// at that timestamp.
pub const INVALID_COLOR_FILL: Rgb = [255, 0, 255];

/// Depth differences at or below this are ties, resolved by lowest point
/// index.
pub const DEPTH_TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RasterOutput {
    /// Winner colors; zero where unobserved.
    pub partial_rgb: RgbImage,
    /// Winner plane depth; zero where unobserved.
    pub ray_depth: DepthMap,
    pub observed_mask: Mask,
    /// Pixels whose winner is a background point without a valid color.
    pub invalid_color_mask: Mask,
    pub timestamp: usize,
}

#[derive(Clone, Copy)]
struct Splat {
    px: u32,
    py: u32,
    depth: f64,
}

fn project_all(positions: &[Position], camera: &Camera) -> Vec<Option<Splat>> {
    positions
        .par_iter()
        .map(|p| {
            let proj = camera.project(&to_vector(p))?;
            let (px, py) = camera.pixel_of(proj.x, proj.y)?;
            Some(Splat {
                px: px as u32,
                py: py as u32,
                depth: proj.depth,
            })
        })
        .collect()
}

#[inline]
fn footprint(s: &Splat, radius: usize, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let (px, py) = (s.px as usize, s.py as usize);
    (
        px.saturating_sub(radius),
        (px + radius).min(w - 1),
        py.saturating_sub(radius),
        (py + radius).min(h - 1),
    )
}

/// Index of the winning point per pixel, `None` where nothing splats.
pub(crate) fn zbuffer_winners(
    positions: &[Position],
    camera: &Camera,
    splat_radius: usize,
) -> (Vec<Option<u32>>, Vec<f64>) {
    let (w, h) = (camera.width(), camera.height());
    let splats = project_all(positions, camera);
    let mut zmin = vec![f64::INFINITY; w * h];
    for s in splats.iter().flatten() {
        let (x0, x1, y0, y1) = footprint(s, splat_radius, w, h);
        for y in y0..=y1 {
            let row = &mut zmin[y * w..y * w + w];
            for z in &mut row[x0..=x1] {
                if s.depth < *z {
                    *z = s.depth;
                }
            }
        }
    }
    let mut winner: Vec<Option<u32>> = vec![None; w * h];
    for (idx, s) in splats.iter().enumerate() {
        let Some(s) = s else { continue };
        let (x0, x1, y0, y1) = footprint(s, splat_radius, w, h);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let i = y * w + x;
                if winner[i].is_none() && s.depth <= zmin[i] + DEPTH_TIE_EPSILON {
                    winner[i] = Some(idx as u32);
                }
            }
        }
    }
    let depth = winner
        .iter()
        .map(|wi| wi.map_or(0.0, |i| splats[i as usize].unwrap().depth))
        .collect();
    (winner, depth)
}

/// Renders one timestamp's points at `camera`.
///
/// Every point in front of the camera whose projection falls inside the
/// image covers the `(2r+1)^2` square of pixels around its projected pixel.
/// Per pixel the nearest plane depth wins.
pub fn rasterize(cloud: &FrameCloud, camera: &Camera, splat_radius: usize, timestamp: usize) -> RasterOutput {
    let (w, h) = (camera.width(), camera.height());
    let (winner, depth) = zbuffer_winners(&cloud.positions, camera, splat_radius);
    let mut partial_rgb = Grid::filled(w, h, [0u8; 3]);
    let mut observed = Grid::filled(w, h, false);
    let mut invalid = Grid::filled(w, h, false);
    for (i, wi) in winner.iter().enumerate() {
        if let Some(idx) = wi {
            let idx = *idx as usize;
            observed.as_mut_slice()[i] = true;
            if cloud.color_valid[idx] {
                partial_rgb.as_mut_slice()[i] = cloud.colors[idx];
            } else {
                partial_rgb.as_mut_slice()[i] = INVALID_COLOR_FILL;
                invalid.as_mut_slice()[i] = true;
            }
        }
    }
    RasterOutput {
        partial_rgb,
        ray_depth: Grid::from_vec(w, h, depth).expect("depth buffer sized to camera"),
        observed_mask: observed,
        invalid_color_mask: invalid,
        timestamp,
    }
}

/// Renders every timestamp of the cloud.
pub fn rasterize_video(cloud: &DynamicPointCloud, camera: &Camera, splat_radius: usize) -> Vec<RasterOutput> {
    (0..cloud.frame_count())
        .into_par_iter()
        .map(|t| rasterize(&cloud.frame(t), camera, splat_radius, t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::cloud::{BackgroundLayer, PointSet};
    use nalgebra::Vector3;

    fn cam() -> Camera {
        Camera::new(100.0, 100.0, 256.0, 256.0, 512, 512, Pose::identity()).unwrap()
    }

    fn cloud_of(points: &[([f32; 3], Rgb)]) -> FrameCloud {
        let mut s = PointSet::new();
        for &(p, c) in points {
            s.push(p, c, 0);
        }
        FrameCloud::from_point_set(&s)
    }

    #[test]
    fn single_point_single_pixel() {
        let out = rasterize(&cloud_of(&[([0.0, 0.0, 2.0], [9, 8, 7])]), &cam(), 0, 0);
        assert_eq!(out.observed_mask.count(), 1);
        assert!(*out.observed_mask.get(256, 256));
        assert_eq!(*out.ray_depth.get(256, 256), 2.0);
        assert_eq!(*out.partial_rgb.get(256, 256), [9, 8, 7]);
    }

    #[test]
    fn nearest_point_wins() {
        let red = [255, 0, 0];
        let blue = [0, 0, 255];
        for order in [[(2.0, red), (3.0, blue)], [(3.0, blue), (2.0, red)]] {
            let pts: Vec<_> = order.iter().map(|&(z, c)| ([0.0, 0.0, z as f32], c)).collect();
            let out = rasterize(&cloud_of(&pts), &cam(), 0, 0);
            assert_eq!(*out.partial_rgb.get(256, 256), red);
            assert_eq!(*out.ray_depth.get(256, 256), 2.0);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let out = rasterize(
            &cloud_of(&[([0.0, 0.0, 2.0], [1, 1, 1]), ([0.0, 0.0, 2.0], [2, 2, 2])]),
            &cam(),
            0,
            0,
        );
        assert_eq!(*out.partial_rgb.get(256, 256), [1, 1, 1]);
    }

    #[test]
    fn splat_radius_covers_square() {
        let out = rasterize(&cloud_of(&[([0.0, 0.0, 2.0], [5, 5, 5])]), &cam(), 2, 0);
        assert_eq!(out.observed_mask.count(), 25);
        assert!(*out.observed_mask.get(254, 258));
        // clipped at the image corner
        let corner = rasterize(&cloud_of(&[([-5.12, -5.12, 2.0], [5, 5, 5])]), &cam(), 1, 0);
        assert_eq!(corner.observed_mask.count(), 4);
    }

    #[test]
    fn behind_and_outside_points_are_discarded() {
        let out = rasterize(
            &cloud_of(&[([0.0, 0.0, -2.0], [1, 1, 1]), ([100.0, 0.0, 1.0], [1, 1, 1])]),
            &cam(),
            3,
            0,
        );
        assert_eq!(out.observed_mask.count(), 0);
    }

    #[test]
    fn camera_far_behind_scene_sees_nothing() {
        let mut bg = BackgroundLayer::new(2);
        for i in 0..10 {
            bg.push([i as f32 * 0.1, 0.0, 2.0], 0, &[[1, 1, 1]; 2], &[true; 2]);
        }
        let cloud = DynamicPointCloud::new(vec![PointSet::new(), PointSet::new()], bg).unwrap();
        let away = cam().with_pose(Pose::from_translation(Vector3::new(0.0, 0.0, 50.0)));
        for out in rasterize_video(&cloud, &away, 1) {
            assert_eq!(out.observed_mask.count(), 0);
        }
    }

    #[test]
    fn background_colors_vary_per_timestamp() {
        let mut bg = BackgroundLayer::new(2);
        bg.push([0.0, 0.0, 2.0], 0, &[[10, 0, 0], [0, 10, 0]], &[true, true]);
        bg.push([0.02, 0.0, 2.0], 0, &[[10, 0, 0], [0, 0, 0]], &[true, false]);
        let cloud = DynamicPointCloud::new(vec![PointSet::new(), PointSet::new()], bg).unwrap();
        let frames = rasterize_video(&cloud, &cam(), 0);
        assert_eq!(frames[0].observed_mask, frames[1].observed_mask);
        assert_eq!(frames[0].ray_depth, frames[1].ray_depth);
        assert_ne!(frames[0].partial_rgb, frames[1].partial_rgb);
        assert_eq!(*frames[1].partial_rgb.get(257, 256), INVALID_COLOR_FILL);
        assert!(*frames[1].invalid_color_mask.get(257, 256));
        assert_eq!(frames[1].invalid_color_mask.count(), 1);
    }
}

//! Distances between camera rays and point clouds.
//!
//! The distance from a ray through the camera center to a point is the
//! perpendicular distance to the full line through the center, including for
//! points behind the camera.

mod index;
mod view;

pub use index::{IndexParams, LineHit, PointIndex};

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::cloud::Position;
use crate::error::GeometryError;
use crate::grid::{DepthMap, Grid, Mask};

const UNIT_TOLERANCE: f64 = 1e-9;

/// Distance between the line through the origin along unit `ray` and `point`.
pub fn dist_r2p(ray: &Vector3<f64>, point: &Vector3<f64>) -> Result<f64, GeometryError> {
    let n = ray.norm();
    if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(GeometryError::NonUnitRay(n));
    }
    Ok(dist_sq(
        &[ray.x, ray.y, ray.z],
        &[point.x, point.y, point.z],
    )
    .sqrt())
}

/// Squared line distance, clamped at zero against cancellation.
#[inline(always)]
pub(crate) fn dist_sq(r: &[f64; 3], v: &[f64; 3]) -> f64 {
    let pp = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let rp = r[0] * v[0] + r[1] * v[1] + r[2] * v[2];
    (pp - rp * rp).max(0.0)
}

#[inline(always)]
pub(crate) fn offset(p: &[f64; 3], o: &[f64; 3]) -> [f64; 3] {
    [p[0] - o[0], p[1] - o[1], p[2] - o[2]]
}

#[inline]
pub(crate) fn widen(p: &Position) -> [f64; 3] {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}

/// Per-pixel minimum ray-to-cloud distance over the computed region.
#[derive(Debug, Clone, PartialEq)]
pub struct RayDistanceMap {
    /// World units; zero outside `computed_mask`.
    pub values: DepthMap,
    pub computed_mask: Mask,
}

fn check_mask(camera: &Camera, mask: &Mask) -> Result<(), GeometryError> {
    if mask.dims() != (camera.width(), camera.height()) {
        return Err(GeometryError::DimensionMismatch(format!(
            "unseen mask is {}x{}, camera is {}x{}",
            mask.width(),
            mask.height(),
            camera.width(),
            camera.height()
        )));
    }
    Ok(())
}

fn ray_of(camera: &Camera, x: usize, y: usize) -> [f64; 3] {
    let d = camera.ray_direction(x as f64, y as f64);
    [d.x, d.y, d.z]
}

/// Ray distance map through the spatial index.
pub fn ray_distance_map(
    index: &PointIndex,
    camera: &Camera,
    unseen_mask: &Mask,
) -> Result<RayDistanceMap, GeometryError> {
    check_mask(camera, unseen_mask)?;
    let (w, h) = unseen_mask.dims();
    let c = camera.center();
    let origin = [c.x, c.y, c.z];
    let margin = index.pruning_margin(&origin);
    let view = view::ViewIndex::build(index, camera)?;
    let mut values = vec![0.0f64; w * h];
    values.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mask_row = &unseen_mask.as_slice()[y * w..(y + 1) * w];
        let mut hint = None;
        for x in 0..w {
            if !mask_row[x] {
                continue;
            }
            let (d, hit) = view.nearest(x, y, &origin, &ray_of(camera, x, y), hint, margin);
            row[x] = d.sqrt();
            hint = hit.or(hint);
        }
    });
    Ok(RayDistanceMap {
        values: Grid::from_vec(w, h, values)?,
        computed_mask: unseen_mask.clone(),
    })
}

/// Reference implementation: every unseen pixel against every point.
pub fn ray_distance_map_brute_force(
    positions: &[Position],
    camera: &Camera,
    unseen_mask: &Mask,
) -> Result<RayDistanceMap, GeometryError> {
    check_mask(camera, unseen_mask)?;
    if positions.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    let (w, h) = unseen_mask.dims();
    let c = camera.center();
    let origin = [c.x, c.y, c.z];
    let points: Vec<[f64; 3]> = positions.iter().map(widen).collect();
    let mut values = vec![0.0f64; w * h];
    values.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            if !unseen_mask.get(x, y) {
                continue;
            }
            let r = ray_of(camera, x, y);
            let best = points
                .iter()
                .map(|p| dist_sq(&r, &offset(p, &origin)))
                .fold(f64::INFINITY, f64::min);
            row[x] = best.sqrt();
        }
    });
    Ok(RayDistanceMap {
        values: Grid::from_vec(w, h, values)?,
        computed_mask: unseen_mask.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;

    fn cam(pose: Pose) -> Camera {
        Camera::new(100.0, 100.0, 256.0, 256.0, 512, 512, pose).unwrap()
    }

    #[test]
    fn perpendicular_point() {
        let d = dist_r2p(&Vector3::z(), &Vector3::new(3.0, 4.0, 0.0)).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn point_on_ray() {
        assert_eq!(dist_r2p(&Vector3::z(), &Vector3::new(0.0, 0.0, 7.0)).unwrap(), 0.0);
    }

    #[test]
    fn angled_points() {
        for theta in [0.1f64, 0.5, 1.0] {
            let p = Vector3::new(5.0 * theta.sin(), 0.0, 5.0 * theta.cos());
            let d = dist_r2p(&Vector3::z(), &p).unwrap();
            assert!((d - 5.0 * theta.sin()).abs() <= 1e-12, "theta {theta}: {d}");
        }
    }

    #[test]
    fn behind_camera_uses_line_distance() {
        let d = dist_r2p(&Vector3::z(), &Vector3::new(1.0, 0.0, -10.0)).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn non_unit_ray_rejected() {
        assert!(matches!(
            dist_r2p(&Vector3::new(0.0, 0.0, 2.0), &Vector3::x()),
            Err(GeometryError::NonUnitRay(_))
        ));
    }

    #[test]
    fn single_point_map() {
        let pts = [[0.0f32, 0.0, 5.0]];
        let c = cam(Pose::identity());
        let mask = Grid::filled(512, 512, true);
        let index = PointIndex::build(&pts, IndexParams::default()).unwrap();
        let map = ray_distance_map(&index, &c, &mask).unwrap();
        assert_eq!(*map.values.get(256, 256), 0.0);
        // pixel (356, 256): ray angle atan(1) with +Z
        let theta = (1.0f64).atan();
        assert!((map.values.get(356, 256) - 5.0 * theta.sin()).abs() < 1e-12);
        let brute = ray_distance_map_brute_force(&pts, &c, &mask).unwrap();
        assert_eq!(map, brute);
    }

    #[test]
    fn translated_camera_recenters() {
        let pts = [[1.0f32, 0.0, 5.0]];
        let c = cam(Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        let mut mask = Grid::filled(512, 512, false);
        mask.set(256, 256, true);
        let index = PointIndex::build(&pts, IndexParams::default()).unwrap();
        let map = ray_distance_map(&index, &c, &mask).unwrap();
        assert_eq!(*map.values.get(256, 256), 0.0);
        assert_eq!(*map.values.get(0, 0), 0.0);
        assert!(!map.computed_mask.get(0, 0));
    }

    #[test]
    fn brute_force_rejects_empty_cloud() {
        let c = cam(Pose::identity());
        assert_eq!(
            ray_distance_map_brute_force(&[], &c, &Grid::filled(512, 512, true)),
            Err(GeometryError::EmptyPointSet)
        );
    }
}

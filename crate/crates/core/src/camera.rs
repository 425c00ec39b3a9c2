//! Pinhole camera with a rigid camera-to-world pose.
//!
//! Convention: the camera looks down +Z with x to the right and y down.
//! Depth is always the camera-frame z coordinate (plane depth), never the
//! Euclidean length along the ray.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

const ROTATION_TOLERANCE: f64 = 1e-6;

/// Rigid camera-to-world transform `x_world = rotation * x_cam + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1 (to 1e-6).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidCamera(
                "translation must be finite".into(),
            ));
        }
        check_rotation(&rotation)?;
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis`, no translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self, GeometryError> {
        let norm = axis.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(GeometryError::InvalidArgument(
                "rotation axis must be a non-zero finite vector".into(),
            ));
        }
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Ok(Pose {
            rotation: *rot.matrix(),
            translation: Vector3::zeros(),
        })
    }

    #[inline]
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Row-major homogeneous 4x4 matrix.
    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix4(m: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        let bottom = m[3];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::InvalidCamera(format!(
                "pose bottom row must be [0, 0, 0, 1], got {bottom:?}"
            )));
        }
        let rotation = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        Pose::new(rotation, Vector3::new(m[0][3], m[1][3], m[2][3]))
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::InvalidCamera("rotation must be finite".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ROTATION_TOLERANCE {
        return Err(GeometryError::InvalidCamera(format!(
            "rotation is not orthonormal (max |R^T R - I| = {err:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(GeometryError::InvalidCamera(format!(
            "rotation determinant must be +1, got {det}"
        )));
    }
    Ok(())
}

/// A world point expressed in pixel coordinates plus its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

/// Pinhole intrinsics plus camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    pose: Pose,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pose: Pose,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fx.is_finite() && fy > 0.0 && fy.is_finite()) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera("image size must be non-zero".into()));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        check_rotation(&pose.rotation)?;
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose,
        })
    }

    /// Same intrinsics, different pose.
    pub fn with_pose(&self, pose: Pose) -> Camera {
        Camera { pose, ..*self }
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    /// Camera center in world coordinates.
    #[inline]
    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation.tr_mul(&(p - self.pose.translation))
    }

    /// Projects a world point. Returns `None` when the point is not strictly
    /// in front of the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<Projection> {
        let c = self.world_to_camera(p);
        if !(c.z > 0.0) {
            return None;
        }
        Some(Projection {
            x: self.fx * c.x / c.z + self.cx,
            y: self.fy * c.y / c.z + self.cy,
            depth: c.z,
        })
    }

    /// Pixel containing the projected coordinates (nearest pixel center), or
    /// `None` outside the image.
    #[inline]
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let px = (x + 0.5).floor();
        let py = (y + 0.5).floor();
        if px >= 0.0 && py >= 0.0 && px < self.width as f64 && py < self.height as f64 {
            Some((px as usize, py as usize))
        } else {
            None
        }
    }

    /// Lifts pixel coordinates with plane depth to a world point.
    pub fn backproject(&self, x: f64, y: f64, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(GeometryError::InvalidDepth(depth));
        }
        if !(x >= -0.5 && y >= -0.5 && x < self.width as f64 - 0.5 && y < self.height as f64 - 0.5)
        {
            return Err(GeometryError::PixelOutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.backproject_unchecked(x, y, depth))
    }

    #[inline]
    pub(crate) fn backproject_unchecked(&self, x: f64, y: f64, depth: f64) -> Vector3<f64> {
        let c = Vector3::new(
            (x - self.cx) * depth / self.fx,
            (y - self.cy) * depth / self.fy,
            depth,
        );
        self.pose.transform_point(&c)
    }

    /// Unit ray direction through pixel coordinates `(x, y)`, in the world frame.
    #[inline]
    pub fn ray_direction(&self, x: f64, y: f64) -> Vector3<f64> {
        let d = Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0);
        (self.pose.rotation * d).normalize()
    }
}

/// Serialized camera: intrinsics plus row-major 4x4 camera-to-world matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub camera_to_world: [[f64; 4]; 4],
}

impl TryFrom<CameraRecord> for Camera {
    type Error = GeometryError;

    fn try_from(r: CameraRecord) -> Result<Self, Self::Error> {
        let pose = Pose::from_matrix4(&r.camera_to_world)?;
        Camera::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, pose)
    }
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            camera_to_world: c.pose.to_matrix4(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cam(pose: Pose) -> Camera {
        Camera::new(100.0, 100.0, 256.0, 256.0, 512, 512, pose).unwrap()
    }

    #[test]
    fn project_principal_axis() {
        let p = cam(Pose::identity())
            .project(&Vector3::new(0.0, 0.0, 2.0))
            .unwrap();
        assert_eq!((p.x, p.y, p.depth), (256.0, 256.0, 2.0));
    }

    #[test]
    fn project_off_axis() {
        let p = cam(Pose::identity())
            .project(&Vector3::new(2.0, 0.0, 2.0))
            .unwrap();
        assert_eq!((p.x, p.y, p.depth), (356.0, 256.0, 2.0));
    }

    #[test]
    fn project_behind_camera() {
        let c = cam(Pose::identity());
        assert!(c.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(c.project(&Vector3::new(1.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn backproject_examples() {
        let c = cam(Pose::identity());
        assert_eq!(
            c.backproject(256.0, 256.0, 2.0).unwrap(),
            Vector3::new(0.0, 0.0, 2.0)
        );
        assert_eq!(
            c.backproject(356.0, 256.0, 2.0).unwrap(),
            Vector3::new(2.0, 0.0, 2.0)
        );
        let shifted = cam(Pose::from_translation(Vector3::new(0.0, 0.0, -1.0)));
        assert_eq!(
            shifted.backproject(256.0, 256.0, 2.0).unwrap(),
            Vector3::new(0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn backproject_rejects_bad_depth_and_pixels() {
        let c = cam(Pose::identity());
        assert_eq!(
            c.backproject(1.0, 1.0, 0.0),
            Err(GeometryError::InvalidDepth(0.0))
        );
        assert!(c.backproject(1.0, 1.0, -2.0).is_err());
        assert!(c.backproject(1.0, 1.0, f64::NAN).is_err());
        assert!(matches!(
            c.backproject(600.0, 1.0, 1.0),
            Err(GeometryError::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn camera_validation() {
        let p = Pose::identity();
        assert!(Camera::new(0.0, 1.0, 1.0, 1.0, 4, 4, p).is_err());
        assert!(Camera::new(1.0, 1.0, 4.0, 1.0, 4, 4, p).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(skew, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn camera_json_round_trip() {
        let pose = Pose::from_axis_angle(Vector3::new(0.2, 1.0, -0.3), 0.7)
            .unwrap()
            .compose(&Pose::from_translation(Vector3::new(0.1, -2.0, 3.5)));
        let c = cam(pose);
        let s = serde_json::to_string(&c).unwrap();
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn ray_direction_is_unit_and_hits_pixel() {
        let pose = Pose::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.4).unwrap();
        let c = cam(pose);
        let d = c.ray_direction(100.0, 400.0);
        assert_relative_eq!(d.norm(), 1.0, epsilon = 1e-15);
        let p = c.project(&(c.center() + 3.0 * d)).unwrap();
        assert_relative_eq!(p.x, 100.0, epsilon = 1e-9);
        assert_relative_eq!(p.y, 400.0, epsilon = 1e-9);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            0.0f64..3.0,
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_filter_map("degenerate axis", |(a, ang, t)| {
                let axis = Vector3::from(a);
                (axis.norm() > 1e-3).then(|| {
                    Pose::from_axis_angle(axis, ang)
                        .unwrap()
                        .compose(&Pose::from_translation(Vector3::from(t)))
                })
            })
    }

    proptest! {
        #[test]
        fn project_inverts_backproject(
            pose in arb_pose(),
            x in 0.0f64..511.0,
            y in 0.0f64..511.0,
            depth in 0.01f64..100.0,
        ) {
            let c = cam(pose);
            let w = c.backproject(x, y, depth).unwrap();
            let p = c.project(&w).unwrap();
            prop_assert!((p.x - x).abs() <= 1e-9 * x.abs().max(1.0));
            prop_assert!((p.y - y).abs() <= 1e-9 * y.abs().max(1.0));
            prop_assert!((p.depth - depth).abs() <= 1e-9 * depth);
        }

        #[test]
        fn rigid_pose_preserves_distances(
            pose in arb_pose(),
            a in prop::array::uniform3(-10.0f64..10.0),
            b in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            let before = (a - b).norm();
            let after = (pose.transform_point(&a) - pose.transform_point(&b)).norm();
            prop_assert!((before - after).abs() <= 1e-9 * before.max(1e-300) + 1e-12);
        }

        #[test]
        fn pose_inverse_composes_to_identity(pose in arb_pose()) {
            let id = pose.compose(&pose.inverse());
            prop_assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-12);
            prop_assert!(id.translation().norm() < 1e-12);
        }
    }
}

//! Fly-through camera paths: straight-line translations and uniform-step
//! rotations about the camera center.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Pose};
use crate::error::GeometryError;

/// Default backward step between adjacent poses, in world units.
pub const DEFAULT_BACKWARD_STEP: f64 = 0.0005;
/// Default total rotation of a rotation segment, in radians.
pub const DEFAULT_ROTATION_ANGLE: f64 = 0.45;

/// How the `angle` of a rotation segment is read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleGranularity {
    /// `angle` is the total over the segment, split into `n_steps` equal steps.
    #[default]
    PerSegment,
    /// `angle` is applied at every step.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySpec {
    /// Pose `k` is displaced by `k * step` along `direction` (camera frame).
    TranslateLine {
        direction: [f64; 3],
        step: f64,
        n_steps: usize,
    },
    /// Pose `k` is rotated by `k * step_angle` about `axis` (camera frame)
    /// through the camera center.
    Rotate {
        axis: [f64; 3],
        angle: f64,
        n_steps: usize,
        #[serde(default)]
        granularity: AngleGranularity,
    },
    /// Segments run back to back, each starting at the previous end pose.
    Composite { segments: Vec<TrajectorySpec> },
}

impl TrajectorySpec {
    /// Straight line backwards along the camera's -Z axis.
    pub fn backward(step: f64, n_steps: usize) -> Self {
        TrajectorySpec::TranslateLine {
            direction: [0.0, 0.0, -1.0],
            step,
            n_steps,
        }
    }

    /// Total number of poses produced.
    pub fn pose_count(&self) -> usize {
        match self {
            TrajectorySpec::TranslateLine { n_steps, .. } | TrajectorySpec::Rotate { n_steps, .. } => *n_steps,
            TrajectorySpec::Composite { segments } => segments.iter().map(|s| s.pose_count()).sum(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            TrajectorySpec::TranslateLine {
                direction,
                step,
                n_steps,
            } => {
                check_steps(*n_steps)?;
                if !step.is_finite() {
                    return Err(GeometryError::InvalidArgument("translation step must be finite".into()));
                }
                unit(direction, "direction")?;
            }
            TrajectorySpec::Rotate {
                axis,
                angle,
                n_steps,
                ..
            } => {
                check_steps(*n_steps)?;
                if !angle.is_finite() {
                    return Err(GeometryError::InvalidArgument("rotation angle must be finite".into()));
                }
                unit(axis, "axis")?;
            }
            TrajectorySpec::Composite { segments } => {
                if segments.is_empty() {
                    return Err(GeometryError::InvalidArgument("composite trajectory has no segments".into()));
                }
                for s in segments {
                    s.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Camera-frame transform between consecutive poses of a simple segment.
    pub fn step_transform(&self) -> Result<Pose, GeometryError> {
        self.validate()?;
        match self {
            TrajectorySpec::TranslateLine { .. } | TrajectorySpec::Rotate { .. } => self.offset(1),
            TrajectorySpec::Composite { .. } => Err(GeometryError::InvalidArgument(
                "composite trajectories have no single step transform".into(),
            )),
        }
    }

    /// Camera-frame transform of pose `k` relative to the segment start.
    fn offset(&self, k: usize) -> Result<Pose, GeometryError> {
        match self {
            TrajectorySpec::TranslateLine { direction, step, .. } => {
                let d = unit(direction, "direction")?;
                Ok(Pose::from_translation(d * (k as f64 * step)))
            }
            TrajectorySpec::Rotate {
                axis,
                angle,
                n_steps,
                granularity,
            } => {
                let a = unit(axis, "axis")?;
                let per_step = match granularity {
                    AngleGranularity::PerSegment => angle / *n_steps as f64,
                    AngleGranularity::PerStep => *angle,
                };
                Pose::from_axis_angle(a, k as f64 * per_step)
            }
            TrajectorySpec::Composite { .. } => unreachable!("composite offsets are not defined"),
        }
    }
}

fn check_steps(n: usize) -> Result<(), GeometryError> {
    if n == 0 {
        Err(GeometryError::InvalidArgument("n_steps must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn unit(v: &[f64; 3], what: &str) -> Result<Vector3<f64>, GeometryError> {
    let v = Vector3::from(*v);
    let n = v.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(GeometryError::InvalidArgument(format!(
            "{what} must be a non-zero finite vector"
        )));
    }
    Ok(v / n)
}

/// Poses `1..=n_steps` of the trajectory starting at `start`; intrinsics are
/// unchanged.
pub fn generate(spec: &TrajectorySpec, start: &Camera) -> Result<Vec<Camera>, GeometryError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.pose_count());
    extend(spec, start, &mut out)?;
    Ok(out)
}

fn extend(spec: &TrajectorySpec, start: &Camera, out: &mut Vec<Camera>) -> Result<(), GeometryError> {
    match spec {
        TrajectorySpec::Composite { segments } => {
            let mut from = *start;
            for seg in segments {
                extend(seg, &from, out)?;
                from = *out.last().expect("segments produce at least one pose");
            }
        }
        TrajectorySpec::TranslateLine { n_steps, .. } | TrajectorySpec::Rotate { n_steps, .. } => {
            for k in 1..=*n_steps {
                let pose = start.pose().compose(&spec.offset(k)?);
                out.push(start.with_pose(pose));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3};

    fn start() -> Camera {
        let pose = Pose::from_axis_angle(Vector3::new(0.3, 1.0, 0.2), 0.8)
            .unwrap()
            .compose(&Pose::from_translation(Vector3::new(0.5, -0.25, 2.0)));
        Camera::new(100.0, 100.0, 256.0, 256.0, 512, 512, pose).unwrap()
    }

    #[test]
    fn backward_steps_displace_along_minus_z() {
        let s = start();
        let poses = generate(&TrajectorySpec::backward(DEFAULT_BACKWARD_STEP, 3), &s).unwrap();
        let disp = poses[2].center() - s.center();
        assert!((disp.norm() - 0.0015).abs() < 1e-12);
        let back = s.pose().rotation() * Vector3::new(0.0, 0.0, -1.0);
        assert!((disp - back * 0.0015).norm() < 1e-12);
    }

    #[test]
    fn rotation_segment_composes_to_total_angle() {
        let spec = TrajectorySpec::Rotate {
            axis: [0.0, 1.0, 0.0],
            angle: DEFAULT_ROTATION_ANGLE,
            n_steps: 9,
            granularity: AngleGranularity::PerSegment,
        };
        let step = spec.step_transform().unwrap();
        assert!((Rotation3::from_matrix_unchecked(*step.rotation()).angle() - 0.05).abs() < 1e-12);
        let mut acc = Pose::identity();
        for _ in 0..9 {
            acc = acc.compose(&step);
        }
        assert!((Rotation3::from_matrix_unchecked(*acc.rotation()).angle() - 0.45).abs() < 1e-12);
        let s = start();
        let poses = generate(&spec, &s).unwrap();
        let rel = s.pose().inverse().compose(poses[8].pose());
        assert!((Rotation3::from_matrix_unchecked(*rel.rotation()).angle() - 0.45).abs() < 1e-12);
        assert!((poses[8].center() - s.center()).norm() < 1e-12);
    }

    #[test]
    fn per_step_granularity() {
        let spec = TrajectorySpec::Rotate {
            axis: [0.0, 1.0, 0.0],
            angle: 0.45,
            n_steps: 2,
            granularity: AngleGranularity::PerStep,
        };
        let s = start();
        let poses = generate(&spec, &s).unwrap();
        let rel = s.pose().inverse().compose(poses[1].pose());
        assert!((Rotation3::from_matrix_unchecked(*rel.rotation()).angle() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_step_is_identity() {
        let s = start();
        let poses = generate(&TrajectorySpec::backward(0.0, 1), &s).unwrap();
        assert_eq!(poses, vec![s]);
    }

    #[test]
    fn zero_direction_rejected() {
        let spec = TrajectorySpec::TranslateLine {
            direction: [0.0; 3],
            step: 1.0,
            n_steps: 2,
        };
        assert!(generate(&spec, &start()).is_err());
    }

    #[test]
    fn composite_concatenates() {
        let spec = TrajectorySpec::Composite {
            segments: vec![
                TrajectorySpec::backward(0.1, 2),
                TrajectorySpec::Rotate {
                    axis: [0.0, 1.0, 0.0],
                    angle: 0.3,
                    n_steps: 3,
                    granularity: AngleGranularity::PerSegment,
                },
            ],
        };
        let s = start();
        let poses = generate(&spec, &s).unwrap();
        assert_eq!(poses.len(), 5);
        // rotation segment keeps the center of its start pose
        for p in &poses[2..] {
            assert!((p.center() - poses[1].center()).norm() < 1e-12);
        }
        assert_eq!(poses[0].fx(), s.fx());
    }

    #[test]
    fn group_action_consistency_and_orthonormality() {
        let spec = TrajectorySpec::Rotate {
            axis: [0.2, -1.0, 0.4],
            angle: 2.5,
            n_steps: 50,
            granularity: AngleGranularity::PerSegment,
        };
        let step = spec.step_transform().unwrap();
        let s = start();
        let poses = generate(&spec, &s).unwrap();
        let mut prev = *s.pose();
        for p in &poses {
            let expect = prev.compose(&step);
            assert!((expect.rotation() - p.pose().rotation()).abs().max() < 1e-12);
            assert!((expect.translation() - p.pose().translation()).abs().max() < 1e-12);
            let r = p.pose().rotation();
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
            prev = *p.pose();
        }
    }

    #[test]
    fn toml_round_trip() {
        let spec = TrajectorySpec::Composite {
            segments: vec![TrajectorySpec::backward(0.0005, 4)],
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<TrajectorySpec>(&json).unwrap(), spec);
    }
}

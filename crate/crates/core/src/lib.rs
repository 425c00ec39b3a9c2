//! Geometric core of a perpetual dynamic-scene outpainting engine.
//!
//! A fixed-pose RGB-D video is lifted into a layered 4D point cloud
//! ([`init`]), rendered at novel poses ([`raster`]), conditioned with ray
//! depth and ray-to-cloud distance maps ([`raygeom`]), handed to an
//! outpainter ([`bridge`]) and merged back into the scene ([`update`]).

pub mod bridge;
pub mod camera;
pub mod cloud;
pub mod error;
pub mod formats;
pub mod grid;
pub mod init;
pub mod raster;
pub mod raygeom;
pub mod trajectory;
pub mod update;

pub use bridge::{BridgeError, OutpaintResult, Outpainter, RayConditioningBundle, StubFiller, StubMode};
pub use camera::{Camera, CameraRecord, Pose, Projection};
pub use cloud::{BackgroundLayer, DynamicPointCloud, FrameCloud, PointSet, PoseIndex, Position, SceneState};
pub use error::{FormatError, GeometryError};
pub use grid::{DepthMap, Grid, Mask, Rgb, RgbImage};
pub use init::{FrameBundle, InitInput};
pub use raster::RasterOutput;
pub use raygeom::{dist_r2p, IndexParams, PointIndex, RayDistanceMap};
pub use trajectory::TrajectorySpec;

/// Linear algebra types used in the public API.
pub use nalgebra;

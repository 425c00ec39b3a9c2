//! Seeded inputs shared by the benchmarks.

use outpaint4d_core::{BackgroundLayer, Camera, DynamicPointCloud, FrameCloud, Grid, PointSet, Pose, Position};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn camera(size: usize) -> Camera {
    let s = size as f64;
    Camera::new(s, s, s / 2.0, s / 2.0, size, size, Pose::identity()).expect("valid camera")
}

/// Uniform points in a box in front of the identity camera.
pub fn random_points(n: usize, seed: u64) -> Vec<Position> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(1.0..5.0)])
        .collect()
}

pub fn frame_cloud(n: usize, seed: u64) -> FrameCloud {
    let positions = random_points(n, seed);
    FrameCloud {
        colors: positions.iter().map(|p| [(p[0] * 100.0) as u8, (p[1] * 100.0) as u8, 7]).collect(),
        color_valid: vec![true; n],
        positions,
    }
}

/// A background plane at depth 2 covering the whole view, `frames` long.
pub fn plane_scene(size: usize, frames: usize) -> DynamicPointCloud {
    let cam = camera(size);
    let mut bg = BackgroundLayer::new(frames);
    let colors = vec![[90u8, 120, 150]; frames];
    let valid = vec![true; frames];
    for y in 0..size {
        for x in 0..size {
            let p = cam.backproject(x as f64, y as f64, 2.0).expect("inside image");
            bg.push([p.x as f32, p.y as f32, p.z as f32], 0, &colors, &valid);
        }
    }
    DynamicPointCloud::new(vec![PointSet::new(); frames], bg).expect("matching frame count")
}

pub fn full_mask(size: usize) -> Grid<bool> {
    Grid::filled(size, size, true)
}

pub fn offset(x: f64, y: f64, z: f64) -> outpaint4d_core::nalgebra::Vector3<f64> {
    outpaint4d_core::nalgebra::Vector3::new(x, y, z)
}

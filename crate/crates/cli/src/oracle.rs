//! Self-check suite: accelerated kernels against plain loops, and format
//! round trips, on seeded random inputs.

use outpaint4d_core::nalgebra::Vector3;
use outpaint4d_core::bridge::{read_bundle, write_bundle};
use outpaint4d_core::cloud::to_vector;
use outpaint4d_core::formats::ply::{self, BackgroundBlock, FramePly};
use outpaint4d_core::formats::{pfm, png};
use outpaint4d_core::init::background_depth;
use outpaint4d_core::raster::rasterize;
use outpaint4d_core::raygeom::ray_distance_map;
use outpaint4d_core::trajectory::{generate, DEFAULT_BACKWARD_STEP, DEFAULT_ROTATION_ANGLE};
use outpaint4d_core::{
    Camera, DepthMap, FrameCloud, Grid, IndexParams, Mask, PointIndex, PointSet, Pose, Position, TrajectorySpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::OracleConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().map(|c| c.failures.len()).sum()
    }
}

fn case_seed(seed: u64, check: u64, case: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (check << 48) ^ case as u64
}

fn random_camera(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Camera {
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0));
    let rot = Pose::from_axis_angle(axis, rng.gen_range(-0.3..0.3)).expect("non-zero axis");
    let t = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
    let pose = Pose::from_translation(t).compose(&rot);
    let f = rng.gen_range(0.6..1.5) * w as f64;
    Camera::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h, pose).expect("valid camera")
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Position> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-2.0f32..2.0),
                rng.gen_range(-2.0f32..2.0),
                rng.gen_range(-1.0f32..6.0),
            ]
        })
        .collect()
}

fn brute_ray_distance(points: &[Position], camera: &Camera, x: usize, y: usize) -> f64 {
    let c = camera.center();
    let r = camera.ray_direction(x as f64, y as f64);
    let mut best = f64::INFINITY;
    for p in points {
        let v = Vector3::new(p[0] as f64 - c.x, p[1] as f64 - c.y, p[2] as f64 - c.z);
        let along = r.dot(&v);
        let d2 = (v.dot(&v) - along * along).max(0.0);
        best = best.min(d2);
    }
    best.sqrt()
}

fn check_ray_distance(seed: u64, cfg: &OracleConfig) -> CheckResult {
    let mut failures = Vec::new();
    for s in 0..cfg.scenes {
        let cs = case_seed(seed, 1, s);
        let mut rng = ChaCha8Rng::seed_from_u64(cs);
        let n = if cfg.min_points == cfg.max_points {
            cfg.min_points
        } else {
            let (lo, hi) = ((cfg.min_points as f64).ln(), (cfg.max_points as f64).ln());
            rng.gen_range(lo..=hi).exp().round() as usize
        };
        let points = random_points(&mut rng, n);
        let cam = random_camera(&mut rng, cfg.width, cfg.height);
        let leaf = rng.gen_range(1..64);
        let unseen = Grid::filled(cfg.width, cfg.height, true);
        let index = PointIndex::build(&points, IndexParams { leaf_size: leaf }).expect("non-empty cloud");
        let map = ray_distance_map(&index, &cam, &unseen).expect("sized mask");
        'pixels: for y in 0..cfg.height {
            for x in 0..cfg.width {
                let want = brute_ray_distance(&points, &cam, x, y);
                let got = *map.values.get(x, y);
                if !((got - want).abs() <= 1e-9 * want.max(1e-12)) {
                    failures.push(format!(
                        "seed {cs}: {n} points, leaf {leaf}, pixel ({x}, {y}): indexed {got:e}, brute force {want:e}"
                    ));
                    break 'pixels;
                }
            }
        }
    }
    CheckResult {
        name: "ray distance map vs brute force",
        cases: cfg.scenes,
        failures,
    }
}

fn check_zbuffer(seed: u64, cfg: &OracleConfig) -> CheckResult {
    let cases = cfg.scenes;
    let mut failures = Vec::new();
    for s in 0..cases {
        let cs = case_seed(seed, 2, s);
        let mut rng = ChaCha8Rng::seed_from_u64(cs);
        let n = rng.gen_range(1..=cfg.min_points.min(10_000));
        let positions = random_points(&mut rng, n);
        // Duplicate some depths to exercise ties.
        let mut positions = positions;
        for i in 1..positions.len() {
            if rng.gen_bool(0.05) {
                positions[i] = positions[i - 1];
            }
        }
        let cloud = FrameCloud {
            colors: (0..n).map(|_| rng.gen()).collect(),
            color_valid: (0..n).map(|_| rng.gen_bool(0.9)).collect(),
            positions,
        };
        let cam = random_camera(&mut rng, cfg.width, cfg.height);
        let radius = rng.gen_range(0..3usize);
        let out = rasterize(&cloud, &cam, radius, 0);
        let (w, h) = (cfg.width, cfg.height);
        let mut cands: Vec<Vec<(f64, usize)>> = vec![Vec::new(); w * h];
        for (i, p) in cloud.positions.iter().enumerate() {
            let Some(pr) = cam.project(&to_vector(p)) else { continue };
            let Some((px, py)) = cam.pixel_of(pr.x, pr.y) else { continue };
            for y in py.saturating_sub(radius)..=(py + radius).min(h - 1) {
                for x in px.saturating_sub(radius)..=(px + radius).min(w - 1) {
                    cands[y * w + x].push((pr.depth, i));
                }
            }
        }
        for (pix, c) in cands.iter().enumerate() {
            let expect = if c.is_empty() {
                None
            } else {
                let zmin = c.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
                c.iter().filter(|e| e.0 <= zmin + 1e-12).map(|e| e.1).min()
            };
            let observed = out.observed_mask.as_slice()[pix];
            let ok = match expect {
                None => !observed && out.ray_depth.as_slice()[pix] == 0.0,
                Some(i) => {
                    let color = if cloud.color_valid[i] { cloud.colors[i] } else { [255, 0, 255] };
                    let depth = cam.project(&to_vector(&cloud.positions[i])).unwrap().depth;
                    observed
                        && out.partial_rgb.as_slice()[pix] == color
                        && out.ray_depth.as_slice()[pix] == depth
                        && out.invalid_color_mask.as_slice()[pix] == !cloud.color_valid[i]
                }
            };
            if !ok {
                failures.push(format!("seed {cs}: {n} points, radius {radius}, pixel {pix} disagrees"));
                break;
            }
        }
    }
    CheckResult {
        name: "z-buffer vs per-point loop",
        cases,
        failures,
    }
}

fn check_background_depth(seed: u64, cfg: &OracleConfig) -> CheckResult {
    let cases = cfg.scenes.min(10);
    let mut failures = Vec::new();
    for s in 0..cases {
        let cs = case_seed(seed, 3, s);
        let mut rng = ChaCha8Rng::seed_from_u64(cs);
        let (w, h, n) = (cfg.width, cfg.height, rng.gen_range(1..17));
        let depths: Vec<DepthMap> = (0..n).map(|_| Grid::from_fn(w, h, |_, _| rng.gen_range(0.1..10.0))).collect();
        let p_fg = rng.gen_range(0.0..0.9);
        let masks: Vec<Mask> = (0..n)
            .map(|_| Grid::from_fn(w, h, |x, y| (x + y) % 7 == 0 || rng.gen_bool(p_fg)))
            .collect();
        let d_refs: Vec<&DepthMap> = depths.iter().collect();
        let m_refs: Vec<&Mask> = masks.iter().collect();
        let (got, flags) = background_depth(&d_refs, &m_refs).expect("matching sizes");
        let mut bad = None;
        for i in 0..w * h {
            let mut num = 0.0;
            let mut den = 0.0;
            for t in 0..n {
                let keep = if masks[t].as_slice()[i] { 0.0 } else { 1.0 };
                num += depths[t].as_slice()[i] * keep;
                den += keep;
            }
            let (want, flag) = if den > 0.0 {
                (num / den, false)
            } else {
                let mut sum = 0.0;
                for d in &depths {
                    sum += d.as_slice()[i];
                }
                (sum / n as f64, true)
            };
            if got.as_slice()[i] != want || flags.as_slice()[i] != flag {
                bad = Some(i);
                break;
            }
        }
        if let Some(i) = bad {
            failures.push(format!("seed {cs}: {n} frames, pixel {i} disagrees with the loop"));
        }
    }
    CheckResult {
        name: "background depth vs per-pixel loop",
        cases,
        failures,
    }
}

fn check_camera_round_trip(seed: u64, cfg: &OracleConfig) -> CheckResult {
    let cs = case_seed(seed, 4, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(cs);
    let mut failures = Vec::new();
    for k in 0..cfg.round_trip_samples {
        let cam = random_camera(&mut rng, cfg.width, cfg.height);
        let x = rng.gen_range(-0.5..cfg.width as f64 - 0.5);
        let y = rng.gen_range(-0.5..cfg.height as f64 - 0.5);
        let d = rng.gen_range(0.01..100.0);
        let p = cam.backproject(x, y, d).expect("valid pixel");
        let pr = cam.project(&p).expect("in front");
        let err = (pr.x - x).abs().max((pr.y - y).abs()).max((pr.depth - d).abs() / d);
        if !(err < 1e-9) {
            failures.push(format!("seed {cs}, sample {k}: round-trip error {err:e}"));
            break;
        }
    }
    CheckResult {
        name: "backproject/project round trip",
        cases: cfg.round_trip_samples,
        failures,
    }
}

fn check_formats(seed: u64, cfg: &OracleConfig) -> CheckResult {
    let cases = cfg.scenes.min(10);
    let mut failures = Vec::new();
    let dir = std::env::temp_dir().join(format!("outpaint4d-oracle-{}", std::process::id()));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return CheckResult {
            name: "format round trips",
            cases: 0,
            failures: vec![format!("cannot create {}: {e}", dir.display())],
        };
    }
    for s in 0..cases {
        let cs = case_seed(seed, 5, s);
        let mut rng = ChaCha8Rng::seed_from_u64(cs);
        let (w, h) = (rng.gen_range(1..cfg.width + 1), rng.gen_range(1..cfg.height + 1));
        let map: Grid<f32> = Grid::from_fn(w, h, |_, _| f32::from_bits(rng.gen::<u32>() & 0x7F7F_FFFF));
        match pfm::decode(&pfm::encode(&map), &dir) {
            Ok(back) if back.as_slice().iter().zip(map.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()) => {}
            _ => failures.push(format!("seed {cs}: PFM round trip changed values")),
        }
        let img = Grid::from_fn(w, h, |_, _| rng.gen::<[u8; 3]>());
        let mask = Grid::from_fn(w, h, |_, _| rng.gen_bool(0.5));
        let ip = dir.join("img.png");
        let mp = dir.join("mask.png");
        let ok = png::write_rgb(&ip, &img).is_ok()
            && png::write_mask(&mp, &mask).is_ok()
            && png::read_rgb(&ip).ok() == Some(img)
            && png::read_mask(&mp).ok() == Some(mask);
        if !ok {
            failures.push(format!("seed {cs}: PNG round trip changed pixels"));
        }
        let n_fg = rng.gen_range(0..500);
        let n_bg = rng.gen_range(0..500);
        let mut fg = PointSet::new();
        for _ in 0..n_fg {
            fg.push(rng.gen(), rng.gen(), rng.gen_range(0..100));
        }
        let frame = FramePly {
            timestamp: rng.gen_range(0..1000),
            foreground: fg,
            background: BackgroundBlock {
                positions: (0..n_bg).map(|_| rng.gen()).collect(),
                colors: (0..n_bg).map(|_| rng.gen()).collect(),
                valid: (0..n_bg).map(|_| rng.gen()).collect(),
                source_pose: (0..n_bg).map(|_| rng.gen_range(0..100)).collect(),
            },
        };
        if ply::decode(&ply::encode(&frame), &dir).ok() != Some(frame) {
            failures.push(format!("seed {cs}: PLY round trip changed vertices"));
        }
        let cam = random_camera(&mut rng, w, h);
        let json = serde_json::to_string(&cam).expect("camera serializes");
        if serde_json::from_str::<Camera>(&json).ok() != Some(cam) {
            failures.push(format!("seed {cs}: camera manifest round trip changed values"));
        }
        let cloud = outpaint4d_core::DynamicPointCloud::new(
            vec![PointSet::new()],
            {
                let mut bg = outpaint4d_core::BackgroundLayer::new(1);
                for p in random_points(&mut rng, 50) {
                    bg.push(p, 0, &[rng.gen()], &[true]);
                }
                bg
            },
        )
        .expect("one frame");
        let bundle = outpaint4d_core::bridge::build_bundle(&cloud, &cam, 1, IndexParams::default(), "oracle")
            .expect("non-empty cloud");
        let bdir = dir.join("bundle");
        let ok = write_bundle(&bdir, &bundle, "oracle").is_ok()
            && read_bundle(&bdir).is_ok_and(|(_, b)| {
                b.frames[0].partial_rgb == bundle.frames[0].partial_rgb
                    && b.frames[0].observed_mask == bundle.frames[0].observed_mask
                    && b.frames[0].ray_distance.computed_mask == bundle.frames[0].ray_distance.computed_mask
            });
        if !ok {
            failures.push(format!("seed {cs}: bundle round trip changed masks or colors"));
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    CheckResult {
        name: "format round trips",
        cases,
        failures,
    }
}

fn check_trajectory() -> CheckResult {
    let mut failures = Vec::new();
    let start = Camera::new(500.0, 500.0, 256.0, 256.0, 512, 512, Pose::identity()).expect("valid camera");
    let poses = generate(&TrajectorySpec::backward(DEFAULT_BACKWARD_STEP, 8), &start).expect("valid spec");
    for (i, p) in poses.iter().enumerate() {
        let k = (i + 1) as f64;
        let d = (p.center() - start.center()).norm();
        if (d - DEFAULT_BACKWARD_STEP * k).abs() > 1e-12 || p.center().z >= 0.0 {
            failures.push(format!("backward pose {}: displacement {d:e}", i + 1));
        }
    }
    for n in 1..=12 {
        let spec = TrajectorySpec::Rotate {
            axis: [0.0, 1.0, 0.0],
            angle: DEFAULT_ROTATION_ANGLE,
            n_steps: n,
            granularity: Default::default(),
        };
        let poses = generate(&spec, &start).expect("valid spec");
        let r = poses.last().expect("n >= 1").pose().rotation();
        let angle = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        if (angle - DEFAULT_ROTATION_ANGLE).abs() > 1e-12 {
            failures.push(format!("rotation over {n} steps composes to {angle}"));
        }
    }
    CheckResult {
        name: "trajectory arithmetic",
        cases: 20,
        failures,
    }
}

pub fn run_oracles(seed: u64, cfg: &OracleConfig) -> OracleReport {
    let checks = vec![
        check_ray_distance(seed, cfg),
        check_zbuffer(seed, cfg),
        check_background_depth(seed, cfg),
        check_camera_round_trip(seed, cfg),
        check_formats(seed, cfg),
        check_trajectory(),
    ];
    OracleReport { seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let cfg = OracleConfig {
            scenes: 3,
            min_points: 50,
            max_points: 400,
            width: 16,
            height: 12,
            round_trip_samples: 100,
        };
        let report = run_oracles(7, &cfg);
        for c in &report.checks {
            assert!(c.passed(), "{}: {:?}", c.name, c.failures);
        }
    }
}

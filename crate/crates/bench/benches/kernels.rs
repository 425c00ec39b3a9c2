use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use outpaint4d_bench::{camera, frame_cloud, full_mask, plane_scene, random_points};

use outpaint4d_core::bridge::build_bundle;
use outpaint4d_core::raster::rasterize;
use outpaint4d_core::raygeom::{ray_distance_map, ray_distance_map_brute_force};
use outpaint4d_core::{IndexParams, PointIndex};

fn index_build(c: &mut Criterion) {
    let mut g = c.benchmark_group("index_build");
    for n in [10_000usize, 100_000, 1_000_000] {
        let pts = random_points(n, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, pts| {
            b.iter(|| PointIndex::build(black_box(pts), IndexParams::default()).unwrap())
        });
    }
    g.finish();
}

fn ray_distance(c: &mut Criterion) {
    let mut g = c.benchmark_group("ray_distance_map_64x64");
    g.sample_size(10);
    let cam = camera(64);
    let mask = full_mask(64);
    for n in [1_000usize, 100_000] {
        let pts = random_points(n, 2);
        let index = PointIndex::build(&pts, IndexParams::default()).unwrap();
        g.bench_with_input(BenchmarkId::new("indexed", n), &index, |b, index| {
            b.iter(|| ray_distance_map(black_box(index), &cam, &mask).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("brute_force", n), &pts, |b, pts| {
            b.iter(|| ray_distance_map_brute_force(black_box(pts), &cam, &mask).unwrap())
        });
    }
    g.finish();
}

fn raster(c: &mut Criterion) {
    let mut g = c.benchmark_group("rasterize_512");
    let cam = camera(512);
    for radius in [0usize, 1, 2] {
        let cloud = frame_cloud(262_144, 3);
        g.bench_with_input(BenchmarkId::from_parameter(radius), &cloud, |b, cloud| {
            b.iter(|| rasterize(black_box(cloud), &cam, radius, 0))
        });
    }
    g.finish();
}

fn bundle(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_bundle");
    g.sample_size(10);
    let scene = plane_scene(128, 4);
    let moved = camera(128).with_pose(outpaint4d_core::Pose::from_translation(outpaint4d_bench::offset(0.3, 0.0, -0.5)));
    g.bench_function("plane_128x128x4", |b| {
        b.iter(|| build_bundle(black_box(&scene), &moved, 1, IndexParams::default(), "").unwrap())
    });
    g.finish();
}

criterion_group!(benches, index_build, ray_distance, raster, bundle);
criterion_main!(benches);

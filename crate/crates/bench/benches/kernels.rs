use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;
use sweepfuse::fusion::{GridGeometry, KeyframeVolume};
use sweepfuse::metrics::DEFAULT_THRESHOLDS;
use sweepfuse::*;
use sweepfuse_bench::*;

fn cost_volume(c: &mut Criterion) {
    let mut rng = rng(1);
    let planes = make_log_planes(0.25, 5.0, 64).unwrap();
    let key = random_features(&mut rng, 16, 60, 80);
    let refs: Vec<FeatureMap> = (0..4).map(|_| random_features(&mut rng, 16, 60, 80)).collect();
    let ref_pairs: Vec<(&FeatureMap, Camera)> = refs
        .iter()
        .enumerate()
        .map(|(i, f)| (f, feature_camera(0.1 * (i + 1) as f64)))
        .collect();
    let key_cam = feature_camera(0.0);
    c.bench_function("cost_volume_64x60x80_4refs", |b| {
        b.iter(|| build_cost_volume(black_box(&key), &key_cam, &ref_pairs, &planes, SweepOptions::default()).unwrap())
    });
}

fn compensation(c: &mut Criterion) {
    let mut rng = rng(2);
    let cv = random_stack(&mut rng, 64, 7, 60, 80);
    let key = random_features(&mut rng, 16, 60, 80);
    let layout = RccvLayout {
        planes: 64,
        cv_channels: 7,
        ray: true,
        ctx_channels: 16,
        out_channels: 7,
    };
    let weights = CompensationWeights::seeded(layout, 0);
    for mode in [CtxMode::Group, CtxMode::Uni] {
        c.bench_function(&format!("compensate_{mode:?}").to_lowercase(), |b| {
            b.iter(|| compensate(black_box(&cv), &key, &weights, Compensation::RayCtx, mode, None).unwrap())
        });
    }
}

fn fusion(c: &mut Criterion) {
    let mut rng = rng(3);
    let planes = make_log_planes(0.25, 5.0, 64).unwrap();
    let stacks: Vec<PlaneStack> = (0..3).map(|_| random_stack(&mut rng, 64, 7, 60, 80)).collect();
    let inputs: Vec<KeyframeVolume> = stacks
        .iter()
        .enumerate()
        .map(|(i, s)| KeyframeVolume {
            frame_index: i,
            volume: s,
            camera: feature_camera(0.1 * i as f64),
        })
        .collect();
    let geom = GridGeometry::new(Vector3::new(-1.5, -1.2, 0.5), 0.04, [75, 60, 75]).unwrap();
    c.bench_function("fuse_3kf_75x60x75", |b| b.iter(|| fuse(black_box(&inputs), &planes, geom).unwrap()));
}

fn meshing(c: &mut Criterion) {
    let vol = sphere_tsdf(0.5, 0.02);
    c.bench_function("marching_cubes_sphere_101", |b| b.iter(|| marching_cubes(black_box(&vol), 0.0)));
}

fn metrics(c: &mut Criterion) {
    let mut rng = rng(4);
    let pred = sphere_points(&mut rng, 20_000);
    let gt = sphere_points(&mut rng, 20_000);
    c.bench_function("mesh_metrics_20k", |b| {
        b.iter(|| mesh_metrics(black_box(&pred), &gt, &DEFAULT_THRESHOLDS, None).unwrap())
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = cost_volume, compensation, fusion, meshing, metrics
}
criterion_main!(kernels);

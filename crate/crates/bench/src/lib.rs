//! Deterministic fixtures shared by the kernel benchmarks.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sweepfuse::fusion::GridGeometry;
use sweepfuse::*;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 640×480 camera at feature resolution, translated along x.
pub fn feature_camera(tx: f64) -> Camera {
    let k = Intrinsics::new(577.87, 577.87, 319.5, 239.5, 640, 480).unwrap();
    Camera::new(k, Pose::from_translation(Vector3::new(tx, 0.0, 0.0))).downscaled(8)
}

pub fn random_features(rng: &mut ChaCha8Rng, channels: usize, h: usize, w: usize) -> FeatureMap {
    let mut f = FeatureMap::zeros(channels, h, w);
    f.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    f
}

pub fn random_stack(rng: &mut ChaCha8Rng, planes: usize, channels: usize, h: usize, w: usize) -> PlaneStack {
    let mut s = PlaneStack::zeros(planes, channels, h, w);
    s.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    s.valid.iter_mut().for_each(|v| *v = true);
    s
}

/// Sphere of radius `r` sampled as a TSDF on a cube of side `4r`.
pub fn sphere_tsdf(r: f64, voxel: f64) -> TsdfVolume {
    let n = (4.0 * r / voxel).ceil() as usize + 1;
    let geom = GridGeometry::new(Vector3::repeat(-2.0 * r), voxel, [n, n, n]).unwrap();
    let trunc = 3.0 * voxel;
    let mut vol = TsdfVolume::new(geom, trunc).unwrap();
    for i in 0..geom.len() {
        let d = (geom.center_of(i).norm() - r) / trunc;
        vol.set_voxel(i, d.clamp(-1.0, 1.0) as f32, 1.0);
    }
    vol
}

/// Points scattered on the unit sphere.
pub fn sphere_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            v.normalize()
        })
        .collect()
}

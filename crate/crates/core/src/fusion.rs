//! Global voxel grids built by trilinear grid sampling of per-keyframe
//! volumes, plus the feature back-projection baseline.

use std::io::{Read, Write};

use nalgebra::{Point2, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::camera::{Camera, DepthPlanes};
use crate::container::{self, ContainerError};
use crate::costvol::PlaneStack;
use crate::encoder::FeatureMap;

pub const GRID_MAGIC: [u8; 4] = *b"SFVG";

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no keyframes to fuse")]
    EmptyInput,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("keyframe {0}: camera does not match volume size")]
    SizeMismatch(usize),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Axis-aligned voxel lattice. `origin` is the center of voxel (0, 0, 0);
/// linear index is `(x * ny + y) * nz + z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridGeometry {
    #[serde(serialize_with = "ser_vec3")]
    pub origin: Vector3<f64>,
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

fn ser_vec3<S: serde::Serializer>(v: &Vector3<f64>, s: S) -> Result<S::Ok, S::Error> {
    [v.x, v.y, v.z].serialize(s)
}

impl GridGeometry {
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3]) -> Result<Self, FusionError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(FusionError::InvalidGrid(format!("voxel size {voxel_size}")));
        }
        if dims.contains(&0) {
            return Err(FusionError::InvalidGrid(format!("dims {dims:?}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(FusionError::InvalidGrid("non-finite origin".into()));
        }
        Ok(Self {
            origin,
            voxel_size,
            dims,
        })
    }

    /// Smallest grid whose voxel centers cover `[lo, hi]`, padded by `pad`
    /// voxels. The origin is snapped to a multiple of `voxel_size`.
    pub fn from_bounds(
        lo: Vector3<f64>,
        hi: Vector3<f64>,
        voxel_size: f64,
        pad: usize,
    ) -> Result<Self, FusionError> {
        let mut origin = Vector3::zeros();
        let mut dims = [0usize; 3];
        for k in 0..3 {
            let first = (lo[k] / voxel_size).floor() as i64 - pad as i64;
            let last = (hi[k] / voxel_size).ceil() as i64 + pad as i64;
            origin[k] = first as f64 * voxel_size;
            dims[k] = (last - first + 1).max(1) as usize;
        }
        Self::new(origin, voxel_size, dims)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let z = i % self.dims[2];
        let y = (i / self.dims[2]) % self.dims[1];
        let x = i / (self.dims[1] * self.dims[2]);
        [x, y, z]
    }

    /// Linear-index strides along x, y and z.
    pub fn strides(&self) -> (usize, usize, usize) {
        (self.dims[1] * self.dims[2], self.dims[2], 1)
    }

    #[inline]
    pub fn center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        self.origin + Vector3::new(x as f64, y as f64, z as f64) * self.voxel_size
    }

    #[inline]
    pub fn center_of(&self, i: usize) -> Vector3<f64> {
        let [x, y, z] = self.coords(i);
        self.center(x, y, z)
    }

    /// Index of the voxel whose cell contains `p`, if inside the grid.
    pub fn voxel_containing(&self, p: &Vector3<f64>) -> Option<usize> {
        let mut c = [0usize; 3];
        for k in 0..3 {
            let f = ((p[k] - self.origin[k]) / self.voxel_size).round();
            if f < 0.0 || f >= self.dims[k] as f64 {
                return None;
            }
            c[k] = f as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }
}

/// Union of keyframe frusta between `d_min` and `d_max`, padded by `pad` voxels.
pub fn frusta_bounds(
    cameras: &[Camera],
    planes: &DepthPlanes,
    voxel_size: f64,
    pad: usize,
) -> Result<GridGeometry, FusionError> {
    if cameras.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for cam in cameras {
        let (w, h) = ((cam.width() - 1) as f64, (cam.height() - 1) as f64);
        for d in [planes.d_min(), planes.d_max()] {
            for (u, v) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
                let p = cam.unproject(Point2::new(u, v), d);
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
    }
    GridGeometry::from_bounds(lo, hi, voxel_size, pad)
}

/// Fused features: `data` is channel-major (`channels × voxels`).
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub geometry: GridGeometry,
    pub channels: usize,
    pub data: Vec<f32>,
    pub weight: Vec<f32>,
    pub observed: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(geometry: GridGeometry, channels: usize) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            channels,
            data: vec![0.0; channels * n],
            weight: vec![0.0; n],
            observed: vec![false; n],
        }
    }

    pub fn value(&self, channel: usize, voxel: usize) -> f32 {
        self.data[channel * self.geometry.len() + voxel]
    }

    pub fn channel(&self, channel: usize) -> &[f32] {
        let n = self.geometry.len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn voxel_features(&self, voxel: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.value(c, voxel)).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Header: magic, nx, ny, nz, channels (u32), voxel size and origin
    /// (f64); then data, weight and observed (0/1) as f32 arrays.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), FusionError> {
        let g = &self.geometry;
        let mut head = Vec::new();
        head.extend_from_slice(&GRID_MAGIC);
        for d in g.dims {
            head.extend_from_slice(&(d as u32).to_le_bytes());
        }
        head.extend_from_slice(&(self.channels as u32).to_le_bytes());
        head.extend_from_slice(&g.voxel_size.to_le_bytes());
        for k in 0..3 {
            head.extend_from_slice(&g.origin[k].to_le_bytes());
        }
        w.write_all(&head).map_err(ContainerError::from)?;
        container::write_f32s(w, &self.data)?;
        container::write_f32s(w, &self.weight)?;
        let obs: Vec<f32> = self.observed.iter().map(|&o| o as u8 as f32).collect();
        container::write_f32s(w, &obs)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, FusionError> {
        container::expect_magic(r, GRID_MAGIC)?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = container::read_u32(r)? as usize;
        }
        let channels = container::read_u32(r)? as usize;
        let mut f = [0.0f64; 4];
        for v in &mut f {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(ContainerError::from)?;
            *v = f64::from_le_bytes(b);
        }
        let geometry = GridGeometry::new(Vector3::new(f[1], f[2], f[3]), f[0], dims)?;
        let n = geometry.len();
        let data = container::read_f32s(r, channels * n)?;
        let weight = container::read_f32s(r, n)?;
        let observed = container::read_f32s(r, n)?.into_iter().map(|v| v != 0.0).collect();
        Ok(Self {
            geometry,
            channels,
            data,
            weight,
            observed,
        })
    }
}

const SNAP: f64 = 1e-9;

#[inline]
pub(crate) fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// Lower lattice index and fractional weight for coordinate `v` on `[0, n-1]`.
#[inline]
fn lattice(v: f64, n: usize) -> Option<(usize, f64)> {
    if !(v >= 0.0 && v <= (n - 1) as f64) {
        return None;
    }
    if n == 1 {
        return Some((0, 0.0));
    }
    let i = (v.floor() as usize).min(n - 2);
    Some((i, v - i as f64))
}

/// Trilinearly samples a per-keyframe plane volume at a world point.
///
/// `cam` must describe the volume's own pixel grid (e.g. the keyframe camera
/// downscaled to feature resolution). Returns `None` behind the camera,
/// outside the image or the `[d_min, d_max]` range, or when an interpolation
/// corner with non-zero weight is invalid.
pub fn sample_rccv(
    vol: &PlaneStack,
    cam: &Camera,
    planes: &DepthPlanes,
    point: &Vector3<f64>,
) -> Option<Vec<f32>> {
    let mut out = vec![0.0f32; vol.channels];
    sample_into(vol, cam, planes, point, &mut out).then_some(out)
}

fn sample_into(
    vol: &PlaneStack,
    cam: &Camera,
    planes: &DepthPlanes,
    point: &Vector3<f64>,
    out: &mut [f32],
) -> bool {
    let Ok((px, depth)) = cam.project(point) else {
        return false;
    };
    // The lattice check enforces [d_min, d_max] after snapping, so the end
    // planes stay reachable despite rounding.
    let pc = snap(planes.plane_coordinate(depth));
    let Some((i0, fi)) = lattice(pc, vol.planes) else {
        return false;
    };
    let Some((r0, fr)) = lattice(snap(px.y), vol.height) else {
        return false;
    };
    let Some((c0, fc)) = lattice(snap(px.x), vol.width) else {
        return false;
    };
    out.iter_mut().for_each(|o| *o = 0.0);
    let hw = vol.height * vol.width;
    for (di, wi) in [(0usize, 1.0 - fi), (1, fi)] {
        if wi == 0.0 {
            continue;
        }
        for (dr, wr) in [(0usize, 1.0 - fr), (1, fr)] {
            if wr == 0.0 {
                continue;
            }
            for (dc, wc) in [(0usize, 1.0 - fc), (1, fc)] {
                if wc == 0.0 {
                    continue;
                }
                let (i, r, c) = (i0 + di, r0 + dr, c0 + dc);
                if !vol.is_valid(i, r, c) {
                    return false;
                }
                let w = (wi * wr * wc) as f32;
                let base = i * vol.channels * hw + r * vol.width + c;
                for (ch, o) in out.iter_mut().enumerate() {
                    *o += w * vol.data[base + ch * hw];
                }
            }
        }
    }
    true
}

/// One keyframe's contribution to a fused grid.
pub struct KeyframeVolume<'a> {
    pub frame_index: usize,
    pub volume: &'a PlaneStack,
    /// Camera at the volume's resolution.
    pub camera: Camera,
}

/// Averages trilinear samples of every keyframe volume per voxel.
///
/// Keyframes are summed in ascending `frame_index` order so the result is
/// bit-identical for any input order or thread count.
pub fn fuse(
    inputs: &[KeyframeVolume<'_>],
    planes: &DepthPlanes,
    geometry: GridGeometry,
) -> Result<VoxelGrid, FusionError> {
    if inputs.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let channels = inputs[0].volume.channels;
    for kf in inputs {
        if kf.camera.width() != kf.volume.width
            || kf.camera.height() != kf.volume.height
            || kf.volume.channels != channels
        {
            return Err(FusionError::SizeMismatch(kf.frame_index));
        }
    }
    let mut order: Vec<&KeyframeVolume> = inputs.iter().collect();
    order.sort_by_key(|k| k.frame_index);

    accumulate(geometry, channels, |p, scratch, acc| {
        let mut count = 0u32;
        for kf in &order {
            if sample_into(kf.volume, &kf.camera, planes, p, scratch) {
                for (a, s) in acc.iter_mut().zip(scratch.iter()) {
                    *a += *s;
                }
                count += 1;
            }
        }
        count
    })
}

/// Back-projection baseline: every voxel takes the bilinearly sampled 2D
/// keyframe feature at its projection, independent of depth along the ray,
/// averaged over keyframes. Voxels outside `[d_min, d_max]` or the image are
/// skipped so the observed support matches [`fuse`].
pub fn backproject_baseline(
    inputs: &[(usize, &FeatureMap, Camera)],
    planes: &DepthPlanes,
    geometry: GridGeometry,
) -> Result<VoxelGrid, FusionError> {
    if inputs.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let channels = inputs[0].1.channels;
    for (idx, f, cam) in inputs {
        if cam.width() != f.width || cam.height() != f.height || f.channels != channels {
            return Err(FusionError::SizeMismatch(*idx));
        }
    }
    let mut order: Vec<&(usize, &FeatureMap, Camera)> = inputs.iter().collect();
    order.sort_by_key(|k| k.0);
    accumulate(geometry, channels, |p, scratch, acc| {
        let mut count = 0u32;
        for (_, feat, cam) in &order {
            let Ok((px, depth)) = cam.project(p) else {
                continue;
            };
            if depth < planes.d_min() || depth > planes.d_max() {
                continue;
            }
            if feat.sample_bilinear(px, scratch) {
                for (a, s) in acc.iter_mut().zip(scratch.iter()) {
                    *a += *s;
                }
                count += 1;
            }
        }
        count
    })
}

/// Runs `sample(p, scratch, acc) -> count` per voxel in parallel over x
/// slabs and stores the mean.
fn accumulate<F>(geometry: GridGeometry, channels: usize, sample: F) -> Result<VoxelGrid, FusionError>
where
    F: Fn(&Vector3<f64>, &mut [f32], &mut [f32]) -> u32 + Sync,
{
    let [nx, ny, nz] = geometry.dims;
    let slab = ny * nz;
    // Voxel-major per slab, transposed to channel-major afterwards.
    let slabs: Vec<(Vec<f32>, Vec<f32>)> = (0..nx)
        .into_par_iter()
        .map(|x| {
            let mut feats = vec![0.0f32; slab * channels];
            let mut weight = vec![0.0f32; slab];
            let mut scratch = vec![0.0f32; channels];
            for y in 0..ny {
                for z in 0..nz {
                    let local = y * nz + z;
                    let acc = &mut feats[local * channels..(local + 1) * channels];
                    let n = sample(&geometry.center(x, y, z), &mut scratch, acc);
                    if n > 0 {
                        let inv = n as f32;
                        acc.iter_mut().for_each(|a| *a /= inv);
                        weight[local] = n as f32;
                    }
                }
            }
            (feats, weight)
        })
        .collect();

    let mut grid = VoxelGrid::new(geometry, channels);
    let n = geometry.len();
    for (x, (feats, weight)) in slabs.into_iter().enumerate() {
        let base = x * slab;
        for local in 0..slab {
            let w = weight[local];
            grid.weight[base + local] = w;
            grid.observed[base + local] = w > 0.0;
            for c in 0..channels {
                grid.data[c * n + base + local] = feats[local * channels + c];
            }
        }
    }
    Ok(grid)
}

//! Truncated signed distance volumes: depth-map integration, unobserved
//! column handling, and the two deterministic decoders (per-keyframe
//! soft-argmax depth, and a thresholded score from a fused feature grid).

use std::io::{Read, Write};

use nalgebra::Point2;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{Camera, DepthPlanes};
use crate::costvol::PlaneStack;
use crate::fusion::{FusionError, GridGeometry, VoxelGrid};

#[derive(Debug, Error)]
pub enum TsdfError {
    #[error("channel {channel} out of range for {channels} channels")]
    BadChannel { channel: usize, channels: usize },
    #[error("depth map has {got} values, expected {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("depth values must be finite and >= 0")]
    InvalidDepth,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Per-pixel metric depth (camera-frame z); 0 marks a missing value.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
    camera: Camera,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>, camera: Camera) -> Result<Self, TsdfError> {
        if values.len() != width * height {
            return Err(TsdfError::SizeMismatch {
                got: values.len(),
                want: width * height,
            });
        }
        if camera.width() != width || camera.height() != height {
            return Err(TsdfError::SizeMismatch {
                got: camera.width() * camera.height(),
                want: width * height,
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TsdfError::InvalidDepth);
        }
        Ok(Self {
            width,
            height,
            values,
            camera,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.width + c]
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Millimeter values for a 16-bit depth image (saturating).
    pub fn to_millimeters(&self) -> Vec<u16> {
        self.values
            .iter()
            .map(|&v| (v as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect()
    }

    pub fn from_millimeters(width: usize, height: usize, mm: &[u16], camera: Camera) -> Result<Self, TsdfError> {
        Self::new(width, height, mm.iter().map(|&v| v as f32 / 1000.0).collect(), camera)
    }
}

/// Single-channel grid of TSDF values in units of the truncation distance.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    grid: VoxelGrid,
    trunc: f64,
}

impl TsdfVolume {
    /// All voxels start unobserved at +1.
    pub fn new(geometry: GridGeometry, trunc: f64) -> Result<Self, TsdfError> {
        if !(trunc > 0.0) {
            return Err(TsdfError::InvalidParam(format!("trunc must be > 0, got {trunc}")));
        }
        let mut grid = VoxelGrid::new(geometry, 1);
        grid.data.iter_mut().for_each(|v| *v = 1.0);
        Ok(Self { grid, trunc })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.grid.geometry
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn trunc(&self) -> f64 {
        self.trunc
    }

    pub fn values(&self) -> &[f32] {
        &self.grid.data
    }

    pub fn weights(&self) -> &[f32] {
        &self.grid.weight
    }

    pub fn observed(&self) -> &[bool] {
        &self.grid.observed
    }

    /// Sets one voxel; the value is clamped to `[−1, 1]`.
    pub fn set_voxel(&mut self, i: usize, value: f32, weight: f32) {
        self.grid.data[i] = value.clamp(-1.0, 1.0);
        self.grid.weight[i] = weight.max(0.0);
        self.grid.observed[i] = weight > 0.0;
    }

    pub fn set_unobserved(&mut self, i: usize) {
        self.grid.data[i] = 1.0;
        self.grid.weight[i] = 0.0;
        self.grid.observed[i] = false;
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), TsdfError> {
        Ok(self.grid.write_to(w)?)
    }

    pub fn read_from<R: Read>(r: &mut R, trunc: f64) -> Result<Self, TsdfError> {
        let grid = VoxelGrid::read_from(r)?;
        if grid.channels != 1 {
            return Err(TsdfError::BadChannel {
                channel: 0,
                channels: grid.channels,
            });
        }
        Ok(Self { grid, trunc })
    }
}

/// Fuses one depth map with a constant-weight running mean.
///
/// Each voxel center is projected to its nearest pixel; voxels more than
/// `trunc` behind the measured surface are left untouched.
pub fn integrate_depth(vol: &mut TsdfVolume, depth: &DepthMap) {
    let geom = vol.grid.geometry;
    let [_, ny, nz] = geom.dims;
    let slab = ny * nz;
    let trunc = vol.trunc;
    let cam = depth.camera;
    let grid = &mut vol.grid;
    grid.data
        .par_chunks_mut(slab)
        .zip(grid.weight.par_chunks_mut(slab))
        .zip(grid.observed.par_chunks_mut(slab))
        .enumerate()
        .for_each(|(x, ((vals, wts), obs))| {
            for y in 0..ny {
                for z in 0..nz {
                    let p = geom.center(x, y, z);
                    let Ok((px, zc)) = cam.project(&p) else {
                        continue;
                    };
                    let (u, v) = (px.x.round(), px.y.round());
                    if u < 0.0 || v < 0.0 || u >= depth.width as f64 || v >= depth.height as f64 {
                        continue;
                    }
                    let d = depth.get(v as usize, u as usize) as f64;
                    if d <= 0.0 {
                        continue;
                    }
                    let sdf = d - zc;
                    if sdf < -trunc {
                        continue;
                    }
                    let t = (sdf / trunc).clamp(-1.0, 1.0);
                    let k = y * nz + z;
                    let w = wts[k] as f64;
                    vals[k] = ((vals[k] as f64 * w + t) / (w + 1.0)) as f32;
                    wts[k] = (w + 1.0) as f32;
                    obs[k] = true;
                }
            }
        });
}

/// Resets every column along `axis` (0 = x, 1 = y, 2 = z) whose total
/// weight is zero to +1 and unobserved.
pub fn mark_unobserved_columns(vol: &mut TsdfVolume, axis: usize) -> Result<usize, TsdfError> {
    if axis > 2 {
        return Err(TsdfError::InvalidParam(format!("axis {axis} not in 0..3")));
    }
    let geom = vol.grid.geometry;
    let dims = geom.dims;
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let at = |u: usize, v: usize, s: usize| {
        let mut ix = [0usize; 3];
        ix[a] = u;
        ix[b] = v;
        ix[axis] = s;
        geom.index(ix[0], ix[1], ix[2])
    };
    let mut marked = 0;
    for u in 0..dims[a] {
        for v in 0..dims[b] {
            let total: f32 = (0..dims[axis]).map(|s| vol.grid.weight[at(u, v, s)]).sum();
            if total == 0.0 {
                for s in 0..dims[axis] {
                    vol.set_unobserved(at(u, v, s));
                }
                marked += 1;
            }
        }
    }
    Ok(marked)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftArgmax {
    pub channel: usize,
    pub tau: f64,
    /// Rays whose best confidence falls below this are left at 0.
    pub min_peak: Option<f32>,
}

/// Expected log depth under a softmax of one channel along each ray.
///
/// Only valid planes take part; rays with no valid plane decode to 0.
/// `cam` must match the volume's pixel grid.
pub fn decode_depth_softargmax(
    vol: &PlaneStack,
    planes: &DepthPlanes,
    cam: &Camera,
    params: SoftArgmax,
) -> Result<DepthMap, TsdfError> {
    if params.channel >= vol.channels {
        return Err(TsdfError::BadChannel {
            channel: params.channel,
            channels: vol.channels,
        });
    }
    if !(params.tau > 0.0) {
        return Err(TsdfError::InvalidParam(format!("tau must be > 0, got {}", params.tau)));
    }
    if planes.count() != vol.planes {
        return Err(TsdfError::SizeMismatch {
            got: planes.count(),
            want: vol.planes,
        });
    }
    let (h, w) = (vol.height, vol.width);
    let logs: Vec<f64> = planes.values().iter().map(|d| d.ln()).collect();
    let values: Vec<f32> = (0..h * w)
        .into_par_iter()
        .map(|p| {
            let (r, c) = (p / w, p % w);
            let mut best = f64::NEG_INFINITY;
            for i in 0..vol.planes {
                if vol.is_valid(i, r, c) {
                    best = best.max(vol.get(i, params.channel, r, c) as f64);
                }
            }
            if best == f64::NEG_INFINITY {
                return 0.0;
            }
            if let Some(floor) = params.min_peak {
                if best < floor as f64 {
                    return 0.0;
                }
            }
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for (i, log) in logs.iter().enumerate() {
                if vol.is_valid(i, r, c) {
                    let e = ((vol.get(i, params.channel, r, c) as f64 - best) / params.tau).exp();
                    num += e * log;
                    den += e;
                }
            }
            (num / den).exp() as f32
        })
        .collect();
    DepthMap::new(w, h, values, *cam)
}

/// Pseudo-TSDF `clamp((iso − score) / scale, −1, 1)` on observed voxels,
/// +1 elsewhere. Weights carry over from the grid.
pub fn decode_volume(
    grid: &VoxelGrid,
    score_channel: usize,
    iso: f32,
    scale: f32,
    trunc: f64,
) -> Result<TsdfVolume, TsdfError> {
    if score_channel >= grid.channels {
        return Err(TsdfError::BadChannel {
            channel: score_channel,
            channels: grid.channels,
        });
    }
    if !(scale > 0.0) {
        return Err(TsdfError::InvalidParam(format!("scale must be > 0, got {scale}")));
    }
    let mut vol = TsdfVolume::new(grid.geometry, trunc)?;
    for (i, score) in grid.channel(score_channel).iter().enumerate() {
        if grid.observed[i] {
            vol.set_voxel(i, (iso - score) / scale, grid.weight[i]);
        }
    }
    Ok(vol)
}

/// Nearest-pixel depth lookup helper used by evaluation code.
pub fn depth_at(depth: &DepthMap, p: Point2<f64>) -> Option<f32> {
    let (u, v) = (p.x.round(), p.y.round());
    if u < 0.0 || v < 0.0 || u >= depth.width as f64 || v >= depth.height as f64 {
        return None;
    }
    let d = depth.get(v as usize, u as usize);
    (d > 0.0).then_some(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{make_log_planes, Intrinsics, Pose};
    use nalgebra::Vector3;

    fn plane_depth(z: f32) -> DepthMap {
        let k = Intrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap();
        let cam = Camera::new(k, Pose::identity());
        DepthMap::new(64, 48, vec![z; 64 * 48], cam).unwrap()
    }

    fn grid() -> GridGeometry {
        GridGeometry::new(Vector3::new(-0.2, -0.2, 1.6), 0.04, [11, 11, 21]).unwrap()
    }

    #[test]
    fn plane_zero_crossing_between_straddling_voxels() {
        let mut vol = TsdfVolume::new(grid(), 0.12).unwrap();
        integrate_depth(&mut vol, &plane_depth(2.0));
        let g = *vol.geometry();
        for z in 0..g.dims[2] {
            let i = g.index(5, 5, z);
            let zc = g.center_of(i).z;
            let sdf = 2.0 - zc;
            if sdf < -0.12 {
                assert_eq!(vol.weights()[i], 0.0, "z = {zc}");
            } else {
                let want = (sdf / 0.12).clamp(-1.0, 1.0);
                assert!((vol.values()[i] as f64 - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn integrating_twice_doubles_weight() {
        let mut a = TsdfVolume::new(grid(), 0.12).unwrap();
        integrate_depth(&mut a, &plane_depth(2.0));
        let once = a.clone();
        integrate_depth(&mut a, &plane_depth(2.0));
        assert_eq!(a.values(), once.values());
        for (w2, w1) in a.weights().iter().zip(once.weights()) {
            assert_eq!(*w2, 2.0 * w1);
        }
    }

    #[test]
    fn column_marking() {
        let mut vol = TsdfVolume::new(GridGeometry::new(Vector3::zeros(), 0.1, [2, 2, 3]).unwrap(), 0.3).unwrap();
        let g = *vol.geometry();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..3 {
                    vol.set_voxel(g.index(x, y, z), -0.5, 1.0);
                }
            }
        }
        assert_eq!(mark_unobserved_columns(&mut vol, 2).unwrap(), 0);
        for z in 0..3 {
            vol.set_voxel(g.index(1, 0, z), -0.5, 0.0);
        }
        vol.set_voxel(g.index(0, 1, 0), 0.2, 0.0);
        vol.set_voxel(g.index(0, 1, 1), 0.2, 0.0);
        assert_eq!(mark_unobserved_columns(&mut vol, 2).unwrap(), 1);
        for z in 0..3 {
            assert_eq!(vol.values()[g.index(1, 0, z)], 1.0);
            assert!(!vol.observed()[g.index(1, 0, z)]);
        }
        assert_eq!(vol.values()[g.index(0, 1, 0)], 0.2);
        let before = vol.clone();
        mark_unobserved_columns(&mut vol, 2).unwrap();
        assert_eq!(vol, before);
    }

    fn ray_stack(planes: usize, f: impl Fn(usize) -> f32) -> PlaneStack {
        let mut s = PlaneStack::zeros(planes, 1, 1, 1);
        for i in 0..planes {
            s.set(i, 0, 0, 0, f(i));
            s.set_valid(i, 0, 0, true);
        }
        s
    }

    fn one_px() -> Camera {
        Camera::new(Intrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap(), Pose::identity())
    }

    #[test]
    fn softargmax_one_hot_and_uniform() {
        let planes = make_log_planes(0.25, 5.0, 64).unwrap();
        let p = SoftArgmax { channel: 0, tau: 0.05, min_peak: None };
        let hot = ray_stack(64, |i| if i == 20 { 1.0 } else { 0.0 });
        let d = decode_depth_softargmax(&hot, &planes, &one_px(), p).unwrap();
        assert!((d.get(0, 0) as f64 / planes.depth(20) - 1.0).abs() < 1e-6);
        let flat = ray_stack(64, |_| 0.3);
        let d = decode_depth_softargmax(&flat, &planes, &one_px(), p).unwrap();
        assert!((d.get(0, 0) as f64 - (0.25f64 * 5.0).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn softargmax_low_tau_is_argmax() {
        let planes = make_log_planes(0.25, 5.0, 64).unwrap();
        let s = ray_stack(64, |i| ((i as f32) * 0.9).sin() * 0.5 + if i == 41 { 1.2 } else { 0.0 });
        let best = (0..64).max_by(|&a, &b| s.get(a, 0, 0, 0).total_cmp(&s.get(b, 0, 0, 0))).unwrap();
        let p = SoftArgmax { channel: 0, tau: 1e-3, min_peak: None };
        let d = decode_depth_softargmax(&s, &planes, &one_px(), p).unwrap();
        assert!((d.get(0, 0) as f64 / planes.depth(best) - 1.0).abs() < 1e-6);
        let mut masked = s.clone();
        masked.valid.iter_mut().for_each(|v| *v = false);
        assert_eq!(decode_depth_softargmax(&masked, &planes, &one_px(), p).unwrap().get(0, 0), 0.0);
        assert!(decode_depth_softargmax(&s, &planes, &one_px(), SoftArgmax { channel: 1, ..p }).is_err());
    }

    #[test]
    fn volume_decoder() {
        let g = GridGeometry::new(Vector3::zeros(), 0.1, [5, 1, 1]).unwrap();
        let mut grid = VoxelGrid::new(g, 2);
        for x in 0..4 {
            grid.data[5 + x] = x as f32 * 0.5 - 0.75;
            grid.weight[x] = 1.0;
            grid.observed[x] = true;
        }
        let vol = decode_volume(&grid, 1, 0.0, 1.0, 0.3).unwrap();
        assert_eq!(vol.values()[4], 1.0);
        assert!(vol.values()[1] > 0.0 && vol.values()[2] < 0.0);
        let mut flat = grid.clone();
        flat.data[5..9].iter_mut().for_each(|v| *v = 0.25);
        let vol = decode_volume(&flat, 1, 0.25, 1.0, 0.3).unwrap();
        assert!(vol.values()[..4].iter().all(|&v| v == 0.0));
        assert!(decode_volume(&grid, 2, 0.0, 1.0, 0.3).is_err());
    }
}

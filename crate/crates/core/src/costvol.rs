//! Plane-sweep cost volumes: warp reference features onto keyframe depth
//! planes and score them against the keyframe by dot product.

use std::io::{Read, Write};
use std::ops::{Deref, DerefMut};

use nalgebra::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, DepthPlanes};
use crate::container::{self, ContainerError};
use crate::fusion::snap;
use crate::encoder::{metadata_channels, FeatureMap, METADATA_CHANNELS};

pub const CV_MAGIC: [u8; 4] = *b"SFCV";

#[derive(Debug, Error)]
pub enum CostVolumeError {
    #[error("no reference frames")]
    EmptyReferences,
    #[error("feature map {index} is {got:?}, expected {want:?}")]
    FeatureMismatch {
        index: usize,
        got: (usize, usize, usize),
        want: (usize, usize, usize),
    },
    #[error("camera does not match feature resolution")]
    CameraMismatch,
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// `planes × channels × height × width` values with a `planes × height ×
/// width` validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneStack {
    pub planes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub valid: Vec<bool>,
}

impl PlaneStack {
    pub fn zeros(planes: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            planes,
            channels,
            height,
            width,
            data: vec![0.0; planes * channels * height * width],
            valid: vec![false; planes * height * width],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.planes, self.channels, self.height, self.width]
    }

    #[inline]
    pub fn offset(&self, plane: usize, channel: usize, r: usize, c: usize) -> usize {
        ((plane * self.channels + channel) * self.height + r) * self.width + c
    }

    #[inline]
    pub fn get(&self, plane: usize, channel: usize, r: usize, c: usize) -> f32 {
        self.data[self.offset(plane, channel, r, c)]
    }

    #[inline]
    pub fn set(&mut self, plane: usize, channel: usize, r: usize, c: usize, v: f32) {
        let o = self.offset(plane, channel, r, c);
        self.data[o] = v;
    }

    #[inline]
    pub fn is_valid(&self, plane: usize, r: usize, c: usize) -> bool {
        self.valid[(plane * self.height + r) * self.width + c]
    }

    #[inline]
    pub fn set_valid(&mut self, plane: usize, r: usize, c: usize, v: bool) {
        self.valid[(plane * self.height + r) * self.width + c] = v;
    }

    /// Channels of plane `i`, channel-major.
    pub fn plane(&self, i: usize) -> &[f32] {
        let n = self.channels * self.height * self.width;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn plane_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.channels * self.height * self.width;
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Values of `channel` along the ray through `(r, c)`.
    pub fn ray(&self, channel: usize, r: usize, c: usize) -> Vec<f32> {
        (0..self.planes).map(|i| self.get(i, channel, r, c)).collect()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len().max(1) as f64
    }
}

macro_rules! stack_newtype {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(pub PlaneStack);

        impl Deref for $name {
            type Target = PlaneStack;
            fn deref(&self) -> &PlaneStack {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut PlaneStack {
                &mut self.0
            }
        }
    };
}

stack_newtype!(CostVolume);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// `[mean dot, dot variance | 6 metadata means]` over covering references.
    #[default]
    MeanVar,
    /// `[K dot channels | 6·K metadata channels]` in reference order.
    RawConcat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub interpolation: Interpolation,
    pub aggregation: Aggregation,
    /// Rescale each warped descriptor to unit norm before the dot product.
    pub normalize_warped: bool,
    /// The mean matching score is scaled by `(covering / total)^coverage_exponent`
    /// so depths seen by few references do not outrank well-covered ones.
    pub coverage_exponent: f32,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            interpolation: Interpolation::Bilinear,
            aggregation: Aggregation::MeanVar,
            normalize_warped: true,
            coverage_exponent: 0.25,
        }
    }
}

impl SweepOptions {
    pub fn channels(&self, refs: usize) -> usize {
        match self.aggregation {
            Aggregation::MeanVar => 2 + METADATA_CHANNELS,
            Aggregation::RawConcat => refs * (1 + METADATA_CHANNELS),
        }
    }
}

/// Warps a reference feature map onto the keyframe's plane at `depth`.
///
/// Both cameras must be at feature resolution. Cells whose plane point falls
/// behind the reference camera or outside its map get a zero feature and a
/// `false` mask entry.
pub fn warp_to_plane(
    ref_feat: &FeatureMap,
    ref_cam: &Camera,
    key_cam: &Camera,
    depth: f64,
    interpolation: Interpolation,
) -> (FeatureMap, Vec<bool>) {
    let (h, w) = (key_cam.height(), key_cam.width());
    let mut out = FeatureMap::zeros(ref_feat.channels, h, w);
    let mut mask = vec![false; h * w];
    let mut scratch = vec![0.0f32; ref_feat.channels];
    for r in 0..h {
        for c in 0..w {
            let x = key_cam.unproject(Point2::new(c as f64, r as f64), depth);
            let Ok((px, _)) = ref_cam.project(&x) else {
                continue;
            };
            let px = Point2::new(snap(px.x), snap(px.y));
            let hit = match interpolation {
                Interpolation::Bilinear => ref_feat.sample_bilinear(px, &mut scratch),
                Interpolation::Nearest => ref_feat.sample_nearest(px, &mut scratch),
            };
            if hit {
                mask[r * w + c] = true;
                for (ch, v) in scratch.iter().enumerate() {
                    out.set(ch, r, c, *v);
                }
            }
        }
    }
    (out, mask)
}

/// Builds the cost volume of a keyframe against its references.
///
/// `key_cam` and every reference camera must be at feature resolution.
pub fn build_cost_volume(
    key_feat: &FeatureMap,
    key_cam: &Camera,
    refs: &[(&FeatureMap, Camera)],
    planes: &DepthPlanes,
    options: SweepOptions,
) -> Result<CostVolume, CostVolumeError> {
    if refs.is_empty() {
        return Err(CostVolumeError::EmptyReferences);
    }
    let want = (key_feat.channels, key_feat.height, key_feat.width);
    if key_cam.width() != key_feat.width || key_cam.height() != key_feat.height {
        return Err(CostVolumeError::CameraMismatch);
    }
    for (k, (f, cam)) in refs.iter().enumerate() {
        let got = (f.channels, f.height, f.width);
        if got != want {
            return Err(CostVolumeError::FeatureMismatch { index: k, got, want });
        }
        if cam.width() != f.width || cam.height() != f.height {
            return Err(CostVolumeError::CameraMismatch);
        }
    }
    let (h, w) = (key_feat.height, key_feat.width);
    let hw = h * w;
    let kref = refs.len();
    let channels = options.channels(kref);
    let mut stack = PlaneStack::zeros(planes.count(), channels, h, w);

    let per_plane: Vec<(Vec<f32>, Vec<bool>)> = (0..planes.count())
        .into_par_iter()
        .map(|i| {
            let depth = planes.depth(i);
            let mut dots = vec![0.0f32; kref * hw];
            let mut covered = vec![false; kref * hw];
            let mut metas = Vec::with_capacity(kref);
            for (k, (feat, cam)) in refs.iter().enumerate() {
                let (warped, mask) = warp_to_plane(feat, cam, key_cam, depth, options.interpolation);
                for p in 0..hw {
                    if mask[p] {
                        covered[k * hw + p] = true;
                        let (mut dot, mut norm2) = (0.0f32, 0.0f32);
                        for ch in 0..key_feat.channels {
                            let v = warped.data[ch * hw + p];
                            dot += key_feat.data[ch * hw + p] * v;
                            norm2 += v * v;
                        }
                        if options.normalize_warped {
                            dot = if norm2 > 1e-12 { (dot / norm2.sqrt()).clamp(-1.0, 1.0) } else { 0.0 };
                        }
                        dots[k * hw + p] = dot;
                    }
                }
                metas.push(metadata_channels(key_cam, cam, depth));
            }
            let mut plane = vec![0.0f32; channels * hw];
            let mut valid = vec![false; hw];
            for p in 0..hw {
                let n = (0..kref).filter(|&k| covered[k * hw + p]).count();
                if n == 0 {
                    continue;
                }
                valid[p] = true;
                match options.aggregation {
                    Aggregation::MeanVar => {
                        let inv = 1.0 / n as f32;
                        let mut mean = 0.0f32;
                        for k in (0..kref).filter(|&k| covered[k * hw + p]) {
                            mean += dots[k * hw + p];
                        }
                        mean *= inv;
                        let mut var = 0.0f32;
                        for k in (0..kref).filter(|&k| covered[k * hw + p]) {
                            var += (dots[k * hw + p] - mean).powi(2);
                        }
                        plane[p] = if n == kref {
                            mean
                        } else {
                            mean * (n as f32 / kref as f32).powf(options.coverage_exponent)
                        };
                        plane[hw + p] = var * inv;
                        for m in 0..METADATA_CHANNELS {
                            let mut s = 0.0f32;
                            for k in (0..kref).filter(|&k| covered[k * hw + p]) {
                                s += metas[k].data[m * hw + p];
                            }
                            plane[(2 + m) * hw + p] = s * inv;
                        }
                    }
                    Aggregation::RawConcat => {
                        for k in (0..kref).filter(|&k| covered[k * hw + p]) {
                            plane[k * hw + p] = dots[k * hw + p];
                            for m in 0..METADATA_CHANNELS {
                                plane[(kref + k * METADATA_CHANNELS + m) * hw + p] = metas[k].data[m * hw + p];
                            }
                        }
                    }
                }
            }
            (plane, valid)
        })
        .collect();

    for (i, (plane, valid)) in per_plane.into_iter().enumerate() {
        stack.plane_mut(i).copy_from_slice(&plane);
        stack.valid[i * hw..(i + 1) * hw].copy_from_slice(&valid);
    }
    Ok(CostVolume(stack))
}

/// Writes a volume dump: magic, u32 `planes, channels, height, width`, the
/// plane depths, the data and the mask (0/1), all little-endian f32.
pub fn write_dump<W: Write>(vol: &PlaneStack, planes: &DepthPlanes, w: &mut W) -> Result<(), ContainerError> {
    if planes.count() != vol.planes {
        return Err(ContainerError::Malformed(format!(
            "{} plane depths for a {}-plane volume",
            planes.count(),
            vol.planes
        )));
    }
    w.write_all(&CV_MAGIC)?;
    for d in [vol.planes, vol.channels, vol.height, vol.width] {
        container::write_u32(w, d as u32)?;
    }
    let depths: Vec<f32> = planes.values().iter().map(|&d| d as f32).collect();
    container::write_f32s(w, &depths)?;
    container::write_f32s(w, &vol.data)?;
    let mask: Vec<f32> = vol.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    container::write_f32s(w, &mask)
}

/// Reads a dump written by [`write_dump`], returning the plane depths too.
pub fn read_dump<R: Read>(r: &mut R) -> Result<(PlaneStack, Vec<f32>), ContainerError> {
    container::expect_magic(r, CV_MAGIC)?;
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = container::read_u32(r)? as usize;
    }
    let [planes, channels, height, width] = dims;
    let depths = container::read_f32s(r, planes)?;
    let data = container::read_f32s(r, planes * channels * height * width)?;
    let valid = container::read_f32s(r, planes * height * width)?
        .into_iter()
        .map(|v| v != 0.0)
        .collect();
    Ok((
        PlaneStack {
            planes,
            channels,
            height,
            width,
            data,
            valid,
        },
        depths,
    ))
}

//! Deterministic matching descriptors at 1/8 resolution, per-pixel camera
//! metadata, and seeded orthonormal channel reduction.

use image::RgbImage;
use nalgebra::{DMatrix, DVector, Point2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Camera;
use crate::container::Matrix;
use crate::costvol::PlaneStack;

/// Side of the pixel block summarized by one feature cell.
pub const CELL: usize = 8;
/// Floor on the block standard deviation before normalization.
pub const STD_EPS: f32 = 1e-6;
/// Metadata channels per reference: ray direction (3), ray angle, baseline, plane depth.
pub const METADATA_CHANNELS: usize = 6;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("image {width}x{height} is not divisible by {CELL}")]
    DimsNotDivisible { width: u32, height: u32 },
    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),
    #[error("target of {target} channels exceeds the {available} available")]
    TargetTooLarge { target: usize, available: usize },
}

/// `channels × height × width` feature array.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.height + r) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f32) {
        self.data[(c * self.height + r) * self.width + col] = v;
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, r: usize, col: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.get(c, r, col)).collect()
    }

    pub fn cell_norm(&self, r: usize, col: usize) -> f32 {
        (0..self.channels)
            .map(|c| self.get(c, r, col).powi(2))
            .sum::<f32>()
            .sqrt()
    }

    /// Bilinear sample at a continuous cell coordinate; `false` outside
    /// `[0, width-1] × [0, height-1]`.
    pub fn sample_bilinear(&self, p: Point2<f64>, out: &mut [f32]) -> bool {
        let (x, y) = (p.x, p.y);
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return false;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let hw = self.plane_len();
        let (i00, i01) = (y0 * self.width + x0, y0 * self.width + x1);
        let (i10, i11) = (y1 * self.width + x0, y1 * self.width + x1);
        let (w00, w01) = ((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy));
        let (w10, w11) = ((1.0 - fx) * fy, fx * fy);
        for (c, o) in out.iter_mut().enumerate() {
            let d = &self.data[c * hw..(c + 1) * hw];
            *o = w00 * d[i00] + w01 * d[i01] + w10 * d[i10] + w11 * d[i11];
        }
        true
    }

    /// Nearest-cell sample with the same bounds as [`Self::sample_bilinear`].
    pub fn sample_nearest(&self, p: Point2<f64>, out: &mut [f32]) -> bool {
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64) {
            return false;
        }
        let (r, c) = (p.y.round() as usize, p.x.round() as usize);
        for (ch, o) in out.iter_mut().enumerate() {
            *o = self.get(ch, r, c);
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Zero-mean, unit-variance intensity patch.
    #[serde(rename = "patch")]
    PatchNormalized,
    /// Intensity gradients over the patch.
    #[serde(rename = "grad")]
    GradientOrientation,
    /// Normalized patch followed by a loaded `out × patch²` linear map.
    #[serde(skip)]
    Linear(Matrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    /// Samples per side of the descriptor window (odd, ≥ 3).
    pub patch: usize,
    pub out_channels: usize,
    pub seed: u64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            kind: EncoderKind::PatchNormalized,
            patch: 5,
            out_channels: 16,
            seed: 0,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.patch < 3 || self.patch.is_multiple_of(2) {
            return Err(EncoderError::InvalidSpec(format!(
                "patch must be odd and >= 3, got {}",
                self.patch
            )));
        }
        if self.out_channels == 0 {
            return Err(EncoderError::InvalidSpec("out_channels must be >= 1".into()));
        }
        let raw = self.raw_dims();
        if let EncoderKind::Linear(m) = &self.kind {
            if m.cols != self.patch * self.patch || m.rows != self.out_channels {
                return Err(EncoderError::InvalidSpec(format!(
                    "linear encoder is {}x{}, expected {}x{}",
                    m.rows,
                    m.cols,
                    self.out_channels,
                    self.patch * self.patch
                )));
            }
        } else if self.out_channels > raw {
            return Err(EncoderError::TargetTooLarge {
                target: self.out_channels,
                available: raw,
            });
        }
        Ok(())
    }

    fn raw_dims(&self) -> usize {
        let n = self.patch * self.patch;
        match self.kind {
            EncoderKind::GradientOrientation => 2 * n,
            _ => n,
        }
    }
}

/// Luma in `[0, 1]` smoothed with a 5-tap binomial filter (replicated borders).
fn smoothed_luma(img: &RgbImage) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let luma: Vec<f32> = img
        .pixels()
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
        .collect();
    const TAPS: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = TAPS
                .iter()
                .enumerate()
                .map(|(k, t)| t * luma[y * w + clampi(x as isize + k as isize - 2, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = TAPS
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[clampi(y as isize + k as isize - 2, h) * w + x])
                .sum();
        }
    }
    out
}

/// Bilinear lookup at integer base plus fractional offset; coordinates are
/// clamped to the image. Splitting base and offset keeps the arithmetic
/// identical for every block, so block-aligned shifts reproduce exactly.
#[inline]
fn sample_gray(gray: &[f32], w: usize, h: usize, bx: isize, by: isize, ox: f32, oy: f32) -> f32 {
    let fx = ox.floor();
    let fy = oy.floor();
    let (ax, ay) = (ox - fx, oy - fy);
    let x0 = bx + fx as isize;
    let y0 = by + fy as isize;
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        gray[yc * w + xc]
    };
    let top = at(x0, y0) * (1.0 - ax) + at(x0 + 1, y0) * ax;
    let bot = at(x0, y0 + 1) * (1.0 - ax) + at(x0 + 1, y0 + 1) * ax;
    top * (1.0 - ay) + bot * ay
}

/// Window sample offsets relative to a block's top-left pixel: a
/// `patch × patch` lattice spanning ±`CELL` around the block center.
fn window_offsets(patch: usize) -> Vec<f32> {
    let half = (CELL as f32 - 1.0) / 2.0;
    let step = 2.0 * CELL as f32 / (patch - 1) as f32;
    (0..patch)
        .map(|k| half - CELL as f32 + k as f32 * step)
        .collect()
}

fn normalize_or_uniform(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        let u = 1.0 / (v.len() as f32).sqrt();
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Encodes an image into unit-norm descriptors at 1/8 resolution.
///
/// Each cell summarizes a window centered on its 8×8 block. Cells whose
/// descriptor vanishes (flat regions) get the uniform unit vector.
pub fn encode_image(img: &RgbImage, spec: &EncoderSpec) -> Result<FeatureMap, EncoderError> {
    spec.validate()?;
    let (wi, hi) = (img.width(), img.height());
    if !(wi as usize).is_multiple_of(CELL) || !(hi as usize).is_multiple_of(CELL) || wi == 0 || hi == 0 {
        return Err(EncoderError::DimsNotDivisible {
            width: wi,
            height: hi,
        });
    }
    let (w, h) = (wi as usize, hi as usize);
    let (fw, fh) = (w / CELL, h / CELL);
    let gray = smoothed_luma(img);
    let offs = window_offsets(spec.patch);
    let raw_dims = spec.raw_dims();
    let projection = match &spec.kind {
        EncoderKind::Linear(m) => Some(m.clone()),
        _ if spec.out_channels < raw_dims => {
            Some(seeded_row_orthonormal(spec.out_channels, raw_dims, spec.seed, &[]))
        }
        _ => None,
    };
    let out_c = spec.out_channels;

    let rows: Vec<Vec<f32>> = (0..fh)
        .into_par_iter()
        .map(|r| {
            let mut cells = vec![0.0f32; fw * out_c];
            let mut raw = vec![0.0f32; raw_dims];
            let mut projected = vec![0.0f32; out_c];
            for c in 0..fw {
                let (bx, by) = ((c * CELL) as isize, (r * CELL) as isize);
                let sample = |ox: f32, oy: f32| sample_gray(&gray, w, h, bx, by, ox, oy);
                match spec.kind {
                    EncoderKind::GradientOrientation => {
                        let mut k = 0;
                        for &oy in &offs {
                            for &ox in &offs {
                                raw[k] = 0.5 * (sample(ox + 1.0, oy) - sample(ox - 1.0, oy));
                                raw[k + 1] = 0.5 * (sample(ox, oy + 1.0) - sample(ox, oy - 1.0));
                                k += 2;
                            }
                        }
                    }
                    _ => {
                        let mut k = 0;
                        for &oy in &offs {
                            for &ox in &offs {
                                raw[k] = sample(ox, oy);
                                k += 1;
                            }
                        }
                        let n = raw.len() as f32;
                        let mean = raw.iter().sum::<f32>() / n;
                        let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / n;
                        let sd = var.sqrt().max(STD_EPS);
                        raw.iter_mut().for_each(|v| *v = (*v - mean) / sd);
                    }
                }
                let out = &mut cells[c * out_c..(c + 1) * out_c];
                match &projection {
                    Some(m) => {
                        m.apply(&raw, &mut projected);
                        out.copy_from_slice(&projected);
                    }
                    None => out.copy_from_slice(&raw[..out_c]),
                }
                normalize_or_uniform(out);
            }
            cells
        })
        .collect();

    let mut fm = FeatureMap::zeros(out_c, fh, fw);
    for (r, cells) in rows.iter().enumerate() {
        for c in 0..fw {
            for ch in 0..out_c {
                fm.set(ch, r, c, cells[c * out_c + ch]);
            }
        }
    }
    Ok(fm)
}

/// Per-cell intensity standard deviation of the raw 8×8 block, in `[0, 0.5]`.
pub fn block_contrast(img: &RgbImage) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (fw, fh) = (w / CELL, h / CELL);
    let mut out = vec![0.0f32; fw * fh];
    for r in 0..fh {
        for c in 0..fw {
            let mut vals = Vec::with_capacity(CELL * CELL);
            for y in r * CELL..(r + 1) * CELL {
                for x in c * CELL..(c + 1) * CELL {
                    let p = img.get_pixel(x as u32, y as u32);
                    vals.push((0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0);
                }
            }
            let n = vals.len() as f32;
            let mean = vals.iter().sum::<f32>() / n;
            out[r * fw + c] = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / n).sqrt();
        }
    }
    out
}

/// Per-pixel metadata for one keyframe/reference pair at one plane depth:
/// keyframe ray direction (unit, keyframe camera frame), angle between the
/// keyframe and reference rays to the plane point (radians), baseline
/// length (meters) and the plane depth (meters).
pub fn metadata_channels(key_cam: &Camera, ref_cam: &Camera, depth: f64) -> FeatureMap {
    let (w, h) = (key_cam.width(), key_cam.height());
    let mut m = FeatureMap::zeros(METADATA_CHANNELS, h, w);
    let baseline = key_cam.center().metric_distance(&ref_cam.center());
    for r in 0..h {
        for c in 0..w {
            let px = Point2::new(c as f64, r as f64);
            let dir = key_cam.ray_camera(px).normalize();
            let x = key_cam.unproject(px, depth);
            let a = x - key_cam.center();
            let b = x - ref_cam.center();
            let angle = a.cross(&b).norm().atan2(a.dot(&b));
            let vals = [
                dir.x,
                dir.y,
                dir.z,
                angle,
                baseline,
                depth,
            ];
            for (ch, v) in vals.iter().enumerate() {
                m.set(ch, r, c, *v as f32);
            }
        }
    }
    m
}

/// Row-orthonormal `rows × cols` map built from the QR factorization of a
/// seeded Gaussian matrix.
///
/// `anchors` pin given rows to given directions (normalized); the remaining
/// rows are completed from the seeded basis by Gram–Schmidt against the
/// rows already placed. Anchors must be mutually orthogonal.
pub fn seeded_row_orthonormal(rows: usize, cols: usize, seed: u64, anchors: &[(usize, Vec<f64>)]) -> Matrix {
    assert!(rows <= cols, "row-orthonormal map needs rows <= cols");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(cols, cols, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();

    let mut placed: Vec<Option<DVector<f64>>> = vec![None; rows];
    for (row, dir) in anchors {
        assert!(*row < rows && dir.len() == cols);
        let v = DVector::from_column_slice(dir);
        placed[*row] = Some(v.normalize());
    }
    let mut basis: Vec<DVector<f64>> = placed.iter().flatten().cloned().collect();
    let mut candidates = (0..cols).map(|j| q.column(j).into_owned());
    for slot in placed.iter_mut().filter(|s| s.is_none()) {
        loop {
            let mut v = candidates.next().expect("seeded basis spans the space");
            for b in &basis {
                let d = v.dot(b);
                v -= b * d;
            }
            let n = v.norm();
            if n > 1e-6 {
                v /= n;
                basis.push(v.clone());
                *slot = Some(v);
                break;
            }
        }
    }
    let mut m = Matrix::zeros(rows, cols);
    for (r, v) in placed.into_iter().enumerate() {
        let v = v.expect("all rows placed");
        for c in 0..cols {
            m.set(r, c, v[c] as f32);
        }
    }
    m
}

/// Applies a `target × channels` linear map at every plane and pixel.
/// Invalid cells stay zero.
pub fn reduce_channels_with(volume: &PlaneStack, map: &Matrix) -> Result<PlaneStack, EncoderError> {
    if map.cols != volume.channels {
        return Err(EncoderError::InvalidSpec(format!(
            "map expects {} channels, volume has {}",
            map.cols, volume.channels
        )));
    }
    let target = map.rows;
    let (h, w) = (volume.height, volume.width);
    let mut out = PlaneStack::zeros(volume.planes, target, h, w);
    out.valid.copy_from_slice(&volume.valid);
    let hw = h * w;
    out.data
        .par_chunks_mut(target * hw)
        .enumerate()
        .for_each(|(i, plane)| {
            let mut x = vec![0.0f32; volume.channels];
            let mut y = vec![0.0f32; target];
            for p in 0..hw {
                if !volume.valid[i * hw + p] {
                    continue;
                }
                for (c, v) in x.iter_mut().enumerate() {
                    *v = volume.data[(i * volume.channels + c) * hw + p];
                }
                map.apply(&x, &mut y);
                for (c, v) in y.iter().enumerate() {
                    plane[c * hw + p] = *v;
                }
            }
        });
    Ok(out)
}

/// Reduces channels with a seeded row-orthonormal map.
pub fn reduce_channels(volume: &PlaneStack, target: usize, seed: u64) -> Result<PlaneStack, EncoderError> {
    if target > volume.channels {
        return Err(EncoderError::TargetTooLarge {
            target,
            available: volume.channels,
        });
    }
    if target == 0 {
        return Err(EncoderError::InvalidSpec("target must be >= 1".into()));
    }
    reduce_channels_with(volume, &seeded_row_orthonormal(target, volume.channels, seed, &[]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose};
    use image::Rgb;
    use nalgebra::Vector3;

    fn textured(w: u32, h: u32, shift: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let xs = x as f32 - shift as f32;
            let v = 128.0 + 60.0 * (xs * 0.37).sin() * (y as f32 * 0.23).cos() + 40.0 * ((xs + 2.0 * y as f32) * 0.11).sin();
            Rgb([v as u8, v as u8, v as u8])
        })
    }

    #[test]
    fn constant_image_descriptors() {
        let img = RgbImage::from_pixel(64, 48, Rgb([90, 90, 90]));
        let f = encode_image(&img, &EncoderSpec::default()).unwrap();
        assert_eq!((f.width, f.height), (8, 6));
        let first = f.cell(0, 0);
        for r in 0..f.height {
            for c in 0..f.width {
                assert_eq!(f.cell(r, c), first);
                let d: f32 = first.iter().map(|v| v * v).sum();
                assert!((d - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn vga_input_gives_80x60() {
        let img = textured(640, 480, 0);
        let f = encode_image(&img, &EncoderSpec::default()).unwrap();
        assert_eq!((f.width, f.height, f.channels), (80, 60, 16));
    }

    #[test]
    fn unit_norm_and_deterministic() {
        for kind in [EncoderKind::PatchNormalized, EncoderKind::GradientOrientation] {
            let spec = EncoderSpec { kind, ..Default::default() };
            let img = textured(64, 48, 0);
            let a = encode_image(&img, &spec).unwrap();
            let b = encode_image(&img, &spec).unwrap();
            assert_eq!(a, b);
            for r in 0..a.height {
                for c in 0..a.width {
                    assert!((a.cell_norm(r, c) - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn block_shift_moves_one_cell() {
        for kind in [EncoderKind::PatchNormalized, EncoderKind::GradientOrientation] {
            let spec = EncoderSpec { kind, ..Default::default() };
            let a = encode_image(&textured(96, 64, 0), &spec).unwrap();
            let b = encode_image(&textured(96, 64, 8), &spec).unwrap();
            // Interior cells away from the replicated borders.
            for r in 2..a.height - 2 {
                for c in 2..a.width - 3 {
                    assert_eq!(a.cell(r, c), b.cell(r, c + 1), "cell ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_dims_and_specs() {
        let img = RgbImage::new(30, 16);
        assert!(matches!(
            encode_image(&img, &EncoderSpec::default()),
            Err(EncoderError::DimsNotDivisible { .. })
        ));
        let spec = EncoderSpec { patch: 4, ..Default::default() };
        assert!(spec.validate().is_err());
        let spec = EncoderSpec { out_channels: 26, ..Default::default() };
        assert!(matches!(spec.validate(), Err(EncoderError::TargetTooLarge { .. })));
    }

    #[test]
    fn linear_encoder_from_matrix() {
        let m = seeded_row_orthonormal(4, 9, 3, &[]);
        let spec = EncoderSpec { kind: EncoderKind::Linear(m), patch: 3, out_channels: 4, seed: 0 };
        let f = encode_image(&textured(32, 32, 0), &spec).unwrap();
        assert_eq!(f.channels, 4);
        assert!((f.cell_norm(1, 1) - 1.0).abs() < 1e-6);
    }

    fn cams(t: Vector3<f64>) -> (Camera, Camera) {
        let k = Intrinsics::new(10.0, 10.0, 4.0, 3.0, 9, 7).unwrap();
        (Camera::new(k, Pose::identity()), Camera::new(k, Pose::from_translation(t)))
    }

    #[test]
    fn metadata_identical_cameras() {
        let (a, _) = cams(Vector3::zeros());
        let m = metadata_channels(&a, &a, 1.7);
        for r in 0..m.height {
            for c in 0..m.width {
                assert_eq!(m.get(3, r, c), 0.0);
                assert_eq!(m.get(4, r, c), 0.0);
                assert_eq!(m.get(5, r, c), 1.7f32);
            }
        }
    }

    #[test]
    fn metadata_forty_five_degrees() {
        let (a, b) = cams(Vector3::new(1.0, 0.0, 0.0));
        let m = metadata_channels(&a, &b, 1.0);
        let ang = m.get(3, 3, 4) as f64;
        assert!((ang - std::f64::consts::FRAC_PI_4).abs() < 1e-6);
        assert_eq!(m.get(4, 3, 4), 1.0);
        assert_eq!((m.get(0, 3, 4), m.get(1, 3, 4), m.get(2, 3, 4)), (0.0, 0.0, 1.0));
    }

    #[test]
    fn orthonormal_rows_with_anchor() {
        let mut anchor = vec![0.0; 8];
        anchor[0] = 2.0;
        let m = seeded_row_orthonormal(5, 8, 11, &[(4, anchor)]);
        assert_eq!(m.row(4)[0], 1.0);
        for i in 0..5 {
            for j in 0..5 {
                let d: f32 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-5, "({i},{j}) = {d}");
            }
        }
        assert_eq!(m, seeded_row_orthonormal(5, 8, 11, &[(4, { let mut a = vec![0.0; 8]; a[0] = 2.0; a })]));
    }

    fn random_stack(planes: usize, channels: usize) -> PlaneStack {
        let mut s = PlaneStack::zeros(planes, channels, 3, 4);
        for (k, v) in s.data.iter_mut().enumerate() {
            *v = ((k * 7919) % 101) as f32 / 50.0 - 1.0;
        }
        s.valid.iter_mut().for_each(|v| *v = true);
        s
    }

    #[test]
    fn square_reduction_preserves_norm() {
        let s = random_stack(3, 6);
        let out = reduce_channels(&s, 6, 5).unwrap();
        for i in 0..3 {
            for r in 0..3 {
                for c in 0..4 {
                    let n0: f32 = (0..6).map(|ch| s.get(i, ch, r, c).powi(2)).sum();
                    let n1: f32 = (0..6).map(|ch| out.get(i, ch, r, c).powi(2)).sum();
                    assert!((n0.sqrt() - n1.sqrt()).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn reduction_shape_and_determinism() {
        let s = random_stack(64, 12);
        let a = reduce_channels(&s, 7, 9).unwrap();
        assert_eq!((a.planes, a.channels, a.height, a.width), (64, 7, 3, 4));
        assert_eq!(a, reduce_channels(&s, 7, 9).unwrap());
        assert!(matches!(reduce_channels(&s, 13, 9), Err(EncoderError::TargetTooLarge { .. })));
    }
}

//! Ray and contextual compensation of a cost volume.
//!
//! Ray compensation stacks one channel of every plane into a `|D|`-channel
//! image, convolves it and appends the result (`F_cr`) to every plane.
//! Contextual compensation appends the keyframe feature map to every plane
//! and mixes channels per plane (`group`), with one shared kernel plus a
//! cross-plane term (`uni`), or with a single shared map (`concat`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{ContainerError, Matrix, Sections};
use crate::costvol::PlaneStack;
use crate::encoder::{seeded_row_orthonormal, FeatureMap};

#[derive(Debug, Error)]
pub enum RccvError {
    #[error("keyframe feature is {got:?}, volume is {want:?}")]
    DimMismatch {
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("volume has {got} channels per plane, weights expect {want}")]
    ChannelMismatch { got: usize, want: usize },
    #[error("ray channel {0} out of range")]
    BadChannel(usize),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CtxMode {
    Concat,
    Uni,
    #[default]
    Group,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Compensation {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "ray")]
    Ray,
    #[default]
    #[serde(rename = "ray+ctx")]
    RayCtx,
}

impl Compensation {
    pub fn ray(self) -> bool {
        !matches!(self, Compensation::None)
    }

    pub fn ctx(self) -> bool {
        matches!(self, Compensation::RayCtx)
    }
}

/// 2D convolution with zero padding; `weight` is `out × in × k × k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Per-channel delta at the kernel center.
    pub fn identity(channels: usize, kernel: usize) -> Self {
        let mut k = Self::zeros(channels, channels, kernel);
        let mid = kernel / 2;
        for c in 0..channels {
            let o = k.index(c, c, mid, mid);
            k.weight[o] = 1.0;
        }
        k
    }

    /// 1×1 convolution from a `out × in` matrix.
    pub fn pointwise(m: &Matrix) -> Self {
        Self {
            out_channels: m.rows,
            in_channels: m.cols,
            kernel: 1,
            weight: m.data.clone(),
            bias: vec![0.0; m.rows],
        }
    }

    #[inline]
    fn index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    fn validate(&self, name: &str) -> Result<(), RccvError> {
        if self.kernel.is_multiple_of(2) {
            return Err(RccvError::InvalidWeights(format!("{name}: kernel size {} is even", self.kernel)));
        }
        if self.weight.len() != self.out_channels * self.in_channels * self.kernel * self.kernel
            || self.bias.len() != self.out_channels
        {
            return Err(RccvError::InvalidWeights(format!("{name}: inconsistent sizes")));
        }
        Ok(())
    }

    /// Convolves `input` (`in × h × w`) into `out` (`out × h × w`), skipping
    /// zero taps.
    pub fn apply(&self, input: &[f32], h: usize, w: usize, out: &mut [f32]) {
        let hw = h * w;
        debug_assert_eq!(input.len(), self.in_channels * hw);
        debug_assert_eq!(out.len(), self.out_channels * hw);
        let half = (self.kernel / 2) as isize;
        for o in 0..self.out_channels {
            let dst = &mut out[o * hw..(o + 1) * hw];
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let src = &input[i * hw..(i + 1) * hw];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let wgt = self.weight[self.index(o, i, ky, kx)];
                        if wgt == 0.0 {
                            continue;
                        }
                        let (dy, dx) = (ky as isize - half, kx as isize - half);
                        if dy == 0 && dx == 0 {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wgt * s;
                            }
                            continue;
                        }
                        for r in 0..h as isize {
                            let sr = r + dy;
                            if sr < 0 || sr >= h as isize {
                                continue;
                            }
                            for c in 0..w as isize {
                                let sc = c + dx;
                                if sc < 0 || sc >= w as isize {
                                    continue;
                                }
                                dst[(r * w as isize + c) as usize] += wgt * src[(sr * w as isize + sc) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn to_sections(&self, name: &str, s: &mut Sections) {
        let cols = self.in_channels * self.kernel * self.kernel;
        s.push(
            name.to_string(),
            Matrix::new(self.out_channels, cols, self.weight.clone()).expect("sizes"),
        );
        s.push(
            format!("{name}_bias"),
            Matrix::new(self.out_channels, 1, self.bias.clone()).expect("sizes"),
        );
    }

    fn from_sections(s: &Sections, name: &str, in_channels: usize) -> Result<Self, RccvError> {
        let m = s.get(name)?;
        let b = s.get(&format!("{name}_bias"))?;
        let taps = m.cols / in_channels.max(1);
        let kernel = (taps as f64).sqrt().round() as usize;
        if kernel * kernel * in_channels != m.cols || b.rows != m.rows || b.cols != 1 {
            return Err(RccvError::InvalidWeights(format!(
                "{name}: {}x{} does not fit {in_channels} inputs",
                m.rows, m.cols
            )));
        }
        let k = Self {
            out_channels: m.rows,
            in_channels,
            kernel,
            weight: m.data.clone(),
            bias: b.data.clone(),
        };
        k.validate(name)?;
        Ok(k)
    }
}

/// Channel bookkeeping `C → C+|D| → C+|D|+C_ctx → C_out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RccvLayout {
    pub planes: usize,
    pub cv_channels: usize,
    pub ray: bool,
    pub ctx_channels: usize,
    pub out_channels: usize,
}

impl RccvLayout {
    pub fn ray_channels(&self) -> usize {
        if self.ray {
            self.planes
        } else {
            0
        }
    }

    /// Channels per plane entering the contextual kernels.
    pub fn plane_in(&self) -> usize {
        self.cv_channels + self.ray_channels() + self.ctx_channels
    }
}

/// Kernels for both compensation stages.
///
/// `shared_kernel` serves the `concat` and `uni` modes; `cross_kernel` is the
/// `uni` mode's cross-plane term applied to the plane mean.
#[derive(Clone, Debug, PartialEq)]
pub struct CompensationWeights {
    pub layout: RccvLayout,
    pub ray_kernel: Conv2d,
    pub plane_kernels: Vec<Conv2d>,
    pub shared_kernel: Conv2d,
    pub cross_kernel: Conv2d,
}

impl CompensationWeights {
    /// Deterministic defaults: an identity 3×3 ray kernel and seeded
    /// row-orthonormal 1×1 plane kernels, distinct per plane.
    ///
    /// The last output row of every mixing kernel keeps the plane's own
    /// confidence channel (`C − 1`), so depth decoding reads the same signal
    /// in every mode. With ray compensation on, row `C_out − 2` of plane
    /// `i`'s kernel is the centered signed ray mass (`+` for planes in front
    /// of `i`, `−` behind), which changes sign where the ray crosses its
    /// confidence peak.
    pub fn seeded(layout: RccvLayout, seed: u64) -> Self {
        let n_in = layout.plane_in();
        assert!(layout.out_channels >= 1 && layout.out_channels <= n_in);
        let conf = one_hot(n_in, layout.cv_channels - 1);
        let last = layout.out_channels - 1;
        let plane_kernels = (0..layout.planes)
            .map(|i| {
                let mut anchors = vec![(last, conf.clone())];
                if layout.ray && layout.out_channels >= 2 {
                    anchors.push((last - 1, signed_ray_mass(&layout, i)));
                }
                let m = seeded_row_orthonormal(
                    layout.out_channels,
                    n_in,
                    seed.wrapping_add(1 + i as u64),
                    &anchors,
                );
                Conv2d::pointwise(&m)
            })
            .collect();
        let shared = seeded_row_orthonormal(layout.out_channels, n_in, seed, &[(last, conf)]);
        let mut cross = seeded_row_orthonormal(layout.out_channels, n_in, seed ^ 0x5eed, &[]);
        for c in 0..n_in {
            cross.set(last, c, 0.0);
        }
        Self {
            layout,
            ray_kernel: Conv2d::identity(layout.planes, 3),
            plane_kernels,
            shared_kernel: Conv2d::pointwise(&shared),
            cross_kernel: Conv2d::pointwise(&cross),
        }
    }

    pub fn validate(&self) -> Result<(), RccvError> {
        let l = &self.layout;
        let n_in = l.plane_in();
        self.ray_kernel.validate("ray_kernel")?;
        if self.ray_kernel.in_channels != l.planes || self.ray_kernel.out_channels != l.planes {
            return Err(RccvError::InvalidWeights("ray_kernel must map |D| to |D| channels".into()));
        }
        if self.plane_kernels.len() != l.planes {
            return Err(RccvError::InvalidWeights(format!(
                "{} plane kernels for {} planes",
                self.plane_kernels.len(),
                l.planes
            )));
        }
        let mixing = self
            .plane_kernels
            .iter()
            .chain([&self.shared_kernel, &self.cross_kernel]);
        for (k, conv) in mixing.enumerate() {
            conv.validate(&format!("mixing kernel {k}"))?;
            if conv.in_channels != n_in || conv.out_channels != l.out_channels {
                return Err(RccvError::InvalidWeights(format!(
                    "mixing kernel {k} maps {}→{}, expected {n_in}→{}",
                    conv.in_channels, conv.out_channels, l.out_channels
                )));
            }
        }
        Ok(())
    }

    /// Sections: `ray_kernel`, `plane_kernel_{i}`, `shared_kernel`,
    /// `cross_kernel`, each followed by a `*_bias` column.
    pub fn to_sections(&self) -> Sections {
        let mut s = Sections::new();
        self.ray_kernel.to_sections("ray_kernel", &mut s);
        for (i, k) in self.plane_kernels.iter().enumerate() {
            k.to_sections(&format!("plane_kernel_{i}"), &mut s);
        }
        self.shared_kernel.to_sections("shared_kernel", &mut s);
        self.cross_kernel.to_sections("cross_kernel", &mut s);
        s
    }

    pub fn from_sections(s: &Sections, layout: RccvLayout) -> Result<Self, RccvError> {
        let n_in = layout.plane_in();
        let w = Self {
            layout,
            ray_kernel: Conv2d::from_sections(s, "ray_kernel", layout.planes)?,
            plane_kernels: (0..layout.planes)
                .map(|i| Conv2d::from_sections(s, &format!("plane_kernel_{i}"), n_in))
                .collect::<Result<_, _>>()?,
            shared_kernel: Conv2d::from_sections(s, "shared_kernel", n_in)?,
            cross_kernel: Conv2d::from_sections(s, "cross_kernel", n_in)?,
        };
        w.validate()?;
        Ok(w)
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn signed_ray_mass(layout: &RccvLayout, plane: usize) -> Vec<f64> {
    let mut v = vec![0.0; layout.plane_in()];
    let block = &mut v[layout.cv_channels..layout.cv_channels + layout.planes];
    for (j, x) in block.iter_mut().enumerate() {
        *x = match j.cmp(&plane) {
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => -1.0,
        };
    }
    let mean = block.iter().sum::<f64>() / block.len() as f64;
    block.iter_mut().for_each(|x| *x -= mean);
    if block.iter().all(|x| x.abs() < 1e-12) {
        block[plane] = 1.0;
    }
    v
}

/// `RCCV` after both compensation stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Rccv(pub PlaneStack);

impl std::ops::Deref for Rccv {
    type Target = PlaneStack;
    fn deref(&self) -> &PlaneStack {
        &self.0
    }
}

/// Stacks channel `channel` (default: last) of every plane into a
/// `|D| × H × W` image, convolves it with the ray kernel, and appends the
/// result to every plane.
pub fn ray_compensate(
    cv: &PlaneStack,
    weights: &CompensationWeights,
    channel: Option<usize>,
) -> Result<(FeatureMap, PlaneStack), RccvError> {
    let ch = channel.unwrap_or(cv.channels.saturating_sub(1));
    if ch >= cv.channels || cv.channels == 0 {
        return Err(RccvError::BadChannel(ch));
    }
    if weights.ray_kernel.in_channels != cv.planes {
        return Err(RccvError::ChannelMismatch {
            got: cv.planes,
            want: weights.ray_kernel.in_channels,
        });
    }
    let (h, w) = (cv.height, cv.width);
    let hw = h * w;
    let mut stacked = vec![0.0f32; cv.planes * hw];
    for i in 0..cv.planes {
        let src = cv.offset(i, ch, 0, 0);
        stacked[i * hw..(i + 1) * hw].copy_from_slice(&cv.data[src..src + hw]);
    }
    let mut f_cr = FeatureMap::zeros(weights.ray_kernel.out_channels, h, w);
    weights.ray_kernel.apply(&stacked, h, w, &mut f_cr.data);

    let c_out = cv.channels + f_cr.channels;
    let mut rcv = PlaneStack::zeros(cv.planes, c_out, h, w);
    rcv.valid.copy_from_slice(&cv.valid);
    rcv.data
        .par_chunks_mut(c_out * hw)
        .enumerate()
        .for_each(|(i, plane)| {
            plane[..cv.channels * hw].copy_from_slice(cv.plane(i));
            plane[cv.channels * hw..].copy_from_slice(&f_cr.data);
        });
    Ok((f_cr, rcv))
}

/// Appends the keyframe feature (if any) to every plane and mixes channels
/// according to `mode`. Cells outside the valid mask are zero.
pub fn contextual_compensate(
    rcv: &PlaneStack,
    key_feat: Option<&FeatureMap>,
    weights: &CompensationWeights,
    mode: CtxMode,
) -> Result<Rccv, RccvError> {
    let (h, w) = (rcv.height, rcv.width);
    let hw = h * w;
    let ctx_channels = match key_feat {
        Some(f) => {
            if (f.height, f.width) != (h, w) {
                return Err(RccvError::DimMismatch {
                    got: (f.height, f.width),
                    want: (h, w),
                });
            }
            f.channels
        }
        None => 0,
    };
    let n_in = rcv.channels + ctx_channels;
    if n_in != weights.layout.plane_in() {
        return Err(RccvError::ChannelMismatch {
            got: n_in,
            want: weights.layout.plane_in(),
        });
    }
    let build_input = |i: usize, buf: &mut [f32]| {
        buf[..rcv.channels * hw].copy_from_slice(rcv.plane(i));
        if let Some(f) = key_feat {
            buf[rcv.channels * hw..].copy_from_slice(&f.data);
        }
    };

    let cross = if mode == CtxMode::Uni {
        let mut mean = vec![0.0f32; n_in * hw];
        let mut buf = vec![0.0f32; n_in * hw];
        for i in 0..rcv.planes {
            build_input(i, &mut buf);
            for (m, b) in mean.iter_mut().zip(&buf) {
                *m += b;
            }
        }
        let inv = 1.0 / rcv.planes as f32;
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut out = vec![0.0f32; weights.layout.out_channels * hw];
        weights.cross_kernel.apply(&mean, h, w, &mut out);
        Some(out)
    } else {
        None
    };

    let c_out = weights.layout.out_channels;
    let mut out = PlaneStack::zeros(rcv.planes, c_out, h, w);
    out.valid.copy_from_slice(&rcv.valid);
    out.data
        .par_chunks_mut(c_out * hw)
        .enumerate()
        .for_each(|(i, plane)| {
            let mut buf = vec![0.0f32; n_in * hw];
            build_input(i, &mut buf);
            let kernel = match mode {
                CtxMode::Group => &weights.plane_kernels[i],
                CtxMode::Uni | CtxMode::Concat => &weights.shared_kernel,
            };
            kernel.apply(&buf, h, w, plane);
            if let Some(cross) = &cross {
                for (p, c) in plane.iter_mut().zip(cross) {
                    *p += c;
                }
            }
            for p in 0..hw {
                if !rcv.valid[i * hw + p] {
                    for ch in 0..c_out {
                        plane[ch * hw + p] = 0.0;
                    }
                }
            }
        });
    Ok(Rccv(out))
}

/// Full compensation stage for one keyframe. `Compensation::None` passes
/// the cost volume through.
pub fn compensate(
    cv: &PlaneStack,
    key_feat: &FeatureMap,
    weights: &CompensationWeights,
    compensation: Compensation,
    mode: CtxMode,
    ray_channel: Option<usize>,
) -> Result<Rccv, RccvError> {
    match compensation {
        Compensation::None => Ok(Rccv(cv.clone())),
        Compensation::Ray | Compensation::RayCtx => {
            let (_, rcv) = ray_compensate(cv, weights, ray_channel)?;
            let ctx = compensation.ctx().then_some(key_feat);
            contextual_compensate(&rcv, ctx, weights, mode)
        }
    }
}

/// Bytes needed to hold a volume of `shape` at `precision_bytes` per value.
pub fn footprint_bytes(shape: [usize; 4], precision_bytes: usize) -> u64 {
    shape.iter().map(|&d| d as u64).product::<u64>() * precision_bytes as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(planes: usize, ray: bool, ctx: usize) -> RccvLayout {
        RccvLayout {
            planes,
            cv_channels: 3,
            ray,
            ctx_channels: ctx,
            out_channels: 3,
        }
    }

    fn stack(planes: usize, channels: usize) -> PlaneStack {
        let mut s = PlaneStack::zeros(planes, channels, 4, 5);
        for (k, v) in s.data.iter_mut().enumerate() {
            *v = ((k * 37 % 19) as f32 - 9.0) / 9.0;
        }
        s.valid.iter_mut().for_each(|v| *v = true);
        s
    }

    #[test]
    fn identity_ray_kernel_reproduces_profile() {
        let cv = stack(6, 3);
        let w = CompensationWeights::seeded(layout(6, true, 0), 1);
        let (f_cr, rcv) = ray_compensate(&cv, &w, None).unwrap();
        assert_eq!(rcv.channels, 3 + 6);
        for i in 0..6 {
            for r in 0..4 {
                for c in 0..5 {
                    assert_eq!(f_cr.get(i, r, c), cv.get(i, 2, r, c));
                    assert_eq!(rcv.get(3, 3 + i, r, c), cv.get(i, 2, r, c));
                }
            }
        }
    }

    #[test]
    fn picked_channel_and_bad_channel() {
        let cv = stack(4, 3);
        let w = CompensationWeights::seeded(layout(4, true, 0), 1);
        let (f_cr, _) = ray_compensate(&cv, &w, Some(0)).unwrap();
        assert_eq!(f_cr.get(2, 1, 1), cv.get(2, 0, 1, 1));
        assert!(matches!(ray_compensate(&cv, &w, Some(3)), Err(RccvError::BadChannel(3))));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut k = Conv2d::zeros(2, 2, 3);
        for (n, v) in k.weight.iter_mut().enumerate() {
            *v = (n as f32 * 0.37).sin();
        }
        k.bias = vec![0.5, -0.25];
        let (h, w) = (4, 5);
        let input: Vec<f32> = (0..2 * h * w).map(|n| (n as f32 * 0.11).cos()).collect();
        let mut out = vec![0.0; 2 * h * w];
        k.apply(&input, h, w, &mut out);
        for o in 0..2 {
            for r in 0..h as isize {
                for c in 0..w as isize {
                    let mut s = k.bias[o] as f64;
                    for i in 0..2 {
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let (sr, sc) = (r + dy, c + dx);
                                if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                                    continue;
                                }
                                let wt = k.weight[k.index(o, i, (dy + 1) as usize, (dx + 1) as usize)];
                                s += (wt * input[i * h * w + (sr * w as isize + sc) as usize]) as f64;
                            }
                        }
                    }
                    let got = out[o * h * w + (r * w as isize + c) as usize] as f64;
                    assert!((got - s).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn group_kernels_differ_per_plane() {
        let l = layout(5, true, 2);
        let w = CompensationWeights::seeded(l, 3);
        let rcv = PlaneStack {
            data: vec![0.0; 5 * (3 + 5) * 20],
            valid: vec![true; 5 * 20],
            ..PlaneStack::zeros(5, 8, 4, 5)
        };
        let mut key = FeatureMap::zeros(2, 4, 5);
        key.data.iter_mut().enumerate().for_each(|(n, v)| *v = 1.0 + n as f32 * 0.01);
        let out = contextual_compensate(&rcv, Some(&key), &w, CtxMode::Group).unwrap();
        assert_ne!(out.plane(0), out.plane(1));
        let mut want = vec![0.0f32; 3 * 20];
        let mut input = vec![0.0f32; 10 * 20];
        input[8 * 20..].copy_from_slice(&key.data);
        w.plane_kernels[2].apply(&input, 4, 5, &mut want);
        assert_eq!(out.plane(2), &want[..]);
    }

    #[test]
    fn modes_keep_mask_and_shape() {
        let l = layout(4, true, 2);
        let w = CompensationWeights::seeded(l, 3);
        let mut cv = stack(4, 3);
        cv.valid[7] = false;
        let mut key = FeatureMap::zeros(2, 4, 5);
        key.data.iter_mut().for_each(|v| *v = 0.3);
        let (_, rcv) = ray_compensate(&cv, &w, None).unwrap();
        for mode in [CtxMode::Concat, CtxMode::Uni, CtxMode::Group] {
            let out = contextual_compensate(&rcv, Some(&key), &w, mode).unwrap();
            assert_eq!(out.valid, cv.valid);
            assert_eq!(out.shape(), [4, 3, 4, 5]);
            assert!((0..3).all(|ch| out.get(0, ch, 1, 2) == 0.0));
        }
        let small = FeatureMap::zeros(2, 3, 5);
        assert!(matches!(
            contextual_compensate(&rcv, Some(&small), &w, CtxMode::Group),
            Err(RccvError::DimMismatch { .. })
        ));
    }

    #[test]
    fn last_row_keeps_confidence() {
        let l = layout(4, true, 2);
        let w = CompensationWeights::seeded(l, 9);
        let cv = stack(4, 3);
        let mut key = FeatureMap::zeros(2, 4, 5);
        key.data.iter_mut().for_each(|v| *v = 0.7);
        for mode in [CtxMode::Concat, CtxMode::Uni, CtxMode::Group] {
            let out = compensate(&cv, &key, &w, Compensation::RayCtx, mode, None).unwrap();
            for i in 0..4 {
                assert!((out.get(i, 2, 1, 1) - cv.get(i, 2, 1, 1)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn weights_round_trip_through_sections() {
        let l = layout(3, true, 2);
        let w = CompensationWeights::seeded(l, 4);
        let s = w.to_sections();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = Sections::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(CompensationWeights::from_sections(&back, l).unwrap(), w);
        let other = layout(3, false, 2);
        assert!(CompensationWeights::from_sections(&back, other).is_err());
    }

    #[test]
    fn footprints() {
        assert_eq!(footprint_bytes([64, 7, 60, 80], 2), 4_300_800);
        assert_eq!(footprint_bytes([32, 1, 60, 80], 2), 307_200);
        assert_eq!(footprint_bytes([1, 1, 1, 1], 4), 4);
    }
}

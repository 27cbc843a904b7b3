//! Pinhole cameras, rigid poses and log-spaced depth hypotheses.
//!
//! Pixel coordinates are continuous with the center of pixel `(col, row)` at
//! `(col as f64, row as f64)`. Poses are world-from-camera; camera frames
//! follow the usual computer-vision convention (x right, y down, z forward).

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Point2, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid depth range [{d_min}, {d_max}]")]
    InvalidRange { d_min: f64, d_max: f64 },
    #[error("invalid plane count {0}, need at least 2")]
    InvalidCount(usize),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("malformed {what} file: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be finite and positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidIntrinsics("empty image size".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics of the same camera sampled on a grid `factor` times coarser,
    /// where each coarse cell covers a `factor`×`factor` block of pixels.
    pub fn downscaled(&self, factor: usize) -> Intrinsics {
        let f = factor as f64;
        Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx + 0.5) / f - 0.5,
            cy: (self.cy + 0.5) / f - 0.5,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Parses `fx fy cx cy width height` from a single line.
    pub fn parse(text: &str) -> Result<Self, CameraError> {
        let parts: Vec<&str> = text.split_whitespace().collect();
        let malformed = |detail: String| CameraError::Malformed {
            what: "intrinsics",
            detail,
        };
        if parts.len() != 6 {
            return Err(malformed(format!("expected 6 values, found {}", parts.len())));
        }
        let mut f = [0.0f64; 4];
        for (slot, s) in f.iter_mut().zip(&parts[..4]) {
            *slot = s.parse().map_err(|_| malformed(format!("bad number {s:?}")))?;
        }
        let dim = |s: &str| -> Result<usize, CameraError> {
            // Tolerate "640.0" style sizes.
            s.parse::<usize>()
                .or_else(|_| match s.parse::<f64>() {
                    Ok(v) if v.fract() == 0.0 && v > 0.0 => Ok(v as usize),
                    _ => Err(()),
                })
                .map_err(|_| malformed(format!("bad image size {s:?}")))
        };
        Intrinsics::new(f[0], f[1], f[2], f[3], dim(parts[4])?, dim(parts[5])?)
    }

    pub fn load(path: &Path) -> Result<Self, CameraError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        )
    }
}

/// Rigid world-from-camera transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHO_TOL: f64 = 1e-6;

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, CameraError> {
        Self::with_tolerance(rotation, translation, ORTHO_TOL)
    }

    fn with_tolerance(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tol: f64,
    ) -> Result<Self, CameraError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(CameraError::InvalidPose("non-finite entry".into()));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > tol {
            return Err(CameraError::InvalidPose(format!(
                "rotation not orthonormal (|RᵀR - I| = {err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(CameraError::InvalidPose(format!("det(R) = {det}")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(r: Rotation3<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: *r.matrix(),
            translation: t,
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    /// The camera's y axis points opposite to `up` in the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| CameraError::InvalidPose("eye equals target".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| CameraError::InvalidPose("viewing direction parallel to up".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Ok(Self {
            rotation,
            translation: eye,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a world point into this pose's local frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Distance between camera centers, meters.
    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Relative rotation angle, degrees.
    pub fn rotation_angle_deg(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }

    /// Parses 16 whitespace-separated floats (row-major 4×4).
    ///
    /// Returns `Ok(None)` when the matrix holds non-finite values; callers
    /// drop such frames. Slightly non-orthonormal rotations (text rounding)
    /// are re-orthonormalized.
    pub fn parse(text: &str) -> Result<Option<Self>, CameraError> {
        let malformed = |detail: String| CameraError::Malformed {
            what: "pose",
            detail,
        };
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| malformed(format!("bad number {s:?}"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != 16 {
            return Err(malformed(format!("expected 16 values, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let m = Matrix4::from_row_slice(&vals);
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = m.fixed_view::<3, 1>(0, 3).into_owned();
        let pose = Self::with_tolerance(r, t, 1e-3).map_err(|e| malformed(e.to_string()))?;
        let rot = Rotation3::from_matrix_eps(&pose.rotation, 1e-12, 100, Rotation3::identity());
        Ok(Some(Pose {
            rotation: *rot.matrix(),
            translation: t,
        }))
    }

    pub fn load(path: &Path) -> Result<Option<Self>, CameraError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Row-major 4×4, four lines, round-trip exact.
    pub fn to_text(&self) -> String {
        let m = self.to_matrix();
        let mut s = String::new();
        for r in 0..4 {
            let row: Vec<String> = (0..4).map(|c| format!("{:e}", m[(r, c)])).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_text())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }

    /// Same pose, intrinsics for a grid `factor` times coarser.
    pub fn downscaled(&self, factor: usize) -> Camera {
        Camera {
            intrinsics: self.intrinsics.downscaled(factor),
            pose: self.pose,
        }
    }

    /// Camera-frame direction through `pixel` with unit z.
    pub fn ray_camera(&self, pixel: Point2<f64>) -> Vector3<f64> {
        let k = &self.intrinsics;
        Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0)
    }

    /// World point at camera-frame depth `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: Point2<f64>, depth: f64) -> Vector3<f64> {
        debug_assert!(depth > 0.0, "unproject requires positive depth");
        self.pose.transform_point(&(self.ray_camera(pixel) * depth))
    }

    /// Projects a camera-frame point.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Result<(Point2<f64>, f64), CameraError> {
        if !(p.z > 0.0) {
            return Err(CameraError::BehindCamera(p.z));
        }
        let k = &self.intrinsics;
        let u = k.fx * p.x / p.z + k.cx;
        let v = k.fy * p.y / p.z + k.cy;
        Ok((Point2::new(u, v), p.z))
    }

    /// Projects a world point, returning the pixel and camera-frame depth.
    pub fn project(&self, world: &Vector3<f64>) -> Result<(Point2<f64>, f64), CameraError> {
        self.project_camera(&self.pose.inverse_transform_point(world))
    }

    /// Whether a continuous pixel lies within the image's sample support.
    pub fn in_bounds(&self, pixel: &Point2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width() - 1) as f64
            && pixel.y <= (self.height() - 1) as f64
    }
}

/// Depth hypotheses spaced evenly in log depth, endpoints inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthPlanes {
    d_min: f64,
    d_max: f64,
    values: Vec<f64>,
}

impl DepthPlanes {
    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn depth(&self, index: usize) -> f64 {
        self.values[index]
    }

    fn log_step(&self) -> f64 {
        (self.d_max / self.d_min).ln() / (self.count() - 1) as f64
    }

    /// Fractional plane coordinate of `depth` (0 at `d_min`, `count-1` at `d_max`).
    pub fn plane_coordinate(&self, depth: f64) -> f64 {
        (depth / self.d_min).ln() / self.log_step()
    }

    /// Depth at a fractional plane coordinate; inverse of [`Self::plane_coordinate`].
    pub fn depth_at(&self, coordinate: f64) -> f64 {
        self.d_min * (coordinate * self.log_step()).exp()
    }

    /// Index of the plane nearest to `depth` in log space.
    pub fn nearest_index(&self, depth: f64) -> usize {
        let c = self.plane_coordinate(depth).round();
        c.clamp(0.0, (self.count() - 1) as f64) as usize
    }
}

/// `D_i = d_min · (d_max/d_min)^((i−1)/(count−1))`.
pub fn make_log_planes(d_min: f64, d_max: f64, count: usize) -> Result<DepthPlanes, CameraError> {
    if !(d_min.is_finite() && d_max.is_finite()) || d_min <= 0.0 || d_min >= d_max {
        return Err(CameraError::InvalidRange { d_min, d_max });
    }
    if count < 2 {
        return Err(CameraError::InvalidCount(count));
    }
    let ratio = d_max / d_min;
    let last = (count - 1) as f64;
    let mut values: Vec<f64> = (0..count)
        .map(|i| d_min * ratio.powf(i as f64 / last))
        .collect();
    values[0] = d_min;
    values[count - 1] = d_max;
    Ok(DepthPlanes {
        d_min,
        d_max,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(fx: f64, cx: f64, pose: Pose) -> Camera {
        Camera::new(Intrinsics::new(fx, fx, cx, cx, 100, 100).unwrap(), pose)
    }

    #[test]
    fn log_plane_endpoints() {
        let p = make_log_planes(0.25, 5.0, 64).unwrap();
        assert_eq!(p.depth(0), 0.25);
        assert_eq!(p.depth(63), 5.0);
        let e = std::f64::consts::E;
        let two = make_log_planes(1.0, e, 2).unwrap();
        assert_eq!(two.values(), &[1.0, e]);
    }

    #[test]
    fn log_plane_errors() {
        assert!(matches!(
            make_log_planes(0.0, 1.0, 4),
            Err(CameraError::InvalidRange { .. })
        ));
        assert!(matches!(
            make_log_planes(2.0, 1.0, 4),
            Err(CameraError::InvalidRange { .. })
        ));
        assert!(matches!(
            make_log_planes(1.0, 2.0, 1),
            Err(CameraError::InvalidCount(1))
        ));
    }

    #[test]
    fn plane_coordinate_inverts_planes() {
        let p = make_log_planes(0.25, 5.0, 64).unwrap();
        for (i, &d) in p.values().iter().enumerate() {
            assert!((p.plane_coordinate(d) - i as f64).abs() < 1e-9);
            assert_eq!(p.nearest_index(d), i);
        }
        assert!((p.depth_at(p.plane_coordinate(1.7)) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn unproject_examples() {
        let c = cam(100.0, 50.0, Pose::identity());
        let p = c.unproject(Point2::new(50.0, 50.0), 1.0);
        assert!((p - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        let p = c.unproject(Point2::new(150.0, 50.0), 2.0);
        assert!((p - Vector3::new(2.0, 0.0, 2.0)).norm() < 1e-12);
        let c = cam(100.0, 50.0, Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        let p = c.unproject(Point2::new(50.0, 50.0), 3.0);
        assert!((p - Vector3::new(1.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn project_examples() {
        let c = cam(100.0, 50.0, Pose::identity());
        let (px, d) = c.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((px.x, px.y, d), (50.0, 50.0, 2.0));
        assert!(matches!(
            c.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(CameraError::BehindCamera(_))
        ));
    }

    #[test]
    fn downscaled_maps_block_centers() {
        let k = Intrinsics::new(577.0, 577.0, 319.5, 239.5, 640, 480).unwrap();
        let s = k.downscaled(8);
        assert_eq!((s.width, s.height), (80, 60));
        // Cell (0,0) center sits at full-res pixel 3.5.
        let c_full = Camera::new(k, Pose::identity());
        let c_small = Camera::new(s, Pose::identity());
        let a = c_full.ray_camera(Point2::new(3.5, 3.5));
        let b = c_small.ray_camera(Point2::new(0.0, 0.0));
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn pose_text_round_trip() {
        let p = Pose::look_at(
            Vector3::new(0.3, -1.2, 1.5),
            Vector3::new(1.0, 2.0, 0.5),
            Vector3::z(),
        )
        .unwrap();
        let q = Pose::parse(&p.to_text()).unwrap().unwrap();
        assert!((p.to_matrix() - q.to_matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn pose_parse_filters() {
        let mut vals = vec!["1", "0", "0", "0", "0", "1", "0", "0", "0", "0", "1", "0"];
        vals.extend(["0", "0", "0", "1"]);
        let mut bad = vals.clone();
        bad[3] = "inf";
        assert!(Pose::parse(&bad.join(" ")).unwrap().is_none());
        assert!(Pose::parse(&vals[..15].join(" ")).is_err());
        assert!(Pose::parse(&vals.join(" ")).unwrap().is_some());
    }

    #[test]
    fn intrinsics_parse() {
        let k = Intrinsics::parse("577.5 578 319.5 239.5 640 480").unwrap();
        assert_eq!(k.width, 640);
        assert_eq!(Intrinsics::parse(&k.to_line()).unwrap(), k);
        assert!(Intrinsics::parse("1 2 3").is_err());
        assert!(Intrinsics::parse("-1 2 3 4 10 10").is_err());
        assert!(Intrinsics::parse("1 1 30 4 10 10").is_err());
    }

    #[test]
    fn pose_validation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.1;
        assert!(Pose::new(r, Vector3::zeros()).is_err());
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(flip, Vector3::zeros()).is_err());
    }
}

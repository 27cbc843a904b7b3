//! Synthetic scenes of textured boxes and rectangles, ray-cast into posed
//! RGB images with exact depth, plus their analytic meshes.
//!
//! Scenes are TOML:
//!
//! ```toml
//! [camera]
//! fx = 577.87
//! fy = 577.87
//! cx = 319.5
//! cy = 239.5
//! width = 640
//! height = 480
//!
//! [[primitive]]
//! kind = "plane"
//! center = [0.0, 0.0, 2.0]
//! normal = [0.0, 0.0, -1.0]
//! up = [0.0, -1.0, 0.0]
//! size = [4.0, 3.0]
//! texture = { pattern = "checker_noise", scale = 0.2, contrast = 0.8, seed = 1 }
//!
//! [[primitive]]
//! kind = "box"
//! min = [-0.3, -0.3, 2.5]
//! max = [0.3, 0.3, 3.1]
//!
//! [[pose]]
//! eye = [0.0, 0.0, 0.0]
//! target = [0.0, 0.0, 1.0]
//! up = [0.0, -1.0, 0.0]
//!
//! [orbit]
//! center = [0.0, 0.0, 1.2]
//! radius = 0.6
//! frames = 30
//! ```
//!
//! Explicit `[[pose]]` entries come first, followed by any orbit frames.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::RgbImage;
use nalgebra::{Point2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, CameraError, Intrinsics, Pose};
use crate::dataset::{write_depth_png, DatasetError};
use crate::mesh::{write_ply, MeshError, PlyFormat, TriMesh};
use crate::tsdf::DepthMap;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("frame {index} out of range for {count} poses")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("image write failed: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Dataset(#[from] Box<DatasetError>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Flat,
    Checker,
    Noise,
    #[default]
    CheckerNoise,
}

/// Procedural surface texture in surface coordinates (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Texture {
    pub pattern: Pattern,
    /// Checker period, meters.
    pub scale: f64,
    /// Base noise wavelength, meters; defaults to `scale`.
    pub noise_scale: Option<f64>,
    /// Intensity swing around mid-gray, in `[0, 1]`.
    pub contrast: f64,
    pub seed: u64,
    pub tint: [f64; 3],
}

impl Default for Texture {
    fn default() -> Self {
        Self {
            pattern: Pattern::CheckerNoise,
            scale: 0.2,
            noise_scale: None,
            contrast: 0.8,
            seed: 0,
            tint: [1.0, 1.0, 1.0],
        }
    }
}

fn hash2(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smooth value noise in `[-1, 1]` with unit lattice spacing.
fn value_noise(u: f64, v: f64, seed: u64) -> f64 {
    let (fu, fv) = (u.floor(), v.floor());
    let (iu, iv) = (fu as i64, fv as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (a, b) = (s(u - fu), s(v - fv));
    let n00 = hash2(iu, iv, seed);
    let n10 = hash2(iu + 1, iv, seed);
    let n01 = hash2(iu, iv + 1, seed);
    let n11 = hash2(iu + 1, iv + 1, seed);
    (n00 * (1.0 - a) + n10 * a) * (1.0 - b) + (n01 * (1.0 - a) + n11 * a) * b
}

impl Texture {
    /// Gray level in `[0, 1]` at surface coordinates `(u, v)`.
    pub fn intensity(&self, u: f64, v: f64) -> f64 {
        let s = self.scale.max(1e-6);
        let checker = || {
            let k = (u / s).floor() as i64 + (v / s).floor() as i64;
            if k.rem_euclid(2) == 0 {
                1.0
            } else {
                -1.0
            }
        };
        let noise = || {
            let mut total = 0.0;
            let mut amp = 1.0;
            let mut freq = 1.0 / self.noise_scale.unwrap_or(s).max(1e-6);
            for octave in 0..3u64 {
                total += amp * value_noise(u * freq, v * freq, self.seed.wrapping_add(octave * 7919));
                amp *= 0.5;
                freq *= 2.0;
            }
            total / 1.75
        };
        let p = match self.pattern {
            Pattern::Flat => 0.0,
            Pattern::Checker => checker(),
            Pattern::Noise => noise(),
            Pattern::CheckerNoise => 0.5 * checker() + 0.5 * noise(),
        };
        (0.5 + 0.5 * self.contrast * p).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// Axis-aligned box.
    Box {
        min: [f64; 3],
        max: [f64; 3],
        #[serde(default)]
        texture: Texture,
    },
    /// Rectangle centered at `center`, facing `normal`; `size` is the extent
    /// along `normal × up` and `up` (orthogonalized).
    Plane {
        center: [f64; 3],
        normal: [f64; 3],
        up: [f64; 3],
        size: [f64; 2],
        #[serde(default)]
        texture: Texture,
    },
}

/// Ray hit: parameter along the ray, primitive index, unit normal, surface
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub primitive: usize,
    pub normal: Vector3<f64>,
    pub uv: (f64, f64),
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl Primitive {
    pub fn texture(&self) -> &Texture {
        match self {
            Primitive::Box { texture, .. } | Primitive::Plane { texture, .. } => texture,
        }
    }

    fn plane_frame(center: [f64; 3], normal: [f64; 3], up: [f64; 3]) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let n = v3(normal).normalize();
        let up = v3(up);
        let up = (up - n * n.dot(&up)).normalize();
        let right = n.cross(&up);
        (v3(center), n, right, up)
    }

    fn validate(&self) -> Result<(), SynthError> {
        match self {
            Primitive::Box { min, max, .. } => {
                if (0..3).any(|k| !(min[k] < max[k])) {
                    return Err(SynthError::InvalidScene(format!("box min {min:?} not below max {max:?}")));
                }
            }
            Primitive::Plane { normal, up, size, .. } => {
                let n = v3(*normal);
                let u = v3(*up);
                if n.norm() < 1e-9 || n.normalize().cross(&u).norm() < 1e-9 {
                    return Err(SynthError::InvalidScene("plane normal and up must be independent".into()));
                }
                if !(size[0] > 0.0 && size[1] > 0.0) {
                    return Err(SynthError::InvalidScene(format!("plane size {size:?}")));
                }
            }
        }
        Ok(())
    }

    /// Nearest intersection with `t > 0`; from inside a box the exit face
    /// is hit.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>, (f64, f64))> {
        match self {
            Primitive::Plane {
                center,
                normal,
                up,
                size,
                ..
            } => {
                let (c, n, right, up) = Self::plane_frame(*center, *normal, *up);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(c - origin)) / denom;
                if !(t > 0.0) {
                    return None;
                }
                let d = origin + dir * t - c;
                let (u, v) = (d.dot(&right), d.dot(&up));
                if u.abs() > size[0] / 2.0 || v.abs() > size[1] / 2.0 {
                    return None;
                }
                Some((t, n, (u, v)))
            }
            Primitive::Box { min, max, .. } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut ax0, mut ax1) = (0usize, 0usize);
                for k in 0..3 {
                    if dir[k].abs() < 1e-15 {
                        if origin[k] < min[k] || origin[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - origin[k]) / dir[k];
                    let b = (max[k] - origin[k]) / dir[k];
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    if lo > t0 {
                        t0 = lo;
                        ax0 = k;
                    }
                    if hi < t1 {
                        t1 = hi;
                        ax1 = k;
                    }
                }
                if t0 > t1 || t1 <= 0.0 {
                    return None;
                }
                let (t, axis) = if t0 > 0.0 { (t0, ax0) } else { (t1, ax1) };
                let p = origin + dir * t;
                let mut n = Vector3::zeros();
                let mid = (min[axis] + max[axis]) / 2.0;
                n[axis] = if p[axis] > mid { 1.0 } else { -1.0 };
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                Some((t, n, (p[a], p[b])))
            }
        }
    }

    /// Exact triangulation: 2 triangles per rectangle, 12 per box, wound
    /// counter-clockwise around the outward normal.
    pub fn mesh(&self) -> TriMesh {
        match self {
            Primitive::Plane {
                center,
                normal,
                up,
                size,
                ..
            } => {
                let (c, _, right, up) = Self::plane_frame(*center, *normal, *up);
                let (hu, hv) = (size[0] / 2.0, size[1] / 2.0);
                TriMesh {
                    vertices: vec![
                        c - right * hu - up * hv,
                        c + right * hu - up * hv,
                        c + right * hu + up * hv,
                        c - right * hu + up * hv,
                    ],
                    triangles: vec![[0, 2, 1], [0, 3, 2]],
                }
            }
            Primitive::Box { min, max, .. } => {
                let corner = |i: usize| {
                    Vector3::new(
                        if i & 1 == 0 { min[0] } else { max[0] },
                        if i & 2 == 0 { min[1] } else { max[1] },
                        if i & 4 == 0 { min[2] } else { max[2] },
                    )
                };
                TriMesh {
                    vertices: (0..8).map(corner).collect(),
                    triangles: vec![
                        [0, 2, 3],
                        [0, 3, 1],
                        [4, 5, 7],
                        [4, 7, 6],
                        [0, 1, 5],
                        [0, 5, 4],
                        [2, 6, 7],
                        [2, 7, 3],
                        [0, 4, 6],
                        [0, 6, 2],
                        [1, 3, 7],
                        [1, 7, 5],
                    ],
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum PoseSpec {
    LookAt {
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    },
    /// Row-major 4×4 world-from-camera.
    Matrix { matrix: Vec<f64> },
}

/// Cameras on a horizontal circle (world z up) looking outward or inward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Orbit {
    pub center: [f64; 3],
    pub radius: f64,
    pub frames: usize,
    #[serde(default = "default_arc")]
    pub arc_deg: f64,
    #[serde(default = "default_true")]
    pub outward: bool,
    /// Positive tilts the view down.
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub start_deg: f64,
}

fn default_arc() -> f64 {
    360.0
}

fn default_true() -> bool {
    true
}

impl Orbit {
    pub fn poses(&self) -> Result<Vec<Pose>, SynthError> {
        let c = v3(self.center);
        let step = if (self.arc_deg - 360.0).abs() < 1e-9 {
            self.arc_deg / self.frames as f64
        } else {
            self.arc_deg / (self.frames.max(2) - 1) as f64
        };
        (0..self.frames)
            .map(|k| {
                let phi = (self.start_deg + step * k as f64).to_radians();
                let radial = Vector3::new(phi.cos(), phi.sin(), 0.0);
                let eye = c + radial * self.radius;
                let horiz = if self.outward { radial } else { -radial };
                let pitch = self.pitch_deg.to_radians();
                let fwd = horiz * pitch.cos() - Vector3::z() * pitch.sin();
                Ok(Pose::look_at(eye, eye + fwd, Vector3::z())?)
            })
            .collect()
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    camera: Intrinsics,
    #[serde(default)]
    primitive: Vec<Primitive>,
    #[serde(default)]
    pose: Vec<PoseSpec>,
    orbit: Option<Orbit>,
    #[serde(default)]
    light: Option<[f64; 3]>,
    #[serde(default)]
    ambient: Option<f64>,
}

pub const DEFAULT_LIGHT: [f64; 3] = [0.3, 0.5, -0.8];
pub const DEFAULT_AMBIENT: f64 = 0.45;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub camera: Intrinsics,
    pub primitives: Vec<Primitive>,
    pub poses: Vec<Pose>,
    /// Direction the light travels (world).
    pub light: Vector3<f64>,
    pub ambient: f64,
}

impl SceneSpec {
    pub fn new(camera: Intrinsics, primitives: Vec<Primitive>, poses: Vec<Pose>) -> Result<Self, SynthError> {
        let s = Self {
            camera,
            primitives,
            poses,
            light: v3(DEFAULT_LIGHT).normalize(),
            ambient: DEFAULT_AMBIENT,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.camera.validate()?;
        if self.primitives.is_empty() {
            return Err(SynthError::InvalidScene("no primitives".into()));
        }
        if self.poses.is_empty() {
            return Err(SynthError::InvalidScene("no poses".into()));
        }
        for p in &self.primitives {
            p.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let f: SceneFile = toml::from_str(text)?;
        let mut poses = Vec::new();
        for p in &f.pose {
            poses.push(match p {
                PoseSpec::LookAt { eye, target, up } => Pose::look_at(v3(*eye), v3(*target), v3(*up))?,
                PoseSpec::Matrix { matrix } => {
                    if matrix.len() != 16 {
                        return Err(SynthError::InvalidScene(format!("pose matrix has {} values", matrix.len())));
                    }
                    let text = matrix.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
                    Pose::parse(&text)?.ok_or_else(|| SynthError::InvalidScene("non-finite pose".into()))?
                }
            });
        }
        if let Some(o) = &f.orbit {
            poses.extend(o.poses()?);
        }
        let mut s = Self::new(f.camera, f.primitive, poses)?;
        if let Some(l) = f.light {
            s.light = v3(l).normalize();
        }
        if let Some(a) = f.ambient {
            s.ambient = a.clamp(0.0, 1.0);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn camera(&self, index: usize) -> Result<Camera, SynthError> {
        let pose = self.poses.get(index).ok_or(SynthError::IndexOutOfRange {
            index,
            count: self.poses.len(),
        })?;
        Ok(Camera::new(self.camera, *pose))
    }

    /// Nearest hit along `origin + t·dir`; ties go to the lower primitive
    /// index.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, normal, uv)) = p.intersect(origin, dir) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        primitive: i,
                        normal,
                        uv,
                    });
                }
            }
        }
        best
    }

    /// Ray-casts one frame: camera-frame z depth (0 = no hit) and shaded
    /// color. Pixel `(c, r)` samples the ray through its center coordinate.
    pub fn render(&self, index: usize) -> Result<(RgbImage, DepthMap), SynthError> {
        let cam = self.camera(index)?;
        let (w, h) = (cam.width(), cam.height());
        let origin = cam.center();
        let rot = *cam.pose.rotation();
        let rows: Vec<(Vec<u8>, Vec<f32>)> = (0..h)
            .into_par_iter()
            .map(|r| {
                let mut rgb = vec![0u8; w * 3];
                let mut depth = vec![0.0f32; w];
                for c in 0..w {
                    // Unit camera-frame z, so the ray parameter is the depth.
                    let dir = rot * cam.ray_camera(Point2::new(c as f64, r as f64));
                    let Some(hit) = self.cast(&origin, &dir) else {
                        continue;
                    };
                    depth[c] = hit.t as f32;
                    let tex = self.primitives[hit.primitive].texture();
                    let albedo = tex.intensity(hit.uv.0, hit.uv.1);
                    let shade = self.ambient + (1.0 - self.ambient) * hit.normal.dot(&self.light).abs();
                    for k in 0..3 {
                        rgb[c * 3 + k] = (255.0 * (albedo * shade * tex.tint[k]).clamp(0.0, 1.0)).round() as u8;
                    }
                }
                (rgb, depth)
            })
            .collect();
        let mut pixels = Vec::with_capacity(w * h * 3);
        let mut depth = Vec::with_capacity(w * h);
        for (rgb, d) in rows {
            pixels.extend(rgb);
            depth.extend(d);
        }
        let img = RgbImage::from_raw(w as u32, h as u32, pixels).expect("buffer size");
        Ok((img, DepthMap::new(w, h, depth, cam).expect("sizes match")))
    }

    /// Union of every primitive's triangulation, in primitive order.
    pub fn analytic_mesh(&self) -> TriMesh {
        let mut m = TriMesh::new();
        for p in &self.primitives {
            m.append(&p.mesh());
        }
        m
    }

    /// Writes `color/`, `depth/` (16-bit millimeters), `pose/`,
    /// `intrinsics.txt` and `gt_mesh.ply` under `out`.
    pub fn emit_dataset(&self, out: &Path) -> Result<(), SynthError> {
        for d in ["color", "depth", "pose"] {
            fs::create_dir_all(out.join(d))?;
        }
        fs::write(out.join("intrinsics.txt"), format!("{}\n", self.camera.to_line()))?;
        (0..self.poses.len()).into_par_iter().try_for_each(|i| -> Result<(), SynthError> {
            let (img, depth) = self.render(i)?;
            img.save(out.join("color").join(format!("{i:06}.png")))?;
            write_depth_png(&depth, &out.join("depth").join(format!("{i:06}.png")))
                .map_err(Box::new)?;
            fs::write(out.join("pose").join(format!("{i:06}.txt")), self.poses[i].to_text())?;
            Ok(())
        })?;
        let mut w = BufWriter::new(fs::File::create(out.join("gt_mesh.ply"))?);
        write_ply(&self.analytic_mesh(), PlyFormat::BinaryLittleEndian, &mut w)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr() -> Intrinsics {
        Intrinsics::new(50.0, 50.0, 31.5, 23.5, 64, 48).unwrap()
    }

    fn wall(z: f64) -> Primitive {
        Primitive::Plane {
            center: [0.0, 0.0, z],
            normal: [0.0, 0.0, -1.0],
            up: [0.0, -1.0, 0.0],
            size: [20.0, 20.0],
            texture: Texture::default(),
        }
    }

    #[test]
    fn fronto_parallel_wall_depth() {
        let s = SceneSpec::new(intr(), vec![wall(2.0)], vec![Pose::identity()]).unwrap();
        let (_, d) = s.render(0).unwrap();
        assert!(d.values().iter().all(|&v| (v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn empty_view_is_zero_and_index_checked() {
        let s = SceneSpec::new(intr(), vec![wall(-2.0)], vec![Pose::identity()]).unwrap();
        let (_, d) = s.render(0).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
        assert!(matches!(s.render(1), Err(SynthError::IndexOutOfRange { .. })));
    }

    #[test]
    fn rendering_is_deterministic() {
        let b = Primitive::Box {
            min: [-0.3, -0.2, 1.5],
            max: [0.2, 0.3, 2.0],
            texture: Texture::default(),
        };
        let s = SceneSpec::new(intr(), vec![wall(3.0), b], vec![Pose::identity()]).unwrap();
        let (a1, d1) = s.render(0).unwrap();
        let (a2, d2) = s.render(0).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(d1, d2);
    }

    #[test]
    fn box_depth_matches_closed_form() {
        let b = Primitive::Box {
            min: [-0.5, -0.5, 1.0],
            max: [0.5, 0.5, 2.0],
            texture: Texture::default(),
        };
        let eye = Pose::look_at(Vector3::new(0.7, -0.4, -0.5), Vector3::new(0.0, 0.0, 1.5), Vector3::new(0.0, -1.0, 0.0))
            .unwrap();
        let s = SceneSpec::new(intr(), vec![b], vec![eye]).unwrap();
        let (_, d) = s.render(0).unwrap();
        let cam = s.camera(0).unwrap();
        let mut hits = 0;
        for r in 0..48 {
            for c in 0..64 {
                let dir = cam.pose.rotation() * cam.ray_camera(Point2::new(c as f64, r as f64));
                let o = cam.center();
                // Closed form: nearest face plane crossing inside the face rectangle.
                let mut best = f64::INFINITY;
                for axis in 0..3 {
                    for bound in [-0.5, 0.5] {
                        let plane = if axis == 2 { 1.5 + bound } else { bound };
                        if dir[axis].abs() < 1e-12 {
                            continue;
                        }
                        let t = (plane - o[axis]) / dir[axis];
                        let p = o + dir * t;
                        let inside = (0..3).all(|k| {
                            let (lo, hi) = if k == 2 { (1.0, 2.0) } else { (-0.5, 0.5) };
                            k == axis || (p[k] >= lo - 1e-12 && p[k] <= hi + 1e-12)
                        });
                        if t > 0.0 && inside {
                            best = best.min(t);
                        }
                    }
                }
                let got = d.get(r, c) as f64;
                if best.is_finite() {
                    hits += 1;
                    assert!((got - best).abs() < 1e-6 * best.max(1.0), "({r},{c}) {got} vs {best}");
                } else {
                    assert_eq!(got, 0.0);
                }
            }
        }
        assert!(hits > 100);
    }

    #[test]
    fn analytic_mesh_counts() {
        let b = Primitive::Box {
            min: [0.0; 3],
            max: [1.0; 3],
            texture: Texture::default(),
        };
        let s = SceneSpec::new(intr(), vec![b.clone()], vec![Pose::identity()]).unwrap();
        let m = s.analytic_mesh();
        assert_eq!(m.triangles.len(), 12);
        assert!(m.is_watertight());
        assert!((m.area() - 6.0).abs() < 1e-12);
        let s = SceneSpec::new(intr(), vec![wall(1.0)], vec![Pose::identity()]).unwrap();
        assert_eq!(s.analytic_mesh().triangles.len(), 2);
        let s = SceneSpec::new(intr(), vec![b, wall(1.0)], vec![Pose::identity()]).unwrap();
        let m = s.analytic_mesh();
        assert_eq!(m.triangles.len(), 14);
        assert!(m.triangles[12..].iter().flatten().all(|&i| i >= 8));
    }

    #[test]
    fn box_normals_point_outward() {
        let b = Primitive::Box {
            min: [0.0; 3],
            max: [1.0, 2.0, 3.0],
            texture: Texture::default(),
        };
        let m = b.mesh();
        let center = Vector3::new(0.5, 1.0, 1.5);
        for t in 0..m.triangles.len() {
            let [a, bb, c] = m.triangle(t);
            let n = (bb - a).cross(&(c - a));
            assert!(n.dot(&(a - center)) > 0.0, "triangle {t}");
        }
    }

    #[test]
    fn toml_scene_with_orbit() {
        let text = r#"
            [camera]
            fx = 50.0
            fy = 50.0
            cx = 31.5
            cy = 23.5
            width = 64
            height = 48

            [[primitive]]
            kind = "box"
            min = [-2.0, -2.0, 0.0]
            max = [2.0, 2.0, 2.5]
            texture = { pattern = "checker", scale = 0.3, seed = 4 }

            [[pose]]
            eye = [0.0, 0.0, 1.0]
            target = [1.0, 0.0, 1.0]
            up = [0.0, 0.0, 1.0]

            [orbit]
            center = [0.0, 0.0, 1.2]
            radius = 0.5
            frames = 6
        "#;
        let s = SceneSpec::from_toml(text).unwrap();
        assert_eq!(s.poses.len(), 7);
        let (_, d) = s.render(3).unwrap();
        assert!(d.values().iter().all(|&v| v > 0.0));
        assert!(SceneSpec::from_toml(&text.replace("radius", "radios")).is_err());
    }

    #[test]
    fn low_contrast_texture_is_flat() {
        let t = Texture {
            contrast: 0.0,
            ..Texture::default()
        };
        assert_eq!(t.intensity(0.13, 0.71), 0.5);
        let t = Texture::default();
        let vals: Vec<f64> = (0..50).map(|k| t.intensity(k as f64 * 0.037, 0.2)).collect();
        let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 0.3);
    }
}

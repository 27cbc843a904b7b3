//! Posed RGB-D sequences on disk, keyframe selection and reference
//! assignment.
//!
//! Layout: `color/%06d.png`, `pose/%06d.txt` (world-from-camera, row-major
//! 4×4), optional `depth/%06d.png` (16-bit millimeters, 0 = invalid) and a
//! single-line `intrinsics.txt` (`fx fy cx cy width height`).

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageReader, Luma, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, CameraError, Intrinsics, Pose};
use crate::tsdf::DepthMap;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing directory or file {0}")]
    Missing(PathBuf),
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("frame {index}: malformed pose: {detail}")]
    MalformedPose { index: usize, detail: String },
    #[error("frame {index}: {what} is {got_w}x{got_h}, camera is {want_w}x{want_h}")]
    SizeMismatch {
        index: usize,
        what: &'static str,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("frame {index}: {detail}")]
    Image { index: usize, detail: String },
    #[error("need {need} reference candidates, only {have} available")]
    InsufficientFrames { need: usize, have: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub index: usize,
    pub image: RgbImage,
    pub camera: Camera,
    pub gt_depth: Option<DepthMap>,
}

/// Frames sorted by index plus the indices dropped for non-finite poses.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    pub dropped: Vec<usize>,
}

impl Sequence {
    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.camera.pose).collect()
    }
}

fn frame_indices(dir: &Path) -> Result<Vec<usize>, DatasetError> {
    if !dir.is_dir() {
        return Err(DatasetError::Missing(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(i) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) {
            out.push(i);
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn load_frame(root: &Path, index: usize, intrinsics: &Intrinsics) -> Result<Option<Frame>, DatasetError> {
    let name = format!("{index:06}");
    let pose_path = root.join("pose").join(format!("{name}.txt"));
    if !pose_path.is_file() {
        return Err(DatasetError::Missing(pose_path));
    }
    let pose = match Pose::load(&pose_path) {
        Ok(Some(p)) => p,
        Ok(None) => return Ok(None),
        Err(e) => {
            return Err(DatasetError::MalformedPose {
                index,
                detail: e.to_string(),
            })
        }
    };
    let camera = Camera::new(*intrinsics, pose);
    let decode_err = |e: image::ImageError| DatasetError::Image {
        index,
        detail: e.to_string(),
    };
    let image = ImageReader::open(root.join("color").join(format!("{name}.png")))?
        .decode()
        .map_err(decode_err)?
        .into_rgb8();
    let check = |what, w: u32, h: u32| {
        if w as usize != intrinsics.width || h as usize != intrinsics.height {
            Err(DatasetError::SizeMismatch {
                index,
                what,
                got_w: w as usize,
                got_h: h as usize,
                want_w: intrinsics.width,
                want_h: intrinsics.height,
            })
        } else {
            Ok(())
        }
    };
    check("color image", image.width(), image.height())?;
    let depth_path = root.join("depth").join(format!("{name}.png"));
    let gt_depth = if depth_path.is_file() {
        let d = ImageReader::open(&depth_path)?.decode().map_err(decode_err)?.into_luma16();
        check("depth image", d.width(), d.height())?;
        Some(
            DepthMap::from_millimeters(d.width() as usize, d.height() as usize, d.as_raw(), camera).map_err(|e| {
                DatasetError::Image {
                    index,
                    detail: e.to_string(),
                }
            })?,
        )
    } else {
        None
    };
    Ok(Some(Frame {
        index,
        image,
        camera,
        gt_depth,
    }))
}

/// Writes a depth map as a 16-bit millimeter PNG.
pub fn write_depth_png(depth: &DepthMap, path: &Path) -> Result<(), DatasetError> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, depth.to_millimeters()).expect("buffer size");
    img.save(path).map_err(|e| DatasetError::Image {
        index: 0,
        detail: format!("{}: {e}", path.display()),
    })
}

/// Width and height of an image file.
pub fn png_size(path: &Path) -> Result<(usize, usize), DatasetError> {
    let (w, h) = image::image_dimensions(path).map_err(|e| DatasetError::Image {
        index: 0,
        detail: format!("{}: {e}", path.display()),
    })?;
    Ok((w as usize, h as usize))
}

/// Reads a 16-bit millimeter PNG taken by `camera`.
pub fn read_depth_png(path: &Path, camera: Camera) -> Result<DepthMap, DatasetError> {
    let err = |detail: String| DatasetError::Image {
        index: 0,
        detail: format!("{}: {detail}", path.display()),
    };
    let d = ImageReader::open(path)?.decode().map_err(|e| err(e.to_string()))?.into_luma16();
    DepthMap::from_millimeters(d.width() as usize, d.height() as usize, d.as_raw(), camera).map_err(|e| err(e.to_string()))
}

/// Loads every frame under `root`, decoding in parallel.
pub fn load_sequence(root: &Path) -> Result<Sequence, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::Missing(root.to_path_buf()));
    }
    let intr_path = root.join("intrinsics.txt");
    if !intr_path.is_file() {
        return Err(DatasetError::Missing(intr_path));
    }
    let intrinsics = Intrinsics::load(&intr_path)?;
    let indices = frame_indices(&root.join("color"))?;
    if indices.is_empty() {
        return Err(DatasetError::NoFrames(root.join("color")));
    }
    let loaded: Vec<Option<Frame>> = indices
        .par_iter()
        .map(|&i| load_frame(root, i, &intrinsics))
        .collect::<Result<_, _>>()?;
    let mut frames = Vec::with_capacity(loaded.len());
    let mut dropped = Vec::new();
    for (i, f) in indices.into_iter().zip(loaded) {
        match f {
            Some(f) => frames.push(f),
            None => dropped.push(i),
        }
    }
    if frames.is_empty() {
        return Err(DatasetError::NoFrames(root.join("color")));
    }
    Ok(Sequence { frames, dropped })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframeParams {
    /// Minimum translation to the last keyframe, meters.
    pub trans: f64,
    /// Minimum rotation to the last keyframe, degrees.
    pub rot_deg: f64,
}

impl Default for KeyframeParams {
    fn default() -> Self {
        Self {
            trans: 0.1,
            rot_deg: 15.0,
        }
    }
}

/// Slack on the keyframe thresholds so steps that sum to exactly the
/// threshold in decimal still trigger despite binary rounding.
const THRESHOLD_EPS: f64 = 1e-9;

/// Positions (into `poses`) of the keyframes. The first pose is always kept;
/// later poses are kept when far enough from the last kept one.
pub fn select_keyframes(poses: &[Pose], params: KeyframeParams) -> Result<Vec<usize>, DatasetError> {
    if !(params.trans > 0.0 && params.rot_deg > 0.0) {
        return Err(DatasetError::InvalidParam(format!(
            "keyframe thresholds must be > 0, got {} m / {} deg",
            params.trans, params.rot_deg
        )));
    }
    let mut kept: Vec<usize> = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        let keep = match kept.last() {
            None => true,
            Some(&last) => {
                pose.translation_distance(&poses[last]) >= params.trans - THRESHOLD_EPS
                    || pose.rotation_angle_deg(&poses[last]) >= params.rot_deg - THRESHOLD_EPS
            }
        };
        if keep {
            kept.push(i);
        }
    }
    Ok(kept)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceParams {
    pub count: usize,
    /// Preferred keyframe-to-reference translation, meters.
    pub t_ideal: f64,
    /// Penalty per degree of relative rotation, meters.
    pub lambda: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        Self {
            count: 4,
            t_ideal: 0.15,
            lambda: 1.0 / 30.0,
        }
    }
}

impl ReferenceParams {
    pub fn penalty(&self, key: &Pose, candidate: &Pose) -> f64 {
        (key.translation_distance(candidate) - self.t_ideal).abs() + self.lambda * key.rotation_angle_deg(candidate)
    }
}

/// A keyframe and its references, as positions into the frame list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KeyframeBundle {
    pub keyframe: usize,
    pub references: Vec<usize>,
}

/// Picks the `params.count` lowest-penalty frames for each keyframe. Ties go
/// to the lower position.
pub fn assign_references(
    keyframes: &[usize],
    poses: &[Pose],
    params: ReferenceParams,
) -> Result<Vec<KeyframeBundle>, DatasetError> {
    if params.count == 0 {
        return Err(DatasetError::InvalidParam("reference count must be >= 1".into()));
    }
    let have = poses.len().saturating_sub(1);
    if have < params.count {
        return Err(DatasetError::InsufficientFrames {
            need: params.count,
            have,
        });
    }
    keyframes
        .iter()
        .map(|&key| {
            if key >= poses.len() {
                return Err(DatasetError::InvalidParam(format!("keyframe {key} out of range")));
            }
            let mut scored: Vec<(f64, usize)> = (0..poses.len())
                .filter(|&j| j != key)
                .map(|j| (params.penalty(&poses[key], &poses[j]), j))
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            Ok(KeyframeBundle {
                keyframe: key,
                references: scored[..params.count].iter().map(|&(_, j)| j).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    fn line(n: usize, step: f64) -> Vec<Pose> {
        (0..n).map(|i| Pose::from_translation(Vector3::new(i as f64 * step, 0.0, 0.0))).collect()
    }

    #[test]
    fn keyframes_on_a_line() {
        let poses = line(9, 0.05);
        let kf = select_keyframes(&poses, KeyframeParams::default()).unwrap();
        assert_eq!(kf, vec![0, 2, 4, 6, 8]);
        let sub: Vec<Pose> = kf.iter().map(|&i| poses[i]).collect();
        let again = select_keyframes(&sub, KeyframeParams::default()).unwrap();
        assert_eq!(again, (0..sub.len()).collect::<Vec<_>>());
    }

    #[test]
    fn keyframes_degenerate_inputs() {
        let one = line(1, 0.0);
        assert_eq!(select_keyframes(&one, KeyframeParams::default()).unwrap(), vec![0]);
        let same = vec![Pose::identity(); 5];
        assert_eq!(select_keyframes(&same, KeyframeParams::default()).unwrap(), vec![0]);
        let bad = KeyframeParams { trans: 0.0, rot_deg: 15.0 };
        assert!(select_keyframes(&same, bad).is_err());
    }

    #[test]
    fn rotation_triggers_keyframe() {
        let poses: Vec<Pose> = (0..4)
            .map(|i| Pose::from_rotation(Rotation3::from_euler_angles(0.0, (i as f64 * 10.0).to_radians(), 0.0), Vector3::zeros()))
            .collect();
        assert_eq!(select_keyframes(&poses, KeyframeParams::default()).unwrap(), vec![0, 2]);
    }

    #[test]
    fn references_match_brute_force() {
        let poses = line(10, 0.05);
        let params = ReferenceParams {
            count: 2,
            ..Default::default()
        };
        let bundles = assign_references(&[4], &poses, params).unwrap();
        // 0.15 m away on either side: positions 1 and 7.
        assert_eq!(bundles[0].references, vec![1, 7]);
        assert!(!bundles[0].references.contains(&4));
        let too_many = ReferenceParams {
            count: 10,
            ..Default::default()
        };
        assert!(matches!(
            assign_references(&[0], &poses, too_many),
            Err(DatasetError::InsufficientFrames { need: 10, have: 9 })
        ));
    }
}

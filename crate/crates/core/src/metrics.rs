//! Mesh, depth and TSDF evaluation metrics.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tsdf::{DepthMap, TsdfVolume};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty {0} point set")]
    EmptySet(&'static str),
    #[error("no valid pixels")]
    NoValidPixels,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("thresholds must be positive and ascending")]
    BadThresholds,
}

/// Default F-score thresholds, meters; 0.05 is the headline value.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.01, 0.02, 0.03, 0.05, 0.10];

/// Point sets at or below this size are searched exhaustively.
pub const BRUTE_FORCE_LIMIT: usize = 2000;

/// Nearest-neighbor distances over a fixed point set.
pub struct NearestIndex<'a> {
    points: &'a [Vector3<f64>],
    tree: Option<ImmutableKdTree<f64, 3>>,
}

impl<'a> NearestIndex<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let tree = (points.len() > BRUTE_FORCE_LIMIT).then(|| {
            let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
            ImmutableKdTree::new_from_slice(&coords)
        });
        Self { points, tree }
    }

    /// Distance from `q` to the closest point.
    pub fn distance(&self, q: &Vector3<f64>) -> f64 {
        match &self.tree {
            // Recomputed from the winning point so both paths round alike.
            Some(tree) => {
                let hit = tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
                (self.points[hit.item as usize] - q).norm()
            }
            None => self.points.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min),
        }
    }

    pub fn distances(&self, queries: &[Vector3<f64>]) -> Vec<f64> {
        queries.par_iter().map(|q| self.distance(q)).collect()
    }
}

/// Voxels of the ground-truth TSDF that were never observed. Predicted points
/// in such voxels (or outside the grid) are excluded from accuracy and
/// precision.
pub struct OcclusionMask<'a> {
    pub volume: &'a TsdfVolume,
}

impl OcclusionMask<'_> {
    pub fn is_observed(&self, p: &Vector3<f64>) -> bool {
        match self.volume.geometry().voxel_containing(p) {
            Some(i) => self.volume.weights()[i] > 0.0,
            None => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshReport {
    pub accuracy: f64,
    pub completeness: f64,
    pub chamfer: f64,
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub pred_points: usize,
    pub gt_points: usize,
    /// Predicted points dropped by the occlusion mask.
    pub masked_points: usize,
}

impl MeshReport {
    /// F-score at threshold `t`, if `t` was evaluated.
    pub fn f1_at(&self, t: f64) -> Option<f64> {
        self.thresholds.iter().position(|&x| (x - t).abs() < 1e-12).map(|i| self.f1[i])
    }
}

pub fn f_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fraction_below(d: &[f64], t: f64) -> f64 {
    d.iter().filter(|&&x| x < t).count() as f64 / d.len() as f64
}

/// Accuracy, completeness, chamfer and per-threshold precision, recall and
/// F-score between two point sets. A point counts as matched at `t` when its
/// nearest neighbor is strictly closer than `t`.
pub fn mesh_metrics(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    thresholds: &[f64],
    mask: Option<&OcclusionMask>,
) -> Result<MeshReport, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptySet("ground-truth"));
    }
    let kept: Vec<Vector3<f64>> = match mask {
        Some(m) => pred.iter().filter(|p| m.is_observed(p)).copied().collect(),
        None => pred.to_vec(),
    };
    if kept.is_empty() {
        return Err(MetricsError::EmptySet("predicted"));
    }
    let d_pred = NearestIndex::new(gt).distances(&kept);
    // Completeness still measures against every predicted point.
    let d_gt = NearestIndex::new(pred).distances(gt);
    let accuracy = mean(&d_pred);
    let completeness = mean(&d_gt);
    let precision: Vec<f64> = thresholds.iter().map(|&t| fraction_below(&d_pred, t)).collect();
    let recall: Vec<f64> = thresholds.iter().map(|&t| fraction_below(&d_gt, t)).collect();
    let f1 = precision.iter().zip(&recall).map(|(&p, &r)| f_score(p, r)).collect();
    Ok(MeshReport {
        accuracy,
        completeness,
        chamfer: 0.5 * (accuracy + completeness),
        thresholds: thresholds.to_vec(),
        precision,
        recall,
        f1,
        pred_points: kept.len(),
        gt_points: gt.len(),
        masked_points: pred.len() - kept.len(),
    })
}

/// F-score at each threshold of an ascending list.
pub fn f1_threshold_sweep(pred: &[Vector3<f64>], gt: &[Vector3<f64>], thresholds: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if thresholds.iter().any(|&t| !(t > 0.0)) || thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(MetricsError::BadThresholds);
    }
    Ok(mesh_metrics(pred, gt, thresholds, None)?.f1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub abs_diff: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub log_rmse: f64,
    pub delta_1: f64,
    pub delta_2: f64,
    pub delta_3: f64,
    pub valid_pixels: usize,
    pub excluded_pixels: usize,
}

/// Standard depth error metrics over pixels valid in both maps.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthReport, MetricsError> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(MetricsError::SizeMismatch(format!(
            "pred {}x{}, gt {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut n = 0usize;
    let (mut ad, mut ar, mut sr, mut se, mut sl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut deltas = [0usize; 3];
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if !(p > 0.0 && g > 0.0) {
            continue;
        }
        let (p, g) = (p as f64, g as f64);
        let e = p - g;
        n += 1;
        ad += e.abs();
        ar += e.abs() / g;
        sr += e * e / g;
        se += e * e;
        sl += (p.ln() - g.ln()).powi(2);
        let ratio = (p / g).max(g / p);
        for (k, d) in deltas.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *d += 1;
            }
        }
    }
    if n == 0 {
        return Err(MetricsError::NoValidPixels);
    }
    let nf = n as f64;
    Ok(DepthReport {
        abs_diff: ad / nf,
        abs_rel: ar / nf,
        sq_rel: sr / nf,
        rmse: (se / nf).sqrt(),
        log_rmse: (sl / nf).sqrt(),
        delta_1: deltas[0] as f64 / nf,
        delta_2: deltas[1] as f64 / nf,
        delta_3: deltas[2] as f64 / nf,
        valid_pixels: n,
        excluded_pixels: gt.values().len() - n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsdfComparison {
    /// Mean absolute TSDF difference over observed ground-truth voxels.
    pub l1: f64,
    /// Binary cross-entropy of hard occupancy (`|tsdf| < 1`).
    pub bce: f64,
    pub voxels: usize,
}

const BCE_CLAMP: f64 = 1e-7;

pub fn tsdf_compare(pred: &TsdfVolume, gt: &TsdfVolume) -> Result<TsdfComparison, MetricsError> {
    let (a, b) = (pred.geometry(), gt.geometry());
    if a.dims != b.dims || a.voxel_size != b.voxel_size || a.origin != b.origin {
        return Err(MetricsError::GridMismatch(format!("{:?} vs {:?}", a.dims, b.dims)));
    }
    let mut n = 0usize;
    let (mut l1, mut bce) = (0.0, 0.0);
    for i in 0..b.len() {
        if !gt.observed()[i] {
            continue;
        }
        let (p, g) = (pred.values()[i] as f64, gt.values()[i] as f64);
        n += 1;
        l1 += (p - g).abs();
        let prob = if p.abs() < 1.0 { 1.0 } else { 0.0 };
        let prob = f64::clamp(prob, BCE_CLAMP, 1.0 - BCE_CLAMP);
        let occ = if g.abs() < 1.0 { 1.0 } else { 0.0 };
        bce -= occ * prob.ln() + (1.0 - occ) * (1.0 - prob).ln();
    }
    if n == 0 {
        return Ok(TsdfComparison {
            l1: 0.0,
            bce: 0.0,
            voxels: 0,
        });
    }
    Ok(TsdfComparison {
        l1: l1 / n as f64,
        bce: bce / n as f64,
        voxels: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Camera, Intrinsics, Pose};
    use crate::fusion::GridGeometry;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn identical_sets_are_perfect() {
        let pts = vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 2.0, 0.5)];
        let r = mesh_metrics(&pts, &pts, &DEFAULT_THRESHOLDS, None).unwrap();
        assert_eq!((r.accuracy, r.completeness, r.chamfer), (0.0, 0.0, 0.0));
        assert!(r.f1.iter().all(|&f| f == 1.0));
    }

    #[test]
    fn single_pair() {
        let r = mesh_metrics(&[v(0.0, 0.0, 0.0)], &[v(0.0, 0.0, 0.04)], &[0.03, 0.05], None).unwrap();
        assert!((r.chamfer - 0.04).abs() < 1e-12);
        assert_eq!(r.f1, vec![0.0, 1.0]);
        assert_eq!(r.f1_at(0.05), Some(1.0));
    }

    #[test]
    fn small_hand_example() {
        let pred = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)];
        let gt = [v(0.0, 0.0, 0.0), v(0.0, 0.0, 0.1), v(2.0, 0.0, 0.0)];
        let r = mesh_metrics(&pred, &gt, &[0.05], None).unwrap();
        assert!((r.accuracy - 0.5).abs() < 1e-12);
        assert!((r.completeness - 1.1 / 3.0).abs() < 1e-12);
        assert_eq!(r.precision, vec![0.5]);
        assert!((r.recall[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tree_matches_brute_force() {
        let pts: Vec<_> = (0..5000)
            .map(|i| {
                let t = i as f64 * 0.618;
                v(t.sin() * 2.0, (t * 1.3).cos(), (i % 17) as f64 * 0.05)
            })
            .collect();
        let idx = NearestIndex::new(&pts);
        assert!(idx.tree.is_some());
        for q in [v(0.1, 0.2, 0.3), v(5.0, 5.0, 5.0), v(-40.0, 3.0, 0.0), pts[77]] {
            let brute = pts.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
            assert_eq!(idx.distance(&q), brute);
        }
    }

    #[test]
    fn depth_two_pixels() {
        let cam = Camera::new(Intrinsics::new(1.0, 1.0, 0.5, 0.0, 2, 1).unwrap(), Pose::identity());
        let pred = DepthMap::new(2, 1, vec![2.0, 2.0], cam).unwrap();
        let gt = DepthMap::new(2, 1, vec![1.0, 4.0], cam).unwrap();
        let r = depth_metrics(&pred, &gt).unwrap();
        assert!((r.abs_diff - 1.5).abs() < 1e-12);
        assert!((r.abs_rel - 0.75).abs() < 1e-12);
        assert_eq!(r.delta_1, 0.0);
        let same = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((same.rmse, same.delta_1, same.delta_3), (0.0, 1.0, 1.0));
        let zero = DepthMap::new(2, 1, vec![0.0, 0.0], cam).unwrap();
        assert!(matches!(depth_metrics(&pred, &zero), Err(MetricsError::NoValidPixels)));
    }

    #[test]
    fn tsdf_compare_basics() {
        let g = GridGeometry::new(Vector3::zeros(), 0.1, [3, 3, 3]).unwrap();
        let mut gt = TsdfVolume::new(g, 0.3).unwrap();
        let mut pred = TsdfVolume::new(g, 0.3).unwrap();
        for i in 0..g.len() {
            gt.set_voxel(i, 0.0, 1.0);
            pred.set_voxel(i, 0.0, 1.0);
        }
        let same = tsdf_compare(&pred, &gt).unwrap();
        assert_eq!(same.l1, 0.0);
        assert!(same.bce <= 1e-6);
        for i in 0..g.len() {
            pred.set_voxel(i, 1.0, 1.0);
        }
        assert_eq!(tsdf_compare(&pred, &gt).unwrap().l1, 1.0);
        let other = TsdfVolume::new(GridGeometry::new(Vector3::zeros(), 0.1, [3, 3, 4]).unwrap(), 0.3).unwrap();
        assert!(tsdf_compare(&other, &gt).is_err());
    }
}

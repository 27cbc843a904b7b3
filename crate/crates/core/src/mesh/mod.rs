//! Triangle meshes: marching-cubes extraction, depth rendering and surface
//! point sampling.

mod ply;
pub mod tables;

use std::collections::HashMap;

use nalgebra::{Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::Camera;
use crate::tsdf::{DepthMap, TsdfVolume};

pub use ply::{read_ply, write_obj, write_ply, PlyFormat};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh has zero surface area")]
    ZeroArea,
    #[error("sampling density must be positive, got {0}")]
    BadDensity(f64),
    #[error("malformed PLY: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Appends `other`, offsetting its indices.
    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(
            other
                .triangles
                .iter()
                .map(|t| [t[0] + base, t[1] + base, t[2] + base]),
        );
    }

    pub fn triangle(&self, i: usize) -> [Vector3<f64>; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Number of triangles using each undirected edge.
    pub fn edge_use_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use_counts().values().all(|&n| n == 2)
    }
}

type EdgeKey = (usize, u8);

/// Extracts the `iso` level set of a TSDF with the classic 256-case tables.
///
/// Vertices are interpolated linearly along cell edges and shared between
/// neighboring cells. Cells with any unobserved corner are skipped.
pub fn marching_cubes(vol: &TsdfVolume, iso: f32) -> TriMesh {
    let geom = vol.geometry();
    let [nx, ny, nz] = geom.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return TriMesh::new();
    }
    let values = vol.values();
    let observed = vol.observed();

    // Per x-slab triangle lists keyed by edge, merged in slab order so vertex
    // numbering is independent of scheduling.
    let slabs: Vec<Vec<[EdgeKey; 3]>> = (0..nx - 1)
        .into_par_iter()
        .map(|x| {
            let mut tris = Vec::new();
            for y in 0..ny - 1 {
                for z in 0..nz - 1 {
                    let mut corner_idx = [0usize; 8];
                    let mut skip = false;
                    let mut case = 0usize;
                    for (k, off) in tables::CORNERS.iter().enumerate() {
                        let i = geom.index(x + off[0], y + off[1], z + off[2]);
                        if !observed[i] {
                            skip = true;
                            break;
                        }
                        corner_idx[k] = i;
                        if values[i] < iso {
                            case |= 1 << k;
                        }
                    }
                    if skip || tables::EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let row = &tables::TRI_TABLE[case];
                    for tri in row.chunks_exact(3) {
                        if tri[0] < 0 {
                            break;
                        }
                        let key = |e: i8| -> EdgeKey {
                            let [a, b] = tables::EDGES[e as usize];
                            let (ia, ib) = (corner_idx[a], corner_idx[b]);
                            let lo = ia.min(ib);
                            let axis = edge_axis(&tables::CORNERS[a], &tables::CORNERS[b]);
                            (lo, axis)
                        };
                        tris.push([key(tri[0]), key(tri[1]), key(tri[2])]);
                    }
                }
            }
            tris
        })
        .collect();

    let mut mesh = TriMesh::new();
    let mut lookup: HashMap<EdgeKey, u32> = HashMap::new();
    let (sx, sy, sz) = geom.strides();
    for slab in slabs {
        for tri in slab {
            let mut ids = [0u32; 3];
            for (slot, key) in ids.iter_mut().zip(tri) {
                *slot = *lookup.entry(key).or_insert_with(|| {
                    let (lo, axis) = key;
                    let hi = lo + [sx, sy, sz][axis as usize];
                    let (va, vb) = (values[lo], values[hi]);
                    let t = if vb != va {
                        ((iso - va) / (vb - va)).clamp(0.0, 1.0) as f64
                    } else {
                        0.5
                    };
                    let pa = geom.center_of(lo);
                    let pb = geom.center_of(hi);
                    mesh.vertices.push(pa + (pb - pa) * t);
                    (mesh.vertices.len() - 1) as u32
                });
            }
            mesh.triangles.push(ids);
        }
    }
    mesh
}

fn edge_axis(a: &[usize; 3], b: &[usize; 3]) -> u8 {
    (0..3).find(|&k| a[k] != b[k]).expect("edge joins distinct corners") as u8
}

const TILE: usize = 16;

/// Z-depth of the nearest triangle per pixel; 0 where nothing is hit.
pub fn render_depth(mesh: &TriMesh, cam: &Camera) -> DepthMap {
    render_depth_with_ids(mesh, cam).0
}

/// Like [`render_depth`] but also reports the triangle hit per pixel.
/// Equal-depth hits resolve to the lowest triangle index.
pub fn render_depth_with_ids(mesh: &TriMesh, cam: &Camera) -> (DepthMap, Vec<Option<u32>>) {
    let (w, h) = (cam.width(), cam.height());
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let local: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|p| cam.pose.inverse_transform_point(p))
        .collect();

    // Screen-space uniform grid; triangles are appended in index order.
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    const NEAR: f64 = 1e-6;
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let v = [
            local[t[0] as usize],
            local[t[1] as usize],
            local[t[2] as usize],
        ];
        if v.iter().all(|p| p.z <= NEAR) {
            continue;
        }
        let (tx0, tx1, ty0, ty1) = if v.iter().any(|p| p.z <= NEAR) {
            (0, tiles_x - 1, 0, tiles_y - 1)
        } else {
            let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
            let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in &v {
                let (px, _) = cam.project_camera(p).expect("in front of camera");
                lo.x = lo.x.min(px.x);
                lo.y = lo.y.min(px.y);
                hi.x = hi.x.max(px.x);
                hi.y = hi.y.max(px.y);
            }
            // One pixel of slack for edge-inclusive hits.
            if hi.x < -1.0 || hi.y < -1.0 || lo.x > w as f64 || lo.y > h as f64 {
                continue;
            }
            let clamp_tile = |v: f64, n: usize, tiles: usize| -> usize {
                let p = v.clamp(0.0, (n - 1) as f64) as usize;
                (p / TILE).min(tiles - 1)
            };
            (
                clamp_tile(lo.x.floor() - 1.0, w, tiles_x),
                clamp_tile(hi.x.ceil() + 1.0, w, tiles_x),
                clamp_tile(lo.y.floor() - 1.0, h, tiles_y),
                clamp_tile(hi.y.ceil() + 1.0, h, tiles_y),
            )
        };
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(ti as u32);
            }
        }
    }

    let rows: Vec<(Vec<f32>, Vec<Option<u32>>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut depth = vec![0.0f32; w];
            let mut ids = vec![None; w];
            for c in 0..w {
                let dir = cam.ray_camera(Point2::new(c as f64, r as f64));
                let bin = &bins[(r / TILE) * tiles_x + c / TILE];
                let mut best: Option<(f64, u32)> = None;
                for &ti in bin {
                    let t = mesh.triangles[ti as usize];
                    let hit = ray_triangle(
                        &dir,
                        &local[t[0] as usize],
                        &local[t[1] as usize],
                        &local[t[2] as usize],
                    );
                    if let Some(d) = hit {
                        if best.is_none_or(|(b, _)| d < b) {
                            best = Some((d, ti));
                        }
                    }
                }
                if let Some((d, ti)) = best {
                    depth[c] = d as f32;
                    ids[c] = Some(ti);
                }
            }
            (depth, ids)
        })
        .collect();

    let mut values = Vec::with_capacity(w * h);
    let mut ids = Vec::with_capacity(w * h);
    for (d, i) in rows {
        values.extend(d);
        ids.extend(i);
    }
    (
        DepthMap::new(w, h, values, *cam).expect("sizes match camera"),
        ids,
    )
}

/// Möller–Trumbore from the camera origin along `dir` (unit z), edge
/// inclusive. Returns the ray parameter, which equals camera z-depth.
fn ray_triangle(
    dir: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    const EPS: f64 = 1e-10;
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = -a;
    let u = s.dot(&p) * inv;
    if !(-EPS..=1.0 + EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -EPS || u + v > 1.0 + EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some(t)
}

/// Area-weighted surface samples.
///
/// The total count is `round(area × density)`, split across triangles by
/// largest remainder so allocation is exactly proportional whenever the
/// quotas are integral. Positions within a triangle are uniform and seeded.
pub fn sample_points(mesh: &TriMesh, density: f64, seed: u64) -> Result<Vec<Vector3<f64>>, MeshError> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(MeshError::BadDensity(density));
    }
    let areas: Vec<f64> = (0..mesh.triangles.len())
        .map(|i| mesh.triangle_area(i))
        .collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(MeshError::ZeroArea);
    }
    let n = (total * density).round() as usize;
    let quotas: Vec<f64> = areas.iter().map(|a| n as f64 * a / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    if assigned < n {
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&i, &j| {
            let fi = quotas[i] - counts[i] as f64;
            let fj = quotas[j] - counts[j] as f64;
            fj.total_cmp(&fi).then(i.cmp(&j))
        });
        for &i in order.iter().take(n - assigned) {
            counts[i] += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for (i, &k) in counts.iter().enumerate() {
        let [a, b, c] = mesh.triangle(i);
        for _ in 0..k {
            let r1: f64 = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            points.push(a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2));
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose};
    use crate::fusion::GridGeometry;

    fn quad(z: f64, half: f64) -> TriMesh {
        TriMesh {
            vertices: vec![
                Vector3::new(-half, -half, z),
                Vector3::new(half, -half, z),
                Vector3::new(half, half, z),
                Vector3::new(-half, half, z),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    fn camera() -> Camera {
        Camera::new(
            Intrinsics::new(50.0, 50.0, 31.5, 23.5, 64, 48).unwrap(),
            Pose::identity(),
        )
    }

    fn sdf_volume(dims: [usize; 3], voxel: f64, origin: Vector3<f64>, f: impl Fn(Vector3<f64>) -> f64) -> TsdfVolume {
        let geom = GridGeometry::new(origin, voxel, dims).unwrap();
        let mut vol = TsdfVolume::new(geom, 1.0).unwrap();
        for i in 0..geom.len() {
            let p = geom.center_of(i);
            vol.set_voxel(i, f(p) as f32, 1.0);
        }
        vol
    }

    #[test]
    fn fronto_parallel_quad_depth() {
        let d = render_depth(&quad(2.0, 10.0), &camera());
        assert!(d.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn empty_mesh_renders_zero() {
        let d = render_depth(&TriMesh::new(), &camera());
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_edge_hit_once_lowest_index() {
        // The diagonal of the quad passes through the principal point.
        let cam = Camera::new(
            Intrinsics::new(50.0, 50.0, 32.0, 32.0, 65, 65).unwrap(),
            Pose::identity(),
        );
        let (d, ids) = render_depth_with_ids(&quad(2.0, 1.0), &cam);
        let center = 32 * 65 + 32;
        assert_eq!(d.values()[center], 2.0);
        assert_eq!(ids[center], Some(0));
    }

    #[test]
    fn all_positive_volume_is_empty() {
        let v = sdf_volume([6, 6, 6], 0.1, Vector3::zeros(), |_| 1.0);
        assert!(marching_cubes(&v, 0.0).is_empty());
    }

    #[test]
    fn plane_sdf_vertices_on_plane() {
        let v = sdf_volume([10, 10, 10], 0.1, Vector3::zeros(), |p| p.z - 0.43);
        let m = marching_cubes(&v, 0.0);
        assert!(!m.is_empty());
        for p in &m.vertices {
            assert!((p.z - 0.43).abs() < 0.05, "{p:?}");
        }
    }

    #[test]
    fn sphere_mesh_radius_and_watertight() {
        let v = sdf_volume([61, 61, 61], 0.02, Vector3::new(-0.6, -0.6, -0.6), |p| p.norm() - 0.5);
        let m = marching_cubes(&v, 0.0);
        assert!(m.is_watertight());
        for p in &m.vertices {
            assert!((p.norm() - 0.5).abs() <= 0.02);
        }
    }

    #[test]
    fn unobserved_cells_are_skipped() {
        let mut v = sdf_volume([4, 4, 4], 0.1, Vector3::zeros(), |p| p.z - 0.15);
        let full = marching_cubes(&v, 0.0).triangles.len();
        let i = v.geometry().index(0, 0, 1);
        v.set_unobserved(i);
        let partial = marching_cubes(&v, 0.0).triangles.len();
        assert!(partial < full);
    }

    #[test]
    fn unit_square_sample_count() {
        let m = quad(0.0, 0.5);
        let pts = sample_points(&m, 100.0, 7).unwrap();
        assert_eq!(pts.len(), 100);
        assert_eq!(pts, sample_points(&m, 100.0, 7).unwrap());
        assert!(pts.iter().all(|p| p.x.abs() <= 0.5 && p.y.abs() <= 0.5 && p.z == 0.0));
    }

    #[test]
    fn stratified_allocation_follows_area() {
        let m = TriMesh {
            vertices: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.5, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(5.0, 0.0, 0.0),
                Vector3::new(5.5, 0.0, 0.0),
                Vector3::new(5.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
        };
        let pts = sample_points(&m, 200.0, 1).unwrap();
        let left = pts.iter().filter(|p| p.x < 2.0).count();
        assert_eq!((left, pts.len() - left), (150, 50));
    }

    #[test]
    fn zero_area_rejected() {
        let m = TriMesh {
            vertices: vec![Vector3::zeros(); 3],
            triangles: vec![[0, 1, 2]],
        };
        assert!(matches!(sample_points(&m, 10.0, 0), Err(MeshError::ZeroArea)));
        assert!(matches!(sample_points(&quad(0.0, 1.0), 0.0, 0), Err(MeshError::BadDensity(_))));
    }
}

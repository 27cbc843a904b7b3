//! End-to-end reconstruction, the ablation grid and cost-volume inspection.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::camera::{Camera, DepthPlanes};
use crate::config::{ConfigError, DecoderKind, FeatureSource, PipelineConfig, Protocol};
use crate::container::Matrix;
use crate::costvol::{build_cost_volume, write_dump, CostVolume, PlaneStack};
use crate::dataset::{assign_references, load_sequence, select_keyframes, DatasetError, KeyframeBundle, Sequence};
use crate::encoder::{encode_image, reduce_channels_with, seeded_row_orthonormal, EncoderKind, EncoderSpec, FeatureMap};
use crate::fusion::{backproject_baseline, frusta_bounds, fuse, GridGeometry, KeyframeVolume, VoxelGrid};
use crate::mesh::{marching_cubes, read_ply, sample_points, write_ply, PlyFormat, TriMesh};
use crate::metrics::{mesh_metrics, tsdf_compare, MeshReport, OcclusionMask, TsdfComparison};
use crate::rccv::{compensate, footprint_bytes, Compensation, CompensationWeights, CtxMode, Rccv, RccvLayout};
use crate::tsdf::{
    decode_depth_softargmax, decode_volume, integrate_depth, mark_unobserved_columns, DepthMap, SoftArgmax, TsdfVolume,
};

/// Feature cell size in pixels.
const CELL: usize = 8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("{stage}{}: {message}", frame.map(|f| format!(" (frame {f})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        frame: Option<usize>,
        message: String,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    fn stage(stage: &'static str, frame: Option<usize>, e: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            frame,
            message: e.to_string(),
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numeric(_) => 4,
            _ => 3,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Ground truth for evaluation: analytic surface samples, optionally
/// restricted to what some input frame saw.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub mesh: TriMesh,
    pub points: Vec<Vector3<f64>>,
}

impl GroundTruth {
    pub fn load(dataset_dir: &Path, seq: &Sequence, cfg: &PipelineConfig) -> Result<Option<Self>> {
        let path = dataset_dir.join("gt_mesh.ply");
        if !path.is_file() {
            return Ok(None);
        }
        let mesh = read_ply(&path).map_err(|e| PipelineError::stage("eval", None, e))?;
        Self::from_mesh(mesh, seq, cfg).map(Some)
    }

    pub fn from_mesh(mesh: TriMesh, seq: &Sequence, cfg: &PipelineConfig) -> Result<Self> {
        let samples = sample_points(&mesh, cfg.eval.gt_density, cfg.seed).map_err(|e| PipelineError::stage("eval", None, e))?;
        let depths: Vec<&DepthMap> = seq.frames.iter().filter_map(|f| f.gt_depth.as_ref()).collect();
        let points = if depths.is_empty() {
            samples
        } else {
            let tol = cfg.eval.visibility_tolerance;
            samples
                .into_par_iter()
                .filter(|p| depths.iter().any(|d| seen_by(d, p, tol)))
                .collect()
        };
        if points.is_empty() {
            return Err(PipelineError::Numeric("no ground-truth sample is visible".into()));
        }
        Ok(Self { mesh, points })
    }
}

fn seen_by(depth: &DepthMap, p: &Vector3<f64>, tol: f64) -> bool {
    let Ok((px, z)) = depth.camera().project(p) else {
        return false;
    };
    crate::tsdf::depth_at(depth, px).is_some_and(|d| (d as f64 - z).abs() <= tol)
}

#[derive(Clone, Debug, Serialize)]
pub struct BundleReport {
    pub keyframe: usize,
    pub references: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FootprintReport {
    /// `[planes, channels, height, width]` of one compensated volume.
    pub shape: [usize; 4],
    pub bytes_fp16: u64,
    pub bytes_fp32: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridReport {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub channels: usize,
    pub observed_voxels: usize,
}

/// Run summary. Wall-clock timings live in a separate file so reports from
/// identical runs are byte-identical.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub frames: usize,
    pub dropped_frames: Vec<usize>,
    pub bundles: Vec<BundleReport>,
    pub decoder: DecoderKind,
    pub footprint: Option<FootprintReport>,
    pub grid: GridReport,
    pub decoded_pixels: usize,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    pub evaluation: Option<MeshReport>,
    pub tsdf_vs_gt: Option<TsdfComparison>,
}

pub struct Reconstruction {
    pub mesh: TriMesh,
    pub tsdf: TsdfVolume,
    pub features: VoxelGrid,
    pub report: RunReport,
    pub timings_ms: BTreeMap<String, f64>,
}

struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        *self.0.entry(name.to_string()).or_insert(0.0) += t0.elapsed().as_secs_f64() * 1e3;
        out
    }
}

pub fn encoder_spec(cfg: &PipelineConfig) -> Result<EncoderSpec> {
    let kind = match &cfg.encoder.weights {
        Some(path) => {
            let mut f = std::io::BufReader::new(fs::File::open(path)?);
            EncoderKind::Linear(Matrix::read_from(&mut f).map_err(|e| PipelineError::stage("encoder", None, e))?)
        }
        None => cfg.encoder.kind.clone(),
    };
    let spec = EncoderSpec {
        kind,
        patch: cfg.encoder.patch,
        out_channels: cfg.encoder.out_channels,
        seed: cfg.seed,
    };
    spec.validate().map_err(|e| PipelineError::stage("encoder", None, e))?;
    Ok(spec)
}

/// `channels × 8` reduction whose last row keeps the mean matching score.
pub fn reduction_map(cfg: &PipelineConfig, cv_channels: usize) -> Matrix {
    let mut score = vec![0.0; cv_channels];
    score[0] = 1.0;
    seeded_row_orthonormal(
        cfg.costvol.channels,
        cv_channels,
        cfg.seed.wrapping_add(0xC0),
        &[(cfg.costvol.channels - 1, score)],
    )
}

pub fn rccv_layout(cfg: &PipelineConfig) -> RccvLayout {
    let comp = cfg.rccv.compensation;
    RccvLayout {
        planes: cfg.planes.count,
        cv_channels: cfg.costvol.channels,
        ray: comp.ray(),
        ctx_channels: if comp.ctx() { cfg.encoder.out_channels } else { 0 },
        out_channels: cfg.rccv.out_channels,
    }
}

pub fn compensation_weights(cfg: &PipelineConfig) -> Result<CompensationWeights> {
    let layout = rccv_layout(cfg);
    let weights = match &cfg.rccv.weights {
        Some(path) => {
            let mut f = std::io::BufReader::new(fs::File::open(path)?);
            let s = crate::container::Sections::read_from(&mut f).map_err(|e| PipelineError::stage("rccv", None, e))?;
            CompensationWeights::from_sections(&s, layout).map_err(|e| PipelineError::stage("rccv", None, e))?
        }
        None => {
            if layout.out_channels > layout.plane_in() {
                return Err(PipelineError::Config(ConfigError::Invalid(format!(
                    "rccv.out_channels = {} exceeds the {} compensated input channels",
                    layout.out_channels,
                    layout.plane_in()
                ))));
            }
            CompensationWeights::seeded(layout, cfg.seed.wrapping_add(0xCC))
        }
    };
    weights.validate().map_err(|e| PipelineError::stage("rccv", None, e))?;
    Ok(weights)
}

/// Cost volume of one keyframe bundle, reduced to `costvol.channels`.
pub fn keyframe_cost_volume(
    cfg: &PipelineConfig,
    seq: &Sequence,
    bundle: &KeyframeBundle,
    feats: &BTreeMap<usize, FeatureMap>,
    planes: &DepthPlanes,
) -> Result<PlaneStack> {
    let key = &seq.frames[bundle.keyframe];
    let refs: Vec<(&FeatureMap, Camera)> = bundle
        .references
        .iter()
        .map(|&j| (&feats[&j], seq.frames[j].camera.downscaled(CELL)))
        .collect();
    let cv: CostVolume = build_cost_volume(
        &feats[&bundle.keyframe],
        &key.camera.downscaled(CELL),
        &refs,
        planes,
        cfg.costvol.sweep_options(),
    )
    .map_err(|e| PipelineError::stage("costvol", Some(key.index), e))?;
    let map = reduction_map(cfg, cv.channels);
    reduce_channels_with(&cv, &map).map_err(|e| PipelineError::stage("costvol", Some(key.index), e))
}

fn grid_geometry(cfg: &PipelineConfig, cams: &[Camera], planes: &DepthPlanes) -> Result<GridGeometry> {
    match cfg.grid.bounds {
        Some([lo, hi]) => GridGeometry::from_bounds(Vector3::from(lo), Vector3::from(hi), cfg.grid.voxel_size, cfg.grid.pad),
        None => frusta_bounds(cams, planes, cfg.grid.voxel_size, cfg.grid.pad),
    }
    .map_err(|e| PipelineError::stage("fusion", None, e))
}

/// Score channel the volume decoder reads, with its default iso level and
/// scale.
fn volume_score(cfg: &PipelineConfig, channels: usize) -> (usize, f32, f32) {
    match cfg.features {
        FeatureSource::Backproject => (0, 0.85, 0.1),
        FeatureSource::Costvol if cfg.rccv.compensation.ray() && channels >= 2 => (channels - 2, 0.0, 0.1),
        FeatureSource::Costvol => (channels - 1, 0.6, 0.2),
    }
}

/// Norm of the averaged keyframe descriptor: close to 1 where the keyframes
/// agree (near surfaces), lower elsewhere. Voxels seen by fewer than two
/// keyframes are left unobserved.
fn descriptor_agreement(grid: &VoxelGrid) -> VoxelGrid {
    let mut out = VoxelGrid::new(grid.geometry, 1);
    let n = grid.geometry.len();
    for i in 0..n {
        if grid.weight[i] < 2.0 {
            continue;
        }
        let norm = (0..grid.channels).map(|c| grid.data[c * n + i].powi(2)).sum::<f32>().sqrt();
        out.data[i] = norm;
        out.weight[i] = grid.weight[i];
        out.observed[i] = true;
    }
    out
}

/// Integrates every frame's ground-truth depth into a TSDF on `geometry`
/// and marks never-seen columns.
pub fn ground_truth_tsdf(cfg: &PipelineConfig, seq: &Sequence, geometry: GridGeometry) -> Result<Option<TsdfVolume>> {
    if seq.frames.iter().all(|f| f.gt_depth.is_none()) {
        return Ok(None);
    }
    let mut vol = TsdfVolume::new(geometry, cfg.grid.trunc()).map_err(|e| PipelineError::stage("tsdf", None, e))?;
    for f in &seq.frames {
        if let Some(d) = &f.gt_depth {
            integrate_depth(&mut vol, d);
        }
    }
    mark_unobserved_columns(&mut vol, cfg.grid.gravity_axis).map_err(|e| PipelineError::stage("tsdf", None, e))?;
    Ok(Some(vol))
}

/// Runs the full pipeline on a loaded sequence.
pub fn reconstruct_sequence(cfg: &PipelineConfig, seq: &Sequence, gt: Option<&GroundTruth>) -> Result<Reconstruction> {
    cfg.validate()?;
    let mut timer = Timer(BTreeMap::new());
    let planes = cfg.planes()?;
    let poses = seq.poses();
    let keyframes = select_keyframes(&poses, cfg.keyframes)?;
    let bundles = assign_references(&keyframes, &poses, cfg.references)?;

    let spec = encoder_spec(cfg)?;
    let needed: Vec<usize> = match cfg.features {
        FeatureSource::Costvol => {
            let mut v: Vec<usize> = bundles.iter().flat_map(|b| std::iter::once(b.keyframe).chain(b.references.iter().copied())).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
        FeatureSource::Backproject => keyframes.clone(),
    };
    let feats: BTreeMap<usize, FeatureMap> = timer.run("encode", || {
        needed
            .par_iter()
            .map(|&i| {
                encode_image(&seq.frames[i].image, &spec)
                    .map(|f| (i, f))
                    .map_err(|e| PipelineError::stage("encoder", Some(seq.frames[i].index), e))
            })
            .collect::<Result<BTreeMap<_, _>>>()
    })?;

    let key_cams: Vec<Camera> = keyframes.iter().map(|&k| seq.frames[k].camera).collect();
    let geometry = grid_geometry(cfg, &key_cams, &planes)?;

    let mut footprint = None;
    let mut depth_maps: Vec<DepthMap> = Vec::new();
    let features = match cfg.features {
        FeatureSource::Costvol => {
            let weights = match cfg.rccv.compensation {
                Compensation::None => None,
                _ => Some(compensation_weights(cfg)?),
            };
            let mut volumes: Vec<(usize, Rccv, Camera)> = Vec::with_capacity(bundles.len());
            for b in &bundles {
                let key = &seq.frames[b.keyframe];
                let cv = timer.run("costvol", || keyframe_cost_volume(cfg, seq, b, &feats, &planes))?;
                let rccv = match &weights {
                    None => Rccv(cv),
                    Some(w) => timer.run("rccv", || {
                        compensate(&cv, &feats[&b.keyframe], w, cfg.rccv.compensation, cfg.rccv.ctx_mode, None)
                            .map_err(|e| PipelineError::stage("rccv", Some(key.index), e))
                    })?,
                };
                volumes.push((key.index, rccv, key.camera.downscaled(CELL)));
            }
            let shape = volumes[0].1.shape();
            footprint = Some(FootprintReport {
                shape,
                bytes_fp16: footprint_bytes(shape, 2),
                bytes_fp32: footprint_bytes(shape, 4),
            });
            if cfg.decoder.kind == DecoderKind::Depth {
                let params = SoftArgmax {
                    channel: shape[1] - 1,
                    tau: cfg.decoder.tau,
                    min_peak: cfg.decoder.min_peak,
                };
                depth_maps = timer.run("decode", || {
                    volumes
                        .iter()
                        .map(|(idx, v, cam)| {
                            decode_depth_softargmax(v, &planes, cam, params).map_err(|e| PipelineError::stage("tsdf", Some(*idx), e))
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
            }
            let inputs: Vec<KeyframeVolume> = volumes
                .iter()
                .map(|(idx, v, cam)| KeyframeVolume {
                    frame_index: *idx,
                    volume: v,
                    camera: *cam,
                })
                .collect();
            timer.run("fusion", || fuse(&inputs, &planes, geometry)).map_err(|e| PipelineError::stage("fusion", None, e))?
        }
        FeatureSource::Backproject => {
            let inputs: Vec<(usize, &FeatureMap, Camera)> = keyframes
                .iter()
                .map(|&k| (seq.frames[k].index, &feats[&k], seq.frames[k].camera.downscaled(CELL)))
                .collect();
            timer
                .run("fusion", || backproject_baseline(&inputs, &planes, geometry))
                .map_err(|e| PipelineError::stage("fusion", None, e))?
        }
    };

    let decoder = if cfg.features == FeatureSource::Costvol {
        cfg.decoder.kind
    } else {
        DecoderKind::Volume
    };
    let tsdf = timer.run("decode", || -> Result<TsdfVolume> {
        match decoder {
            DecoderKind::Depth => {
                let mut vol = TsdfVolume::new(geometry, cfg.grid.trunc()).map_err(|e| PipelineError::stage("tsdf", None, e))?;
                for d in &depth_maps {
                    integrate_depth(&mut vol, d);
                }
                Ok(vol)
            }
            DecoderKind::Volume => {
                let (channel, iso, scale) = volume_score(cfg, features.channels);
                let iso = cfg.decoder.iso.unwrap_or(iso);
                let scale = cfg.decoder.scale.unwrap_or(scale);
                let source = match cfg.features {
                    FeatureSource::Backproject => descriptor_agreement(&features),
                    FeatureSource::Costvol => features.clone(),
                };
                decode_volume(&source, channel, iso, scale, cfg.grid.trunc()).map_err(|e| PipelineError::stage("tsdf", None, e))
            }
        }
    })?;
    let mesh = timer.run("mesh", || marching_cubes(&tsdf, 0.0));
    if mesh.vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
        return Err(PipelineError::Numeric("non-finite mesh vertex".into()));
    }

    let (evaluation, tsdf_vs_gt) = match gt {
        Some(gt) => timer.run("eval", || evaluate(cfg, seq, gt, &mesh, &tsdf))?,
        None => (None, None),
    };

    let report = RunReport {
        config: cfg.clone(),
        frames: seq.frames.len(),
        dropped_frames: seq.dropped.clone(),
        bundles: bundles
            .iter()
            .map(|b| BundleReport {
                keyframe: seq.frames[b.keyframe].index,
                references: b.references.iter().map(|&j| seq.frames[j].index).collect(),
            })
            .collect(),
        decoder,
        footprint,
        grid: GridReport {
            origin: geometry.origin.into(),
            voxel_size: geometry.voxel_size,
            dims: geometry.dims,
            channels: features.channels,
            observed_voxels: features.observed_count(),
        },
        decoded_pixels: depth_maps.iter().map(|d| d.valid_count()).sum(),
        mesh_vertices: mesh.vertices.len(),
        mesh_triangles: mesh.triangles.len(),
        evaluation,
        tsdf_vs_gt,
    };
    Ok(Reconstruction {
        mesh,
        tsdf,
        features,
        report,
        timings_ms: timer.0,
    })
}

fn evaluate(
    cfg: &PipelineConfig,
    seq: &Sequence,
    gt: &GroundTruth,
    mesh: &TriMesh,
    tsdf: &TsdfVolume,
) -> Result<(Option<MeshReport>, Option<TsdfComparison>)> {
    let gt_tsdf = ground_truth_tsdf(cfg, seq, *tsdf.geometry())?;
    let cmp = match &gt_tsdf {
        Some(g) => Some(tsdf_compare(tsdf, g).map_err(|e| PipelineError::stage("eval", None, e))?),
        None => None,
    };
    if mesh.vertices.is_empty() {
        return Ok((None, cmp));
    }
    let mask = match (cfg.eval.protocol, &gt_tsdf) {
        (Protocol::Masked, Some(volume)) => Some(OcclusionMask { volume }),
        _ => None,
    };
    let report = match mesh_metrics(&mesh.vertices, &gt.points, &cfg.eval.thresholds, mask.as_ref()) {
        Ok(r) => Some(r),
        Err(crate::metrics::MetricsError::EmptySet(_)) => None,
        Err(e) => return Err(PipelineError::stage("eval", None, e)),
    };
    Ok((report, cmp))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_ply(mesh, PlyFormat::BinaryLittleEndian, &mut w).map_err(|e| PipelineError::stage("mesh", None, e))?;
    w.flush()?;
    Ok(())
}

/// Loads `dataset_dir`, reconstructs, and writes `mesh.ply`, `tsdf.bin`,
/// `report.json` and `timings.json` into `out_dir`.
pub fn reconstruct(cfg: &PipelineConfig, dataset_dir: &Path, out_dir: &Path) -> Result<Reconstruction> {
    cfg.validate()?;
    let seq = load_sequence(dataset_dir)?;
    let gt = GroundTruth::load(dataset_dir, &seq, cfg)?;
    let rec = reconstruct_sequence(cfg, &seq, gt.as_ref())?;
    fs::create_dir_all(out_dir)?;
    write_mesh(&rec.mesh, &out_dir.join("mesh.ply"))?;
    let mut w = BufWriter::new(fs::File::create(out_dir.join("tsdf.bin"))?);
    rec.tsdf.write_to(&mut w).map_err(|e| PipelineError::stage("tsdf", None, e))?;
    w.flush()?;
    write_json(&out_dir.join("report.json"), &rec.report)?;
    write_json(&out_dir.join("timings.json"), &rec.timings_ms)?;
    Ok(rec)
}

/// Writes the unreduced cost volume of every keyframe to
/// `out_dir/cv_%06d.bin` (keyframe frame index) and returns the paths.
pub fn dump_cost_volumes(cfg: &PipelineConfig, seq: &Sequence, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let planes = cfg.planes()?;
    let poses = seq.poses();
    let keyframes = select_keyframes(&poses, cfg.keyframes)?;
    let bundles = assign_references(&keyframes, &poses, cfg.references)?;
    let spec = encoder_spec(cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(bundles.len());
    for b in &bundles {
        let key = &seq.frames[b.keyframe];
        let enc = |i: usize| {
            encode_image(&seq.frames[i].image, &spec).map_err(|e| PipelineError::stage("encoder", Some(seq.frames[i].index), e))
        };
        let key_feat = enc(b.keyframe)?;
        let ref_feats = b.references.iter().map(|&j| enc(j)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<(&FeatureMap, Camera)> = ref_feats
            .iter()
            .zip(&b.references)
            .map(|(f, &j)| (f, seq.frames[j].camera.downscaled(CELL)))
            .collect();
        let cv = build_cost_volume(&key_feat, &key.camera.downscaled(CELL), &refs, &planes, cfg.costvol.sweep_options())
            .map_err(|e| PipelineError::stage("costvol", Some(key.index), e))?;
        let path = out_dir.join(format!("cv_{:06}.bin", key.index));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        write_dump(&cv, &planes, &mut w).map_err(|e| PipelineError::stage("costvol", Some(key.index), e))?;
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// One configuration cell of the ablation grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AblationRow {
    pub group: &'static str,
    pub name: &'static str,
    pub features: FeatureSource,
    pub compensation: Compensation,
    pub ctx_mode: CtxMode,
}

impl AblationRow {
    /// Mesh file name for this row at position `index` of a run.
    pub fn mesh_file(&self, index: usize) -> String {
        format!("row{index}_{}_{}.ply", self.group, self.name.replace('+', "_"))
    }
}

/// The seven ablation rows in three groups: feature construction, ray
/// compensation and contextual mixing mode.
pub fn ablation_rows() -> Vec<AblationRow> {
    let row = |group, name, features, compensation, ctx_mode| AblationRow {
        group,
        name,
        features,
        compensation,
        ctx_mode,
    };
    use Compensation::*;
    use CtxMode::*;
    use FeatureSource::*;
    vec![
        row("features", "backproject", Backproject, None, Group),
        row("features", "costvol", Costvol, None, Group),
        row("ray", "costvol", Costvol, None, Group),
        row("ray", "costvol+ray", Costvol, Ray, Group),
        row("ctx", "concat", Costvol, RayCtx, Concat),
        row("ctx", "uni", Costvol, RayCtx, Uni),
        row("ctx", "group", Costvol, RayCtx, Group),
    ]
}

pub const ABLATION_HEADER: &str = "group,name,features,compensation,ctx_mode,decoder,accuracy,completeness,chamfer,precision,recall,f1,threshold";

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "nan".to_string(),
    }
}

/// CSV line for one evaluated ablation row, reporting the threshold nearest
/// 5 cm.
pub fn ablation_csv_line(row: &AblationRow, report: &RunReport) -> String {
    let e = report.evaluation.as_ref();
    let ti = e.map(|e| {
        (0..e.thresholds.len())
            .min_by(|&a, &b| (e.thresholds[a] - 0.05).abs().total_cmp(&(e.thresholds[b] - 0.05).abs()))
            .unwrap_or(0)
    });
    let pick = |f: fn(&MeshReport) -> &Vec<f64>| e.zip(ti).map(|(e, i)| f(e)[i]);
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.group,
        row.name,
        ser(&row.features),
        ser(&row.compensation),
        ser(&row.ctx_mode),
        ser(&report.decoder),
        fmt_metric(e.map(|e| e.accuracy)),
        fmt_metric(e.map(|e| e.completeness)),
        fmt_metric(e.map(|e| e.chamfer)),
        fmt_metric(pick(|e| &e.precision)),
        fmt_metric(pick(|e| &e.recall)),
        fmt_metric(pick(|e| &e.f1)),
        fmt_metric(e.zip(ti).map(|(e, i)| e.thresholds[i])),
    )
}

fn ser<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// The base config with one ablation row applied.
pub fn ablation_config(base: &PipelineConfig, row: &AblationRow) -> PipelineConfig {
    let mut cfg = base.clone();
    cfg.features = row.features;
    cfg.rccv.compensation = row.compensation;
    cfg.rccv.ctx_mode = row.ctx_mode;
    cfg
}

/// Runs the selected ablation rows (all when `rows` is `None`), writing one
/// mesh per row and `ablation.csv` into `out_dir`. Returns the CSV text.
pub fn ablate(
    base: &PipelineConfig,
    dataset_dir: &Path,
    out_dir: &Path,
    rows: Option<&[AblationRow]>,
) -> Result<String> {
    base.validate()?;
    let seq = load_sequence(dataset_dir)?;
    let gt = GroundTruth::load(dataset_dir, &seq, base)?;
    let all = ablation_rows();
    let rows = rows.unwrap_or(&all);
    fs::create_dir_all(out_dir)?;
    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let cfg = ablation_config(base, row);
        let rec = reconstruct_sequence(&cfg, &seq, gt.as_ref())?;
        write_mesh(&rec.mesh, &out_dir.join(row.mesh_file(i)))?;
        csv.push_str(&ablation_csv_line(row, &rec.report));
        csv.push('\n');
    }
    fs::write(out_dir.join("ablation.csv"), &csv)?;
    Ok(csv)
}

/// Per-plane values of every channel along the ray through feature cell
/// `(row, col)`, as CSV with a `depth` column first. Masked cells read 0.
pub fn inspect_cv(volume: &PlaneStack, depths: &[f64], row: usize, col: usize) -> Result<String> {
    if row >= volume.height || col >= volume.width {
        return Err(PipelineError::stage(
            "inspect",
            None,
            format!("pixel ({row}, {col}) outside {}x{} volume", volume.height, volume.width),
        ));
    }
    if depths.len() != volume.planes {
        return Err(PipelineError::stage("inspect", None, "depth list does not match plane count"));
    }
    let mut out = String::from("plane,depth");
    for c in 0..volume.channels {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for (i, d) in depths.iter().enumerate() {
        out.push_str(&format!("{i},{d:.9}"));
        for c in 0..volume.channels {
            let v = if volume.is_valid(i, row, col) {
                volume.get(i, c, row, col)
            } else {
                0.0
            };
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    Ok(out)
}

//! `sweepfuse` command-line interface.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sweepfuse::config::{DecoderKind, FeatureSource, Protocol};
use sweepfuse::costvol::read_dump;
use sweepfuse::dataset::{load_sequence, png_size, read_depth_png, write_depth_png};
use sweepfuse::fusion::VoxelGrid;
use sweepfuse::mesh::{read_ply, write_obj, write_ply, PlyFormat};
use sweepfuse::metrics::{f1_threshold_sweep, OcclusionMask};
use sweepfuse::pipeline::{ablation_rows, dump_cost_volumes, AblationRow};
use sweepfuse::synth::SceneSpec;
use sweepfuse::*;

#[derive(Parser)]
#[command(name = "sweepfuse", version, about = "Plane-sweep volumetric reconstruction")]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into a dataset directory.
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a mesh and TSDF from a dataset.
    Reconstruct {
        #[command(flatten)]
        run: RunArgs,
        /// Also write each keyframe's cost volume to `<out>/cv/`.
        #[arg(long)]
        dump_cv: bool,
    },
    /// Run the feature / ray / contextual ablation grid.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Restrict to these row groups.
        #[arg(long, value_delimiter = ',')]
        groups: Vec<Group>,
    },
    /// Compare a predicted mesh with a ground-truth mesh.
    EvalMesh {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = ProtocolArg::Atlas)]
        protocol: ProtocolArg,
        /// Ground-truth TSDF dump for the masked protocol.
        #[arg(long)]
        gt_tsdf: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// Ground-truth samples per square meter.
        #[arg(long, default_value_t = 2500.0)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report path (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the F-score sweep as CSV.
        #[arg(long)]
        sweep_csv: Option<PathBuf>,
    },
    /// Compare a predicted depth PNG with a ground-truth depth PNG.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-plane values of a cost-volume dump at one cell.
    InspectCv {
        #[arg(long)]
        dump: PathBuf,
        /// Feature cell as `row,col`.
        #[arg(long, value_parser = parse_pixel)]
        pixel: (usize, usize),
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the zero level set of a TSDF dump.
    ExportMesh {
        #[arg(long)]
        tsdf: PathBuf,
        /// `.ply` or `.obj`.
        #[arg(long)]
        out: PathBuf,
        /// Truncation distance stored alongside the values (default 3 voxels).
        #[arg(long)]
        trunc: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        iso: f32,
        #[arg(long)]
        ascii: bool,
    },
    /// Ray-cast a mesh into a 16-bit millimeter depth PNG.
    RenderDepth {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kf_trans: Option<f64>,
    #[arg(long)]
    kf_rot: Option<f64>,
    #[arg(long)]
    num_refs: Option<usize>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    trunc: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    decoder: Option<DecoderArg>,
    #[arg(long, value_enum)]
    features: Option<FeaturesArg>,
    #[arg(long)]
    compensation: Option<String>,
    #[arg(long)]
    ctx_mode: Option<String>,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecoderArg {
    Depth,
    Volume,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeaturesArg {
    Costvol,
    Backproject,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Atlas,
    Masked,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Group {
    Features,
    Ray,
    Ctx,
}

impl Group {
    fn name(self) -> &'static str {
        match self {
            Group::Features => "features",
            Group::Ray => "ray",
            Group::Ctx => "ctx",
        }
    }
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    Ok((
        r.trim().parse().map_err(|e| format!("row: {e}"))?,
        c.trim().parse().map_err(|e| format!("col: {e}"))?,
    ))
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(m: impl ToString) -> Self {
        Self {
            code: 2,
            message: m.to_string(),
        }
    }
    fn data(m: impl ToString) -> Self {
        Self {
            code: 3,
            message: m.to_string(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, v: &str) -> Result<T, Failure> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| Failure::usage(format!("invalid {what} {v:?}")))
}

fn resolve_config(a: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.kf_trans {
        cfg.keyframes.trans = v;
    }
    if let Some(v) = a.kf_rot {
        cfg.keyframes.rot_deg = v;
    }
    if let Some(v) = a.num_refs {
        cfg.references.count = v;
    }
    if let Some(v) = a.voxel_size {
        cfg.grid.voxel_size = v;
    }
    if let Some(v) = a.trunc {
        cfg.grid.trunc = Some(v);
    }
    if let Some(v) = a.tau {
        cfg.decoder.tau = v;
    }
    if let Some(v) = a.decoder {
        cfg.decoder.kind = match v {
            DecoderArg::Depth => DecoderKind::Depth,
            DecoderArg::Volume => DecoderKind::Volume,
        };
    }
    if let Some(v) = a.features {
        cfg.features = match v {
            FeaturesArg::Costvol => FeatureSource::Costvol,
            FeaturesArg::Backproject => FeatureSource::Backproject,
        };
    }
    if let Some(v) = &a.compensation {
        cfg.rccv.compensation = parse_enum("compensation", v)?;
    }
    if let Some(v) = &a.ctx_mode {
        cfg.rccv.ctx_mode = parse_enum("ctx mode", v)?;
    }
    if let Some(v) = a.protocol {
        cfg.eval.protocol = protocol(v);
    }
    cfg.validate().map_err(Failure::usage)?;
    Ok(cfg)
}

fn protocol(p: ProtocolArg) -> Protocol {
    match p {
        ProtocolArg::Atlas => Protocol::Atlas,
        ProtocolArg::Masked => Protocol::Masked,
    }
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::data(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth { scene, out } => {
            let spec = SceneSpec::load(&scene).map_err(|e| Failure::usage(format!("{}: {e}", scene.display())))?;
            spec.emit_dataset(&out).map_err(Failure::data)?;
            eprintln!("wrote {} frames to {}", spec.poses.len(), out.display());
            Ok(())
        }
        Command::Reconstruct { run, dump_cv } => {
            let cfg = resolve_config(&run)?;
            let rec = reconstruct(&cfg, &run.dataset, &run.out)?;
            if dump_cv {
                let seq = load_sequence(&run.dataset).map_err(|e| Failure::from(PipelineError::from(e)))?;
                dump_cost_volumes(&cfg, &seq, &run.out.join("cv"))?;
            }
            let r = &rec.report;
            eprintln!("mesh: {} vertices, {} triangles", r.mesh_vertices, r.mesh_triangles);
            if let Some(e) = &r.evaluation {
                eprintln!(
                    "accuracy {:.4} completeness {:.4} chamfer {:.4} f1@5cm {}",
                    e.accuracy,
                    e.completeness,
                    e.chamfer,
                    e.f1_at(0.05).map(|f| format!("{f:.4}")).unwrap_or_else(|| "n/a".into())
                );
            }
            Ok(())
        }
        Command::Ablate { run, groups } => {
            let cfg = resolve_config(&run)?;
            let rows: Vec<AblationRow> = ablation_rows()
                .into_iter()
                .filter(|r| groups.is_empty() || groups.iter().any(|g| g.name() == r.group))
                .collect();
            let csv = ablate(&cfg, &run.dataset, &run.out, Some(&rows))?;
            print!("{csv}");
            Ok(())
        }
        Command::EvalMesh {
            pred,
            gt,
            protocol: proto,
            gt_tsdf,
            thresholds,
            density,
            seed,
            out,
            sweep_csv,
        } => {
            let thresholds = if thresholds.is_empty() {
                metrics::DEFAULT_THRESHOLDS.to_vec()
            } else {
                thresholds
            };
            let pred = read_ply(&pred).map_err(|e| Failure::data(format!("{}: {e}", pred.display())))?;
            let gt_mesh = read_ply(&gt).map_err(|e| Failure::data(format!("{}: {e}", gt.display())))?;
            let gt_pts = mesh::sample_points(&gt_mesh, density, seed).map_err(Failure::data)?;
            let volume = match (protocol(proto), &gt_tsdf) {
                (Protocol::Masked, Some(p)) => Some(load_tsdf(p, None)?),
                (Protocol::Masked, None) => return Err(Failure::usage("--protocol masked needs --gt-tsdf")),
                _ => None,
            };
            let mask = volume.as_ref().map(|volume| OcclusionMask { volume });
            let report = mesh_metrics(&pred.vertices, &gt_pts, &thresholds, mask.as_ref()).map_err(Failure::data)?;
            if let Some(p) = sweep_csv {
                let f1 = f1_threshold_sweep(&pred.vertices, &gt_pts, &thresholds).map_err(Failure::usage)?;
                let mut csv = String::from("threshold,f1\n");
                for (t, f) in thresholds.iter().zip(f1) {
                    csv.push_str(&format!("{t},{f:.6}\n"));
                }
                write_text(Some(&p), &csv)?;
            }
            write_text(out.as_deref(), &to_json(&report))
        }
        Command::EvalDepth { pred, gt, out } => {
            let load = |p: &Path| -> Result<DepthMap, Failure> {
                let (w, h) = png_size(p).map_err(Failure::data)?;
                let intr = Intrinsics::new(1.0, 1.0, 0.0, 0.0, w, h).map_err(Failure::data)?;
                read_depth_png(p, Camera::new(intr, Pose::identity())).map_err(Failure::data)
            };
            let report = depth_metrics(&load(&pred)?, &load(&gt)?).map_err(|e| match e {
                MetricsError::NoValidPixels => Failure {
                    code: 4,
                    message: e.to_string(),
                },
                e => Failure::data(e),
            })?;
            write_text(out.as_deref(), &to_json(&report))
        }
        Command::InspectCv { dump, pixel, out } => {
            let mut r = std::io::BufReader::new(fs::File::open(&dump).map_err(|e| Failure::data(format!("{}: {e}", dump.display())))?);
            let (vol, depths) = read_dump(&mut r).map_err(Failure::data)?;
            let depths: Vec<f64> = depths.iter().map(|&d| d as f64).collect();
            let csv = inspect_cv(&vol, &depths, pixel.0, pixel.1).map_err(Failure::usage)?;
            write_text(out.as_deref(), &csv)
        }
        Command::ExportMesh {
            tsdf,
            out,
            trunc,
            iso,
            ascii,
        } => {
            let vol = load_tsdf(&tsdf, trunc)?;
            let mesh = marching_cubes(&vol, iso);
            let file = fs::File::create(&out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
            let mut w = BufWriter::new(file);
            let is_obj = out.extension().and_then(|e| e.to_str()) == Some("obj");
            if is_obj {
                write_obj(&mesh, &mut w).map_err(Failure::data)?;
            } else {
                let fmt = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
                write_ply(&mesh, fmt, &mut w).map_err(Failure::data)?;
            }
            w.flush().map_err(Failure::data)?;
            eprintln!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
            Ok(())
        }
        Command::RenderDepth {
            mesh,
            intrinsics,
            pose,
            out,
        } => {
            let m = read_ply(&mesh).map_err(|e| Failure::data(format!("{}: {e}", mesh.display())))?;
            let intr = Intrinsics::load(&intrinsics).map_err(Failure::data)?;
            let pose = Pose::load(&pose)
                .map_err(Failure::data)?
                .ok_or_else(|| Failure::data("pose has non-finite entries"))?;
            let depth = render_depth(&m, &Camera::new(intr, pose));
            write_depth_png(&depth, &out).map_err(Failure::data)
        }
    }
}

fn load_tsdf(path: &Path, trunc: Option<f64>) -> Result<TsdfVolume, Failure> {
    let open = || fs::File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())));
    let trunc = match trunc {
        Some(t) => t,
        None => {
            let grid = VoxelGrid::read_from(&mut std::io::BufReader::new(open()?)).map_err(Failure::data)?;
            3.0 * grid.geometry.voxel_size
        }
    };
    TsdfVolume::read_from(&mut std::io::BufReader::new(open()?), trunc).map_err(Failure::data)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

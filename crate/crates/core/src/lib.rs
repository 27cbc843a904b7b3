//! Multi-view reconstruction from plane-sweep cost volumes with ray and
//! contextual compensation, voxel fusion, TSDF meshing and evaluation.

// Validation writes `!(x > 0.0)` so that NaN is rejected along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod container;
pub mod costvol;
pub mod dataset;
pub mod encoder;
pub mod fusion;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod rccv;
pub mod synth;
pub mod tsdf;

pub use camera::{make_log_planes, Camera, CameraError, DepthPlanes, Intrinsics, Pose};
pub use config::{ConfigError, PipelineConfig, CONFIG_VERSION};
pub use container::{ContainerError, Matrix, Sections};
pub use costvol::{build_cost_volume, warp_to_plane, CostVolume, CostVolumeError, PlaneStack, SweepOptions};
pub use dataset::{
    assign_references, load_sequence, select_keyframes, DatasetError, Frame, KeyframeBundle, KeyframeParams, ReferenceParams,
    Sequence,
};
pub use encoder::{encode_image, EncoderError, EncoderKind, EncoderSpec, FeatureMap};
pub use fusion::{backproject_baseline, fuse, sample_rccv, FusionError, GridGeometry, VoxelGrid};
pub use mesh::{marching_cubes, render_depth, sample_points, MeshError, TriMesh};
pub use metrics::{
    depth_metrics, f1_threshold_sweep, mesh_metrics, tsdf_compare, DepthReport, MeshReport, MetricsError, OcclusionMask,
};
pub use pipeline::{ablate, inspect_cv, reconstruct, reconstruct_sequence, GroundTruth, PipelineError, Reconstruction, RunReport};
pub use rccv::{
    compensate, contextual_compensate, footprint_bytes, ray_compensate, Compensation, CompensationWeights, CtxMode,
    Rccv, RccvError, RccvLayout,
};
pub use tsdf::{
    decode_depth_softargmax, decode_volume, integrate_depth, mark_unobserved_columns, DepthMap, SoftArgmax, TsdfError,
    TsdfVolume,
};

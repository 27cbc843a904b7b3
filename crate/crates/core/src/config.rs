//! Versioned pipeline configuration.
//!
//! Every field has a default except `version`; unknown keys are rejected at
//! every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{make_log_planes, DepthPlanes};
use crate::costvol::{Aggregation, Interpolation, SweepOptions};
use crate::dataset::{KeyframeParams, ReferenceParams};
use crate::encoder::EncoderKind;
use crate::metrics::DEFAULT_THRESHOLDS;
use crate::rccv::{Compensation, CtxMode};

pub const CONFIG_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub keyframes: KeyframeParams,
    #[serde(default)]
    pub references: ReferenceParams,
    #[serde(default)]
    pub planes: PlaneConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub costvol: CostVolConfig,
    #[serde(default)]
    pub rccv: RccvConfig,
    #[serde(default)]
    pub features: FeatureSource,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION.to_string(),
            seed: 0,
            keyframes: KeyframeParams::default(),
            references: ReferenceParams::default(),
            planes: PlaneConfig::default(),
            encoder: EncoderConfig::default(),
            costvol: CostVolConfig::default(),
            rccv: RccvConfig::default(),
            features: FeatureSource::default(),
            grid: GridConfig::default(),
            decoder: DecoderConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaneConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub count: usize,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self {
            d_min: 0.25,
            d_max: 5.0,
            count: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub patch: usize,
    pub out_channels: usize,
    /// Optional `out_channels × patch²` matrix container replacing the
    /// seeded projection.
    pub weights: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::PatchNormalized,
            patch: 5,
            out_channels: 16,
            weights: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostVolConfig {
    pub interpolation: Interpolation,
    pub aggregation: Aggregation,
    pub normalize_warped: bool,
    pub coverage_exponent: f32,
    /// Channels after the seeded reduction; the last one keeps the mean
    /// matching score.
    pub channels: usize,
}

impl Default for CostVolConfig {
    fn default() -> Self {
        let s = SweepOptions::default();
        Self {
            interpolation: s.interpolation,
            aggregation: s.aggregation,
            normalize_warped: s.normalize_warped,
            coverage_exponent: s.coverage_exponent,
            channels: 7,
        }
    }
}

impl CostVolConfig {
    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            interpolation: self.interpolation,
            aggregation: self.aggregation,
            normalize_warped: self.normalize_warped,
            coverage_exponent: self.coverage_exponent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RccvConfig {
    pub compensation: Compensation,
    pub ctx_mode: CtxMode,
    pub out_channels: usize,
    /// Optional kernel container replacing the seeded defaults.
    pub weights: Option<PathBuf>,
}

impl Default for RccvConfig {
    fn default() -> Self {
        Self {
            compensation: Compensation::RayCtx,
            ctx_mode: CtxMode::Group,
            out_channels: 7,
            weights: None,
        }
    }
}

/// What the global feature grid is built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    #[default]
    Costvol,
    Backproject,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub voxel_size: f64,
    /// Truncation distance; defaults to three voxels.
    pub trunc: Option<f64>,
    /// Padding around the keyframe frusta, voxels.
    pub pad: usize,
    /// Explicit `[min, max]` corners overriding the frusta bounds.
    pub bounds: Option<[[f64; 3]; 2]>,
    /// World axis treated as vertical for unobserved-column marking.
    pub gravity_axis: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.04,
            trunc: None,
            pad: 4,
            bounds: None,
            gravity_axis: 2,
        }
    }
}

impl GridConfig {
    pub fn trunc(&self) -> f64 {
        self.trunc.unwrap_or(3.0 * self.voxel_size)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    /// Soft-argmax depth per keyframe, then TSDF integration.
    #[default]
    Depth,
    /// Pseudo-TSDF read from one channel of the fused grid.
    Volume,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub tau: f64,
    /// Rays whose best matching score is below this decode to no depth.
    pub min_peak: Option<f32>,
    /// Volume decoder iso level; defaults depend on the score channel.
    pub iso: Option<f32>,
    /// Volume decoder score scale; defaults depend on the score channel.
    pub scale: Option<f32>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            kind: DecoderKind::Depth,
            tau: 0.02,
            min_peak: Some(0.5),
            iso: None,
            scale: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Every predicted point counts.
    #[default]
    Atlas,
    /// Predicted points in never-observed space are excluded.
    Masked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub thresholds: Vec<f64>,
    /// Ground-truth surface samples per square meter.
    pub gt_density: f64,
    /// A ground-truth sample counts as seen when some frame's depth agrees
    /// within this distance, meters.
    pub visibility_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Atlas,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            gt_density: 2500.0,
            visibility_tolerance: 0.05,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported config version {got:?}, expected {CONFIG_VERSION:?}")]
    Version { got: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn planes(&self) -> Result<DepthPlanes, ConfigError> {
        make_log_planes(self.planes.d_min, self.planes.d_max, self.planes.count)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version {
                got: self.version.clone(),
            });
        }
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.planes()?;
        if !(self.grid.voxel_size > 0.0) || !(self.grid.trunc() > 0.0) {
            return bad("voxel_size and trunc must be > 0".into());
        }
        if self.grid.gravity_axis > 2 {
            return bad(format!("gravity_axis must be 0, 1 or 2, got {}", self.grid.gravity_axis));
        }
        if self.costvol.channels == 0 || self.rccv.out_channels == 0 {
            return bad("channel counts must be >= 1".into());
        }
        if self.costvol.aggregation == Aggregation::MeanVar && self.costvol.channels > 8 {
            return bad(format!(
                "costvol.channels = {} exceeds the 8 mean/variance channels",
                self.costvol.channels
            ));
        }
        if !(self.decoder.tau > 0.0) {
            return bad("decoder.tau must be > 0".into());
        }
        if self.eval.thresholds.is_empty()
            || self.eval.thresholds.iter().any(|&t| !(t > 0.0))
            || self.eval.thresholds.windows(2).any(|w| w[1] < w[0])
        {
            return bad("eval.thresholds must be positive and ascending".into());
        }
        if !(self.eval.gt_density > 0.0) {
            return bad("eval.gt_density must be > 0".into());
        }
        if self.references.count == 0 {
            return bad("references.count must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_file_materializes_defaults() {
        let cfg = PipelineConfig::from_toml("version = \"1\"\n[rccv]\nctx_mode = \"uni\"\n").unwrap();
        assert_eq!(cfg.rccv.ctx_mode, CtxMode::Uni);
        assert_eq!(cfg.planes.count, 64);
        assert_eq!(cfg.grid.trunc(), 3.0 * 0.04);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_version() {
        assert!(PipelineConfig::from_toml("version = \"1\"\nbogus = 1\n").is_err());
        assert!(PipelineConfig::from_toml("version = \"1\"\n[grid]\nvoxel = 0.1\n").is_err());
        assert!(PipelineConfig::from_toml("seed = 3\n").is_err());
        assert!(matches!(
            PipelineConfig::from_toml("version = \"0\"\n"),
            Err(ConfigError::Version { .. })
        ));
    }
}

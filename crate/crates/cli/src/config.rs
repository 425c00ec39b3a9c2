//! Pipeline configuration, read from TOML.
//!
//! ```toml
//! [input]
//! dir = "input"        # rgb_{t:03}.png, depth_{t:03}.pfm, mask_{t:03}.png, camera.json
//! frames = 16
//! width = 512
//! height = 512
//! prompt = "a quiet harbour at dusk"
//!
//! [outpaint]
//! mode = "stub"        # or "external" with dir, timeout_secs, tolerance
//! stub = "nearest_observed"
//!
//! [[segments]]
//! prompt = "the harbour seen from further back"
//! trajectory = { kind = "translate_line", direction = [0, 0, -1], step = 0.0005, n_steps = 3 }
//! ```
//!
//! Relative paths resolve against the workspace root.

use std::path::{Path, PathBuf};
use std::time::Duration;

use outpaint4d_core::bridge::{ExternalOutpainter, DEFAULT_DRIFT_TOLERANCE};
use outpaint4d_core::update::StepParams;
use outpaint4d_core::{IndexParams, Outpainter, StubFiller, StubMode, TrajectorySpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub outpaint: OutpaintConfig,
    #[serde(default)]
    pub overlap: OverlapBand,
    #[serde(default = "yes")]
    pub complete_background: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub dataprep: DataprepConfig,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub dir: PathBuf,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub splat_radius: usize,
    pub leaf_size: usize,
    /// Depth for new content when a frame has nothing observed.
    pub fallback_depth: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            splat_radius: 1,
            leaf_size: IndexParams::default().leaf_size,
            fallback_depth: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OutpaintConfig {
    Stub {
        #[serde(default)]
        stub: StubMode,
    },
    External {
        dir: PathBuf,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_tolerance")]
        tolerance: u8,
    },
}

fn default_timeout() -> f64 {
    600.0
}

fn default_tolerance() -> u8 {
    DEFAULT_DRIFT_TOLERANCE
}

impl Default for OutpaintConfig {
    fn default() -> Self {
        OutpaintConfig::Stub {
            stub: StubMode::default(),
        }
    }
}

/// Observed-fraction range outside which a step logs a warning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapBand {
    pub min: f64,
    pub max: f64,
}

impl Default for OverlapBand {
    fn default() -> Self {
        OverlapBand { min: 0.3, max: 0.9 }
    }
}

impl OverlapBand {
    pub fn contains(&self, fraction: f64) -> bool {
        fraction >= self.min && fraction <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub prompt: String,
    pub trajectory: TrajectorySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub scenes: usize,
    pub min_points: usize,
    pub max_points: usize,
    pub width: usize,
    pub height: usize,
    pub round_trip_samples: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            scenes: 20,
            min_points: 1_000,
            max_points: 100_000,
            width: 64,
            height: 64,
            round_trip_samples: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataprepConfig {
    pub dir: PathBuf,
    pub tolerance: f64,
}

impl Default for DataprepConfig {
    fn default() -> Self {
        DataprepConfig {
            dir: "dataprep".into(),
            tolerance: 0.02,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|message| CliError::Config {
            path: origin.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let i = &self.input;
        if i.frames == 0 || i.width == 0 || i.height == 0 {
            return Err("input frames, width and height must be positive".into());
        }
        if self.render.leaf_size == 0 {
            return Err("render.leaf_size must be positive".into());
        }
        if !(self.render.fallback_depth.is_finite() && self.render.fallback_depth > 0.0) {
            return Err("render.fallback_depth must be finite and positive".into());
        }
        let band = &self.overlap;
        if !(0.0 <= band.min && band.min <= band.max && band.max <= 1.0) {
            return Err(format!("overlap band [{}, {}] must lie within [0, 1]", band.min, band.max));
        }
        if let OutpaintConfig::External { timeout_secs, .. } = &self.outpaint {
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return Err("outpaint.timeout_secs must be finite and positive".into());
            }
        }
        for (k, s) in self.segments.iter().enumerate() {
            s.trajectory
                .validate()
                .map_err(|e| format!("segment {k}: {e}"))?;
        }
        let o = &self.oracle;
        if o.scenes == 0 || o.min_points == 0 || o.min_points > o.max_points || o.width == 0 || o.height == 0 {
            return Err("oracle scales must be positive with min_points <= max_points".into());
        }
        if !(self.dataprep.tolerance > 0.0 && self.dataprep.tolerance < 1.0) {
            return Err("dataprep.tolerance must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn step_params(&self) -> StepParams {
        StepParams {
            splat_radius: self.render.splat_radius,
            index: IndexParams {
                leaf_size: self.render.leaf_size,
            },
            fallback_depth: self.render.fallback_depth,
        }
    }

    pub fn outpainter(&self, workspace: &Workspace) -> Box<dyn Outpainter> {
        match &self.outpaint {
            OutpaintConfig::Stub { stub } => Box::new(StubFiller::new(*stub)),
            OutpaintConfig::External {
                dir,
                timeout_secs,
                tolerance,
            } => Box::new(
                ExternalOutpainter::new(workspace.resolve(dir), Duration::from_secs_f64(*timeout_secs))
                    .with_tolerance(*tolerance),
            ),
        }
    }
}

/// Root against which relative paths resolve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn output(&self, cfg: &PipelineConfig) -> PathBuf {
        self.resolve(&cfg.output.dir)
    }
}

/// Config plus the text it was parsed from, kept as a snapshot in the state.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub text: String,
}

impl LoadedConfig {
    pub fn load(workspace: &Workspace, path: &Path) -> Result<Self, CliError> {
        let full = workspace.resolve(path);
        let text = std::fs::read_to_string(&full).map_err(|e| CliError::io(format!("reading config {}", full.display()), e))?;
        let config = PipelineConfig::parse(&text, &full)?;
        Ok(LoadedConfig { config, text })
    }
}

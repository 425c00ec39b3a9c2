//! The pipeline commands, callable without the binary.

use std::fs;
use std::path::{Path, PathBuf};

use outpaint4d_core::bridge::{search_offset_for_fraction, prepare_training_sample, write_bundle, write_result};
use outpaint4d_core::formats::{pfm, png, write_json};
use outpaint4d_core::init::initialize;
use outpaint4d_core::raster::rasterize;
use outpaint4d_core::trajectory::generate;
use outpaint4d_core::update::{complete_background, outpaint_step, AffineDepthFit, CompletionOutcome};
use outpaint4d_core::{Camera, IndexParams, Outpainter, SceneState};
use serde::Serialize;

use crate::config::{LoadedConfig, PipelineConfig, Workspace};
use crate::error::CliError;
use crate::inputs::load_input;
use crate::store::{step_dir_name, Store};

pub struct Context {
    pub workspace: Workspace,
    pub loaded: LoadedConfig,
}

impl Context {
    pub fn new(workspace: Workspace, loaded: LoadedConfig) -> Self {
        Context { workspace, loaded }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.loaded.config
    }

    pub fn store(&self) -> Store {
        Store::new(self.workspace.output(self.config()))
    }

    fn outpainter(&self) -> Box<dyn Outpainter> {
        self.config().outpainter(&self.workspace)
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitReport {
    pub frames: usize,
    pub foreground_points: Vec<usize>,
    pub background_points: usize,
    pub skipped_foreground: Vec<usize>,
    pub skipped_background: usize,
    pub always_occluded: usize,
}

impl InitReport {
    pub fn total_points(&self) -> usize {
        self.foreground_points.iter().sum::<usize>() + self.background_points
    }
}

/// Builds the initial scene from the input video and commits it, dropping
/// artifacts of earlier steps.
pub fn cmd_init(ctx: &Context) -> Result<InitReport, CliError> {
    let input = load_input(&ctx.workspace, &ctx.config().input)?;
    let mut out = initialize(&input)?;
    out.state.config_snapshot = ctx.loaded.text.clone();
    let cloud = &out.state.cloud;
    let report = InitReport {
        frames: cloud.frame_count(),
        foreground_points: cloud.foreground_layers().iter().map(|s| s.len()).collect(),
        background_points: cloud.background().len(),
        skipped_foreground: out.diagnostics.skipped_foreground.clone(),
        skipped_background: out.diagnostics.skipped_background,
        always_occluded: out.diagnostics.always_occluded,
    };
    for (t, &s) in report.skipped_foreground.iter().enumerate() {
        if s > 0 {
            log::warn!("frame {t}: {s} foreground pixels skipped for unusable depth");
        }
    }
    if report.skipped_background > 0 {
        log::warn!("{} background pixels skipped for unusable depth", report.skipped_background);
    }
    let store = ctx.store();
    let mut staging = store.begin()?;
    let dir = staging.artifact_dir("init")?;
    write_json(&dir.join("summary.json"), &report)?;
    staging.commit(&out.state, true)?;
    log::info!("initialized scene with {} points", report.total_points());
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitRecord {
    pub scale: f64,
    pub shift: f64,
    pub rms_residual_before: f64,
    pub rms_residual_after: f64,
    pub n_samples: usize,
    pub shift_only: bool,
}

impl From<AffineDepthFit> for FitRecord {
    fn from(f: AffineDepthFit) -> Self {
        FitRecord {
            scale: f.scale,
            shift: f.shift,
            rms_residual_before: f.rms_residual_before,
            rms_residual_after: f.rms_residual_after,
            n_samples: f.n_samples,
            shift_only: f.shift_only,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRecord {
    pub pose: usize,
    pub added_points: usize,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub pose_index: usize,
    pub prompt: String,
    pub observed_fraction: Vec<f64>,
    pub mean_observed_fraction: f64,
    pub within_overlap_band: bool,
    pub lifted_points: usize,
    pub skipped_points: usize,
    pub total_points: usize,
    pub provenance: String,
    pub fallback_frames: Vec<usize>,
    pub fits: Vec<Option<FitRecord>>,
    pub completions: Vec<CompletionRecord>,
}

fn run_completion(
    state: &SceneState,
    pose: usize,
    outpainter: &dyn Outpainter,
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<(CompletionOutcome, CompletionRecord), CliError> {
    let out = complete_background(state, pose, outpainter, &cfg.step_params())?;
    let mut provenance = String::new();
    if let (Some(bundle), Some(result)) = (&out.bundle, &out.result) {
        let sub = dir.join(format!("completion_{pose:03}"));
        let session = format!("completion_{pose:03}");
        write_bundle(&sub.join("bundle"), bundle, &session)?;
        write_result(&sub.join("result"), result, &session)?;
        provenance = result.provenance.to_string();
    }
    log::info!("completed {} background points at pose {pose}", out.added_points);
    let record = CompletionRecord {
        pose,
        added_points: out.added_points,
        provenance,
    };
    Ok((out, record))
}

fn step_on(state: SceneState, ctx: &Context, camera: &Camera, prompt: &str, outpainter: &dyn Outpainter) -> Result<(SceneState, StepReport), CliError> {
    let cfg = ctx.config();
    let first = &state.poses[0];
    if (camera.width(), camera.height()) != (first.width(), first.height()) {
        return Err(CliError::Validation(format!(
            "step camera is {}x{}, scene is {}x{}",
            camera.width(),
            camera.height(),
            first.width(),
            first.height()
        )));
    }
    let store = ctx.store();
    let pose_index = state.poses.len();
    let mut staging = store.begin()?;
    let dir = staging.artifact_dir(Path::new("steps").join(step_dir_name(pose_index)))?;
    let mut state = state;
    let mut completions = Vec::new();
    if cfg.complete_background {
        let pending: Vec<usize> = state.pending_completion().collect();
        for p in pending {
            let (out, rec) = run_completion(&state, p, outpainter, cfg, &dir)?;
            state = out.state;
            completions.push(rec);
        }
    }
    let outcome = outpaint_step(&state, camera, prompt, outpainter, &cfg.step_params())?;
    let session = step_dir_name(pose_index);
    write_bundle(&dir.join("bundle"), &outcome.bundle, &session)?;
    write_result(&dir.join("result"), &outcome.result, &session)?;
    let depth_dir = dir.join("depth");
    create_dir(&depth_dir)?;
    for (t, d) in outcome.depths.iter().enumerate() {
        pfm::write(&depth_dir.join(format!("frame_{t:03}_depth.pfm")), &d.map(|&v| v as f32))?;
    }
    let observed_fraction: Vec<f64> = outcome.bundle.frames.iter().map(|f| f.observed_mask.fraction()).collect();
    let mean = outcome.bundle.observed_fraction();
    let within = cfg.overlap.contains(mean);
    if !within {
        log::warn!(
            "step {pose_index}: observed fraction {mean:.3} outside the overlap band [{}, {}]",
            cfg.overlap.min,
            cfg.overlap.max
        );
    }
    let lifted_points = outcome.lifted_points;
    let skipped_points = outcome.skipped_points;
    let provenance = outcome.result.provenance.to_string();
    let fallback_frames = outcome.result.fallback_frames.clone();
    let fits = outcome.fits.iter().map(|f| f.map(FitRecord::from)).collect();
    state = outcome.state;
    if cfg.complete_background && state.occluded_bg[pose_index].count() > 0 {
        let (out, rec) = run_completion(&state, pose_index, outpainter, cfg, &dir)?;
        state = out.state;
        completions.push(rec);
    }
    let report = StepReport {
        pose_index,
        prompt: prompt.to_owned(),
        observed_fraction,
        mean_observed_fraction: mean,
        within_overlap_band: within,
        lifted_points,
        skipped_points,
        total_points: state.cloud.total_points(),
        provenance,
        fallback_frames,
        fits,
        completions,
    };
    write_json(&dir.join("summary.json"), &report)?;
    staging.commit(&state, false)?;
    log::info!(
        "step {pose_index}: observed {mean:.3}, lifted {lifted_points} points, scene now {}",
        report.total_points
    );
    Ok((state, report))
}

/// One outpainting step at `camera`. On any error the committed state is
/// left as it was.
pub fn cmd_step(ctx: &Context, camera: &Camera, prompt: Option<&str>) -> Result<StepReport, CliError> {
    let state = ctx.store().load()?;
    let prompt = prompt
        .map(str::to_owned)
        .unwrap_or_else(|| state.prompts.last().cloned().unwrap_or_default());
    let outpainter = ctx.outpainter();
    Ok(step_on(state, ctx, camera, &prompt, outpainter.as_ref())?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub init: InitReport,
    pub steps: Vec<StepReport>,
}

/// Initializes and then walks every configured trajectory segment.
pub fn cmd_run(ctx: &Context) -> Result<RunReport, CliError> {
    let init = cmd_init(ctx)?;
    let mut state = ctx.store().load()?;
    let outpainter = ctx.outpainter();
    let mut steps = Vec::new();
    for (k, seg) in ctx.config().segments.iter().enumerate() {
        let poses = generate(&seg.trajectory, state.current_pose())?;
        log::info!("segment {k}: {} poses", poses.len());
        for cam in poses {
            let (next, report) = step_on(state, ctx, &cam, &seg.prompt, outpainter.as_ref())?;
            state = next;
            steps.push(report);
        }
    }
    Ok(RunReport { init, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub pose: usize,
    pub timestamp: usize,
    pub observed_pixels: usize,
    pub observed_fraction: f64,
}

/// Renders the scene at `cameras` (default: every visited pose) into
/// `pose_{i:03}/frame_{t:03}.png` plus `coverage.csv`.
pub fn cmd_render(ctx: &Context, cameras: Option<Vec<Camera>>, out: Option<PathBuf>) -> Result<Vec<CoverageRow>, CliError> {
    let state = ctx.store().load()?;
    let cameras = cameras.unwrap_or_else(|| state.poses.clone());
    let out = out.unwrap_or_else(|| ctx.store().root().join("renders"));
    let radius = ctx.config().render.splat_radius;
    create_dir(&out)?;
    let mut rows = Vec::new();
    for (i, cam) in cameras.iter().enumerate() {
        let dir = out.join(format!("pose_{i:03}"));
        create_dir(&dir)?;
        for t in 0..state.cloud.frame_count() {
            let r = rasterize(&state.cloud.frame(t), cam, radius, t);
            png::write_rgb(&dir.join(format!("frame_{t:03}.png")), &r.partial_rgb)?;
            rows.push(CoverageRow {
                pose: i,
                timestamp: t,
                observed_pixels: r.observed_mask.count(),
                observed_fraction: r.observed_mask.fraction(),
            });
        }
    }
    let csv_path = out.join("coverage.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::io(format!("writing {}", csv_path.display()), e.into()))?;
    for row in &rows {
        w.serialize(row)
            .map_err(|e| CliError::io(format!("writing {}", csv_path.display()), e.into()))?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", csv_path.display()), e))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataprepTarget {
    Offset(f64),
    UnseenFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataprepReport {
    pub closer_offset: f64,
    pub unseen_fraction: f64,
    pub kept_points: Vec<usize>,
}

/// Writes one training pair: `bundle/` with the partial video and ray maps,
/// `ground_truth/frame_{t:03}_rgb.png`, and `sample.json`.
pub fn cmd_dataprep(ctx: &Context, target: DataprepTarget, out: Option<PathBuf>) -> Result<DataprepReport, CliError> {
    let cfg = ctx.config();
    let input = load_input(&ctx.workspace, &cfg.input)?;
    let params = IndexParams {
        leaf_size: cfg.render.leaf_size,
    };
    let radius = cfg.render.splat_radius;
    let sample = match target {
        DataprepTarget::Offset(o) => {
            if !(o.is_finite() && o > 0.0) {
                return Err(CliError::Validation(format!("closer offset must be positive, got {o}")));
            }
            prepare_training_sample(&input.frames, &input.camera, o, radius, params)?
        }
        DataprepTarget::UnseenFraction(f) => {
            search_offset_for_fraction(&input.frames, &input.camera, f, cfg.dataprep.tolerance, radius, params)?
        }
    };
    let out = out.unwrap_or_else(|| ctx.workspace.resolve(&cfg.dataprep.dir));
    create_dir(&out)?;
    write_bundle(&out.join("bundle"), &sample.bundle, "dataprep")?;
    let gt = out.join("ground_truth");
    create_dir(&gt)?;
    for (t, img) in sample.ground_truth.iter().enumerate() {
        png::write_rgb(&gt.join(format!("frame_{t:03}_rgb.png")), img)?;
    }
    let report = DataprepReport {
        closer_offset: sample.closer_offset,
        unseen_fraction: sample.unseen_fraction,
        kept_points: sample.kept_points,
    };
    write_json(&out.join("sample.json"), &report)?;
    Ok(report)
}

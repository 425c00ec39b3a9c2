//! File-based exchange with an external outpainting process.
//!
//! Layout under the exchange directory:
//!
//! ```text
//! bundle/manifest.json
//! bundle/frame_{t:03}_rgb.png          unseen pixels zeroed
//! bundle/frame_{t:03}_mask.png         255 = observed
//! bundle/frame_{t:03}_raydepth.pfm     -1 where unobserved
//! bundle/frame_{t:03}_raydist.pfm      -1 on observed pixels
//! bundle/frame_{t:03}_invalidcolor.png 255 = observed but color unknown
//! result/manifest.json                 written last, signals completion
//! result/frame_{t:03}_rgb.png
//! result/frame_{t:03}_depth.pfm        optional
//! result/frame_{t:03}_fgmask.png       optional
//! ```
//!
//! The bundle manifest is written after every frame file, so a watcher
//! may start reading as soon as it appears. The same holds for results.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    fill_stub, validate_bundle, worst_drift, BridgeError, ConditioningFrame, OutpaintResult, Outpainter,
    Provenance, RayConditioningBundle, StubMode,
};
use crate::camera::Camera;
use crate::error::FormatError;
use crate::formats::{pfm, png, read_json, write_json};
use crate::grid::{DepthMap, Grid, Mask};
use crate::raygeom::RayDistanceMap;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
/// Written into float maps wherever a value is undefined.
pub const UNDEFINED_SENTINEL: f32 = -1.0;
/// Largest per-channel change (out of 255) allowed on observed pixels.
pub const DEFAULT_DRIFT_TOLERANCE: u8 = 2;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFrameFiles {
    pub rgb: String,
    pub mask: String,
    pub raydepth: String,
    pub raydist: String,
    pub invalid_color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub session: String,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub prompt: String,
    pub camera: Camera,
    pub sentinel: f32,
    pub frames: Vec<BundleFrameFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultManifest {
    pub format_version: u32,
    /// Must echo the bundle session.
    pub session: String,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub provenance: Option<String>,
    #[serde(default = "default_true")]
    pub preserving: bool,
    #[serde(default)]
    pub has_depth: bool,
    #[serde(default)]
    pub has_fg_masks: bool,
}

fn default_true() -> bool {
    true
}

fn frame_file(t: usize, suffix: &str) -> String {
    format!("frame_{t:03}_{suffix}")
}

fn create_dir(path: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(path).map_err(|e| FormatError::io(path, e))
}

fn remove_dir(path: &Path) -> Result<(), FormatError> {
    match fs::remove_dir_all(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(FormatError::io(path, e)),
    }
}

/// Writes the bundle into `dir` (the `bundle/` directory itself), manifest last.
pub fn write_bundle(dir: &Path, bundle: &RayConditioningBundle, session: &str) -> Result<(), FormatError> {
    create_dir(dir)?;
    let mut files = Vec::with_capacity(bundle.frames.len());
    for (t, f) in bundle.frames.iter().enumerate() {
        let names = BundleFrameFiles {
            rgb: frame_file(t, "rgb.png"),
            mask: frame_file(t, "mask.png"),
            raydepth: frame_file(t, "raydepth.pfm"),
            raydist: frame_file(t, "raydist.pfm"),
            invalid_color: frame_file(t, "invalidcolor.png"),
        };
        let mut rgb = f.partial_rgb.clone();
        for (p, &o) in rgb.as_mut_slice().iter_mut().zip(f.observed_mask.as_slice()) {
            if !o {
                *p = [0, 0, 0];
            }
        }
        png::write_rgb(&dir.join(&names.rgb), &rgb)?;
        png::write_mask(&dir.join(&names.mask), &f.observed_mask)?;
        pfm::write_with_sentinel(&dir.join(&names.raydepth), &f.ray_depth, &f.observed_mask, UNDEFINED_SENTINEL)?;
        pfm::write_with_sentinel(
            &dir.join(&names.raydist),
            &f.ray_distance.values,
            &f.ray_distance.computed_mask,
            UNDEFINED_SENTINEL,
        )?;
        png::write_mask(&dir.join(&names.invalid_color), &f.invalid_color_mask)?;
        files.push(names);
    }
    let manifest = BundleManifest {
        format_version: BUNDLE_FORMAT_VERSION,
        session: session.to_owned(),
        n: bundle.frames.len(),
        height: bundle.height(),
        width: bundle.width(),
        prompt: bundle.prompt.clone(),
        camera: bundle.camera,
        sentinel: UNDEFINED_SENTINEL,
        frames: files,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

fn defined_map(raw: &Grid<f32>, sentinel: f32) -> (DepthMap, Mask) {
    let defined = raw.map(|&v| v != sentinel);
    let values = raw.map(|&v| if v != sentinel { v as f64 } else { 0.0 });
    (values, defined)
}

fn check_size<T>(grid: &Grid<T>, w: usize, h: usize, path: &Path) -> Result<(), FormatError> {
    if grid.dims() != (w, h) {
        return Err(FormatError::malformed(
            "bundle",
            path,
            format!("image is {}x{}, manifest says {w}x{h}", grid.width(), grid.height()),
        ));
    }
    Ok(())
}

/// Reads a bundle written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<(BundleManifest, RayConditioningBundle), FormatError> {
    let manifest: BundleManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.format_version != BUNDLE_FORMAT_VERSION {
        return Err(FormatError::malformed(
            "bundle",
            dir.join(MANIFEST),
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    if manifest.frames.len() != manifest.n
        || manifest.camera.width() != manifest.width
        || manifest.camera.height() != manifest.height
    {
        return Err(FormatError::malformed(
            "bundle",
            dir.join(MANIFEST),
            "frame count or size disagrees with the camera",
        ));
    }
    let (w, h) = (manifest.width, manifest.height);
    let mut frames = Vec::with_capacity(manifest.n);
    for names in &manifest.frames {
        let p = dir.join(&names.rgb);
        let partial_rgb = png::read_rgb(&p)?;
        check_size(&partial_rgb, w, h, &p)?;
        let p = dir.join(&names.mask);
        let observed_mask = png::read_mask(&p)?;
        check_size(&observed_mask, w, h, &p)?;
        let p = dir.join(&names.raydepth);
        let raw = pfm::read(&p)?;
        check_size(&raw, w, h, &p)?;
        let (ray_depth, _) = defined_map(&raw, manifest.sentinel);
        let p = dir.join(&names.raydist);
        let raw = pfm::read(&p)?;
        check_size(&raw, w, h, &p)?;
        let (values, computed_mask) = defined_map(&raw, manifest.sentinel);
        let p = dir.join(&names.invalid_color);
        let invalid_color_mask = png::read_mask(&p)?;
        check_size(&invalid_color_mask, w, h, &p)?;
        frames.push(ConditioningFrame {
            partial_rgb,
            observed_mask,
            ray_depth,
            ray_distance: RayDistanceMap { values, computed_mask },
            invalid_color_mask,
        });
    }
    let bundle = RayConditioningBundle {
        frames,
        prompt: manifest.prompt.clone(),
        camera: manifest.camera,
    };
    Ok((manifest, bundle))
}

/// Writes a result into `dir` (the `result/` directory itself), manifest last.
pub fn write_result(dir: &Path, result: &OutpaintResult, session: &str) -> Result<(), FormatError> {
    create_dir(dir)?;
    let (w, h) = result.frames.first().map(|f| f.dims()).unwrap_or((0, 0));
    for (t, f) in result.frames.iter().enumerate() {
        png::write_rgb(&dir.join(frame_file(t, "rgb.png")), f)?;
    }
    if let Some(depth) = &result.depth {
        for (t, d) in depth.iter().enumerate() {
            pfm::write(&dir.join(frame_file(t, "depth.pfm")), &d.map(|&v| v as f32))?;
        }
    }
    if let Some(masks) = &result.fg_masks {
        for (t, m) in masks.iter().enumerate() {
            png::write_mask(&dir.join(frame_file(t, "fgmask.png")), m)?;
        }
    }
    let manifest = ResultManifest {
        format_version: BUNDLE_FORMAT_VERSION,
        session: session.to_owned(),
        n: result.frames.len(),
        height: h,
        width: w,
        provenance: Some(result.provenance.to_string()),
        preserving: result.preserving,
        has_depth: result.depth.is_some(),
        has_fg_masks: result.fg_masks.is_some(),
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

fn malformed(e: impl std::fmt::Display) -> BridgeError {
    BridgeError::Malformed(e.to_string())
}

fn expect_dims<T>(grid: &Grid<T>, w: usize, h: usize, path: &Path) -> Result<(), BridgeError> {
    if grid.dims() != (w, h) {
        return Err(BridgeError::DimensionMismatch(format!(
            "{} is {}x{}, bundle frames are {w}x{h}",
            path.display(),
            grid.width(),
            grid.height()
        )));
    }
    Ok(())
}

/// Reads a result directory and checks it against the bundle it answers.
pub fn read_result(
    dir: &Path,
    bundle: &RayConditioningBundle,
    session: &str,
) -> Result<OutpaintResult, BridgeError> {
    let manifest: ResultManifest = read_json(&dir.join(MANIFEST)).map_err(malformed)?;
    if manifest.format_version != BUNDLE_FORMAT_VERSION {
        return Err(malformed(format!("unsupported format version {}", manifest.format_version)));
    }
    if manifest.session != session {
        return Err(malformed(format!(
            "result answers session {:?}, expected {session:?}",
            manifest.session
        )));
    }
    let (n, w, h) = (bundle.frame_count(), bundle.width(), bundle.height());
    if (manifest.n, manifest.width, manifest.height) != (n, w, h) {
        return Err(BridgeError::DimensionMismatch(format!(
            "result manifest declares {} frames of {}x{}, bundle has {n} frames of {w}x{h}",
            manifest.n, manifest.width, manifest.height
        )));
    }
    let load = |t: usize, suffix: &str| -> Result<PathBuf, BridgeError> {
        let p = dir.join(frame_file(t, suffix));
        if !p.is_file() {
            return Err(malformed(format!("missing {}", p.display())));
        }
        Ok(p)
    };
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let p = load(t, "rgb.png")?;
        let img = png::read_rgb(&p).map_err(malformed)?;
        expect_dims(&img, w, h, &p)?;
        frames.push(img);
    }
    let depth = if manifest.has_depth {
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let p = load(t, "depth.pfm")?;
            let d = pfm::read(&p).map_err(malformed)?;
            expect_dims(&d, w, h, &p)?;
            out.push(d.map(|&v| v as f64));
        }
        Some(out)
    } else {
        None
    };
    let fg_masks = if manifest.has_fg_masks {
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let p = load(t, "fgmask.png")?;
            let m = png::read_mask(&p).map_err(malformed)?;
            expect_dims(&m, w, h, &p)?;
            out.push(m);
        }
        Some(out)
    } else {
        None
    };
    Ok(OutpaintResult {
        frames,
        provenance: Provenance::External(manifest.provenance.unwrap_or_else(|| "unnamed".into())),
        preserving: manifest.preserving,
        fallback_frames: Vec::new(),
        depth,
        fg_masks,
    })
}

static SESSION_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Hands bundles to an external process through a directory and waits
/// for its answer.
#[derive(Debug, Clone)]
pub struct ExternalOutpainter {
    pub dir: PathBuf,
    pub timeout: Duration,
    pub tolerance: u8,
    pub poll_interval: Duration,
}

impl ExternalOutpainter {
    pub fn new(dir: impl Into<PathBuf>, timeout: Duration) -> Self {
        ExternalOutpainter {
            dir: dir.into(),
            timeout,
            tolerance: DEFAULT_DRIFT_TOLERANCE,
            poll_interval: Duration::from_millis(20),
        }
    }

    pub fn with_tolerance(mut self, tolerance: u8) -> Self {
        self.tolerance = tolerance;
        self
    }

    /// Runs one exchange with an explicit session name.
    pub fn exchange(&self, bundle: &RayConditioningBundle, session: &str) -> Result<OutpaintResult, BridgeError> {
        let violations = validate_bundle(bundle);
        if !violations.is_empty() {
            return Err(BridgeError::InvalidBundle(violations));
        }
        let bundle_dir = self.dir.join("bundle");
        let result_dir = self.dir.join("result");
        // Bundle first: a watcher must never see an old bundle without its result.
        remove_dir(&bundle_dir)?;
        remove_dir(&result_dir)?;
        write_bundle(&bundle_dir, bundle, session)?;
        log::info!("bundle written to {}, waiting for result", bundle_dir.display());

        let done = result_dir.join(MANIFEST);
        let start = Instant::now();
        while !done.is_file() {
            if start.elapsed() >= self.timeout {
                return Err(BridgeError::Timeout(self.timeout));
            }
            thread::sleep(self.poll_interval);
        }
        let result = read_result(&result_dir, bundle, session)?;
        if result.preserving {
            if let Some((frame, x, y, channel, delta)) = worst_drift(bundle, &result.frames) {
                if delta > self.tolerance {
                    return Err(BridgeError::ObservedDrift {
                        frame,
                        x,
                        y,
                        channel,
                        delta,
                        tolerance: self.tolerance,
                    });
                }
            }
        }
        Ok(result)
    }
}

impl Outpainter for ExternalOutpainter {
    fn outpaint(&self, bundle: &RayConditioningBundle) -> Result<OutpaintResult, BridgeError> {
        let session = format!(
            "{}-{}",
            std::process::id(),
            SESSION_COUNTER.fetch_add(1, Ordering::Relaxed)
        );
        self.exchange(bundle, &session)
    }
}

/// Answers one bundle in `dir` with a stub fill. Waits up to `timeout` for
/// a bundle that has no result yet.
pub fn echo_responder(dir: &Path, timeout: Duration, mode: StubMode) -> Result<(), BridgeError> {
    let bundle_manifest = dir.join("bundle").join(MANIFEST);
    let result_manifest = dir.join("result").join(MANIFEST);
    let start = Instant::now();
    while !(bundle_manifest.is_file() && !result_manifest.exists()) {
        if start.elapsed() >= timeout {
            return Err(BridgeError::Timeout(timeout));
        }
        thread::sleep(Duration::from_millis(10));
    }
    let (manifest, bundle) = read_bundle(&dir.join("bundle"))?;
    let result = fill_stub(&bundle, mode);
    write_result(&dir.join("result"), &result, &manifest.session)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::build_bundle;
    use crate::bridge::tests::plane_scene;
    use crate::camera::Pose;
    use crate::raygeom::IndexParams;
    use nalgebra::Vector3;

    fn sample_bundle() -> RayConditioningBundle {
        let (cloud, cam) = plane_scene(24, 16, 2, 2.0);
        let moved = cam.with_pose(Pose::from_translation(Vector3::new(0.4, 0.1, -0.3)));
        build_bundle(&cloud, &moved, 1, IndexParams::default(), "snowy pass").unwrap()
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample_bundle();
        write_bundle(dir.path(), &b, "s1").unwrap();
        let (m, back) = read_bundle(dir.path()).unwrap();
        assert_eq!(m.session, "s1");
        assert_eq!(back.prompt, b.prompt);
        assert_eq!(back.camera, b.camera);
        for (a, c) in b.frames.iter().zip(&back.frames) {
            assert_eq!(a.partial_rgb, c.partial_rgb);
            assert_eq!(a.observed_mask, c.observed_mask);
            assert_eq!(a.invalid_color_mask, c.invalid_color_mask);
            assert_eq!(a.ray_distance.computed_mask, c.ray_distance.computed_mask);
            for i in 0..a.ray_depth.len() {
                let (x, y) = (a.ray_depth.as_slice()[i], c.ray_depth.as_slice()[i]);
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
                let (x, y) = (a.ray_distance.values.as_slice()[i], c.ray_distance.values.as_slice()[i]);
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sentinels_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample_bundle();
        write_bundle(dir.path(), &b, "s").unwrap();
        let f = &b.frames[0];
        let depth = pfm::read(&dir.path().join("frame_000_raydepth.pfm")).unwrap();
        let dist = pfm::read(&dir.path().join("frame_000_raydist.pfm")).unwrap();
        for i in 0..depth.len() {
            let observed = f.observed_mask.as_slice()[i];
            assert_eq!(depth.as_slice()[i] == -1.0, !observed);
            assert_eq!(dist.as_slice()[i] == -1.0, observed);
        }
        let rgb = png::read_rgb(&dir.path().join("frame_000_rgb.png")).unwrap();
        for i in 0..rgb.len() {
            if !f.observed_mask.as_slice()[i] {
                assert_eq!(rgb.as_slice()[i], [0, 0, 0]);
            }
        }
    }

    fn run_with<F>(f: F) -> Result<OutpaintResult, BridgeError>
    where
        F: FnOnce(&Path, &RayConditioningBundle, &str) + Send + 'static,
    {
        let dir = tempfile::tempdir().unwrap();
        let b = sample_bundle();
        let ext = ExternalOutpainter::new(dir.path(), Duration::from_secs(10));
        let root = dir.path().to_path_buf();
        let handle = thread::spawn(move || {
            let bm = root.join("bundle").join(MANIFEST);
            while !bm.is_file() {
                thread::sleep(Duration::from_millis(5));
            }
            let (m, bundle) = read_bundle(&root.join("bundle")).unwrap();
            f(&root.join("result"), &bundle, &m.session);
        });
        let out = ext.exchange(&b, "test-session");
        handle.join().unwrap();
        out
    }

    #[test]
    fn echo_exchange_preserves_observed() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample_bundle();
        let ext = ExternalOutpainter::new(dir.path(), Duration::from_secs(10));
        let root = dir.path().to_path_buf();
        let h = thread::spawn(move || echo_responder(&root, Duration::from_secs(10), StubMode::Constant));
        let out = ext.outpaint(&b).unwrap();
        h.join().unwrap().unwrap();
        assert_eq!(out.frames, fill_stub(&b, StubMode::Constant).frames);
        assert_eq!(out.provenance, Provenance::External("stub:constant".into()));
    }

    #[test]
    fn timeout_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut ext = ExternalOutpainter::new(dir.path(), Duration::from_millis(100));
        ext.poll_interval = Duration::from_millis(5);
        assert!(matches!(ext.outpaint(&sample_bundle()), Err(BridgeError::Timeout(_))));
    }

    #[test]
    fn drift_beyond_tolerance_is_rejected() {
        let err = run_with(|dir, bundle, session| {
            let mut r = fill_stub(bundle, StubMode::Constant);
            let f = &bundle.frames[1];
            let i = (0..f.observed_mask.len()).find(|&i| f.observed_mask.as_slice()[i]).unwrap();
            let p = &mut r.frames[1].as_mut_slice()[i];
            p[2] = p[2].wrapping_add(7);
            write_result(dir, &r, session).unwrap();
        })
        .unwrap_err();
        assert!(matches!(err, BridgeError::ObservedDrift { frame: 1, channel: 2, delta: 7, .. }), "{err}");
    }

    #[test]
    fn drift_within_tolerance_is_accepted() {
        run_with(|dir, bundle, session| {
            let mut r = fill_stub(bundle, StubMode::Constant);
            for (img, f) in r.frames.iter_mut().zip(&bundle.frames) {
                for (p, &o) in img.as_mut_slice().iter_mut().zip(f.observed_mask.as_slice()) {
                    if o {
                        p[0] = p[0].saturating_add(2);
                    }
                }
            }
            write_result(dir, &r, session).unwrap();
        })
        .unwrap();
    }

    #[test]
    fn wrong_size_is_a_dimension_error() {
        let err = run_with(|dir, bundle, session| {
            let mut r = fill_stub(bundle, StubMode::Constant);
            r.frames = r.frames.iter().map(|_| Grid::filled(10, 10, [0; 3])).collect();
            write_result(dir, &r, session).unwrap();
        })
        .unwrap_err();
        assert!(matches!(err, BridgeError::DimensionMismatch(_)), "{err}");
    }

    #[test]
    fn garbage_manifest_is_malformed() {
        let err = run_with(|dir, _, _| {
            fs::create_dir_all(dir).unwrap();
            fs::write(dir.join(MANIFEST), b"{ not json").unwrap();
        })
        .unwrap_err();
        assert!(matches!(err, BridgeError::Malformed(_)), "{err}");
    }

    #[test]
    fn missing_frame_is_malformed() {
        let err = run_with(|dir, bundle, session| {
            let r = fill_stub(bundle, StubMode::Constant);
            write_result(dir, &r, session).unwrap();
            fs::remove_file(dir.join("frame_001_rgb.png")).unwrap();
        })
        .unwrap_err();
        assert!(matches!(err, BridgeError::Malformed(_)), "{err}");
    }

    #[test]
    fn stale_session_is_malformed() {
        let err = run_with(|dir, bundle, _| {
            let r = fill_stub(bundle, StubMode::Constant);
            write_result(dir, &r, "other").unwrap();
        })
        .unwrap_err();
        assert!(matches!(err, BridgeError::Malformed(_)), "{err}");
    }

    #[test]
    fn depth_and_masks_pass_through() {
        let out = run_with(|dir, bundle, session| {
            let mut r = fill_stub(bundle, StubMode::Constant);
            let (w, h) = (bundle.width(), bundle.height());
            r.depth = Some(vec![Grid::filled(w, h, 3.5); bundle.frame_count()]);
            r.fg_masks = Some(vec![Grid::filled(w, h, false); bundle.frame_count()]);
            write_result(dir, &r, session).unwrap();
        })
        .unwrap();
        assert_eq!(out.depth.unwrap()[1].as_slice()[0], 3.5);
        assert_eq!(out.fg_masks.unwrap()[0].count(), 0);
    }
}

//! Loading the fixed-pose input video from the input directory.

use std::path::Path;

use outpaint4d_core::formats::{pfm, png, read_json};
use outpaint4d_core::{Camera, FrameBundle, InitInput};

use crate::config::{InputConfig, Workspace};
use crate::error::CliError;

pub fn rgb_file(t: usize) -> String {
    format!("rgb_{t:03}.png")
}

pub fn depth_file(t: usize) -> String {
    format!("depth_{t:03}.pfm")
}

pub fn mask_file(t: usize) -> String {
    format!("mask_{t:03}.png")
}

pub const CAMERA_FILE: &str = "camera.json";

fn count_rgb_files(dir: &Path) -> Result<usize, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(format!("listing {}", dir.display()), e))?;
    let mut n = 0;
    for e in entries {
        let e = e.map_err(|e| CliError::io(format!("listing {}", dir.display()), e))?;
        let name = e.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("rgb_") && name.ends_with(".png") {
            n += 1;
        }
    }
    Ok(n)
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(
            format!("missing input file {}", path.display()),
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ))
    }
}

fn check_size(path: &Path, got: (usize, usize), want: (usize, usize)) -> Result<(), CliError> {
    if got != want {
        return Err(CliError::Validation(format!(
            "{} is {}x{}, expected {}x{}",
            path.display(),
            got.0,
            got.1,
            want.0,
            want.1
        )));
    }
    Ok(())
}

/// Reads every frame, depth map, mask and the camera, checking sizes
/// against the config.
pub fn load_input(workspace: &Workspace, cfg: &InputConfig) -> Result<InitInput, CliError> {
    let dir = workspace.resolve(&cfg.dir);
    let found = count_rgb_files(&dir)?;
    if found != cfg.frames {
        return Err(CliError::Validation(format!(
            "config declares {} frames but {} holds {found} rgb_*.png files",
            cfg.frames,
            dir.display()
        )));
    }
    let want = (cfg.width, cfg.height);
    let cam_path = dir.join(CAMERA_FILE);
    require(&cam_path)?;
    let camera: Camera = read_json(&cam_path)?;
    check_size(&cam_path, (camera.width(), camera.height()), want)?;
    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let rgb_path = dir.join(rgb_file(t));
        let depth_path = dir.join(depth_file(t));
        let mask_path = dir.join(mask_file(t));
        for p in [&rgb_path, &depth_path, &mask_path] {
            require(p)?;
        }
        let rgb = png::read_rgb(&rgb_path)?;
        check_size(&rgb_path, rgb.dims(), want)?;
        let depth = pfm::read(&depth_path)?;
        check_size(&depth_path, depth.dims(), want)?;
        let fg_mask = png::read_mask(&mask_path)?;
        check_size(&mask_path, fg_mask.dims(), want)?;
        frames.push(FrameBundle {
            rgb,
            depth: depth.map(|&d| d as f64),
            fg_mask,
            timestamp: t,
        });
    }
    Ok(InitInput {
        frames,
        camera,
        scene_prompt: cfg.prompt.clone(),
    })
}

/// Writes an input directory in the layout [`load_input`] reads.
pub fn write_input(dir: &Path, input: &InitInput) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    outpaint4d_core::formats::write_json(&dir.join(CAMERA_FILE), &input.camera)?;
    for f in &input.frames {
        let t = f.timestamp;
        png::write_rgb(&dir.join(rgb_file(t)), &f.rgb)?;
        pfm::write(&dir.join(depth_file(t)), &f.depth.map(|&d| d as f32))?;
        png::write_mask(&dir.join(mask_file(t)), &f.fg_mask)?;
    }
    Ok(())
}

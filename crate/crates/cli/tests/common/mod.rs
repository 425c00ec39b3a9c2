#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use outpaint4d_cli::inputs::write_input;
use outpaint4d_core::{Camera, FrameBundle, Grid, InitInput, Pose};

pub fn camera(w: usize, h: usize) -> Camera {
    Camera::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h, Pose::identity()).unwrap()
}

/// Slanted background with a foreground square sliding right over time.
pub fn synthetic_input(w: usize, h: usize, n: usize, foreground: bool) -> InitInput {
    let frames = (0..n)
        .map(|t| {
            let fg = Grid::from_fn(w, h, |x, y| {
                foreground && x >= w / 4 + t && x < w / 2 + t && y >= h / 4 && y < h / 2
            });
            FrameBundle {
                rgb: Grid::from_fn(w, h, |x, y| {
                    if *fg.get(x, y) {
                        [250, 40, (t * 10) as u8]
                    } else {
                        [(x * 7 % 256) as u8, (y * 5 % 256) as u8, 90]
                    }
                }),
                depth: Grid::from_fn(w, h, |x, y| if *fg.get(x, y) { 1.5 } else { 3.0 + 0.01 * x as f64 + 0.005 * y as f64 }),
                fg_mask: fg,
                timestamp: t,
            }
        })
        .collect();
    InitInput {
        frames,
        camera: camera(w, h),
        scene_prompt: "a test scene".into(),
    }
}

pub struct Ws {
    pub dir: tempfile::TempDir,
}

impl Ws {
    /// Workspace with `input/` and `config.toml`; `extra` is appended to the config.
    pub fn new(input: &InitInput, extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_input(&dir.path().join("input"), input).unwrap();
        let (w, h) = (input.camera.width(), input.camera.height());
        // top-level keys must precede the first table
        let split = extra.find("\n[").map(|i| i + 1).unwrap_or(if extra.starts_with('[') { 0 } else { extra.len() });
        let (top, tables) = extra.split_at(split);
        let text = format!(
            "{top}\n[input]\ndir = \"input\"\nframes = {}\nwidth = {w}\nheight = {h}\nprompt = \"{}\"\n\n{tables}\n",
            input.frames.len(),
            input.scene_prompt
        );
        fs::write(dir.path().join("config.toml"), text).unwrap();
        Ws { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn out(&self) -> PathBuf {
        self.path().join("out")
    }

    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_outpaint4d"))
            .arg("--workspace")
            .arg(self.path())
            .args(args)
            .output()
            .unwrap()
    }

    pub fn run_ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

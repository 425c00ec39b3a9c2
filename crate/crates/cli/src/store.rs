//! The output directory: committed scene state plus per-step artifacts.
//!
//! ```text
//! <out>/state/                 manifest.json, cloud_{t:03}.ply, occluded_{i:03}.png
//! <out>/steps/step_{i:03}/     artifacts of the step that added pose i
//! <out>/.staging/              work area of an uncommitted step
//! ```
//!
//! A step writes everything under `.staging` and commits by renaming, so a
//! failed step leaves `state/` untouched.

use std::fs;
use std::path::{Path, PathBuf};

use outpaint4d_core::formats::scene::{read_scene, write_scene};
use outpaint4d_core::SceneState;

use crate::error::CliError;

const STATE: &str = "state";
const STATE_OLD: &str = "state.old";
const STAGING: &str = ".staging";

fn io(context: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::io(format!("{context} {}", path.display()), e)
}

fn remove_dir(path: &Path) -> Result<(), CliError> {
    match fs::remove_dir_all(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(io("removing", path, e)),
    }
}

pub fn step_dir_name(pose: usize) -> String {
    format!("step_{pose:03}")
}

#[derive(Debug, Clone)]
pub struct Store {
    out: PathBuf,
}

impl Store {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Store { out: out.into() }
    }

    pub fn root(&self) -> &Path {
        &self.out
    }

    pub fn state_dir(&self) -> PathBuf {
        self.out.join(STATE)
    }

    pub fn steps_dir(&self) -> PathBuf {
        self.out.join("steps")
    }

    /// Finishes or rolls back a commit interrupted between its renames.
    pub fn recover(&self) -> Result<(), CliError> {
        let state = self.state_dir();
        let old = self.out.join(STATE_OLD);
        if old.exists() {
            if state.exists() {
                remove_dir(&old)?;
            } else {
                log::warn!("restoring scene state from interrupted commit");
                fs::rename(&old, &state).map_err(|e| io("restoring", &old, e))?;
            }
        }
        remove_dir(&self.out.join(STAGING))
    }

    pub fn has_state(&self) -> bool {
        self.state_dir().join("manifest.json").is_file()
    }

    pub fn load(&self) -> Result<SceneState, CliError> {
        self.recover()?;
        if !self.has_state() {
            return Err(CliError::io(
                format!("no scene state in {} (run init first)", self.state_dir().display()),
                std::io::Error::from(std::io::ErrorKind::NotFound),
            ));
        }
        Ok(read_scene(&self.state_dir())?)
    }

    pub fn begin(&self) -> Result<Staging, CliError> {
        self.recover()?;
        let root = self.out.join(STAGING);
        fs::create_dir_all(&root).map_err(|e| io("creating", &root, e))?;
        Ok(Staging {
            root,
            out: self.out.clone(),
            artifacts: Vec::new(),
            committed: false,
        })
    }
}

/// Uncommitted work. Dropped without [`Staging::commit`], it is discarded.
#[derive(Debug)]
pub struct Staging {
    root: PathBuf,
    out: PathBuf,
    artifacts: Vec<PathBuf>,
    committed: bool,
}

impl Staging {
    /// A fresh directory that lands at `<out>/<relative>` on commit.
    pub fn artifact_dir(&mut self, relative: impl AsRef<Path>) -> Result<PathBuf, CliError> {
        let rel = relative.as_ref().to_path_buf();
        let dir = self.root.join("artifacts").join(&rel);
        remove_dir(&dir)?;
        fs::create_dir_all(&dir).map_err(|e| io("creating", &dir, e))?;
        if !self.artifacts.contains(&rel) {
            self.artifacts.push(rel);
        }
        Ok(dir)
    }

    /// Publishes artifacts, then swaps in the new state.
    pub fn commit(mut self, state: &SceneState, clear_steps: bool) -> Result<(), CliError> {
        let staged_state = self.root.join(STATE);
        fs::create_dir_all(&staged_state).map_err(|e| io("creating", &staged_state, e))?;
        write_scene(&staged_state, state)?;
        if clear_steps {
            remove_dir(&self.out.join("steps"))?;
        }
        for rel in &self.artifacts {
            let from = self.root.join("artifacts").join(rel);
            let to = self.out.join(rel);
            remove_dir(&to)?;
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent).map_err(|e| io("creating", parent, e))?;
            }
            fs::rename(&from, &to).map_err(|e| io("publishing", &to, e))?;
        }
        let live = self.out.join(STATE);
        let old = self.out.join(STATE_OLD);
        remove_dir(&old)?;
        if live.exists() {
            fs::rename(&live, &old).map_err(|e| io("retiring", &live, e))?;
        }
        fs::rename(&staged_state, &live).map_err(|e| io("committing", &live, e))?;
        remove_dir(&old)?;
        self.committed = true;
        remove_dir(&self.root)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.root);
        }
    }
}

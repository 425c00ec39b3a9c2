//! Deterministic model-free fillers.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BridgeError, OutpaintResult, Outpainter, Provenance, RayConditioningBundle};
use crate::grid::{Grid, Mask, Rgb, RgbImage};

pub const MID_GRAY: Rgb = [128, 128, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubMode {
    /// Every unseen pixel becomes mid-gray.
    Constant,
    /// Nearest observed pixel in the same row, ties to the left; rows with
    /// nothing observed copy the nearest filled row, ties upward.
    BorderReplicate,
    /// Euclidean-nearest observed pixel, ties to the lowest row-major index.
    #[default]
    NearestObserved,
}

impl StubMode {
    pub fn name(&self) -> &'static str {
        match self {
            StubMode::Constant => "constant",
            StubMode::BorderReplicate => "border_replicate",
            StubMode::NearestObserved => "nearest_observed",
        }
    }
}

impl fmt::Display for StubMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StubMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(StubMode::Constant),
            "border_replicate" => Ok(StubMode::BorderReplicate),
            "nearest_observed" => Ok(StubMode::NearestObserved),
            other => Err(format!(
                "unknown stub mode {other:?}, expected constant, border_replicate or nearest_observed"
            )),
        }
    }
}

/// Copies each unknown cell from its Euclidean-nearest known cell.
/// Ties go to the known cell with the lowest row-major index. Returns
/// `None` when nothing is known.
pub fn nearest_fill<T: Copy + Send + Sync>(values: &Grid<T>, known: &Mask) -> Option<Grid<T>> {
    assert!(values.same_dims(known), "value and mask grids differ in size");
    let (w, h) = values.dims();
    if known.count() == 0 {
        return None;
    }
    // Per pixel: nearest known row in the same column, upper row on ties.
    let mut column: Vec<Option<(usize, usize)>> = vec![None; w * h];
    for x in 0..w {
        let mut above: Option<usize> = None;
        for y in 0..h {
            if *known.get(x, y) {
                above = Some(y);
            }
            column[y * w + x] = above.map(|ya| (y - ya, ya));
        }
        let mut below: Option<usize> = None;
        for y in (0..h).rev() {
            if *known.get(x, y) {
                below = Some(y);
            }
            if let Some(yb) = below {
                let d = yb - y;
                let slot = &mut column[y * w + x];
                if slot.is_none_or(|(du, _)| d < du) {
                    *slot = Some((d, yb));
                }
            }
        }
    }
    let src = values.as_slice();
    let known_s = known.as_slice();
    let mut out = values.clone();
    out.as_mut_slice().par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            if known_s[y * w + x] {
                continue;
            }
            // (squared distance, source index)
            let mut best: Option<(usize, usize)> = None;
            let mut k = 0usize;
            loop {
                if best.is_some_and(|b| k * k > b.0) || (k > x && x + k >= w) {
                    break;
                }
                for cx in [x.checked_sub(k), if k > 0 { Some(x + k) } else { None }].into_iter().flatten() {
                    if cx >= w {
                        continue;
                    }
                    if let Some((dy, sy)) = column[y * w + cx] {
                        let cand = (k * k + dy * dy, sy * w + cx);
                        if best.is_none_or(|b| cand < b) {
                            best = Some(cand);
                        }
                    }
                }
                k += 1;
            }
            let (_, i) = best.expect("at least one known cell");
            row[x] = src[i];
        }
    });
    Some(out)
}

fn border_replicate(values: &RgbImage, known: &Mask) -> Option<RgbImage> {
    let (w, h) = values.dims();
    let mut out = values.clone();
    let mut row_filled = vec![false; h];
    for y in 0..h {
        let known_x: Vec<usize> = (0..w).filter(|&x| *known.get(x, y)).collect();
        if known_x.is_empty() {
            continue;
        }
        row_filled[y] = true;
        let mut j = 0;
        for x in 0..w {
            while j + 1 < known_x.len() && known_x[j + 1] <= x {
                j += 1;
            }
            if *known.get(x, y) {
                continue;
            }
            // known_x[j] is the last known <= x, if any
            let left = (known_x[j] <= x).then_some(known_x[j]);
            let right = if known_x[j] > x {
                Some(known_x[j])
            } else {
                known_x.get(j + 1).copied()
            };
            let src = match (left, right) {
                (Some(l), Some(r)) => {
                    if x - l <= r - x {
                        l
                    } else {
                        r
                    }
                }
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => unreachable!(),
            };
            out.set(x, y, *values.get(src, y));
        }
    }
    let filled: Vec<usize> = (0..h).filter(|&y| row_filled[y]).collect();
    if filled.is_empty() {
        return None;
    }
    for y in 0..h {
        if row_filled[y] {
            continue;
        }
        let src = *filled
            .iter()
            .min_by_key(|&&r| (r.abs_diff(y), r))
            .expect("non-empty");
        for x in 0..w {
            let v = *out.get(x, src);
            out.set(x, y, v);
        }
    }
    Some(out)
}

/// Fills the unseen pixels of every frame; observed pixels are copied.
pub fn fill_stub(bundle: &RayConditioningBundle, mode: StubMode) -> OutpaintResult {
    let mut fallback_frames = Vec::new();
    let frames = bundle
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let filled = match mode {
                StubMode::Constant => None,
                StubMode::BorderReplicate => border_replicate(&f.partial_rgb, &f.observed_mask),
                StubMode::NearestObserved => nearest_fill(&f.partial_rgb, &f.observed_mask),
            };
            match filled {
                Some(img) => img,
                None => {
                    if mode != StubMode::Constant {
                        log::warn!("frame {t} has no observed pixels, {mode} fill fell back to constant");
                        fallback_frames.push(t);
                    }
                    let mut img = f.partial_rgb.clone();
                    for (p, &o) in img.as_mut_slice().iter_mut().zip(f.observed_mask.as_slice()) {
                        if !o {
                            *p = MID_GRAY;
                        }
                    }
                    img
                }
            }
        })
        .collect();
    OutpaintResult {
        frames,
        provenance: Provenance::Stub(mode),
        preserving: true,
        fallback_frames,
        depth: None,
        fg_masks: None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StubFiller {
    pub mode: StubMode,
}

impl StubFiller {
    pub fn new(mode: StubMode) -> Self {
        StubFiller { mode }
    }
}

impl Outpainter for StubFiller {
    fn outpaint(&self, bundle: &RayConditioningBundle) -> Result<OutpaintResult, BridgeError> {
        Ok(fill_stub(bundle, self.mode))
    }
}

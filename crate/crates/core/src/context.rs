//! History compression plans for chunked autoregressive generation.
//!
//! Older history frames are patchified with coarser `(r_t, r_h, r_w)` ratios
//! so the token budget stays bounded as the video grows. The finalized
//! schedule is
//!
//! | frames before the chunk | ratio     |
//! |-------------------------|-----------|
//! | 1–2                     | (1, 2, 2) |
//! | 3–6                     | (1, 4, 4) |
//! | 7–23                    | (1, 8, 8) |
//! | 24–87                   | (1,16,16) |
//! | 88–343                  | (2,16,16) |
//! | …                       | temporal ratio doubles, capacity ×4 |
//!
//! plus the initial input frame at `(1, 2, 2)`. The rows past frame 23 are a
//! geometric extrapolation. [`Schedule::Early`] starts with a single frame at
//! `(1, 2, 2)` instead of two.

use std::fmt::Write as _;

use ndarray::{concatenate, Array3, Array4, ArrayView3, ArrayView4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames a static image is tiled into.
pub const STATIC_TILE_FRAMES: usize = 16;
/// Frames predicted per training chunk.
pub const PREDICT_FRAMES: usize = 33;
pub const SHORT_HISTORY_PROB: f64 = 0.3;
pub const SHORT_HISTORY: (usize, usize) = (33, 400);
pub const LONG_HISTORY: (usize, usize) = (400, 800);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContextError {
    #[error("history length must be at least 1")]
    EmptyHistory,
    #[error("latent {h}×{w} is smaller than ratio ({rh}, {rw})")]
    IndivisibleDims { h: usize, w: usize, rh: usize, rw: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("time {0} is outside [0, 1]")]
    TOutOfRange(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ratio {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Ratio {
    pub const fn new(t: usize, h: usize, w: usize) -> Self {
        Ratio { t, h, w }
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.t, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Finalized,
    Early,
}

const INITIAL_RATIO: Ratio = Ratio::new(1, 2, 2);

/// Capacity and ratio of tier `idx` (0 = most recent).
fn tier_spec(schedule: Schedule, idx: usize) -> (usize, Ratio) {
    let head: [(usize, Ratio); 3] = match schedule {
        Schedule::Finalized => [
            (2, Ratio::new(1, 2, 2)),
            (4, Ratio::new(1, 4, 4)),
            (17, Ratio::new(1, 8, 8)),
        ],
        Schedule::Early => [
            (1, Ratio::new(1, 2, 2)),
            (4, Ratio::new(1, 4, 4)),
            (17, Ratio::new(1, 8, 8)),
        ],
    };
    if idx < head.len() {
        return head[idx];
    }
    let k = (idx - head.len()) as u32;
    let capacity = 64usize.saturating_mul(4usize.saturating_pow(k));
    (capacity, Ratio::new(1usize << k.min(62), 16, 16))
}

/// Token grid of one frame group at `ratio`, with the rows and columns lost
/// to floor division.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub dropped_rows: usize,
    pub dropped_cols: usize,
}

impl Grid {
    fn new(h: usize, w: usize, r: Ratio) -> Result<Self, ContextError> {
        if h < r.h || w < r.w {
            return Err(ContextError::IndivisibleDims { h, w, rh: r.h, rw: r.w });
        }
        Ok(Grid {
            h: h / r.h,
            w: w / r.w,
            dropped_rows: h % r.h,
            dropped_cols: w % r.w,
        })
    }

    pub fn tokens(&self) -> usize {
        self.h * self.w
    }
}

/// Frames `t − start ..= t − end` before the current chunk, all at `ratio`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionTier {
    pub start: usize,
    pub end: usize,
    pub ratio: Ratio,
    pub grid: Grid,
}

impl CompressionTier {
    pub fn frames(&self) -> usize {
        self.end - self.start + 1
    }

    /// `ceil(frames / r_t)` temporal groups, one token grid each.
    pub fn groups(&self) -> usize {
        self.frames().div_ceil(self.ratio.t)
    }

    pub fn tokens(&self) -> usize {
        self.groups() * self.grid.tokens()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub history_len: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    /// Most recent first.
    pub tiers: Vec<CompressionTier>,
    pub initial_frame_ratio: Ratio,
    pub initial_frame_grid: Grid,
}

impl CompressionPlan {
    /// The tier holding frame `t − offset`.
    pub fn tier_of(&self, offset: usize) -> Option<&CompressionTier> {
        self.tiers.iter().find(|t| (t.start..=t.end).contains(&offset))
    }

    /// Aligned text rendering, one row per tier plus the initial frame.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:<12} {:>9} {:>7}",
            "frames", "count", "ratio", "grid", "tokens"
        );
        for t in &self.tiers {
            let span = format!("t-{}..t-{}", t.start, t.end);
            let grid = format!("{}x{}", t.grid.h, t.grid.w);
            let _ = writeln!(
                out,
                "{:<14} {:>7} {:<12} {:>9} {:>7}",
                span,
                t.frames(),
                t.ratio.to_string(),
                grid,
                t.tokens()
            );
        }
        let g = self.initial_frame_grid;
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:<12} {:>9} {:>7}",
            "initial",
            1,
            self.initial_frame_ratio.to_string(),
            format!("{}x{}", g.h, g.w),
            g.tokens()
        );
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:<12} {:>9} {:>7}",
            "total",
            "",
            "",
            "",
            token_count(self)
        );
        out
    }
}

/// The finalized plan for `history_len` latent history frames.
pub fn framepack_plan(history_len: usize, latent_h: usize, latent_w: usize) -> Result<CompressionPlan, ContextError> {
    framepack_plan_with(Schedule::Finalized, history_len, latent_h, latent_w)
}

pub fn framepack_plan_with(
    schedule: Schedule,
    history_len: usize,
    latent_h: usize,
    latent_w: usize,
) -> Result<CompressionPlan, ContextError> {
    if history_len == 0 {
        return Err(ContextError::EmptyHistory);
    }
    let mut tiers = Vec::new();
    let mut start = 1;
    let mut idx = 0;
    while start <= history_len {
        let (capacity, ratio) = tier_spec(schedule, idx);
        let end = start.saturating_add(capacity - 1).min(history_len);
        tiers.push(CompressionTier {
            start,
            end,
            ratio,
            grid: Grid::new(latent_h, latent_w, ratio)?,
        });
        start = end + 1;
        idx += 1;
    }
    Ok(CompressionPlan {
        history_len,
        latent_h,
        latent_w,
        tiers,
        initial_frame_ratio: INITIAL_RATIO,
        initial_frame_grid: Grid::new(latent_h, latent_w, INITIAL_RATIO)?,
    })
}

/// Tokens fed to the model for the whole context, initial frame included.
pub fn token_count(plan: &CompressionPlan) -> usize {
    plan.tiers.iter().map(CompressionTier::tokens).sum::<usize>() + plan.initial_frame_grid.tokens()
}

/// Latent frames produced from `raw` video frames: `1 + raw / 4`.
pub fn latent_frames_from_raw(raw: usize) -> usize {
    1 + raw / 4
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeKind {
    Short,
    Long,
}

/// One draw of the training-time history policy; lengths in raw frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRegime {
    pub kind: RegimeKind,
    pub history_frames: usize,
    pub predict_frames: usize,
}

/// With probability 0.3 a history of 33–400 frames, otherwise 400–800;
/// lengths uniform within the range, always predicting 33 frames.
pub fn history_regime<R: Rng + ?Sized>(rng: &mut R) -> HistoryRegime {
    let short = rng.random_bool(SHORT_HISTORY_PROB);
    let (kind, (lo, hi)) = if short {
        (RegimeKind::Short, SHORT_HISTORY)
    } else {
        (RegimeKind::Long, LONG_HISTORY)
    };
    HistoryRegime {
        kind,
        history_frames: rng.random_range(lo..=hi),
        predict_frames: PREDICT_FRAMES,
    }
}

/// Tiles one `[H, W, C]` frame into a `[16, H, W, C]` static clip.
pub fn static_condition(frame: ArrayView3<f64>) -> Array4<f64> {
    frame
        .insert_axis(Axis(0))
        .broadcast((STATIC_TILE_FRAMES, frame.dim().0, frame.dim().1, frame.dim().2))
        .expect("leading axis has length 1")
        .to_owned()
}

/// `((1 − t)·history + t·noise) ⊕ z_current` along the frame axis of
/// `[C, F, H, W]` latents.
pub fn concat_noisy_history(
    history: ArrayView4<f64>,
    z_current: ArrayView4<f64>,
    z_noise: ArrayView4<f64>,
    t: f64,
) -> Result<Array4<f64>, ContextError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(ContextError::TOutOfRange(t));
    }
    if history.dim() != z_noise.dim() {
        return Err(ContextError::ShapeMismatch(format!(
            "history {:?} vs noise {:?}",
            history.dim(),
            z_noise.dim()
        )));
    }
    let (hc, _, hh, hw) = history.dim();
    let (cc, _, ch, cw) = z_current.dim();
    if (hc, hh, hw) != (cc, ch, cw) {
        return Err(ContextError::ShapeMismatch(format!(
            "history {:?} vs current {:?}",
            history.dim(),
            z_current.dim()
        )));
    }
    let mut noisy = history.to_owned();
    noisy.zip_mut_with(&z_noise, |h, n| *h = (1.0 - t) * *h + t * n);
    Ok(concatenate(Axis(1), &[noisy.view(), z_current]).expect("shapes checked"))
}

/// Convenience for tests and demos: a `[H, W, C]` frame from a closure.
pub fn frame_from_fn(h: usize, w: usize, c: usize, f: impl Fn(usize, usize, usize) -> f64) -> Array3<f64> {
    Array3::from_shape_fn((h, w, c), |(i, j, k)| f(i, j, k))
}

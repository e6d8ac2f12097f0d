use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    downsample, jitter_score, normalize_speed, quantize_trajectory, render_condition_text, segment_consistent_motion,
    speed_stats, CanonicalMotionSet, MotionError, MotionLabel, MotionSegment, SpeedBuckets, SpeedStats, Vocabulary,
};
use crate::se3::{Pose4, PoseError, Se3DistanceWeights};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("pose {index}: {source}")]
    Pose {
        index: usize,
        #[source]
        source: PoseError,
    },
    #[error(transparent)]
    Motion(#[from] MotionError),
}

impl TrajectoryError {
    /// Whether the input could not be read at all, as opposed to being
    /// readable but invalid.
    pub fn is_parse_error(&self) -> bool {
        matches!(self, TrajectoryError::Parse(_))
    }

    /// Short machine-readable name of the failure.
    pub fn kind(&self) -> &'static str {
        match self {
            TrajectoryError::Parse(_) => "ParseError",
            TrajectoryError::Pose { source, .. } => match source {
                PoseError::NotRigid { .. } => "NotRigid",
                PoseError::BadBottomRow(_) => "BadBottomRow",
                PoseError::BadLength(_) => "BadLength",
                PoseError::BadWeights => "BadWeights",
            },
            TrajectoryError::Motion(m) => match m {
                MotionError::TooFewPoses { .. } => "TooFewPoses",
                MotionError::EmptyMotionSet => "EmptyMotionSet",
                MotionError::EmptyStats => "EmptyStats",
                MotionError::UnknownMotionName(_) => "UnknownMotionName",
                MotionError::InvalidMotionSet(_) => "InvalidMotionSet",
                MotionError::BadStride => "BadStride",
            },
        }
    }
}

/// A camera trajectory read from disk.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub fps: Option<f64>,
    pub poses: Vec<Pose4>,
}

#[derive(Deserialize)]
struct RawTrajectory {
    #[serde(default)]
    fps: Option<f64>,
    poses: Vec<Vec<f64>>,
}

fn validate_rows(rows: Vec<Vec<f64>>) -> Result<Vec<Pose4>, TrajectoryError> {
    rows.into_iter()
        .enumerate()
        .map(|(index, row)| Pose4::from_slice(&row).map_err(|source| TrajectoryError::Pose { index, source }))
        .collect()
}

impl Trajectory {
    /// `{"fps": number, "poses": [[16 numbers, row-major], ...]}`
    pub fn from_json_str(s: &str) -> Result<Self, TrajectoryError> {
        let raw: RawTrajectory = serde_json::from_str(s).map_err(|e| TrajectoryError::Parse(e.to_string()))?;
        Ok(Trajectory {
            fps: raw.fps,
            poses: validate_rows(raw.poses)?,
        })
    }

    /// One pose per row, 16 comma-separated numbers. A non-numeric first row
    /// is taken as a header.
    pub fn from_csv_str(s: &str) -> Result<Self, TrajectoryError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(s.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| TrajectoryError::Parse(e.to_string()))?;
            let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(TrajectoryError::Parse(format!("row {}: {e}", i + 1))),
            }
        }
        Ok(Trajectory {
            fps: None,
            poses: validate_rows(rows)?,
        })
    }

    /// Reads JSON, or CSV when the extension is `.csv`.
    pub fn from_path(path: &Path) -> Result<Self, TrajectoryError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TrajectoryError::Parse(format!("{}: {e}", path.display())))?;
        let is_csv = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            Self::from_csv_str(&text)
        } else {
            Self::from_json_str(&text)
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "fps": self.fps,
            "poses": self.poses.iter().map(|p| p.to_row_major().to_vec()).collect::<Vec<_>>(),
        })
    }
}

fn default_step() -> f64 {
    1.0
}
fn default_turn() -> f64 {
    0.05
}
fn default_stride() -> usize {
    1
}
fn default_jitter_threshold() -> f64 {
    std::f64::consts::FRAC_PI_6
}
fn default_jitter_cutoff() -> f64 {
    0.2
}
fn default_min_segments() -> usize {
    33
}

/// Settings for [`annotate_trajectory`]; every field has a default so an
/// empty JSON object is a valid config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    #[serde(default = "default_step")]
    pub step_length: f64,
    #[serde(default = "default_turn")]
    pub turn_angle: f64,
    #[serde(default)]
    pub weights: Se3DistanceWeights,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_jitter_threshold")]
    pub jitter_threshold: f64,
    #[serde(default = "default_jitter_cutoff")]
    pub jitter_cutoff: f64,
    #[serde(default = "default_min_segments")]
    pub min_segments: usize,
    #[serde(default)]
    pub speed_buckets: SpeedBuckets,
    #[serde(default)]
    pub vocabulary: Vocabulary,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

/// Everything extracted from one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub labels: Vec<MotionLabel>,
    pub segments: Vec<MotionSegment>,
    pub speed_stats: SpeedStats,
    pub condition_text: String,
    /// `None` for two-pose trajectories, which have no turning angles.
    pub jitter_score: Option<f64>,
    pub jitter_rejected: bool,
}

/// Downsample, measure speeds in native units, normalize, quantize, segment
/// and render.
pub fn annotate_trajectory(poses: &[Pose4], cfg: &QuantizerConfig) -> Result<Annotation, TrajectoryError> {
    let set = CanonicalMotionSet::with_params(cfg.step_length, cfg.turn_angle)?;
    let ds = downsample(poses, cfg.stride)?;
    let stats = speed_stats(&ds)?;
    let (normalized, _) = normalize_speed(&ds, cfg.step_length);
    let labels = quantize_trajectory(&normalized, &set, 1, &cfg.weights)?;
    let segments = segment_consistent_motion(&labels, cfg.min_segments);
    let jitter = match jitter_score(&stats, cfg.jitter_threshold) {
        Ok(j) => Some(j),
        Err(MotionError::EmptyStats) => None,
        Err(e) => return Err(e.into()),
    };
    let text = render_condition_text(&labels, &stats, &cfg.vocabulary, &cfg.speed_buckets)?;
    Ok(Annotation {
        labels,
        segments,
        speed_stats: stats,
        condition_text: text.to_string(),
        jitter_score: jitter,
        jitter_rejected: jitter.is_some_and(|j| j > cfg.jitter_cutoff),
    })
}

//! Camera-motion quantization.
//!
//! A trajectory of camera-to-world poses is split into consecutive segments.
//! Each segment's relative transform `C_curr⁻¹ · C_next` is matched against a
//! set of canonical motions (forward, turn-left, ...) and labelled with the
//! nearest one under [`se3_distance`]. The module also extracts speed
//! statistics, scores jitter, finds long runs of a single motion and renders
//! the final text condition.

mod io;
mod speed;
mod text;

pub use io::{annotate_trajectory, Annotation, QuantizerConfig, Trajectory, TrajectoryError};
pub use speed::{jitter_score, speed_stats, SpeedStats};
pub use text::{keyboard_mapping, render_condition_text, ConditionText, SpeedBuckets, Vocabulary};

use std::collections::HashSet;
use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::se3::{relative_transform, se3_distance, Pose4, Se3DistanceWeights};

pub const STATIONARY: &str = "stationary";

/// Segments shorter than this fraction of δ are treated as stationary when
/// estimating the median speed.
pub const STATIONARY_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("TooFewPoses: need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("EmptyMotionSet: the canonical motion set has no entries")]
    EmptyMotionSet,
    #[error("EmptyStats: no directional angles to score")]
    EmptyStats,
    #[error("UnknownMotionName: {0}")]
    UnknownMotionName(String),
    #[error("InvalidMotionSet: {0}")]
    InvalidMotionSet(String),
    #[error("BadStride: stride must be positive")]
    BadStride,
}

/// One named motion with its canonical relative transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalMotion {
    pub name: String,
    pub keyboard_label: String,
    pub canonical_transform: Pose4,
    pub is_rotational: bool,
}

/// The ordered motion vocabulary. Order matters: argmin ties go to the
/// earliest entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CanonicalMotionSet {
    motions: Vec<CanonicalMotion>,
    step_length: f64,
    turn_angle: f64,
}

/// Translation part of a motion, in camera-local coordinates (x right, y down,
/// z forward).
#[derive(Clone, Copy)]
enum Walk {
    Forward,
    Backward,
    Left,
    Right,
    ForwardLeft,
    ForwardRight,
}

impl Walk {
    fn name(self) -> &'static str {
        match self {
            Walk::Forward => "move-forward",
            Walk::Backward => "move-backward",
            Walk::Left => "move-left",
            Walk::Right => "move-right",
            Walk::ForwardLeft => "move-forward-left",
            Walk::ForwardRight => "move-forward-right",
        }
    }

    fn keys(self) -> &'static str {
        match self {
            Walk::Forward => "W",
            Walk::Backward => "S",
            Walk::Left => "A",
            Walk::Right => "D",
            Walk::ForwardLeft => "W+A",
            Walk::ForwardRight => "W+D",
        }
    }

    /// Diagonals combine half-steps so every walking motion advances δ.
    fn direction(self) -> Vector3<f64> {
        match self {
            Walk::Forward => Vector3::new(0.0, 0.0, 1.0),
            Walk::Backward => Vector3::new(0.0, 0.0, -1.0),
            Walk::Left => Vector3::new(-1.0, 0.0, 0.0),
            Walk::Right => Vector3::new(1.0, 0.0, 0.0),
            Walk::ForwardLeft => Vector3::new(-FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2),
            Walk::ForwardRight => Vector3::new(FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2),
        }
    }
}

#[derive(Clone, Copy)]
enum Look {
    TurnLeft,
    TurnRight,
    TiltUp,
    TiltDown,
}

impl Look {
    fn name(self) -> &'static str {
        match self {
            Look::TurnLeft => "turn-left",
            Look::TurnRight => "turn-right",
            Look::TiltUp => "tilt-up",
            Look::TiltDown => "tilt-down",
        }
    }

    fn mouse(self) -> &'static str {
        match self {
            Look::TurnLeft => "Mouse Left",
            Look::TurnRight => "Mouse Right",
            Look::TiltUp => "Mouse Up",
            Look::TiltDown => "Mouse Down",
        }
    }

    /// Yaw about camera y swings +z towards +x (right); pitch about camera x
    /// swings +z towards −y, which is up with y pointing down.
    fn pose(self, alpha: f64) -> Pose4 {
        match self {
            Look::TurnLeft => Pose4::rot_y(-alpha),
            Look::TurnRight => Pose4::rot_y(alpha),
            Look::TiltUp => Pose4::rot_x(alpha),
            Look::TiltDown => Pose4::rot_x(-alpha),
        }
    }
}

impl CanonicalMotionSet {
    /// Default vocabulary with δ = 1 and α = 0.05 rad.
    pub fn default_set() -> Self {
        Self::with_params(1.0, 0.05).expect("default parameters are valid")
    }

    /// Builds the standard 17-entry set: stationary, four walks, four looks,
    /// two diagonal walks, and forward-ish walks combined with turns.
    pub fn with_params(step_length: f64, turn_angle: f64) -> Result<Self, MotionError> {
        if !(step_length > 0.0 && step_length.is_finite() && turn_angle > 0.0 && turn_angle.is_finite()) {
            return Err(MotionError::InvalidMotionSet(
                "step length and turn angle must be positive".into(),
            ));
        }
        let walk = |w: Walk| {
            let d = w.direction() * step_length;
            Pose4::translation_only(d.x, d.y, d.z)
        };
        let mut motions = vec![CanonicalMotion {
            name: STATIONARY.into(),
            keyboard_label: "No Keys + No Mouse Movement".into(),
            canonical_transform: Pose4::identity(),
            is_rotational: false,
        }];
        for w in [Walk::Forward, Walk::Backward, Walk::Left, Walk::Right] {
            motions.push(CanonicalMotion {
                name: w.name().into(),
                keyboard_label: w.keys().into(),
                canonical_transform: walk(w),
                is_rotational: false,
            });
        }
        for l in [Look::TurnLeft, Look::TurnRight, Look::TiltUp, Look::TiltDown] {
            motions.push(CanonicalMotion {
                name: l.name().into(),
                keyboard_label: l.mouse().into(),
                canonical_transform: l.pose(turn_angle),
                is_rotational: true,
            });
        }
        for w in [Walk::ForwardLeft, Walk::ForwardRight] {
            motions.push(CanonicalMotion {
                name: w.name().into(),
                keyboard_label: w.keys().into(),
                canonical_transform: walk(w),
                is_rotational: false,
            });
        }
        for w in [Walk::Forward, Walk::ForwardLeft, Walk::ForwardRight] {
            for l in [Look::TurnLeft, Look::TurnRight] {
                motions.push(CanonicalMotion {
                    name: format!("{} + {}", w.name(), l.name()),
                    keyboard_label: format!("{} + {}", w.keys(), l.mouse()),
                    canonical_transform: walk(w).compose(&l.pose(turn_angle)),
                    is_rotational: true,
                });
            }
        }
        Self::new(motions, step_length, turn_angle)
    }

    /// Validates a custom set: unique names, a stationary identity entry.
    pub fn new(motions: Vec<CanonicalMotion>, step_length: f64, turn_angle: f64) -> Result<Self, MotionError> {
        if motions.is_empty() {
            return Err(MotionError::EmptyMotionSet);
        }
        let mut seen = HashSet::new();
        for m in &motions {
            if !seen.insert(m.name.as_str()) {
                return Err(MotionError::InvalidMotionSet(format!(
                    "duplicate motion name {:?}",
                    m.name
                )));
            }
        }
        let has_stationary = motions
            .iter()
            .any(|m| m.name == STATIONARY && m.canonical_transform == Pose4::identity());
        if !has_stationary {
            return Err(MotionError::InvalidMotionSet(
                "set must contain a \"stationary\" identity motion".into(),
            ));
        }
        Ok(CanonicalMotionSet {
            motions,
            step_length,
            turn_angle,
        })
    }

    pub fn motions(&self) -> &[CanonicalMotion] {
        &self.motions
    }

    pub fn step_length(&self) -> f64 {
        self.step_length
    }

    pub fn turn_angle(&self) -> f64 {
        self.turn_angle
    }

    pub fn get(&self, name: &str) -> Option<&CanonicalMotion> {
        self.motions.iter().find(|m| m.name == name)
    }

    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }
}

/// The motion chosen for one trajectory segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionLabel {
    pub motion_name: String,
    pub segment_index: usize,
    pub distance_to_canonical: f64,
}

/// Index and distance of the canonical motion closest to `t_rel`. Ties go to
/// the lower index.
pub fn nearest_motion(t_rel: &Pose4, set: &CanonicalMotionSet, w: &Se3DistanceWeights) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, m) in set.motions.iter().enumerate() {
        let d = se3_distance(t_rel, &m.canonical_transform, w);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Keeps every `stride`-th pose, starting with the first.
pub fn downsample(poses: &[Pose4], stride: usize) -> Result<Vec<Pose4>, MotionError> {
    if stride == 0 {
        return Err(MotionError::BadStride);
    }
    Ok(poses.iter().step_by(stride).copied().collect())
}

/// Rescales translations so the median moving-segment length equals
/// `step_length`.
///
/// Segments shorter than `STATIONARY_FRACTION · step_length` (in the input's
/// own units) are left out of the median. When every segment is stationary
/// the trajectory is returned unchanged with scale 1.
pub fn normalize_speed(poses: &[Pose4], step_length: f64) -> (Vec<Pose4>, f64) {
    let floor = STATIONARY_FRACTION * step_length;
    let mut moving: Vec<f64> = poses
        .windows(2)
        .map(|p| (p[1].translation() - p[0].translation()).norm())
        .filter(|&n| n >= floor)
        .collect();
    if moving.is_empty() {
        return (poses.to_vec(), 1.0);
    }
    moving.sort_by(f64::total_cmp);
    let n = moving.len();
    let median = if n % 2 == 1 {
        moving[n / 2]
    } else {
        0.5 * (moving[n / 2 - 1] + moving[n / 2])
    };
    let scale = step_length / median;
    (poses.iter().map(|p| p.scale_translation(scale)).collect(), scale)
}

/// Labels every consecutive pair of (downsampled) poses with its nearest
/// canonical motion. Expects speed-normalized input.
pub fn quantize_trajectory(
    poses: &[Pose4],
    set: &CanonicalMotionSet,
    stride: usize,
    weights: &Se3DistanceWeights,
) -> Result<Vec<MotionLabel>, MotionError> {
    if set.is_empty() {
        return Err(MotionError::EmptyMotionSet);
    }
    let ds = downsample(poses, stride)?;
    if ds.len() < 2 {
        return Err(MotionError::TooFewPoses {
            needed: 2,
            got: ds.len(),
        });
    }
    Ok(ds
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let t_rel = relative_transform(&pair[0], &pair[1]);
            let (j, d) = nearest_motion(&t_rel, set, weights);
            MotionLabel {
                motion_name: set.motions[j].name.clone(),
                segment_index: i,
                distance_to_canonical: d,
            }
        })
        .collect())
}

/// Quantizes many trajectories, in parallel when available.
pub fn quantize_batch(
    trajectories: &[Vec<Pose4>],
    set: &CanonicalMotionSet,
    stride: usize,
    weights: &Se3DistanceWeights,
) -> Vec<Result<Vec<MotionLabel>, MotionError>> {
    par::map_slice(trajectories, |t| quantize_trajectory(t, set, stride, weights))
}

/// A maximal run of one motion, inclusive on both ends.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub start_index: usize,
    pub end_index: usize,
    pub motion_name: String,
}

/// Maximal runs of identical labels that are at least `min_segments` long.
pub fn segment_consistent_motion(labels: &[MotionLabel], min_segments: usize) -> Vec<MotionSegment> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=labels.len() {
        if i == labels.len() || labels[i].motion_name != labels[start].motion_name {
            if i - start >= min_segments.max(1) {
                out.push(MotionSegment {
                    start_index: start,
                    end_index: i - 1,
                    motion_name: labels[start].motion_name.clone(),
                });
            }
            start = i;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walk_with(set: &CanonicalMotionSet, name: &str, n: usize, start: Pose4) -> Vec<Pose4> {
        let t = set.get(name).unwrap().canonical_transform;
        let mut poses = vec![start];
        for _ in 1..n {
            let next = poses.last().unwrap().compose(&t);
            poses.push(next);
        }
        poses
    }

    fn label(name: &str, i: usize) -> MotionLabel {
        MotionLabel {
            motion_name: name.into(),
            segment_index: i,
            distance_to_canonical: 0.0,
        }
    }

    #[test]
    fn default_set_shape() {
        let set = CanonicalMotionSet::default_set();
        assert_eq!(set.len(), 17);
        assert_eq!(set.motions()[0].name, STATIONARY);
        let rot = set.motions().iter().filter(|m| m.is_rotational).count();
        assert_eq!(rot, 10);
        // Every walking motion advances exactly δ.
        for m in set
            .motions()
            .iter()
            .filter(|m| m.name != STATIONARY && m.name.starts_with("move"))
        {
            assert!(
                (m.canonical_transform.translation().norm() - 1.0).abs() < 1e-15,
                "{}",
                m.name
            );
        }
    }

    #[test]
    fn turn_right_swings_view_to_the_right() {
        let set = CanonicalMotionSet::default_set();
        let z = set.get("turn-right").unwrap().canonical_transform.view_axis();
        assert!(z.x > 0.0);
        let z = set.get("tilt-up").unwrap().canonical_transform.view_axis();
        assert!(z.y < 0.0);
    }

    #[test]
    fn invalid_sets() {
        assert_eq!(
            CanonicalMotionSet::new(vec![], 1.0, 0.05).unwrap_err(),
            MotionError::EmptyMotionSet
        );
        let set = CanonicalMotionSet::default_set();
        let mut dup = set.motions().to_vec();
        dup.push(dup[1].clone());
        assert!(matches!(
            CanonicalMotionSet::new(dup, 1.0, 0.05),
            Err(MotionError::InvalidMotionSet(_))
        ));
        let no_stat = set.motions()[1..].to_vec();
        assert!(CanonicalMotionSet::new(no_stat, 1.0, 0.05).is_err());
    }

    #[test]
    fn static_camera_is_stationary() {
        let set = CanonicalMotionSet::default_set();
        let labels = quantize_trajectory(&[Pose4::identity(); 3], &set, 1, &Default::default()).unwrap();
        assert_eq!(labels.len(), 2);
        assert!(labels.iter().all(|l| l.motion_name == STATIONARY));
    }

    #[test]
    fn canonical_walks_are_exact() {
        let set = CanonicalMotionSet::default_set();
        let start = Pose4::rot_z(0.3).compose(&Pose4::translation_only(4.0, -1.0, 2.0));
        for m in set.motions() {
            let poses = walk_with(&set, &m.name, 12, start);
            let labels = quantize_trajectory(&poses, &set, 1, &Default::default()).unwrap();
            assert_eq!(labels.len(), 11);
            for l in &labels {
                assert_eq!(l.motion_name, m.name);
                assert!(
                    l.distance_to_canonical < 1e-12,
                    "{} {}",
                    m.name,
                    l.distance_to_canonical
                );
            }
        }
    }

    #[test]
    fn forward_walk_exact_zero_distance() {
        let set = CanonicalMotionSet::default_set();
        let poses = walk_with(&set, "move-forward", 10, Pose4::identity());
        let labels = quantize_trajectory(&poses, &set, 1, &Default::default()).unwrap();
        assert!(labels.iter().all(|l| l.distance_to_canonical == 0.0));
    }

    #[test]
    fn stride_controls_label_count() {
        let set = CanonicalMotionSet::default_set();
        let poses = walk_with(&set, "move-forward", 10, Pose4::identity());
        let labels = quantize_trajectory(&poses, &set, 3, &Default::default()).unwrap();
        // poses 0, 3, 6, 9
        assert_eq!(labels.len(), 3);
        assert!(matches!(
            quantize_trajectory(&poses, &set, 0, &Default::default()),
            Err(MotionError::BadStride)
        ));
        assert!(matches!(
            quantize_trajectory(&poses, &set, 10, &Default::default()),
            Err(MotionError::TooFewPoses { needed: 2, got: 1 })
        ));
        assert!(matches!(
            quantize_trajectory(&[], &set, 1, &Default::default()),
            Err(MotionError::TooFewPoses { got: 0, .. })
        ));
    }

    #[test]
    fn tie_goes_to_first_entry() {
        let set = CanonicalMotionSet::default_set();
        // Halfway between stationary and move-forward.
        let t = Pose4::translation_only(0.0, 0.0, 0.5);
        let (j, d) = nearest_motion(&t, &set, &Default::default());
        assert_eq!(set.motions()[j].name, STATIONARY);
        assert_eq!(d, 0.5);
    }

    #[test]
    fn normalize_speed_uses_moving_median() {
        let poses: Vec<Pose4> = [0.0, 3.0, 6.0, 6.01, 9.0, 12.0]
            .iter()
            .map(|&z| Pose4::translation_only(0.0, 0.0, z))
            .collect();
        let (norm, scale) = normalize_speed(&poses, 1.0);
        // moving lengths: 3, 2.99, 3 -> median 3
        assert!((scale - 1.0 / 3.0).abs() < 1e-15);
        assert!((norm[1].translation().z - 1.0).abs() < 1e-15);

        let still = vec![Pose4::identity(); 4];
        assert_eq!(normalize_speed(&still, 1.0).1, 1.0);
    }

    #[test]
    fn segments_of_long_runs() {
        let labels: Vec<_> = (0..40).map(|i| label("move-forward", i)).collect();
        assert_eq!(
            segment_consistent_motion(&labels, 33),
            vec![MotionSegment {
                start_index: 0,
                end_index: 39,
                motion_name: "move-forward".into()
            }]
        );
        let mut mixed: Vec<_> = (0..20).map(|i| label("move-forward", i)).collect();
        mixed.extend((20..40).map(|i| label("turn-left", i)));
        assert!(segment_consistent_motion(&mixed, 33).is_empty());
        assert_eq!(segment_consistent_motion(&mixed, 20).len(), 2);
        assert!(segment_consistent_motion(&[], 1).is_empty());
    }
}

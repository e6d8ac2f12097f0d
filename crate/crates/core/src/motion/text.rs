use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CanonicalMotionSet, MotionError, MotionLabel, SpeedStats};

const DEFAULT_VOCAB: &str = include_str!("../../assets/vocab.json");

/// Fixed English phrases for each motion plus the scene prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub prefix: String,
    pub phrases: BTreeMap<String, String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_VOCAB).expect("bundled vocabulary is valid JSON")
    }
}

/// Thresholds splitting mean speeds into slow / moderate / fast.
///
/// Translation thresholds are scene units per segment, rotation thresholds
/// radians per segment. A value below the first threshold is slow, below the
/// second moderate, otherwise fast.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedBuckets {
    pub translation: [f64; 2],
    pub rotation: [f64; 2],
}

impl Default for SpeedBuckets {
    fn default() -> Self {
        SpeedBuckets {
            translation: [0.5, 1.5],
            rotation: [0.025, 0.075],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeedBucket {
    Slow,
    Moderate,
    Fast,
}

impl SpeedBucket {
    fn classify(value: f64, thresholds: [f64; 2]) -> Self {
        if value < thresholds[0] {
            SpeedBucket::Slow
        } else if value < thresholds[1] {
            SpeedBucket::Moderate
        } else {
            SpeedBucket::Fast
        }
    }

    fn word(self) -> &'static str {
        match self {
            SpeedBucket::Slow => "slow",
            SpeedBucket::Moderate => "moderate",
            SpeedBucket::Fast => "fast",
        }
    }
}

/// The three parts of the text condition; `Display` joins them with spaces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionText {
    pub prefix: String,
    pub motion_clause: String,
    pub speed_clause: String,
}

impl fmt::Display for ConditionText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts = [&self.prefix, &self.motion_clause, &self.speed_clause];
        let mut first = true;
        for p in parts.into_iter().filter(|p| !p.is_empty()) {
            if !first {
                f.write_str(" ")?;
            }
            f.write_str(p)?;
            first = false;
        }
        Ok(())
    }
}

pub fn render_condition_text(
    labels: &[MotionLabel],
    stats: &SpeedStats,
    vocab: &Vocabulary,
    buckets: &SpeedBuckets,
) -> Result<ConditionText, MotionError> {
    let mut phrases: Vec<&str> = Vec::new();
    let mut prev: Option<&str> = None;
    for l in labels {
        let phrase = vocab
            .phrases
            .get(&l.motion_name)
            .ok_or_else(|| MotionError::UnknownMotionName(l.motion_name.clone()))?;
        if prev != Some(l.motion_name.as_str()) {
            phrases.push(phrase);
            prev = Some(&l.motion_name);
        }
    }
    let walk = SpeedBucket::classify(stats.mean_translation_speed(), buckets.translation);
    let turn = SpeedBucket::classify(stats.mean_rotation_angle(), buckets.rotation);
    Ok(ConditionText {
        prefix: vocab.prefix.clone(),
        motion_clause: phrases.join(" "),
        speed_clause: format!(
            "The camera moves at a {} walking speed with {} rotation.",
            walk.word(),
            turn.word()
        ),
    })
}

/// Keyboard/mouse tokens for a motion of the default set.
pub fn keyboard_mapping(motion_name: &str) -> Result<String, MotionError> {
    thread_local! {
        static DEFAULT: CanonicalMotionSet = CanonicalMotionSet::default_set();
    }
    DEFAULT.with(|set| {
        set.get(motion_name)
            .map(|m| m.keyboard_label.clone())
            .ok_or_else(|| MotionError::UnknownMotionName(motion_name.into()))
    })
}

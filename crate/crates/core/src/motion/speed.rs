use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::MotionError;
use crate::se3::Pose4;

/// Per-segment speed indicators of a trajectory.
///
/// For `N` poses: `translations` has `N − 1` displacement vectors,
/// `direction_angles` has `N − 2` turning angles between consecutive
/// displacements and `rotation_angles` has `N − 1` angles between consecutive
/// viewing axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedStats {
    pub translations: Vec<[f64; 3]>,
    pub direction_angles: Vec<f64>,
    pub rotation_angles: Vec<f64>,
}

impl SpeedStats {
    pub fn mean_translation_speed(&self) -> f64 {
        mean(self.translations.iter().map(|v| Vector3::from(*v).norm()))
    }

    pub fn mean_rotation_angle(&self) -> f64 {
        mean(self.rotation_angles.iter().copied())
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        return 0.0;
    }
    it.sum::<f64>() / n as f64
}

/// Angle between `a` and `b` in `[0, π]`; 0 when either vector is zero.
///
/// Computed from the chord between the unit vectors, which keeps full
/// precision near 0 and π where `arccos` of the dot product does not.
fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (ua, ub) = (a / na, b / nb);
    if ua.dot(&ub) >= 0.0 {
        2.0 * ((ua - ub).norm() / 2.0).min(1.0).asin()
    } else {
        std::f64::consts::PI - 2.0 * ((ua + ub).norm() / 2.0).min(1.0).asin()
    }
}

pub fn speed_stats(poses: &[Pose4]) -> Result<SpeedStats, MotionError> {
    if poses.len() < 2 {
        return Err(MotionError::TooFewPoses {
            needed: 2,
            got: poses.len(),
        });
    }
    let disp: Vec<Vector3<f64>> = poses
        .windows(2)
        .map(|p| p[1].translation() - p[0].translation())
        .collect();
    let direction_angles = disp.windows(2).map(|v| angle_between(&v[0], &v[1])).collect();
    let rotation_angles = poses
        .windows(2)
        .map(|p| angle_between(&p[0].view_axis(), &p[1].view_axis()))
        .collect();
    Ok(SpeedStats {
        translations: disp.iter().map(|v| [v.x, v.y, v.z]).collect(),
        direction_angles,
        rotation_angles,
    })
}

/// Fraction of turning angles strictly above `angle_threshold`.
pub fn jitter_score(stats: &SpeedStats, angle_threshold: f64) -> Result<f64, MotionError> {
    let d = &stats.direction_angles;
    if d.is_empty() {
        return Err(MotionError::EmptyStats);
    }
    let above = d.iter().filter(|&&a| a > angle_threshold).count();
    Ok(above as f64 / d.len() as f64)
}

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::{rotation_angle_between, Pose, Vec3};

/// Rotation error threshold (degrees) for a successful estimate; strict.
pub const SUCCESS_RE_DEG: f64 = 5.0;
/// Normalized translation error threshold for a successful estimate; strict.
pub const SUCCESS_TE_NORM: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub re_deg: f64,
    /// Camera-center distance divided by the scene scale.
    pub te_norm: f64,
    pub success: bool,
}

impl Metrics {
    pub fn new(re_deg: f64, te_norm: f64) -> Self {
        Self { re_deg, te_norm, success: re_deg < SUCCESS_RE_DEG && te_norm < SUCCESS_TE_NORM }
    }
}

/// Mean distance of the camera centers from their centroid.
pub fn scene_scale(trajectory: &[Pose]) -> Result<f64, EvalError> {
    if trajectory.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let n = trajectory.len() as f64;
    let centroid = trajectory.iter().map(|p| p.center()).sum::<Vec3>() / n;
    Ok(trajectory.iter().map(|p| (p.center() - centroid).norm()).sum::<f64>() / n)
}

/// Rotation error in degrees and camera-center distance normalized by `scale`.
pub fn pose_errors(est: &Pose, gt: &Pose, scale: f64) -> Result<Metrics, EvalError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(EvalError::InvalidScale(scale));
    }
    Ok(Metrics::new(
        rotation_angle_between(est.rotation(), gt.rotation()),
        (est.center() - gt.center()).norm() / scale,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::make_orbit_trajectory;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scene_scale_examples() {
        let two = [
            Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
            Pose::from_translation(Vec3::new(-1.0, 0.0, 0.0)),
        ];
        assert_eq!(scene_scale(&two).unwrap(), 1.0);
        for count in [2, 3, 7, 40] {
            assert_abs_diff_eq!(scene_scale(&make_orbit_trajectory(4.0, count, 0.0)).unwrap(), 4.0, epsilon = 1e-12);
        }
        let scaled: Vec<Pose> = two.iter().map(|p| Pose::from_translation(p.center() * 2.5)).collect();
        assert_eq!(scene_scale(&scaled).unwrap(), 2.5);
        assert_eq!(scene_scale(&[]), Err(EvalError::EmptyTrajectory));
    }

    #[test]
    fn pose_error_examples() {
        let gt = make_orbit_trajectory(4.0, 5, 10.0)[2];
        let m = pose_errors(&gt, &gt, 3.0).unwrap();
        assert_eq!((m.re_deg, m.te_norm, m.success), (0.0, 0.0, true));

        let scale = 2.0;
        let shifted = Pose::new(*gt.rotation(), gt.center() + Vec3::new(0.0, 0.05 * scale, 0.0));
        let m = pose_errors(&shifted, &gt, scale).unwrap();
        assert_abs_diff_eq!(m.te_norm, 0.05, epsilon = 1e-15);
        assert!(!Metrics::new(0.0, 0.05).success);

        assert!(!Metrics::new(5.0, 0.0).success);
        assert!(Metrics::new(4.999, 0.0499).success);
        assert!(pose_errors(&gt, &gt, 0.0).is_err());
    }
}

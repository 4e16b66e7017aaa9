use nalgebra::{Rotation3, Unit};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Intrinsics, Pose, Vec3};
use crate::renderer::random_unit_vector;

/// Two-sided 95% quantile of the standard normal.
pub const NORMAL_95: f64 = 1.959_963_984_540_054;

/// Maximum initial-pose deviations: 95% of sampled offsets fall within them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationLimits {
    pub delta_theta_deg: f64,
    /// In scene units.
    pub delta_p: f64,
}

/// Rotate the camera about its own center by `angle_rad` around the
/// camera-frame `axis`, then move the center by `offset` (world frame).
pub fn perturb(gt: &Pose, axis: &Vec3, angle_rad: f64, offset: &Vec3) -> Pose {
    let rot = if angle_rad == 0.0 {
        Rotation3::identity()
    } else {
        Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle_rad)
    };
    Pose::new(gt.rotation() * rot, gt.center() + offset)
}

/// Random-axis rotation and random-direction translation with magnitudes
/// `|N(0, σ)|`, `σ = limit / 1.96`, so 95% of draws stay within the limits.
pub fn sample_initial_pose<R: Rng>(gt: &Pose, limits: &PerturbationLimits, rng: &mut R) -> Pose {
    let axis = random_unit_vector(rng);
    let dir = random_unit_vector(rng);
    let angle = half_normal(limits.delta_theta_deg.to_radians() / NORMAL_95, rng);
    let dist = half_normal(limits.delta_p / NORMAL_95, rng);
    perturb(gt, &axis, angle, &(dir * dist))
}

fn half_normal<R: Rng>(sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng).abs()
    } else {
        0.0
    }
}

/// Translation uniform in `[0, 0.2]` scene scales along a random direction,
/// then a rotation uniform in `[10°, 40°]` about a random axis.
pub fn sample_initial_pose_chen<R: Rng>(gt: &Pose, scene_scale: f64, rng: &mut R) -> Pose {
    let dir = random_unit_vector(rng);
    let dist = rng.random_range(0.0..=0.2) * scene_scale;
    let axis = random_unit_vector(rng);
    let angle = rng.random_range(10.0f64..=40.0).to_radians();
    perturb(gt, &axis, angle, &(dir * dist))
}

/// Deviation limits from the camera's horizontal field of view and the
/// trajectory radius `R`, assuming a centered object of radius `R/2`:
/// `Δθ = half-FoV + asin(1/2)`, `Δp = R · tan(Δθ)`. Meaningful while
/// `Δθ < 90°`. An explicit `override_limits` is returned unchanged.
pub fn deviation_limits(
    k: &Intrinsics,
    trajectory_radius: f64,
    override_limits: Option<PerturbationLimits>,
) -> PerturbationLimits {
    if let Some(limits) = override_limits {
        return limits;
    }
    let object_radius = trajectory_radius / 2.0;
    let theta = k.half_fov_x() + (object_radius / trajectory_radius).asin();
    PerturbationLimits { delta_theta_deg: theta.to_degrees(), delta_p: trajectory_radius * theta.tan() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::pose_errors;
    use crate::renderer::make_orbit_trajectory;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gt() -> Pose {
        make_orbit_trajectory(4.0, 9, 12.0)[4]
    }

    #[test]
    fn zero_limits_return_gt() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let limits = PerturbationLimits { delta_theta_deg: 0.0, delta_p: 0.0 };
        assert_eq!(sample_initial_pose(&gt(), &limits, &mut rng), gt());
    }

    #[test]
    fn translation_only_keeps_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let limits = PerturbationLimits { delta_theta_deg: 0.0, delta_p: 1.0 };
        for _ in 0..20 {
            let p = sample_initial_pose(&gt(), &limits, &mut rng);
            assert_eq!(p.rotation(), gt().rotation());
        }
    }

    #[test]
    fn rotation_is_about_camera_center() {
        let p = perturb(&gt(), &Vec3::new(0.3, 1.0, -0.2), 0.4, &Vec3::zeros());
        assert_eq!(p.center(), gt().center());
        assert_abs_diff_eq!(pose_errors(&p, &gt(), 1.0).unwrap().re_deg, 0.4f64.to_degrees(), epsilon = 1e-9);
    }

    #[test]
    fn deviation_limit_rule() {
        let k = Intrinsics::from_half_fov(128, 128, 45.0).unwrap();
        let limits = deviation_limits(&k, 4.0, None);
        assert_abs_diff_eq!(limits.delta_theta_deg, 75.0, epsilon = 1e-9);
        assert_abs_diff_eq!(limits.delta_p, 4.0 * 75f64.to_radians().tan(), epsilon = 1e-9);

        let wide = Intrinsics::from_half_fov(128, 128, 20.0).unwrap();
        let narrow = Intrinsics::from_half_fov(128, 128, 10.0).unwrap();
        let diff = deviation_limits(&wide, 4.0, None).delta_theta_deg - deviation_limits(&narrow, 4.0, None).delta_theta_deg;
        assert_abs_diff_eq!(diff, 10.0, epsilon = 1e-9);

        let lego = PerturbationLimits { delta_theta_deg: 33.84, delta_p: 2.44 };
        assert_eq!(deviation_limits(&k, 4.0, Some(lego)), lego);
    }
}

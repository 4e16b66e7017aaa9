use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatloc::eval::{pose_errors, sample_initial_pose, sample_initial_pose_chen, scene_scale, PerturbationLimits};
use splatloc::geometry::{Pose, Vec3};
use splatloc::renderer::make_orbit_trajectory;

fn pose_from(axis: (f64, f64, f64), angle: f64, t: (f64, f64, f64)) -> Pose {
    let axis = Vec3::new(axis.0, axis.1, axis.2 + 1e-3);
    Pose::new(*Pose::from_axis_angle(&axis, angle).rotation(), Vec3::new(t.0, t.1, t.2))
}

fn arb_pose() -> impl Strategy<Value = Pose> {
    ((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 0.0f64..3.1, (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0))
        .prop_map(|(a, angle, t)| pose_from(a, angle, t))
}

proptest! {
    #[test]
    fn te_norm_invariant_to_scaling(est in arb_pose(), gt_idx in 0usize..12, s in 0.01f64..100.0) {
        let traj = make_orbit_trajectory(4.0, 12, 20.0);
        let gt = traj[gt_idx];
        let base = pose_errors(&est, &gt, scene_scale(&traj).unwrap()).unwrap();
        let scaled_traj: Vec<Pose> = traj.iter().map(|p| Pose::new(*p.rotation(), p.center() * s)).collect();
        let scaled_est = Pose::new(*est.rotation(), est.center() * s);
        let scaled = pose_errors(&scaled_est, &scaled_traj[gt_idx], scene_scale(&scaled_traj).unwrap()).unwrap();
        prop_assert!((scaled.te_norm - base.te_norm).abs() <= 1e-9 * base.te_norm.max(1e-300));
    }

    #[test]
    fn re_invariant_to_rigid_motion(est in arb_pose(), gt in arb_pose(), g in arb_pose()) {
        let a = pose_errors(&est, &gt, 1.0).unwrap();
        let b = pose_errors(&g.compose(&est), &g.compose(&gt), 1.0).unwrap();
        prop_assert!((a.re_deg - b.re_deg).abs() < 1e-6);
        prop_assert!((a.te_norm - b.te_norm).abs() < 1e-9);
    }

    #[test]
    fn samplers_are_deterministic(seed in any::<u64>(), gt in arb_pose()) {
        let limits = PerturbationLimits { delta_theta_deg: 30.0, delta_p: 1.0 };
        let a = sample_initial_pose(&gt, &limits, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a, sample_initial_pose(&gt, &limits, &mut ChaCha8Rng::seed_from_u64(seed)));
        let c = sample_initial_pose_chen(&gt, 2.0, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(c, sample_initial_pose_chen(&gt, 2.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    }
}

#[test]
fn randomized_sampler_hits_95_percent() {
    let gt = make_orbit_trajectory(4.0, 4, 10.0)[1];
    let limits = PerturbationLimits { delta_theta_deg: 33.84, delta_p: 2.44 };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut rot_in, mut trans_in) = (0, 0);
    for _ in 0..10_000 {
        let m = pose_errors(&sample_initial_pose(&gt, &limits, &mut rng), &gt, 1.0).unwrap();
        rot_in += (m.re_deg < limits.delta_theta_deg) as usize;
        trans_in += (m.te_norm < limits.delta_p) as usize;
    }
    for count in [rot_in, trans_in] {
        let frac = count as f64 / 10_000.0;
        assert!((0.93..=0.97).contains(&frac), "within-limit fraction {frac}");
    }
}

#[test]
fn chen_sampler_support_and_isotropy() {
    let gt = make_orbit_trajectory(4.0, 4, 10.0)[2];
    let scale = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    let mut dir_sum = Vec3::zeros();
    for _ in 0..10_000 {
        let p = sample_initial_pose_chen(&gt, scale, &mut rng);
        let m = pose_errors(&p, &gt, scale).unwrap();
        assert!((10.0 - 1e-9..=40.0 + 1e-9).contains(&m.re_deg), "rotation {}", m.re_deg);
        assert!((0.0..=0.2 + 1e-12).contains(&m.te_norm), "translation {}", m.te_norm);
        lo = lo.min(m.re_deg);
        hi = hi.max(m.re_deg);
        let d = p.center() - gt.center();
        if d.norm() > 0.0 {
            dir_sum += d.normalize();
        }
    }
    assert!(lo < 10.1 && hi > 39.9, "range [{lo}, {hi}]");
    assert!(dir_sum.norm() / 10_000.0 < 0.05);
}

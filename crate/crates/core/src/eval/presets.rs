//! Ready-made scenes and limits used by the CLI, the demo and the tests.

use super::PerturbationLimits;
use crate::geometry::Intrinsics;
use crate::renderer::{generate_test_scene, make_orbit_trajectory, Scene, TestSceneSpec};

pub const DESK_SCENE_ID: &str = "desk";
pub const DESK_N_SPLATS: usize = 200;
pub const DESK_OBJECT_RADIUS: f64 = 1.0;
pub const DESK_ORBIT_RADIUS: f64 = 4.0;
pub const DESK_ORBIT_POSES: usize = 40;
pub const DESK_ELEVATION_DEG: f64 = 15.0;
pub const DESK_IMAGE_SIZE: u32 = 128;
pub const DESK_HALF_FOV_DEG: f64 = 25.0;

/// Deviation limits reported for the Lego scene of the Synthetic-NeRF set.
pub const LEGO_LIMITS: PerturbationLimits = PerturbationLimits { delta_theta_deg: 33.84, delta_p: 2.44 };

/// A 200-splat object of radius 1 seen from a 40-pose orbit of radius 4.
pub fn desk_scene(seed: u64) -> Scene {
    let mut scene = generate_test_scene(&TestSceneSpec {
        n_splats: DESK_N_SPLATS,
        bounding_radius: DESK_OBJECT_RADIUS,
        seed,
    });
    scene.trajectory = make_orbit_trajectory(DESK_ORBIT_RADIUS, DESK_ORBIT_POSES, DESK_ELEVATION_DEG);
    scene
}

/// 128×128 pinhole camera with a 50° horizontal field of view.
pub fn desk_intrinsics() -> Intrinsics {
    Intrinsics::from_half_fov(DESK_IMAGE_SIZE, DESK_IMAGE_SIZE, DESK_HALF_FOV_DEG).expect("valid preset")
}

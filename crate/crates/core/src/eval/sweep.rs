use serde::{Deserialize, Serialize};

use super::{derive_seed, pose_errors, scene_scale, BenchmarkMethod, EvalError};
use crate::geometry::{Intrinsics, Pose, Vec3};
use crate::parallel::map_indices;
use crate::renderer::{render, RenderMode, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Rotation about the camera's vertical axis.
    Yaw,
    /// Camera-center shift along the camera's horizontal axis.
    TranslationX,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yaw" => Ok(Self::Yaw),
            "x" | "translation-x" | "translation_x" => Ok(Self::TranslationX),
            other => Err(format!("unknown sweep axis '{other}' (expected yaw or x)")),
        }
    }
}

impl SweepAxis {
    /// Apply an offset in degrees (yaw) or scene units (translation).
    pub fn offset(&self, gt: &Pose, amount: f64) -> Pose {
        match self {
            Self::Yaw => Pose::new(gt.rotation() * nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), amount.to_radians()), gt.center()),
            Self::TranslationX => Pose::new(*gt.rotation(), gt.center() + gt.rotation() * Vec3::x() * amount),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Yaw => "yaw",
            Self::TranslationX => "x",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub n_steps: usize,
    pub trials_per_step: usize,
    /// Reference deviation: degrees for yaw, scene units for translation.
    pub limit: f64,
    /// Largest offset as a multiple of `limit`.
    pub max_fraction: f64,
    pub seed: u64,
    pub scene_id: String,
    pub query_render_mode: RenderMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Offset divided by the reference limit.
    pub offset_fraction: f64,
    pub offset: f64,
    pub success_rate: f64,
}

/// Success rate as a function of a deterministic initial-pose offset.
///
/// Step `k` uses offset `k / n_steps · max_fraction · limit`. Trial `t` of a
/// step starts from trajectory pose `t mod len`, offset in the positive
/// direction for even `t` and the negative direction for odd `t`.
pub fn run_sensitivity_sweep(
    scene: &Scene,
    k: &Intrinsics,
    method: &BenchmarkMethod,
    cfg: &SweepConfig,
) -> Result<Vec<SweepPoint>, EvalError> {
    if cfg.n_steps < 2 {
        return Err(EvalError::InvalidConfig(format!("sweep needs at least 2 steps, got {}", cfg.n_steps)));
    }
    if cfg.trials_per_step == 0 {
        return Err(EvalError::NoQueries);
    }
    let traj = &scene.trajectory;
    let scale = scene_scale(traj)?;
    let n_queries = cfg.trials_per_step.min(traj.len());
    let queries = map_indices(n_queries, |q| render(scene, &traj[q], k, cfg.query_render_mode).color);

    let mut curve = Vec::with_capacity(cfg.n_steps + 1);
    for step in 0..=cfg.n_steps {
        let fraction = step as f64 / cfg.n_steps as f64 * cfg.max_fraction;
        let offset = fraction * cfg.limit;
        let step_str = step.to_string();
        let successes = map_indices(cfg.trials_per_step, |t| {
            let q = t % traj.len();
            let gt = traj[q];
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            let init = cfg.axis.offset(&gt, sign * offset);
            let seed = derive_seed(cfg.seed, &[&cfg.scene_id, cfg.axis.name(), &step_str, &t.to_string(), &method.name]);
            let res = method.run(&queries[q % n_queries], &gt, &init, scene, k, seed);
            pose_errors(&res.pose, &gt, scale).map(|m| m.success)
        });
        let n_success = successes.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().filter(|&s| s).count();
        curve.push(SweepPoint {
            offset_fraction: fraction,
            offset,
            success_rate: n_success as f64 / cfg.trials_per_step as f64,
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::presets::{desk_intrinsics, desk_scene};
    use crate::eval::MatcherSpec;
    use crate::geometry::rotation_angle_between;
    use crate::localizer::LocalizerConfig;
    use crate::matching::OracleParams;
    use approx::assert_abs_diff_eq;

    #[test]
    fn axis_offsets() {
        let gt = crate::renderer::make_orbit_trajectory(4.0, 8, 15.0)[3];
        let yawed = SweepAxis::Yaw.offset(&gt, 12.0);
        assert_eq!(yawed.center(), gt.center());
        assert_abs_diff_eq!(rotation_angle_between(yawed.rotation(), gt.rotation()), 12.0, epsilon = 1e-9);
        let moved = SweepAxis::TranslationX.offset(&gt, -0.5);
        assert_eq!(moved.rotation(), gt.rotation());
        assert_abs_diff_eq!((moved.center() - gt.center()).norm(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(gt.inverse().transform_point(&moved.center()).x, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn curve_shape() {
        let scene = desk_scene(5);
        let method = BenchmarkMethod::feature("oracle", MatcherSpec::Oracle(OracleParams::default()), LocalizerConfig::default());
        let cfg = SweepConfig {
            axis: SweepAxis::Yaw,
            n_steps: 4,
            trials_per_step: 6,
            limit: 40.0,
            max_fraction: 2.0,
            seed: 1,
            scene_id: "desk".into(),
            query_render_mode: RenderMode::Alpha,
        };
        let curve = run_sensitivity_sweep(&scene, &desk_intrinsics(), &method, &cfg).unwrap();
        assert_eq!(curve.len(), 5);
        assert_eq!(curve[0].success_rate, 1.0);
        assert_eq!(curve[4].offset, 80.0);
        assert!(curve[2].success_rate >= curve[4].success_rate);
        assert!(run_sensitivity_sweep(&scene, &desk_intrinsics(), &method, &SweepConfig { n_steps: 1, ..cfg }).is_err());
    }
}

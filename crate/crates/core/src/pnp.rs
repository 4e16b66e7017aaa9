//! Perspective-n-point: Levenberg–Marquardt on reprojection error, wrapped in RANSAC.
//!
//! Poses are camera-to-world. The optimizer perturbs them on the right,
//! `T ← T · exp(δ)` with `δ = (ω, v)` in the camera frame, which is the same as
//! left-multiplying the world-to-camera transform by `exp(-δ)`. A camera step
//! of `+v_x` therefore moves every point by `-v_x` in the camera frame and
//! `∂u/∂v_x = -fx / z`.

use nalgebra::{DMatrix, DVector, Matrix2x6, Matrix3, Matrix6, Vector2, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{skew, Intrinsics, Pixel, Pose, Twist, Vec3, BEHIND_CAMERA_EPS};

/// Residual assigned to each component of a point behind the camera.
pub const BEHIND_CAMERA_RESIDUAL: f64 = 1e6;
/// Fewest correspondences from which a pose is estimated.
pub const MIN_CORRESPONDENCES: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PnpError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { got: usize, needed: usize },
    #[error("no consensus: best hypothesis has {best} inliers")]
    NoConsensus { best: usize },
}

/// A query pixel and the world point it should observe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Pixel,
    pub world: Vec3,
    /// Index of the match this pair was lifted from.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LiftedSet {
    pub pairs: Vec<Correspondence>,
}

impl LiftedSet {
    pub fn new(pairs: Vec<Correspondence>) -> Self {
        Self { pairs }
    }

    /// Build from parallel pixel / point lists; `source` is the list index.
    pub fn from_points(pixels: &[Pixel], points: &[Vec3]) -> Self {
        assert_eq!(pixels.len(), points.len());
        Self {
            pairs: pixels
                .iter()
                .zip(points)
                .enumerate()
                .map(|(source, (&pixel, &world))| Correspondence { pixel, world, source })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subset(&self, indices: impl IntoIterator<Item = usize>) -> LiftedSet {
        LiftedSet { pairs: indices.into_iter().map(|i| self.pairs[i]).collect() }
    }

    /// Same correspondences with world points moved by `g`.
    pub fn transformed(&self, g: &Pose) -> LiftedSet {
        LiftedSet {
            pairs: self
                .pairs
                .iter()
                .map(|c| Correspondence { world: g.transform_point(&c.world), ..*c })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InlierThreshold {
    Pixels(f64),
    FractionOfWidth(f64),
}

impl InlierThreshold {
    pub fn to_pixels(&self, k: &Intrinsics) -> f64 {
        match *self {
            Self::Pixels(px) => px,
            Self::FractionOfWidth(f) => f * k.width as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub threshold: InlierThreshold,
    pub max_rounds: usize,
    pub confidence: f64,
    pub min_sample: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: InlierThreshold::FractionOfWidth(0.01),
            max_rounds: 100,
            confidence: 0.999,
            min_sample: MIN_CORRESPONDENCES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub step_tolerance: f64,
    /// Accepted steps that lower the squared-error sum by less than this end the solve.
    pub residual_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            step_tolerance: 1e-10,
            residual_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnpConfig {
    /// LM iteration cap, for every hypothesis fit and for the final refit.
    pub max_iterations: usize,
    pub ransac: RansacConfig,
    pub lm: LmConfig,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self { max_iterations: 50, ransac: RansacConfig::default(), lm: LmConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    /// Estimated camera-to-world pose.
    pub pose: Pose,
    pub converged: bool,
    pub iterations: usize,
    /// Per-component reprojection RMSE over the inliers.
    pub rmse_px: f64,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    /// Squared-error sum at the start and after every accepted LM step.
    pub cost_trace: Vec<f64>,
}

/// Camera-frame point and its projection, or `None` behind the camera.
fn observe(world_to_cam: &Pose, k: &Intrinsics, c: &Correspondence) -> (Vec3, Option<Vector2<f64>>) {
    let p = world_to_cam.transform_point(&c.world);
    let r = k.project(&p).ok().map(|u| u - c.pixel);
    (p, r)
}

/// Stacked `(u, v)` residuals `project(T⁻¹ p) - u_q`; points behind the camera
/// contribute `(1e6, 1e6)`.
pub fn reprojection_residuals(pose: &Pose, lifted: &LiftedSet, k: &Intrinsics) -> DVector<f64> {
    let world_to_cam = pose.inverse();
    let mut r = DVector::zeros(2 * lifted.len());
    for (i, c) in lifted.pairs.iter().enumerate() {
        let res = observe(&world_to_cam, k, c)
            .1
            .unwrap_or(Vector2::repeat(BEHIND_CAMERA_RESIDUAL));
        r[2 * i] = res.x;
        r[2 * i + 1] = res.y;
    }
    r
}

/// Per-pair reprojection error norms (infinite behind the camera).
pub fn reprojection_errors(pose: &Pose, lifted: &LiftedSet, k: &Intrinsics) -> Vec<f64> {
    let world_to_cam = pose.inverse();
    lifted
        .pairs
        .iter()
        .map(|c| observe(&world_to_cam, k, c).1.map_or(f64::INFINITY, |r| r.norm()))
        .collect()
}

fn point_jacobian(k: &Intrinsics, p: &Vec3) -> Matrix2x6<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    let iz = 1.0 / z;
    let proj = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * x * iz * iz, 0.0, k.fy * iz, -k.fy * y * iz * iz);
    let mut dp = nalgebra::Matrix3x6::zeros();
    dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(p));
    dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
    proj * dp
}

/// `∂r / ∂δ` for the update `T ← T · exp(δ)`, a `2N × 6` matrix. Rows of points
/// behind the camera are zero, matching their constant capped residual.
pub fn residual_jacobian(pose: &Pose, lifted: &LiftedSet, k: &Intrinsics) -> DMatrix<f64> {
    let world_to_cam = pose.inverse();
    let mut jac = DMatrix::zeros(2 * lifted.len(), 6);
    for (i, c) in lifted.pairs.iter().enumerate() {
        let p = world_to_cam.transform_point(&c.world);
        if p.z > BEHIND_CAMERA_EPS {
            jac.fixed_view_mut::<2, 6>(2 * i, 0).copy_from(&point_jacobian(k, &p));
        }
    }
    jac
}

struct NormalEquations {
    hessian: Matrix6<f64>,
    gradient: Vector6<f64>,
    cost: f64,
    behind: usize,
}

fn normal_equations(pose: &Pose, lifted: &LiftedSet, k: &Intrinsics) -> NormalEquations {
    let world_to_cam = pose.inverse();
    let mut ne = NormalEquations { hessian: Matrix6::zeros(), gradient: Vector6::zeros(), cost: 0.0, behind: 0 };
    for c in &lifted.pairs {
        match observe(&world_to_cam, k, c) {
            (p, Some(r)) => {
                let j = point_jacobian(k, &p);
                ne.hessian += j.transpose() * j;
                ne.gradient += j.transpose() * r;
                ne.cost += r.norm_squared();
            }
            (_, None) => {
                ne.cost += 2.0 * BEHIND_CAMERA_RESIDUAL * BEHIND_CAMERA_RESIDUAL;
                ne.behind += 1;
            }
        }
    }
    ne
}

fn cost(pose: &Pose, lifted: &LiftedSet, k: &Intrinsics) -> f64 {
    reprojection_residuals(pose, lifted, k).norm_squared()
}

/// Levenberg–Marquardt on all correspondences, starting from `init`.
///
/// `converged` is set when a step shorter than `step_tolerance` is proposed or
/// an accepted step lowers the cost by less than `residual_tolerance`, and no
/// point is left behind the camera. Reaching `max_iterations` first leaves it
/// unset; that is reported, not an error.
pub fn solve_pnp_lm(lifted: &LiftedSet, k: &Intrinsics, init: &Pose, cfg: &PnpConfig) -> Result<PnpResult, PnpError> {
    let n = lifted.len();
    if n < MIN_CORRESPONDENCES {
        return Err(PnpError::TooFewCorrespondences { got: n, needed: MIN_CORRESPONDENCES });
    }
    let lm = &cfg.lm;
    let mut pose = *init;
    let mut ne = normal_equations(&pose, lifted, k);
    let mut cost_trace = vec![ne.cost];
    let mut damping = lm.initial_damping;
    let mut stopped = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let max_diag = (0..6).map(|i| ne.hessian[(i, i)]).fold(0.0, f64::max);
        let floor = 1e-12 * max_diag.max(1.0);
        let mut a = ne.hessian;
        for i in 0..6 {
            a[(i, i)] += damping * ne.hessian[(i, i)].max(floor);
        }
        let Some(step) = a.cholesky().map(|ch| ch.solve(&-ne.gradient)) else {
            damping *= lm.damping_up;
            continue;
        };
        if step.norm() < lm.step_tolerance {
            stopped = true;
            break;
        }
        let candidate = pose.retract(&Twist(step));
        let candidate_cost = cost(&candidate, lifted, k);
        if candidate_cost < ne.cost {
            let decrease = ne.cost - candidate_cost;
            pose = candidate;
            ne = normal_equations(&pose, lifted, k);
            cost_trace.push(ne.cost);
            damping *= lm.damping_down;
            if decrease < lm.residual_tolerance {
                stopped = true;
                break;
            }
        } else {
            damping *= lm.damping_up;
        }
    }

    Ok(PnpResult {
        pose,
        converged: stopped && ne.behind == 0,
        iterations,
        rmse_px: (ne.cost / (2 * n) as f64).sqrt(),
        inlier_mask: vec![true; n],
        inlier_count: n,
        cost_trace,
    })
}

/// Smallest round count that draws an all-inlier sample with probability
/// `confidence` when a fraction `inlier_ratio` of pairs are inliers.
pub fn adaptive_round_bound(inlier_ratio: f64, sample_size: usize, confidence: f64) -> f64 {
    let good = inlier_ratio.powi(sample_size as i32);
    if good >= 1.0 {
        return 1.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - good).ln()).ceil().max(1.0)
}

/// RANSAC over LM fits of random minimal samples, each seeded at `init`,
/// scored by the number of pairs with reprojection error below the threshold.
/// The best consensus set (earliest hypothesis wins ties) is refit with LM
/// starting from its hypothesis pose; the returned mask is recomputed against
/// that refit.
pub fn solve_pnp_ransac(
    lifted: &LiftedSet,
    k: &Intrinsics,
    init: &Pose,
    cfg: &PnpConfig,
) -> Result<PnpResult, PnpError> {
    let n = lifted.len();
    let needed = cfg.ransac.min_sample.max(MIN_CORRESPONDENCES);
    if n < needed {
        return Err(PnpError::TooFewCorrespondences { got: n, needed });
    }
    let threshold = cfg.ransac.threshold.to_pixels(k);
    let inliers_of = |pose: &Pose| -> Vec<bool> {
        reprojection_errors(pose, lifted, k).into_iter().map(|e| e < threshold).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ransac.seed);
    let mut best: Option<(usize, Pose, Vec<bool>)> = None;
    let mut round_bound = cfg.ransac.max_rounds as f64;
    let mut round = 0usize;
    while (round as f64) < round_bound.min(cfg.ransac.max_rounds as f64) {
        round += 1;
        let picked = sample(&mut rng, n, needed).into_vec();
        let Ok(hypothesis) = solve_pnp_lm(&lifted.subset(picked), k, init, cfg) else {
            continue;
        };
        let mask = inliers_of(&hypothesis.pose);
        let count = mask.iter().filter(|&&m| m).count();
        if best.as_ref().is_none_or(|(c, _, _)| count > *c) {
            round_bound = adaptive_round_bound(count as f64 / n as f64, needed, cfg.ransac.confidence);
            best = Some((count, hypothesis.pose, mask));
        }
    }

    let (best_count, best_pose, best_mask) = best.unwrap_or((0, *init, vec![false; n]));
    if best_count < MIN_CORRESPONDENCES {
        return Err(PnpError::NoConsensus { best: best_count });
    }
    let inlier_set = lifted.subset(best_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i));
    let refit = solve_pnp_lm(&inlier_set, k, &best_pose, cfg)?;
    let inlier_mask = inliers_of(&refit.pose);
    let inlier_count = inlier_mask.iter().filter(|&&m| m).count();
    if inlier_count < MIN_CORRESPONDENCES {
        return Err(PnpError::NoConsensus { best: inlier_count });
    }
    let residuals = reprojection_residuals(&refit.pose, lifted, k);
    let sq: f64 = inlier_mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| residuals[2 * i].powi(2) + residuals[2 * i + 1].powi(2))
        .sum();
    Ok(PnpResult {
        rmse_px: (sq / (2 * inlier_count) as f64).sqrt(),
        inlier_mask,
        inlier_count,
        ..refit
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_angle_between;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn k640() -> Intrinsics {
        Intrinsics::centered(640, 480, 500.0).unwrap()
    }

    fn gt_pose() -> Pose {
        Pose::look_at(&Vec3::new(0.5, -4.0, 1.0), &Vec3::new(0.1, 0.0, 0.0), &Vec3::z())
    }

    /// Random world points visible from `pose`, with their exact pixels.
    fn scene_points(pose: &Pose, k: &Intrinsics, n: usize, seed: u64) -> (Vec<Pixel>, Vec<Vec3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels = Vec::new();
        let mut points = Vec::new();
        while pixels.len() < n {
            let px = Pixel::new(
                rng.random_range(20.0..k.width as f64 - 20.0),
                rng.random_range(20.0..k.height as f64 - 20.0),
            );
            let depth = rng.random_range(2.5..6.0);
            let p = pose.transform_point(&k.backproject(&px, depth).unwrap());
            pixels.push(px);
            points.push(p);
        }
        (pixels, points)
    }

    fn perturb(pose: &Pose, yaw_deg: f64, offset: f64) -> Pose {
        let d = Pose::new(
            *Pose::from_axis_angle(&Vec3::y(), yaw_deg.to_radians()).rotation(),
            Vec3::new(offset, 0.0, 0.0),
        );
        pose.compose(&d)
    }

    #[test]
    fn residual_examples() {
        let k = k640();
        let gt = gt_pose();
        let (px, pts) = scene_points(&gt, &k, 10, 1);
        let lifted = LiftedSet::from_points(&px, &pts);
        assert!(reprojection_residuals(&gt, &lifted, &k).amax() < 1e-9);

        // A point on the optical axis at depth 5; moving the camera by -3z/fx
        // along x shifts its image 3 px to the right.
        let single = LiftedSet::from_points(&[Pixel::new(k.cx, k.cy)], &[Vec3::new(0.0, 0.0, 5.0)]);
        let shifted = Pose::from_translation(Vec3::new(-3.0 * 5.0 / k.fx, 0.0, 0.0));
        let r = reprojection_residuals(&shifted, &single, &k);
        assert_abs_diff_eq!(r[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r[1], 0.0, epsilon = 1e-12);

        let behind = LiftedSet::from_points(&[Pixel::new(1.0, 2.0)], &[Vec3::new(0.0, 0.0, -5.0)]);
        let r = reprojection_residuals(&Pose::identity(), &behind, &k);
        assert_eq!(r.as_slice(), &[1e6, 1e6]);
    }

    #[test]
    fn jacobian_on_axis_translation_column() {
        let k = k640();
        let z = 3.7;
        let lifted = LiftedSet::from_points(&[Pixel::new(k.cx, k.cy)], &[Vec3::new(0.0, 0.0, z)]);
        let j = residual_jacobian(&Pose::identity(), &lifted, &k);
        assert_abs_diff_eq!(j[(0, 3)], -k.fx / z, epsilon = 1e-12);
        assert_abs_diff_eq!(j[(1, 4)], -k.fy / z, epsilon = 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let k = k640();
        let gt = gt_pose();
        let (px, pts) = scene_points(&gt, &k, 15, 2);
        let lifted = LiftedSet::from_points(&px, &pts);
        let j = residual_jacobian(&gt, &lifted, &k);
        let r = reprojection_residuals(&gt, &lifted, &k);
        assert!((j.transpose() * r).amax() < 1e-6);
    }

    #[test]
    fn lm_recovers_pose_from_exact_data() {
        let k = k640();
        let gt = gt_pose();
        let (px, pts) = scene_points(&gt, &k, 20, 3);
        let lifted = LiftedSet::from_points(&px, &pts);
        let init = perturb(&gt, 10.0, 0.3);
        let res = solve_pnp_lm(&lifted, &k, &init, &PnpConfig::default()).unwrap();
        assert!(res.converged);
        assert!(rotation_angle_between(res.pose.rotation(), gt.rotation()).to_radians() < 1e-6);
        assert!((res.pose.center() - gt.center()).norm() < 1e-6);
        assert!(res.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lm_at_optimum_stops_immediately() {
        let k = k640();
        let gt = gt_pose();
        let (px, pts) = scene_points(&gt, &k, 20, 4);
        let res = solve_pnp_lm(&LiftedSet::from_points(&px, &pts), &k, &gt, &PnpConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 2);
        assert!(res.rmse_px < 1e-9);
    }

    #[test]
    fn too_few_correspondences() {
        let k = k640();
        let gt = gt_pose();
        let (px, pts) = scene_points(&gt, &k, 3, 5);
        let lifted = LiftedSet::from_points(&px, &pts);
        let cfg = PnpConfig::default();
        assert_eq!(
            solve_pnp_lm(&lifted, &k, &gt, &cfg),
            Err(PnpError::TooFewCorrespondences { got: 3, needed: 4 })
        );
        assert!(matches!(
            solve_pnp_ransac(&lifted, &k, &gt, &cfg),
            Err(PnpError::TooFewCorrespondences { .. })
        ));
    }

    #[test]
    fn threshold_fraction_of_width() {
        assert_abs_diff_eq!(InlierThreshold::FractionOfWidth(0.01).to_pixels(&k640()), 6.4, epsilon = 1e-12);
        assert_eq!(InlierThreshold::Pixels(2.5).to_pixels(&k640()), 2.5);
    }

    #[test]
    fn ransac_without_outliers_matches_plain_lm() {
        let k = k640();
        let gt = gt_pose();
        let (px, pts) = scene_points(&gt, &k, 100, 6);
        let lifted = LiftedSet::from_points(&px, &pts);
        let init = perturb(&gt, 8.0, 0.2);
        let cfg = PnpConfig::default();
        let plain = solve_pnp_lm(&lifted, &k, &init, &cfg).unwrap();
        let robust = solve_pnp_ransac(&lifted, &k, &init, &cfg).unwrap();
        assert!(robust.pose.max_abs_diff(&plain.pose) < 1e-9);
        assert_eq!(robust.inlier_count, 100);
    }

    #[test]
    fn ransac_rejects_injected_outliers() {
        let k = k640();
        let gt = gt_pose();
        let (mut px, pts) = scene_points(&gt, &k, 100, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let outliers: Vec<usize> = sample(&mut rng, 100, 40).into_vec();
        for p in px.iter_mut() {
            p.x += noise.sample(&mut rng);
            p.y += noise.sample(&mut rng);
        }
        for &i in &outliers {
            // Keep injected outliers clear of their true pixel so labels are unambiguous.
            loop {
                let cand = Pixel::new(rng.random_range(0.0..639.0), rng.random_range(0.0..479.0));
                if (cand - px[i]).norm() > 20.0 {
                    px[i] = cand;
                    break;
                }
            }
        }
        let lifted = LiftedSet::from_points(&px, &pts);
        let init = perturb(&gt, 10.0, 0.3);
        let res = solve_pnp_ransac(&lifted, &k, &init, &PnpConfig::default()).unwrap();
        let recovered = (0..100).filter(|i| !outliers.contains(i) && res.inlier_mask[*i]).count();
        assert!(recovered as f64 >= 0.95 * 60.0, "recovered {recovered}/60");
        assert!(outliers.iter().all(|&i| !res.inlier_mask[i]));
        assert!(rotation_angle_between(res.pose.rotation(), gt.rotation()) < 0.5);
        assert!((res.pose.center() - gt.center()).norm() < 0.01);
        assert_eq!(res.inlier_count, res.inlier_mask.iter().filter(|&&m| m).count());

        let again = solve_pnp_ransac(&lifted, &k, &init, &PnpConfig::default()).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn adaptive_bound() {
        assert_eq!(adaptive_round_bound(1.0, 4, 0.999), 1.0);
        assert_eq!(adaptive_round_bound(0.0, 4, 0.999), f64::INFINITY);
        // 0.6⁴ = 0.1296 → ln(0.001)/ln(0.8704) = 49.8
        assert_eq!(adaptive_round_bound(0.6, 4, 0.999), 50.0);
    }
}

//! Synthetic splat scenes and their RGBD rendering.
//!
//! Two rasterization modes are provided:
//!
//! * [`RenderMode::Opaque`]: every splat is a solid 1-σ ellipsoid. A pixel
//!   shows the color of the ellipsoid whose surface its ray hits first, and the
//!   depth buffer stores the exact camera `z` of that hit. Rays that meet the
//!   ellipsoid are exactly the rays inside its projected ellipse, so this is an
//!   ellipse rasterizer z-buffered per pixel.
//! * [`RenderMode::Alpha`]: splats are projected to 2D Gaussians and composited
//!   front to back (sorted by center depth), the usual splatting model. Depth is
//!   the alpha-weighted expectation of the splat center depths.
//!
//! Both modes are deterministic: parallel rows produce the same bits as a
//! sequential pass because each pixel visits splats in a fixed order.

use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Intrinsics, Pixel, Pose, Vec3};
use crate::image::{DepthMap, Image};
use crate::parallel::map_indices;

/// Rays are only intersected in front of this camera-frame depth.
pub const NEAR_PLANE: f64 = 1e-4;
/// Alpha compositing stops once accumulated alpha reaches this value.
pub const ALPHA_SATURATION: f64 = 0.999;
/// Contributions below this alpha are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Per-splat alpha cap.
pub const MAX_ALPHA: f64 = 0.99;
/// Screen-space variance (px²) added to every projected Gaussian.
pub const SCREEN_DILATION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {reason}")]
pub struct SceneError {
    pub field: String,
    pub reason: String,
}

impl SceneError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    #[default]
    Opaque,
    Alpha,
}

impl std::str::FromStr for RenderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "opaque" => Ok(Self::Opaque),
            "alpha" => Ok(Self::Alpha),
            other => Err(format!("unknown render mode '{other}' (expected opaque|alpha)")),
        }
    }
}

/// An oriented, colored 3D Gaussian blob.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub center: Vec3,
    /// Per-axis standard deviations in the splat's local frame.
    pub scale: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Splat {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(SceneError::new("center", "must be finite"));
        }
        if !self.scale.iter().all(|&s| s.is_finite() && s > 0.0) {
            return Err(SceneError::new("scale", "components must be finite and > 0"));
        }
        if (self.orientation.norm() - 1.0).abs() > 1e-9 {
            return Err(SceneError::new("orientation_wxyz", "quaternion must have unit norm"));
        }
        if !self.color.iter().all(|&c| (0.0..=1.0).contains(&c)) {
            return Err(SceneError::new("color", "components must lie in [0, 1]"));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(SceneError::new("opacity", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// `|S⁻¹ Rᵀ (p - c)|`: equals 1 exactly on the 1-σ ellipsoid surface.
    pub fn mahalanobis(&self, p: &Vec3) -> f64 {
        let local = self.orientation.inverse_transform_vector(&(p - self.center));
        local.component_div(&self.scale).norm()
    }

    fn precision(&self, rotation: &Matrix3<f64>) -> Matrix3<f64> {
        let inv_sq = Matrix3::from_diagonal(&self.scale.map(|s| 1.0 / (s * s)));
        rotation * inv_sq * rotation.transpose()
    }

    fn covariance(&self, rotation: &Matrix3<f64>) -> Matrix3<f64> {
        let sq = Matrix3::from_diagonal(&self.scale.map(|s| s * s));
        rotation * sq * rotation.transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub splats: Vec<Splat>,
    pub background_color: [f64; 3],
    /// Ground-truth camera poses, used for evaluation.
    pub trajectory: Vec<Pose>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, s) in self.splats.iter().enumerate() {
            s.validate().map_err(|e| SceneError::new(format!("splats[{i}].{}", e.field), e.reason))?;
        }
        if !self.background_color.iter().all(|&c| (0.0..=1.0).contains(&c)) {
            return Err(SceneError::new("background_color", "components must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The same scene moved rigidly by `g` (splats and trajectory).
    pub fn transformed(&self, g: &Pose) -> Scene {
        let g_rot = UnitQuaternion::from_rotation_matrix(g.rotation());
        Scene {
            splats: self
                .splats
                .iter()
                .map(|s| Splat {
                    center: g.transform_point(&s.center),
                    orientation: g_rot * s.orientation,
                    ..s.clone()
                })
                .collect(),
            background_color: self.background_color,
            trajectory: self.trajectory.iter().map(|p| g.compose(p)).collect(),
        }
    }
}

/// Rendered color and depth together with the camera that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub color: Image,
    pub depth: DepthMap,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

pub fn render(scene: &Scene, pose: &Pose, k: &Intrinsics, mode: RenderMode) -> RgbdFrame {
    let world_to_cam = pose.inverse();
    let rows = match mode {
        RenderMode::Opaque => {
            let splats: Vec<_> = scene
                .splats
                .iter()
                .filter_map(|s| OpaqueSplat::prepare(s, &world_to_cam, k))
                .collect();
            map_indices(k.height as usize, |y| render_row_opaque(&splats, scene.background_color, k, y))
        }
        RenderMode::Alpha => {
            let mut splats: Vec<_> = scene
                .splats
                .iter()
                .filter_map(|s| GaussianSplat::prepare(s, &world_to_cam, k))
                .collect();
            // Stable sort keeps scene order among equal depths.
            splats.sort_by(|a, b| a.depth.total_cmp(&b.depth));
            map_indices(k.height as usize, |y| render_row_alpha(&splats, scene.background_color, k, y))
        }
    };

    let (w, h) = (k.width as usize, k.height as usize);
    let mut color = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for (c, d) in rows {
        color.extend(c);
        depth.extend(d);
    }
    RgbdFrame {
        color: Image::from_raw(w, h, color).expect("row buffers sized by intrinsics"),
        depth: DepthMap::from_raw(w, h, depth).expect("row buffers sized by intrinsics"),
        pose: *pose,
        intrinsics: *k,
    }
}

#[derive(Debug, Clone, Copy)]
struct PixelRect {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl PixelRect {
    /// Clip a continuous pixel-coordinate box to the image. `None` if it misses.
    fn clip(u_min: f64, u_max: f64, v_min: f64, v_max: f64, k: &Intrinsics) -> Option<Self> {
        let (w, h) = (k.width as f64, k.height as f64);
        if !(u_max >= 0.0 && v_max >= 0.0 && u_min <= w - 1.0 && v_min <= h - 1.0) {
            return None;
        }
        Some(Self {
            x0: u_min.max(0.0).floor() as usize,
            x1: u_max.min(w - 1.0).ceil() as usize,
            y0: v_min.max(0.0).floor() as usize,
            y1: v_max.min(h - 1.0).ceil() as usize,
        })
    }

    fn full(k: &Intrinsics) -> Self {
        Self { x0: 0, x1: k.width as usize - 1, y0: 0, y1: k.height as usize - 1 }
    }
}

struct OpaqueSplat {
    /// Precision matrix of the ellipsoid in the camera frame.
    precision: Matrix3<f64>,
    precision_center: Vec3,
    /// `cᵀ A c - 1`, positive when the camera is outside the ellipsoid.
    offset: f64,
    color: [f64; 3],
    rect: PixelRect,
}

impl OpaqueSplat {
    fn prepare(splat: &Splat, world_to_cam: &Pose, k: &Intrinsics) -> Option<Self> {
        let center = world_to_cam.transform_point(&splat.center);
        let rotation = world_to_cam.rotation_matrix() * splat.orientation.to_rotation_matrix().matrix();
        let radius = splat.scale.max();
        if center.z + radius <= NEAR_PLANE {
            return None;
        }
        let rect = if center.z - radius > NEAR_PLANE {
            let (mx0, mx1) = sphere_slope_range(center.x, center.z, radius);
            let (my0, my1) = sphere_slope_range(center.y, center.z, radius);
            PixelRect::clip(
                k.fx * mx0 + k.cx - 1.0,
                k.fx * mx1 + k.cx + 1.0,
                k.fy * my0 + k.cy - 1.0,
                k.fy * my1 + k.cy + 1.0,
                k,
            )?
        } else {
            PixelRect::full(k)
        };
        let precision = splat.precision(&rotation);
        let precision_center = precision * center;
        Some(Self {
            offset: center.dot(&precision_center) - 1.0,
            precision,
            precision_center,
            color: splat.color,
            rect,
        })
    }

    /// Nearest ray parameter `t > NEAR_PLANE` at which `t·ray` meets the surface.
    /// With `ray.z == 1` this is the camera-frame depth of the hit.
    fn hit(&self, ray: &Vec3) -> Option<f64> {
        let a = ray.dot(&(self.precision * ray));
        let b = ray.dot(&self.precision_center);
        let disc = b * b - a * self.offset;
        if disc < 0.0 || a <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let q = if b >= 0.0 { b + sq } else { b - sq };
        if q == 0.0 {
            return None;
        }
        let (r0, r1) = {
            let p = self.offset / q;
            let s = q / a;
            if p <= s { (p, s) } else { (s, p) }
        };
        [r0, r1].into_iter().find(|&t| t > NEAR_PLANE)
    }
}

/// Range of `x/z` over a sphere of radius `r` centered at `(cx, ·, cz)` with `cz > r`.
fn sphere_slope_range(cx: f64, cz: f64, r: f64) -> (f64, f64) {
    let denom = cz * cz - r * r;
    let root = r * (cx * cx + denom).sqrt();
    ((cx * cz - root) / denom, (cx * cz + root) / denom)
}

fn render_row_opaque(
    splats: &[OpaqueSplat],
    background: [f64; 3],
    k: &Intrinsics,
    y: usize,
) -> (Vec<f64>, Vec<f64>) {
    let w = k.width as usize;
    let mut color = Vec::with_capacity(w * 3);
    for _ in 0..w {
        color.extend_from_slice(&background);
    }
    let mut depth = vec![f64::INFINITY; w];
    let v = (y as f64 - k.cy) / k.fy;
    for s in splats.iter().filter(|s| s.rect.y0 <= y && y <= s.rect.y1) {
        for x in s.rect.x0..=s.rect.x1 {
            let ray = Vec3::new((x as f64 - k.cx) / k.fx, v, 1.0);
            if let Some(t) = s.hit(&ray) {
                if t < depth[x] {
                    depth[x] = t;
                    color[x * 3..x * 3 + 3].copy_from_slice(&s.color);
                }
            }
        }
    }
    (color, depth)
}

struct GaussianSplat {
    mean: Vector2<f64>,
    /// Inverse of the projected 2D covariance.
    conic: Matrix2<f64>,
    depth: f64,
    color: [f64; 3],
    opacity: f64,
    rect: PixelRect,
}

impl GaussianSplat {
    fn prepare(splat: &Splat, world_to_cam: &Pose, k: &Intrinsics) -> Option<Self> {
        let c = world_to_cam.transform_point(&splat.center);
        if c.z <= NEAR_PLANE {
            return None;
        }
        let rotation = world_to_cam.rotation_matrix() * splat.orientation.to_rotation_matrix().matrix();
        let cov3 = splat.covariance(&rotation);
        let jac = nalgebra::Matrix2x3::new(
            k.fx / c.z,
            0.0,
            -k.fx * c.x / (c.z * c.z),
            0.0,
            k.fy / c.z,
            -k.fy * c.y / (c.z * c.z),
        );
        let cov2 = jac * cov3 * jac.transpose() + Matrix2::identity() * SCREEN_DILATION;
        let conic = cov2.try_inverse()?;
        let mean = Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy);
        // 3-σ extent from the largest eigenvalue of the 2D covariance.
        let half_tr = 0.5 * (cov2[(0, 0)] + cov2[(1, 1)]);
        let det = cov2.determinant();
        let lambda_max = half_tr + (half_tr * half_tr - det).max(0.0).sqrt();
        let radius = 3.0 * lambda_max.sqrt();
        let rect = PixelRect::clip(
            mean.x - radius,
            mean.x + radius,
            mean.y - radius,
            mean.y + radius,
            k,
        )?;
        Some(Self { mean, conic, depth: c.z, color: splat.color, opacity: splat.opacity, rect })
    }
}

fn render_row_alpha(
    splats: &[GaussianSplat],
    background: [f64; 3],
    k: &Intrinsics,
    y: usize,
) -> (Vec<f64>, Vec<f64>) {
    let w = k.width as usize;
    let mut color = vec![0.0; w * 3];
    let mut depth_acc = vec![0.0; w];
    let mut transmittance = vec![1.0f64; w];
    let mut done = vec![false; w];
    let py = y as f64;
    for s in splats.iter().filter(|s| s.rect.y0 <= y && y <= s.rect.y1) {
        let dy = py - s.mean.y;
        for x in s.rect.x0..=s.rect.x1 {
            if done[x] {
                continue;
            }
            let dx = x as f64 - s.mean.x;
            let power = -0.5 * (s.conic[(0, 0)] * dx * dx + 2.0 * s.conic[(0, 1)] * dx * dy + s.conic[(1, 1)] * dy * dy);
            let alpha = (s.opacity * power.exp()).min(MAX_ALPHA);
            if alpha < MIN_ALPHA {
                continue;
            }
            let weight = alpha * transmittance[x];
            for c in 0..3 {
                color[x * 3 + c] += weight * s.color[c];
            }
            depth_acc[x] += weight * s.depth;
            transmittance[x] *= 1.0 - alpha;
            if 1.0 - transmittance[x] >= ALPHA_SATURATION {
                done[x] = true;
            }
        }
    }
    let mut depth = vec![f64::INFINITY; w];
    for x in 0..w {
        let t = transmittance[x];
        for c in 0..3 {
            color[x * 3 + c] += t * background[c];
        }
        let accumulated = 1.0 - t;
        if accumulated > 0.0 {
            depth[x] = depth_acc[x] / accumulated;
        }
    }
    (color, depth)
}

/// Parameters for [`generate_test_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestSceneSpec {
    pub n_splats: usize,
    pub bounding_radius: f64,
    pub seed: u64,
}

/// A seeded cloud of randomly shaped, colored splats whose centers lie in a
/// ball of `bounding_radius` around the origin. No trajectory is attached.
pub fn generate_test_scene(spec: &TestSceneSpec) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.bounding_radius;
    let splats = (0..spec.n_splats)
        .map(|_| {
            let dir = random_unit_vector(&mut rng);
            let dist = r * rng.random::<f64>().cbrt();
            let scale = Vec3::from_fn(|_, _| r * rng.random_range(0.05..0.15));
            let q = random_unit_vector4(&mut rng);
            Splat {
                center: dir * dist,
                scale,
                orientation: UnitQuaternion::new_normalize(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3])),
                color: [
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.05..0.95),
                ],
                opacity: rng.random_range(0.6..1.0),
            }
        })
        .collect();
    Scene { splats, background_color: [0.0, 0.0, 0.0], trajectory: Vec::new() }
}

/// `count` cameras evenly spaced in azimuth at distance `radius` from the
/// origin and `elevation_deg` above the world xy-plane, each looking at the
/// origin with world +z as up.
pub fn make_orbit_trajectory(radius: f64, count: usize, elevation_deg: f64) -> Vec<Pose> {
    let elev = elevation_deg.to_radians();
    (0..count)
        .map(|i| {
            let azimuth = std::f64::consts::TAU * i as f64 / count as f64;
            let eye = Vec3::new(
                radius * elev.cos() * azimuth.cos(),
                radius * elev.cos() * azimuth.sin(),
                radius * elev.sin(),
            );
            Pose::look_at(&eye, &Vec3::zeros(), &Vec3::z())
        })
        .collect()
}

/// Uniformly distributed direction.
pub fn random_unit_vector<R: Rng>(rng: &mut R) -> Vec3 {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec3 = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn random_unit_vector4<R: Rng>(rng: &mut R) -> [f64; 4] {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.map(|x| x / n);
        }
    }
}

/// Pixel at the center of the image grid (rounded down).
pub fn center_pixel(k: &Intrinsics) -> (usize, usize) {
    ((k.width as usize - 1) / 2, (k.height as usize - 1) / 2)
}

/// Camera-frame point seen at pixel `(x, y)` of an opaque frame, if any.
pub fn surface_point(frame: &RgbdFrame, x: usize, y: usize) -> Option<Vec3> {
    let d = frame.depth.get(x, y);
    frame.intrinsics.backproject(&Pixel::new(x as f64, y as f64), d).ok()
}

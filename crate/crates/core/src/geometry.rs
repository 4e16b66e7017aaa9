//! Rigid poses, the pinhole camera, and the se(3) parameterization used by
//! the optimizers.
//!
//! Conventions: the camera looks down +z with +x to the right and +y down.
//! Pixel centers sit at integer coordinates with the origin at the top-left
//! pixel. A [`Pose`] is always a camera-to-world transform; invert it to map
//! world points into the camera frame.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Pixel = Vector2<f64>;

/// Points with camera-frame `z` at or below this are treated as behind the camera.
pub const BEHIND_CAMERA_EPS: f64 = 1e-9;

/// Tolerance used when validating that a matrix is a proper rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("depth must be finite and positive, got {0}")]
    InvalidDepth(f64),
    #[error("matrix is not a proper rotation (max |RᵀR - I| = {orthogonality:e}, det = {det})")]
    NotARotation { orthogonality: f64, det: f64 },
    #[error("bottom row of a rigid transform must be [0 0 0 1]")]
    NotRigid,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// Pinhole intrinsics together with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("principal point must be finite"));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be at least 1x1"));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Square pixels with the principal point at the image center.
    pub fn centered(width: u32, height: u32, focal: f64) -> Result<Self, GeometryError> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    /// Centered intrinsics whose horizontal half field of view is `half_fov_deg`.
    pub fn from_half_fov(width: u32, height: u32, half_fov_deg: f64) -> Result<Self, GeometryError> {
        let focal = (width as f64 / 2.0) / half_fov_deg.to_radians().tan();
        Self::centered(width, height, focal)
    }

    /// Horizontal half field of view in radians, measured to the image edge.
    pub fn half_fov_x(&self) -> f64 {
        (self.width as f64 / 2.0 / self.fx).atan()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Whether `px` rounds to a valid pixel index.
    pub fn contains(&self, px: &Pixel) -> bool {
        px.x >= -0.5 && px.y >= -0.5 && px.x < self.width as f64 - 0.5 && px.y < self.height as f64 - 0.5
    }

    /// Nearest-integer pixel index, if `px` lies inside the image.
    pub fn pixel_index(&self, px: &Pixel) -> Option<(usize, usize)> {
        if !px.x.is_finite() || !px.y.is_finite() || !self.contains(px) {
            return None;
        }
        let col = (px.x.round() as i64).clamp(0, self.width as i64 - 1) as usize;
        let row = (px.y.round() as i64).clamp(0, self.height as i64 - 1) as usize;
        Some((col, row))
    }

    /// Pinhole projection of a camera-frame point. No clipping to the image.
    pub fn project(&self, p_cam: &Vec3) -> Result<Pixel, GeometryError> {
        if !(p_cam.z > BEHIND_CAMERA_EPS) {
            return Err(GeometryError::BehindCamera(p_cam.z));
        }
        Ok(Pixel::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    /// Camera-frame point at depth `depth` (the `z` coordinate) along the ray through `px`.
    pub fn backproject(&self, px: &Pixel, depth: f64) -> Result<Vec3, GeometryError> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(GeometryError::InvalidDepth(depth));
        }
        Ok(Vec3::new(
            (px.x - self.cx) / self.fx * depth,
            (px.y - self.cy) / self.fy * depth,
            depth,
        ))
    }

    /// Ray direction through `px` scaled so that its `z` component is one.
    pub fn ray(&self, px: &Pixel) -> Vec3 {
        Vec3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }
}

/// Tangent-space increment: rotation part `omega` (radians) then translation part `v`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn new(omega: Vec3, v: Vec3) -> Self {
        Self(Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z))
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn omega(&self) -> Vec3 {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn v(&self) -> Vec3 {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl From<Vector6<f64>> for Twist {
    fn from(v: Vector6<f64>) -> Self {
        Self(v)
    }
}

/// Rigid camera-to-world transform. Serializes as a row-major 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct Pose {
    rotation: Rotation3<f64>,
    translation: Vec3,
}

impl TryFrom<[[f64; 4]; 4]> for Pose {
    type Error = GeometryError;

    fn try_from(rows: [[f64; 4]; 4]) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<Pose> for [[f64; 4]; 4] {
    fn from(pose: Pose) -> Self {
        pose.to_rows()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Rotation3::identity(), translation)
    }

    /// Pure rotation of `angle` radians about `axis` (any non-zero vector).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        Self::new(Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle), Vec3::zeros())
    }

    /// Build a pose from a rotation matrix, validating orthonormality and `det = +1`.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let orthogonality = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(orthogonality <= ROTATION_TOLERANCE && (det - 1.0).abs() <= ROTATION_TOLERANCE) {
            return Err(GeometryError::NotARotation { orthogonality, det });
        }
        Ok(Self::new(Rotation3::from_matrix_unchecked(rotation), translation))
    }

    /// Parse a homogeneous 4x4 matrix. The matrix entries are kept verbatim.
    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::NotRigid);
        }
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::from_parts(rotation, translation)
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4x4 entries.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix4();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        Self::from_matrix4(&Matrix4::from_fn(|r, c| rows[r][c]))
    }

    /// Camera placed at `eye` looking at `target`, with image-down aligned to `-up`.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Self {
        let z = (target - eye).normalize();
        let down = -up;
        let mut y = down - z * down.dot(&z);
        if y.norm() < 1e-12 {
            // Looking straight along `up`; any perpendicular works.
            y = z.cross(&Vec3::x()).cross(&z);
            if y.norm() < 1e-12 {
                y = z.cross(&Vec3::y()).cross(&z);
            }
        }
        let y = y.normalize();
        let x = y.cross(&z);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(Rotation3::from_matrix_unchecked(rotation), *eye)
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        self.rotation.matrix()
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera center in the world frame.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Optical axis (+z of the camera) expressed in the world frame.
    pub fn forward(&self) -> Vec3 {
        self.rotation.matrix().column(2).into_owned()
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose::new(r_inv, -(r_inv * self.translation))
    }

    /// Apply a twist in this pose's local frame: `self * exp(delta)`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    /// Closed-form exponential map (Rodrigues rotation plus the left Jacobian `V`).
    pub fn exp(xi: &Twist) -> Pose {
        let omega = xi.omega();
        let theta_sq = omega.norm_squared();
        let theta = theta_sq.sqrt();
        let (a, b, c) = if theta < 1e-2 {
            let t4 = theta_sq * theta_sq;
            (
                1.0 - theta_sq / 6.0 + t4 / 120.0,
                0.5 - theta_sq / 24.0 + t4 / 720.0,
                1.0 / 6.0 - theta_sq / 120.0 + t4 / 5040.0,
            )
        } else {
            let (s, co) = theta.sin_cos();
            (s / theta, (1.0 - co) / theta_sq, (theta - s) / (theta_sq * theta))
        };
        let w = skew(&omega);
        let w2 = w * w;
        let r = Matrix3::identity() + w * a + w2 * b;
        let v = Matrix3::identity() + w * b + w2 * c;
        Pose::new(Rotation3::from_matrix_unchecked(r), v * xi.v())
    }

    /// Inverse of [`Pose::exp`]. Returns the twist with rotation angle in `[0, π]`.
    ///
    /// The axis comes from the skew part of `R` except within `1e-3` of π,
    /// where it is taken from the symmetric part `(R + Rᵀ)/2 - cos θ I = (1 - cos θ) n nᵀ`
    /// and its sign fixed by the (tiny) skew part. At exactly π either sign is valid.
    pub fn log(&self) -> Twist {
        let omega = rotation_log(self.rotation.matrix());
        let theta_sq = omega.norm_squared();
        let theta = theta_sq.sqrt();
        let d = if theta < 1e-2 {
            1.0 / 12.0 + theta_sq / 720.0 + theta_sq * theta_sq / 30240.0
        } else {
            let (s, co) = theta.sin_cos();
            (1.0 - theta * s / (2.0 * (1.0 - co))) / theta_sq
        };
        let w = skew(&omega);
        let v_inv = Matrix3::identity() - w * 0.5 + w * w * d;
        Twist::new(omega, v_inv * self.translation)
    }

    /// Largest absolute elementwise difference of the 4x4 matrices.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.to_matrix4() - other.to_matrix4()).abs().max()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.translation;
        let w = rotation_log(self.rotation.matrix());
        write!(
            f,
            "Pose(t=[{:.4}, {:.4}, {:.4}], rotvec=[{:.4}, {:.4}, {:.4}])",
            t.x, t.y, t.z, w.x, w.y, w.z
        )
    }
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee_skew_part(r: &Matrix3<f64>) -> Vec3 {
    Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
}

/// Rotation vector (axis * angle) of a rotation matrix, angle in `[0, π]`.
pub fn rotation_log(r: &Matrix3<f64>) -> Vec3 {
    let skew_part = vee_skew_part(r);
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin_theta = (skew_part.norm() / 2.0).min(1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta < 1e-2 {
        let t2 = theta * theta;
        return skew_part * (0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0);
    }
    if PI - theta > 1e-3 {
        return skew_part * (theta / (2.0 * sin_theta));
    }
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let one_minus_cos = 1.0 - cos_theta;
    let (i, _) = (0..3)
        .map(|i| (i, sym[(i, i)]))
        .fold((0, f64::MIN), |best, cur| if cur.1 > best.1 { cur } else { best });
    let n_i = (sym[(i, i)] / one_minus_cos).max(0.0).sqrt();
    let mut axis: Vec3 = sym.column(i).into_owned() / (one_minus_cos * n_i);
    axis.normalize_mut();
    if axis.dot(&skew_part) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Geodesic angle between two rotations, in degrees.
///
/// Equal to `acos(clamp((tr(RaᵀRb) - 1) / 2, -1, 1))`; evaluated through
/// `atan2` of the sine and cosine parts so that small angles keep full precision.
pub fn rotation_angle_between(ra: &Rotation3<f64>, rb: &Rotation3<f64>) -> f64 {
    let rel = ra.matrix().transpose() * rb.matrix();
    let cos_theta = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin_theta = vee_skew_part(&rel).norm() / 2.0;
    sin_theta.atan2(cos_theta).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k100() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap()
    }

    fn yaw_deg(deg: f64) -> Pose {
        Pose::from_axis_angle(&Vec3::z(), deg.to_radians())
    }

    #[test]
    fn project_examples() {
        let k = k100();
        assert_eq!(k.project(&Vec3::new(0.0, 0.0, 2.0)).unwrap(), Pixel::new(50.0, 50.0));
        assert_eq!(k.project(&Vec3::new(1.0, 0.0, 2.0)).unwrap(), Pixel::new(100.0, 50.0));
        assert!(matches!(
            k.project(&Vec3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera(_))
        ));
        assert!(k.project(&Vec3::new(0.0, 0.0, 1e-10)).is_err());
    }

    #[test]
    fn backproject_examples() {
        let k = k100();
        assert_eq!(k.backproject(&Pixel::new(50.0, 50.0), 2.0).unwrap(), Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(k.backproject(&Pixel::new(100.0, 50.0), 2.0).unwrap(), Vec3::new(1.0, 0.0, 2.0));
        for d in [0.0, -1.0, f64::INFINITY, f64::NAN] {
            assert!(k.backproject(&Pixel::new(1.0, 1.0), d).is_err());
        }
        for (u, v) in [(0.0, 0.0), (17.0, 83.0), (100.0, 100.0)] {
            let px = Pixel::new(u, v);
            let back = k.project(&k.backproject(&px, 3.0).unwrap()).unwrap();
            assert_abs_diff_eq!(back, px, epsilon = 1e-9);
        }
    }

    #[test]
    fn transform_point_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform_point(&p), p);
        assert_eq!(
            Pose::from_translation(Vec3::new(0.0, 0.0, 5.0)).transform_point(&p),
            Vec3::new(1.0, 2.0, 8.0)
        );
        assert_abs_diff_eq!(
            yaw_deg(90.0).transform_point(&Vec3::x()),
            Vec3::y(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn compose_examples() {
        let p = Pose::new(
            Rotation3::from_euler_angles(0.3, -0.2, 1.1),
            Vec3::new(0.5, -1.0, 2.0),
        );
        assert!(p.compose(&Pose::identity()).max_abs_diff(&p) < 1e-15);
        assert!(p.inverse().inverse().max_abs_diff(&p) < 1e-15);
        assert!(p.compose(&p.inverse()).max_abs_diff(&Pose::identity()) < 1e-9);
        assert!(yaw_deg(30.0).compose(&yaw_deg(30.0)).max_abs_diff(&yaw_deg(60.0)) < 1e-12);
    }

    #[test]
    fn exp_examples() {
        assert_eq!(Pose::exp(&Twist::zero()), Pose::identity());
        let t = Pose::exp(&Twist::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(*t.translation(), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(*t.rotation_matrix(), Matrix3::identity());
    }

    #[test]
    fn exp_matches_series_oracle() {
        // Truncated power series of the 4x4 matrix exponential as an independent oracle.
        let xi = Twist::new(Vec3::new(0.3, -0.2, 0.35), Vec3::new(0.7, 0.1, -1.2));
        let mut hat = Matrix4::zeros();
        hat.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.omega()));
        hat.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.v());
        let mut term = Matrix4::identity();
        let mut sum = Matrix4::identity();
        for k in 1..40 {
            term = term * hat / k as f64;
            sum += term;
        }
        assert!((Pose::exp(&xi).to_matrix4() - sum).abs().max() < 1e-13);
    }

    #[test]
    fn log_round_trip_near_pi() {
        for theta in [PI - 1e-2, PI - 5e-4, PI - 1e-7, PI] {
            let axis = Vec3::new(0.2, -0.9, 0.4).normalize();
            let xi = Twist::new(axis * theta, Vec3::new(0.3, 0.2, -0.1));
            let back = Pose::exp(&Pose::exp(&xi).log());
            assert!(back.max_abs_diff(&Pose::exp(&xi)) < 1e-9, "theta = {theta}");
            if theta < PI {
                assert!((Pose::exp(&xi).log().0 - xi.0).abs().max() < 1e-6);
            }
        }
    }

    #[test]
    fn rotation_angle_examples() {
        let r = *yaw_deg(12.0).rotation();
        assert_eq!(rotation_angle_between(&r, &r), 0.0);
        assert_abs_diff_eq!(
            rotation_angle_between(&Rotation3::identity(), yaw_deg(90.0).rotation()),
            90.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            rotation_angle_between(yaw_deg(170.0).rotation(), yaw_deg(-170.0).rotation()),
            20.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn pose_validation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(matches!(
            Pose::from_parts(m, Vec3::zeros()),
            Err(GeometryError::NotARotation { .. })
        ));
        let mut h = Matrix4::identity();
        h[(3, 0)] = 1.0;
        assert_eq!(Pose::from_matrix4(&h), Err(GeometryError::NotRigid));
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vec3::new(3.0, -2.0, 1.5);
        let pose = Pose::look_at(&eye, &Vec3::zeros(), &Vec3::z());
        let target_cam = pose.inverse().transform_point(&Vec3::zeros());
        assert_abs_diff_eq!(target_cam.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(target_cam.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(target_cam.z, eye.norm(), epsilon = 1e-12);
        // World up appears toward the top of the image (negative y).
        let up_cam = pose.inverse().transform_vector(&Vec3::z());
        assert!(up_cam.y < 0.0);
        assert!((pose.rotation_matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
        let k = Intrinsics::from_half_fov(128, 128, 25.0).unwrap();
        assert_abs_diff_eq!(k.half_fov_x().to_degrees(), 25.0, epsilon = 1e-12);
        assert_eq!(k.pixel_index(&Pixel::new(-0.4, 127.49)), Some((0, 127)));
        assert_eq!(k.pixel_index(&Pixel::new(-0.5001, 3.0)), None);
        assert_eq!(k.pixel_index(&Pixel::new(127.5, 3.0)), None);
    }
}

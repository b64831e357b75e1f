//! Quaternion and unit dual-quaternion algebra.
//!
//! Layout is scalar-first `(w, x, y, z)` everywhere. A unit dual quaternion
//! `real + ε dual` encodes a rigid transform with `real` the rotation and
//! `dual = ½ t ⊗ real` where `t = (0, x, y, z)` is the translation.
//! Serialized form is 8 scalars, real part first.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Drift in the unit condition above which products are renormalized.
pub const RENORM_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    /// Pure quaternion `(0, v)`.
    pub fn pure(v: &Vec3) -> Self {
        Quaternion::new(0.0, v.x, v.y, v.z)
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn conjugate(&self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(&self, s: f64) -> Self {
        Quaternion::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::DegenerateRotation);
        }
        Ok(self.scale(1.0 / n))
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::DegenerateRotation);
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let a = axis / n;
        Ok(Quaternion::new(c, a.x * s, a.y * s, a.z * s))
    }

    /// Rotation about a unit axis; no validation.
    pub fn about_unit_axis(axis: &Vec3, angle: f64) -> Self {
        let (s, c) = (angle * 0.5).sin_cos();
        Quaternion::new(c, axis.x * s, axis.y * s, axis.z * s)
    }

    /// Fixed-axis roll/pitch/yaw: `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let (sr, cr) = (roll * 0.5).sin_cos();
        let (sp, cp) = (pitch * 0.5).sin_cos();
        let (sy, cy) = (yaw * 0.5).sin_cos();
        Quaternion::new(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
    }

    /// Inverse of [`Quaternion::from_euler`], returning `[roll, pitch, yaw]`.
    pub fn to_euler(&self) -> [f64; 3] {
        let Quaternion { w, x, y, z } = *self;
        let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0).asin();
        let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        [roll, pitch, yaw]
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2w(u × v) + 2u × (u × v)
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Geodesic rotation angle in `[0, π]` (sign-insensitive).
    pub fn angle(&self) -> f64 {
        2.0 * self.vector().norm().atan2(self.w.abs())
    }

    /// Rotation vector (axis × angle) of the shortest rotation represented.
    pub fn log_vector(&self) -> Vec3 {
        let q = if self.w < 0.0 { -*self } else { *self };
        let v = q.vector();
        let s = v.norm();
        if s < 1e-12 {
            return 2.0 * v;
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    /// Spherical interpolation along the shorter arc.
    pub fn slerp(&self, other: &Quaternion, u: f64) -> Quaternion {
        let mut b = *other;
        let mut d = self.dot(&b);
        if d < 0.0 {
            b = -b;
            d = -d;
        }
        if d > 1.0 - 1e-12 {
            let q = *self * (1.0 - u) + b * u;
            return q.scale(1.0 / q.norm());
        }
        let theta = d.clamp(-1.0, 1.0).acos();
        let s = theta.sin();
        let wa = ((1.0 - u) * theta).sin() / s;
        let wb = (u * theta).sin() / s;
        *self * wa + b * wb
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

impl Mul<f64> for Quaternion {
    type Output = Quaternion;
    fn mul(self, s: f64) -> Quaternion {
        self.scale(s)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.w - o.w, self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Rotation input accepted by [`DualQuaternion::from_pose`].
#[derive(Debug, Clone, Copy)]
pub enum Rotation {
    AxisAngle { axis: Vec3, angle: f64 },
    Quaternion(Quaternion),
}

impl Rotation {
    pub fn to_quaternion(&self) -> Result<Quaternion> {
        match self {
            Rotation::AxisAngle { axis, angle } => Quaternion::from_axis_angle(axis, *angle),
            Rotation::Quaternion(q) => q.normalized(),
        }
    }
}

/// Unit dual quaternion encoding an SE(3) pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuaternion {
    pub real: Quaternion,
    pub dual: Quaternion,
}

impl Default for DualQuaternion {
    fn default() -> Self {
        DualQuaternion::IDENTITY
    }
}

impl DualQuaternion {
    pub const IDENTITY: DualQuaternion = DualQuaternion {
        real: Quaternion::IDENTITY,
        dual: Quaternion::ZERO,
    };

    pub fn new(real: Quaternion, dual: Quaternion) -> Self {
        DualQuaternion { real, dual }
    }

    pub fn from_pose(position: &Vec3, rotation: Rotation) -> Result<Self> {
        let real = rotation.to_quaternion()?;
        Ok(Self::from_rotation_translation(real, position))
    }

    /// Builds from an already-unit rotation quaternion.
    pub fn from_rotation_translation(real: Quaternion, t: &Vec3) -> Self {
        let dual = (Quaternion::pure(t) * real).scale(0.5);
        DualQuaternion { real, dual }
    }

    pub fn from_translation(t: &Vec3) -> Self {
        Self::from_rotation_translation(Quaternion::IDENTITY, t)
    }

    pub fn from_rotation(real: Quaternion) -> Self {
        DualQuaternion {
            real,
            dual: Quaternion::ZERO,
        }
    }

    /// Pose built from a position and fixed-axis roll/pitch/yaw.
    pub fn from_position_euler(p: &Vec3, rpy: [f64; 3]) -> Self {
        Self::from_rotation_translation(Quaternion::from_euler(rpy[0], rpy[1], rpy[2]), p)
    }

    /// `t = 2 · dual ⊗ conj(real)`.
    pub fn translation(&self) -> Vec3 {
        (self.dual * self.real.conjugate()).scale(2.0).vector()
    }

    pub fn rotation(&self) -> Quaternion {
        self.real
    }

    pub fn to_pose(&self) -> (Vec3, Quaternion) {
        (self.translation(), self.real)
    }

    pub fn euler(&self) -> [f64; 3] {
        self.real.to_euler()
    }

    /// Quaternion conjugate of both parts; the inverse for unit inputs.
    pub fn conjugate(&self) -> Self {
        DualQuaternion {
            real: self.real.conjugate(),
            dual: self.dual.conjugate(),
        }
    }

    /// Raw product without the renormalization policy.
    pub fn mul_raw(&self, o: &DualQuaternion) -> Self {
        DualQuaternion {
            real: self.real * o.real,
            dual: self.real * o.dual + self.dual * o.real,
        }
    }

    /// Largest violation of the unit conditions `‖real‖ = 1`, `⟨real, dual⟩ = 0`.
    pub fn unit_error(&self) -> f64 {
        let n = (self.real.norm() - 1.0).abs();
        let o = self.real.dot(&self.dual).abs();
        n.max(o)
    }

    pub fn normalize(&self) -> Self {
        let n = self.real.norm();
        if !(n > 1e-15) {
            return *self;
        }
        let real = self.real.scale(1.0 / n);
        let dual = self.dual.scale(1.0 / n);
        let dual = dual - real.scale(real.dot(&dual));
        DualQuaternion { real, dual }
    }

    fn renormalized(self) -> Self {
        let err = self.unit_error();
        if err > RENORM_THRESHOLD {
            log::warn!("dual quaternion drifted from unit by {err:.3e}; renormalizing");
            self.normalize()
        } else {
            self
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.real.rotate(p) + self.translation()
    }

    pub fn to_array(&self) -> [f64; 8] {
        let (r, d) = (self.real, self.dual);
        [r.w, r.x, r.y, r.z, d.w, d.x, d.y, d.z]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        DualQuaternion {
            real: Quaternion::new(a[0], a[1], a[2], a[3]),
            dual: Quaternion::new(a[4], a[5], a[6], a[7]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Chordal distance in ℝ⁸, minimized over the double cover.
    pub fn chordal_distance(&self, o: &DualQuaternion) -> f64 {
        let a = self.to_array();
        let b = o.to_array();
        let (mut minus, mut plus) = (0.0, 0.0);
        for i in 0..8 {
            minus += (a[i] - b[i]).powi(2);
            plus += (a[i] + b[i]).powi(2);
        }
        minus.min(plus).sqrt()
    }

    /// Position distance and rotation angle between two poses.
    pub fn pose_error(&self, o: &DualQuaternion) -> (f64, f64) {
        let dp = (self.translation() - o.translation()).norm();
        let dq = (self.real.conjugate() * o.real).angle();
        (dp, dq)
    }

    /// True when both poses coincide within the given tolerances.
    pub fn approx_pose_eq(&self, o: &DualQuaternion, tol_pos: f64, tol_rot: f64) -> bool {
        let (dp, dq) = self.pose_error(o);
        dp <= tol_pos && dq <= tol_rot
    }

    /// Screw power `self^u` for a unit dual quaternion.
    pub fn powf(&self, u: f64) -> Self {
        let d = if self.real.w < 0.0 { -*self } else { *self };
        let v = d.real.vector();
        let s = v.norm();
        if s < 1e-12 {
            // Pure translation (up to numerical noise in the rotation).
            let t = d.translation();
            return DualQuaternion::from_translation(&(t * u));
        }
        let c = d.real.w;
        let theta = 2.0 * s.atan2(c);
        let axis = v / s;
        let pitch = -2.0 * d.dual.w / s;
        let moment = (d.dual.vector() - axis * (pitch * 0.5 * c)) / s;

        let (th, pu) = (theta * u, pitch * u);
        let (sh, ch) = (th * 0.5).sin_cos();
        let real = Quaternion::new(ch, axis.x * sh, axis.y * sh, axis.z * sh);
        let dv = moment * sh + axis * (pu * 0.5 * ch);
        let dual = Quaternion::new(-pu * 0.5 * sh, dv.x, dv.y, dv.z);
        DualQuaternion { real, dual }
    }

    /// Screw-linear interpolation; `u = 0` gives `self`, `u = 1` gives `b`.
    pub fn sclerp(&self, b: &DualQuaternion, u: f64) -> Self {
        if u <= 0.0 {
            return *self;
        }
        if u >= 1.0 {
            return *b;
        }
        let rel = self.conjugate().mul_raw(b);
        (*self * rel.powf(u)).renormalized()
    }

    /// Parse 8 whitespace-separated scalars.
    pub fn parse(text: &str) -> Result<Self> {
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse("pose", e.to_string()))?;
        let arr: [f64; 8] = vals
            .try_into()
            .map_err(|v: Vec<f64>| Error::parse("pose", format!("expected 8 scalars, got {}", v.len())))?;
        Ok(DualQuaternion::from_array(arr))
    }
}

impl Mul for DualQuaternion {
    type Output = DualQuaternion;
    fn mul(self, o: DualQuaternion) -> DualQuaternion {
        self.mul_raw(&o).renormalized()
    }
}

impl Neg for DualQuaternion {
    type Output = DualQuaternion;
    fn neg(self) -> DualQuaternion {
        DualQuaternion {
            real: -self.real,
            dual: -self.dual,
        }
    }
}

/// Formats as a single pose-text line (8 scalars, round-trip exact).
impl fmt::Display for DualQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.to_array();
        for (i, v) in a.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn dq_mul(a: &DualQuaternion, b: &DualQuaternion) -> DualQuaternion {
    *a * *b
}

pub fn dq_conjugate(d: &DualQuaternion) -> DualQuaternion {
    d.conjugate()
}

pub fn dq_from_pose(position: &Vec3, rotation: Rotation) -> Result<DualQuaternion> {
    DualQuaternion::from_pose(position, rotation)
}

pub fn dq_sclerp(a: &DualQuaternion, b: &DualQuaternion, u: f64) -> DualQuaternion {
    a.sclerp(b, u)
}

/// Reads pose-per-line text; blank lines and `#` comments are skipped.
pub fn parse_pose_lines(text: &str) -> Result<Vec<DualQuaternion>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(DualQuaternion::parse)
        .collect()
}

pub fn format_pose_lines(poses: &[DualQuaternion]) -> String {
    let mut out = String::new();
    for p in poses {
        out.push_str(&p.to_string());
        out.push('\n');
    }
    out
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    pub fn arb_unit_dq() -> impl Strategy<Value = DualQuaternion> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_filter_map("nonzero rotation", |(q, t)| {
                let q = Quaternion::new(q[0], q[1], q[2], q[3]).normalized().ok()?;
                Some(DualQuaternion::from_rotation_translation(q, &Vec3::new(t[0], t[1], t[2])))
            })
    }

    /// Homogeneous 4x4 oracle for composition checks.
    fn homogeneous(d: &DualQuaternion) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&d.real.to_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&d.translation());
        m
    }

    #[test]
    fn identity_is_neutral() {
        let d = DualQuaternion::from_pose(
            &Vec3::new(0.3, -1.0, 2.0),
            Rotation::AxisAngle {
                axis: Vec3::new(1.0, 2.0, 3.0),
                angle: 0.7,
            },
        )
        .unwrap();
        assert_eq!(DualQuaternion::IDENTITY * d, d);
        assert_eq!(d * DualQuaternion::IDENTITY, d);
    }

    #[test]
    fn translations_compose() {
        let a = DualQuaternion::from_translation(&Vec3::new(1.0, 0.0, 0.0));
        let b = DualQuaternion::from_translation(&Vec3::new(2.0, 0.0, 0.0));
        let t = (a * b).translation();
        assert!((t - Vec3::new(3.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rotation_then_translation_matches_matrix_chain() {
        let rz = DualQuaternion::from_rotation(Quaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2).unwrap());
        let tx = DualQuaternion::from_translation(&Vec3::x());
        let prod = rz * tx;
        let t = prod.translation();
        assert!((t - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        let m = homogeneous(&rz) * homogeneous(&tx);
        let mt = Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        assert!((t - mt).norm() < 1e-12);
    }

    #[test]
    fn conjugate_of_translation_negates() {
        let t = DualQuaternion::from_translation(&Vec3::new(0.5, -2.0, 1.0));
        assert!((t.conjugate().translation() + Vec3::new(0.5, -2.0, 1.0)).norm() < 1e-15);
        assert_eq!(DualQuaternion::IDENTITY.conjugate(), DualQuaternion::IDENTITY);
    }

    #[test]
    fn from_pose_examples() {
        let id = DualQuaternion::from_pose(&Vec3::zeros(), Rotation::Quaternion(Quaternion::IDENTITY)).unwrap();
        assert_eq!(id, DualQuaternion::IDENTITY);

        let d = DualQuaternion::from_pose(&Vec3::new(1.0, 2.0, 3.0), Rotation::Quaternion(Quaternion::IDENTITY))
            .unwrap();
        // ½ (0,1,2,3) ⊗ (1,0,0,0) expanded by hand
        assert_eq!(d.dual, Quaternion::new(0.0, 0.5, 1.0, 1.5));

        let r = DualQuaternion::from_pose(
            &Vec3::zeros(),
            Rotation::AxisAngle {
                axis: Vec3::z(),
                angle: PI,
            },
        )
        .unwrap();
        assert!((r.real.w).abs() < 1e-16 && (r.real.z - 1.0).abs() < 1e-16);
        assert_eq!(r.dual.norm(), 0.0);
    }

    #[test]
    fn degenerate_rotation_rejected() {
        let e = DualQuaternion::from_pose(&Vec3::zeros(), Rotation::Quaternion(Quaternion::ZERO));
        assert!(matches!(e, Err(Error::DegenerateRotation)));
        let e = DualQuaternion::from_pose(
            &Vec3::zeros(),
            Rotation::AxisAngle {
                axis: Vec3::zeros(),
                angle: 1.0,
            },
        );
        assert!(matches!(e, Err(Error::DegenerateRotation)));
    }

    #[test]
    fn sclerp_endpoints_and_translation_midpoint() {
        let a = DualQuaternion::IDENTITY;
        let b = DualQuaternion::from_translation(&Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(a.sclerp(&b, 0.0), a);
        assert_eq!(a.sclerp(&b, 1.0), b);
        let m = a.sclerp(&b, 0.5);
        assert!((m.translation() - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn sclerp_rotation_matches_matrix_slerp() {
        let a = DualQuaternion::IDENTITY;
        let b = DualQuaternion::from_rotation(Quaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2).unwrap());
        let m = a.sclerp(&b, 0.5);
        // Rotation-matrix slerp oracle: R(u) = exp(u log(R_b)) about z is Rz(u·90°)
        let (s, c) = FRAC_PI_4.sin_cos();
        let oracle = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        assert!((m.real.to_matrix() - oracle).norm() < 1e-12);
    }

    #[test]
    fn sclerp_antipodal_takes_short_path() {
        let a = DualQuaternion::from_rotation(Quaternion::from_axis_angle(&Vec3::z(), 0.2).unwrap());
        let b = -DualQuaternion::from_rotation(Quaternion::from_axis_angle(&Vec3::z(), 0.4).unwrap());
        let m = a.sclerp(&b, 0.5);
        let yaw = m.euler()[2];
        assert!((yaw - 0.3).abs() < 1e-12, "{yaw}");
    }

    #[test]
    fn sclerp_screw_angle_is_monotone() {
        let a = DualQuaternion::from_position_euler(&Vec3::new(0.1, 0.0, 0.2), [0.1, 0.2, 0.3]);
        let b = DualQuaternion::from_position_euler(&Vec3::new(1.0, -0.5, 0.0), [0.5, -0.4, 2.0]);
        let mut last = -1.0;
        for k in 0..=20 {
            let m = a.sclerp(&b, k as f64 / 20.0);
            let ang = (a.real.conjugate() * m.real).angle();
            assert!(ang >= last - 1e-12);
            assert!(m.unit_error() < 1e-12);
            last = ang;
        }
    }

    #[test]
    fn euler_round_trip() {
        let rpy = [0.3, -0.7, 2.5];
        let q = Quaternion::from_euler(rpy[0], rpy[1], rpy[2]);
        let back = q.to_euler();
        for i in 0..3 {
            assert!((back[i] - rpy[i]).abs() < 1e-12);
        }
        let m = q.to_matrix();
        let rz = Quaternion::from_axis_angle(&Vec3::z(), rpy[2]).unwrap().to_matrix();
        let ry = Quaternion::from_axis_angle(&Vec3::y(), rpy[1]).unwrap().to_matrix();
        let rx = Quaternion::from_axis_angle(&Vec3::x(), rpy[0]).unwrap().to_matrix();
        assert!((m - rz * ry * rx).norm() < 1e-12);
    }

    #[test]
    fn pose_text_round_trip_is_exact() {
        let d = DualQuaternion::from_position_euler(&Vec3::new(0.123456789, -3.0, 1e-7), [0.1, 0.2, 0.3]);
        let back = DualQuaternion::parse(&d.to_string()).unwrap();
        assert_eq!(back, d);
        assert!(DualQuaternion::parse("1 2 3").is_err());
    }

    #[test]
    fn drifted_product_is_renormalized() {
        let mut a = DualQuaternion::IDENTITY;
        a.real.w = 1.0 + 1e-3;
        let p = a * DualQuaternion::IDENTITY;
        assert!(p.unit_error() < 1e-12);
    }

    proptest! {
        #[test]
        fn product_stays_unit(a in arb_unit_dq(), b in arb_unit_dq()) {
            prop_assert!((a * b).unit_error() < 1e-8);
        }

        #[test]
        fn product_is_associative(a in arb_unit_dq(), b in arb_unit_dq(), c in arb_unit_dq()) {
            let l = (a * b) * c;
            let r = a * (b * c);
            prop_assert!(l.chordal_distance(&r) < 1e-8);
        }

        #[test]
        fn conjugate_is_inverse(d in arb_unit_dq()) {
            prop_assert!((d.conjugate() * d).chordal_distance(&DualQuaternion::IDENTITY) < 1e-9);
            prop_assert!((d * d.conjugate()).chordal_distance(&DualQuaternion::IDENTITY) < 1e-9);
        }

        #[test]
        fn double_cover_maps_to_same_pose(d in arb_unit_dq()) {
            let (p1, q1) = d.to_pose();
            let (p2, q2) = (-d).to_pose();
            prop_assert!((p1 - p2).norm() < 1e-12);
            prop_assert!((q1.to_matrix() - q2.to_matrix()).norm() < 1e-12);
        }

        #[test]
        fn relative_transform_is_left_invariant(g in arb_unit_dq(), a in arb_unit_dq(), b in arb_unit_dq()) {
            let lhs = (g * a).conjugate() * (g * b);
            let rhs = a.conjugate() * b;
            prop_assert!(lhs.chordal_distance(&rhs) < 1e-8);
        }

        #[test]
        fn pose_round_trip(d in arb_unit_dq()) {
            let (p, q) = d.to_pose();
            let back = DualQuaternion::from_pose(&p, Rotation::Quaternion(q)).unwrap();
            prop_assert!(back.chordal_distance(&d) < 1e-9);
        }

        #[test]
        fn sclerp_endpoints_and_unit(a in arb_unit_dq(), b in arb_unit_dq(), u in 0.0f64..1.0) {
            prop_assert!(a.sclerp(&b, u).unit_error() < 1e-9);
            let near_one = a.sclerp(&b, 1.0 - 1e-12);
            prop_assert!(near_one.chordal_distance(&b) < 1e-6);
        }
    }
}

//! Rigid-transform algebra and the 6D deformation signal.
//!
//! Poses are stored as a rotation matrix plus a translation in meters. The
//! deformation signal exposes translation in millimeters and intrinsic
//! X-Y-Z Euler angles (roll about x, then pitch about the new y, then yaw
//! about the newest z), so that `R = Rx(roll) * Ry(pitch) * Rz(yaw)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating rotation matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Pitch distance from ±π/2 below which a decomposition is flagged as gimbal locked.
pub const GIMBAL_LOCK_TOL: f64 = 1e-6;

const M_TO_MM: f64 = 1000.0;

/// A rigid transform. Rotation is orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 12]", into = "[f64; 12]")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper orthonormal
    /// matrices (each entry of `R^T R - I` and `det R - 1` within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let worst = gram.amax();
        if worst > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation not orthonormal (max |R^T R - I| = {worst:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose(format!("rotation determinant {det} != 1")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Pose from intrinsic X-Y-Z Euler angles (radians) and a translation in meters.
    pub fn from_euler_xyz(euler: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: euler_xyz_matrix(euler),
            translation,
        }
    }

    /// Rotation about a unit axis by `angle` radians, no translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Trace-record layout: rotation row-major (9 numbers) then translation (3 numbers, meters).
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        Pose::new(rotation, Vector3::new(v[9], v[10], v[11]))
    }

    /// Largest absolute difference between the blocks of two poses.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl TryFrom<[f64; 12]> for Pose {
    type Error = Error;
    fn try_from(v: [f64; 12]) -> Result<Self> {
        Pose::from_row_major(&v)
    }
}

impl From<Pose> for [f64; 12] {
    fn from(p: Pose) -> Self {
        p.to_row_major()
    }
}

/// Homogeneous product `a * b`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Deformation of the compliant core relative to its unloaded reference:
/// `inverse(reference) * current`, both expressed in the flange frame.
pub fn deformation(reference: &Pose, current: &Pose) -> Pose {
    reference.inverse().compose(current)
}

/// Chordal mean of a set of poses: arithmetic mean translation and the
/// rotation closest (Frobenius) to the mean rotation matrix.
pub fn mean_pose(poses: &[Pose]) -> Result<Pose> {
    if poses.is_empty() {
        return Err(Error::InvalidPose("mean of an empty pose set".into()));
    }
    let n = poses.len() as f64;
    let t = poses.iter().map(|p| p.translation).sum::<Vector3<f64>>() / n;
    let m = poses.iter().map(|p| p.rotation).sum::<Matrix3<f64>>() / n;
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    Pose::new(u * fix * v_t, t)
}

/// Chains the hand-eye extrinsic (camera in flange) with the tag pose in the camera frame.
pub fn tag_in_flange(extrinsic: &Pose, tag_in_cam: &Pose) -> Pose {
    extrinsic.compose(tag_in_cam)
}

fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

fn euler_xyz_matrix(e: Vector3<f64>) -> Matrix3<f64> {
    let (sa, ca) = e.x.sin_cos();
    let (sb, cb) = e.y.sin_cos();
    let (sc, cc) = e.z.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Matrix3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    rx * ry * rz
}

/// Six-dimensional force-like signal: translation in millimeters and
/// intrinsic X-Y-Z Euler angles in radians, each wrapped into (-π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct DeformationSignal {
    pub translation_mm: Vector3<f64>,
    pub euler: Vector3<f64>,
}

impl DeformationSignal {
    pub fn new(translation_mm: Vector3<f64>, euler: Vector3<f64>) -> Self {
        Self {
            translation_mm,
            euler: euler.map(wrap_angle),
        }
    }

    pub fn zero() -> Self {
        Self {
            translation_mm: Vector3::zeros(),
            euler: Vector3::zeros(),
        }
    }

    /// Ordered (x, y, z, θx, θy, θz).
    pub fn as_vector6(&self) -> Vector6<f64> {
        Vector6::new(
            self.translation_mm.x,
            self.translation_mm.y,
            self.translation_mm.z,
            self.euler.x,
            self.euler.y,
            self.euler.z,
        )
    }

    pub fn from_vector6(v: &Vector6<f64>) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn component(&self, index: usize) -> f64 {
        self.as_vector6()[index]
    }
}

impl From<[f64; 6]> for DeformationSignal {
    fn from(v: [f64; 6]) -> Self {
        DeformationSignal::from_vector6(&Vector6::from(v))
    }
}

impl From<DeformationSignal> for [f64; 6] {
    fn from(s: DeformationSignal) -> Self {
        s.as_vector6().into()
    }
}

/// Result of decomposing a pose, carrying the gimbal-lock flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub signal: DeformationSignal,
    pub gimbal_lock: bool,
}

/// Decomposes a pose into translation (mm) and X-Y-Z Euler angles.
///
/// Near pitch = ±π/2 the roll and yaw axes align; the decomposition then
/// reports `gimbal_lock` and fixes yaw to zero.
pub fn decompose_flagged(p: &Pose) -> Decomposition {
    let r = &p.rotation;
    let pitch = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let gimbal_lock = (pitch.abs() - FRAC_PI_2).abs() < GIMBAL_LOCK_TOL;
    let (roll, yaw) = if gimbal_lock {
        // yaw = 0: row 1 reduces to (±sin roll, cos roll, 0)
        let roll = if pitch > 0.0 {
            r[(1, 0)].atan2(r[(1, 1)])
        } else {
            (-r[(1, 0)]).atan2(r[(1, 1)])
        };
        (roll, 0.0)
    } else {
        ((-r[(1, 2)]).atan2(r[(2, 2)]), (-r[(0, 1)]).atan2(r[(0, 0)]))
    };
    Decomposition {
        signal: DeformationSignal::new(
            p.translation * M_TO_MM,
            Vector3::new(roll, pitch, yaw),
        ),
        gimbal_lock,
    }
}

pub fn decompose(p: &Pose) -> DeformationSignal {
    decompose_flagged(p).signal
}

/// Inverse of [`decompose`]: builds the pose a signal describes.
pub fn recompose(s: &DeformationSignal) -> Pose {
    Pose::from_euler_xyz(s.euler, s.translation_mm / M_TO_MM)
}

/// A 6D wrench at the wrist: force in newtons, torque in newton-meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct Wrench {
    force: Vector3<f64>,
    torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Result<Self> {
        Self::from_vector6(&Vector6::new(
            force.x, force.y, force.z, torque.x, torque.y, torque.z,
        ))
    }

    pub fn zero() -> Self {
        Self {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    /// Ordered (Fx, Fy, Fz, Tx, Ty, Tz).
    pub fn from_vector6(v: &Vector6<f64>) -> Result<Self> {
        if let Some((component, value)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(Error::NonFiniteWrench {
                component,
                value: *value,
            });
        }
        Ok(Self {
            force: Vector3::new(v[0], v[1], v[2]),
            torque: Vector3::new(v[3], v[4], v[5]),
        })
    }

    pub fn force(&self) -> &Vector3<f64> {
        &self.force
    }

    pub fn torque(&self) -> &Vector3<f64> {
        &self.torque
    }

    pub fn as_vector6(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }
}

impl TryFrom<[f64; 6]> for Wrench {
    type Error = Error;
    fn try_from(v: [f64; 6]) -> Result<Self> {
        Wrench::from_vector6(&Vector6::from(v))
    }
}

impl From<Wrench> for [f64; 6] {
    fn from(w: Wrench) -> Self {
        w.as_vector6().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type H = [[f64; 4]; 4];

    // Independent oracle: plain 4x4 homogeneous matrices with loop products.
    fn homog(p: &Pose) -> H {
        let v = p.to_row_major();
        [
            [v[0], v[1], v[2], v[9]],
            [v[3], v[4], v[5], v[10]],
            [v[6], v[7], v[8], v[11]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    fn matmul(a: &H, b: &H) -> H {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    // Rigid inverse in closed form: [R^T, -R^T t].
    fn rigid_inv(a: &H) -> H {
        let mut c = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = a[j][i];
            }
        }
        for i in 0..3 {
            c[i][3] = -(0..3).map(|k| a[k][i] * a[k][3]).sum::<f64>();
        }
        c[3][3] = 1.0;
        c
    }

    fn max_diff(p: &Pose, h: &H) -> f64 {
        let q = homog(p);
        let mut m: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                m = m.max((q[i][j] - h[i][j]).abs());
            }
        }
        m
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let rot = Pose::from_axis_angle(axis, rng.random_range(-PI..PI));
        let t = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        Pose::new(*rot.rotation(), t).unwrap()
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        assert!(compose(&Pose::identity(), &p).max_abs_diff(&p) < 1e-15);
        assert!(compose(&p, &p.inverse()).max_abs_diff(&Pose::identity()) < 1e-9);
    }

    #[test]
    fn compose_matches_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let want = matmul(&homog(&a), &homog(&b));
            assert!(max_diff(&compose(&a, &b), &want) < 1e-12);
        }
    }

    #[test]
    fn deformation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        assert!(deformation(&p, &p).max_abs_diff(&Pose::identity()) < 1e-12);

        let tt = Pose::from_translation(Vector3::new(0.0, 0.0, -0.002));
        let d = deformation(&Pose::identity(), &tt);
        assert_eq!(d.translation(), &Vector3::new(0.0, 0.0, -0.002));
        assert_eq!(d.rotation(), &Matrix3::identity());

        for _ in 0..200 {
            let t0 = random_pose(&mut rng);
            let tt = random_pose(&mut rng);
            let want = matmul(&rigid_inv(&homog(&t0)), &homog(&tt));
            assert!(max_diff(&deformation(&t0, &tt), &want) < 1e-12);
        }
    }

    #[test]
    fn tag_in_flange_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_pose(&mut rng);
        let t = random_pose(&mut rng);
        assert_eq!(tag_in_flange(&Pose::identity(), &t), t);
        assert_eq!(tag_in_flange(&e, &Pose::identity()), e);
        let want = matmul(&homog(&e), &homog(&t));
        assert!(max_diff(&tag_in_flange(&e, &t), &want) < 1e-12);
    }

    #[test]
    fn decompose_examples() {
        let z = decompose(&Pose::identity());
        assert_eq!(z.as_vector6(), Vector6::zeros());

        let p = Pose::from_axis_angle(Vector3::z(), 0.1);
        let s = decompose(&p);
        assert!((s.as_vector6() - Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.1)).amax() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let e = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            let t = Vector3::new(
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
            );
            let p = Pose::from_euler_xyz(e, t);
            assert!(recompose(&decompose(&p)).max_abs_diff(&p) < 1e-9);
        }
    }

    #[test]
    fn decompose_units_are_millimeters() {
        let s = decompose(&Pose::from_translation(Vector3::new(0.001, -0.002, 0.0005)));
        assert!((s.translation_mm - Vector3::new(1.0, -2.0, 0.5)).amax() < 1e-12);
    }

    #[test]
    fn gimbal_lock_is_flagged_not_fatal() {
        for pitch in [FRAC_PI_2, -FRAC_PI_2] {
            let p = Pose::from_euler_xyz(Vector3::new(0.3, pitch, 0.0), Vector3::zeros());
            let d = decompose_flagged(&p);
            assert!(d.gimbal_lock);
            assert_eq!(d.signal.euler.z, 0.0);
            assert!(recompose(&d.signal).max_abs_diff(&p) < 1e-9);
        }
        let d = decompose_flagged(&Pose::from_euler_xyz(
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::zeros(),
        ));
        assert!(!d.gimbal_lock);
    }

    #[test]
    fn euler_components_are_wrapped() {
        let s = DeformationSignal::new(Vector3::zeros(), Vector3::new(-PI, 3.0 * PI, 0.5));
        for a in s.euler.iter() {
            assert!(*a > -PI && *a <= PI);
        }
        assert_eq!(s.euler.x, PI);
        // rotation of π about x: atan2 branch must not produce -π
        let d = decompose(&Pose::from_axis_angle(Vector3::x(), PI));
        assert!(d.euler.x > -PI && d.euler.x <= PI);
    }

    #[test]
    fn invalid_rotation_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.0 + 1e-6;
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity(), Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn wrench_rejects_non_finite() {
        assert!(Wrench::new(Vector3::new(0.0, f64::INFINITY, 0.0), Vector3::zeros()).is_err());
        let err = Wrench::from_vector6(&Vector6::new(0.0, 0.0, 0.0, 0.0, f64::NAN, 0.0));
        assert!(matches!(err, Err(Error::NonFiniteWrench { component: 4, .. })));
    }

    #[test]
    fn mean_pose_examples() {
        assert!(mean_pose(&[]).is_err());
        let p = Pose::from_euler_xyz(Vector3::new(0.3, -0.2, 1.0), Vector3::new(1.0, 2.0, 3.0));
        assert!(mean_pose(&[p, p, p]).unwrap().max_abs_diff(&p) < 1e-12);
        let a = Pose::from_axis_angle(Vector3::z(), 0.2);
        let b = Pose::from_axis_angle(Vector3::z(), -0.2);
        assert!(mean_pose(&[a, b]).unwrap().max_abs_diff(&Pose::identity()) < 1e-12);
    }

    #[test]
    fn pose_serializes_as_twelve_numbers() {
        let p = Pose::from_euler_xyz(Vector3::new(0.1, -0.2, 0.3), Vector3::new(0.01, 0.02, 0.03));
        let json = serde_json::to_string(&p).unwrap();
        let v: Vec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(v.len(), 12);
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}

//! Ground-truth model of the compliant wrist.
//!
//! A wrench deforms the core through the linear stiffness model
//! `wrench = K * signal`; the simulator turns that deformation into the tag
//! pose a wrist camera would report, with quantization and jitter noise.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::sensitivity;
use crate::error::{Error, Result};
use crate::se3::{decompose, deformation, mean_pose, recompose, DeformationSignal, Pose, Wrench};

pub const GRAVITY: f64 = 9.81;

/// Unloaded frames averaged when zeroing the signal.
pub const REFERENCE_FRAMES: usize = 400;

/// Lateral translational stiffness (N/mm), fitted so that a 0.8 kg payload on
/// a 68 mm lever tilted to 90° displaces the core by 3.312 mm.
pub const DEFAULT_LATERAL_STIFFNESS: f64 = 2.375_329_347_826_087_3;
/// Axial translational stiffness (N/mm).
pub const DEFAULT_AXIAL_STIFFNESS: f64 = 14.0;
/// Bending stiffness about x and y (N·m/rad).
pub const DEFAULT_BENDING_STIFFNESS: [f64; 2] = [24.0, 22.0];
/// Torsional stiffness about z (N·m/rad).
pub const DEFAULT_TORSIONAL_STIFFNESS: f64 = 3.0;
/// Shear-bending coupling magnitude (mixed units), off-diagonal in the (y, θx) and (x, θy) pairs.
pub const DEFAULT_BENDING_COUPLING: f64 = 0.3;

/// Payload used for the stability anchor.
pub const STABILITY_PAYLOAD_KG: f64 = 0.8;
pub const STABILITY_LEVER_ARM_M: f64 = 0.068;

/// 6x6 map from a deformation signal (mm, rad) to a wrench (N, N·m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StiffnessMatrix {
    k: Matrix6<f64>,
    compliance: Matrix6<f64>,
}

impl StiffnessMatrix {
    /// Largest accepted 2-norm condition number.
    pub const MAX_CONDITION: f64 = 1e12;

    pub fn new(k: Matrix6<f64>) -> Result<Self> {
        if !k.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidStiffness("non-finite entry".into()));
        }
        let cond = condition_number(&k);
        if !cond.is_finite() || cond > Self::MAX_CONDITION {
            return Err(Error::InvalidStiffness(format!(
                "singular or ill-conditioned (condition number {cond:e})"
            )));
        }
        let compliance = k
            .try_inverse()
            .ok_or_else(|| Error::InvalidStiffness("matrix is not invertible".into()))?;
        Ok(Self { k, compliance })
    }

    /// The default wrist: diagonal-dominant SPD, with a shear-bending
    /// coupling between lateral translation and the matching tilt.
    pub fn default_wrist() -> Self {
        let mut k = Matrix6::from_diagonal(&Vector6::new(
            DEFAULT_LATERAL_STIFFNESS,
            DEFAULT_LATERAL_STIFFNESS,
            DEFAULT_AXIAL_STIFFNESS,
            DEFAULT_BENDING_STIFFNESS[0],
            DEFAULT_BENDING_STIFFNESS[1],
            DEFAULT_TORSIONAL_STIFFNESS,
        ));
        k[(1, 3)] = -DEFAULT_BENDING_COUPLING;
        k[(3, 1)] = -DEFAULT_BENDING_COUPLING;
        k[(0, 4)] = DEFAULT_BENDING_COUPLING;
        k[(4, 0)] = DEFAULT_BENDING_COUPLING;
        Self::new(k).expect("default stiffness is well conditioned")
    }

    pub fn identity() -> Self {
        Self::new(Matrix6::identity()).expect("identity is invertible")
    }

    pub fn from_diagonal(d: &Vector6<f64>) -> Result<Self> {
        Self::new(Matrix6::from_diagonal(d))
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.k
    }

    pub fn compliance(&self) -> &Matrix6<f64> {
        &self.compliance
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.k * factor)
    }

    pub fn is_symmetric_positive_definite(&self) -> bool {
        let sym = (self.k - self.k.transpose()).amax() <= 1e-12 * self.k.amax();
        sym && self.k.cholesky().is_some()
    }

    pub fn condition_number(&self) -> f64 {
        condition_number(&self.k)
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        (0..6)
            .flat_map(|r| (0..6).map(move |c| (r, c)))
            .map(|(r, c)| self.k[(r, c)])
            .collect()
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 36 {
            return Err(Error::InvalidStiffness(format!(
                "expected 36 numbers, got {}",
                values.len()
            )));
        }
        Self::new(Matrix6::from_row_slice(values))
    }
}

impl Default for StiffnessMatrix {
    fn default() -> Self {
        Self::default_wrist()
    }
}

impl TryFrom<Vec<f64>> for StiffnessMatrix {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_row_major(&v)
    }
}

impl From<StiffnessMatrix> for Vec<f64> {
    fn from(k: StiffnessMatrix) -> Self {
        k.to_row_major()
    }
}

fn condition_number(k: &Matrix6<f64>) -> f64 {
    let sv = k.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Deformation produced by a wrench: `K^-1 * w`.
pub fn deform(k: &StiffnessMatrix, w: &Wrench) -> DeformationSignal {
    DeformationSignal::from_vector6(&(k.compliance() * w.as_vector6()))
}

/// Geometry of the wrist camera and fiducial tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Physical tag width (mm).
    pub tag_width_mm: f64,
    /// Tag width in the image (px).
    pub tag_image_width_px: f64,
    /// Sub-pixel detection resolution (px).
    pub pixel_resolution: f64,
    /// Half-diagonal of the tag image patch (px).
    pub patch_half_diagonal_px: f64,
    /// Probe angle for the chord-length relation (rad).
    pub probe_angle_rad: f64,
    /// Camera frame expressed in the flange frame (hand-eye extrinsic).
    pub extrinsic: Pose,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("tag_width_mm", self.tag_width_mm),
            ("tag_image_width_px", self.tag_image_width_px),
            ("pixel_resolution", self.pixel_resolution),
            ("patch_half_diagonal_px", self.patch_half_diagonal_px),
            ("probe_angle_rad", self.probe_angle_rad),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidCamera(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Metric size (mm) of one pixel-resolution quantum on the tag plane.
    pub fn translation_quantum_mm(&self) -> f64 {
        self.tag_width_mm / self.tag_image_width_px * self.pixel_resolution
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            tag_width_mm: 20.0,
            tag_image_width_px: 80.0,
            pixel_resolution: 0.25,
            patch_half_diagonal_px: 40.0 * SQRT_2,
            probe_angle_rad: FRAC_PI_4,
            // camera 50 mm off-axis, 30 mm below the flange, looking back along -z
            extrinsic: Pose::new(
                Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0),
                Vector3::new(0.05, 0.0, -0.03),
            )
            .expect("valid extrinsic"),
        }
    }
}

/// Cyclic-load degradation of the core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgingState {
    pub cycles: u64,
    pub stiffness_scale: f64,
    pub drift_offset: DeformationSignal,
}

/// Stiffness loss reached at the reference cycle count.
pub const AGING_SCALE_LOSS: f64 = 0.15;
pub const AGING_EXPONENT: f64 = 0.7;
pub const AGING_REFERENCE_CYCLES: f64 = 20_000.0;
/// Plastic axial set (mm) at the reference cycle count.
pub const AGING_DRIFT_MM: f64 = 0.05;

impl AgingState {
    pub fn fresh() -> Self {
        Self::at_cycles(0)
    }

    /// State after `cycles` load cycles: `scale = 1 - 0.15 (c/20000)^0.7`,
    /// axial plastic set `0.05 mm * c/20000` (compressive, -z).
    pub fn at_cycles(cycles: u64) -> Self {
        let ratio = cycles as f64 / AGING_REFERENCE_CYCLES;
        Self {
            cycles,
            stiffness_scale: 1.0 - AGING_SCALE_LOSS * ratio.powf(AGING_EXPONENT),
            drift_offset: DeformationSignal::new(
                Vector3::new(0.0, 0.0, -AGING_DRIFT_MM * ratio),
                Vector3::zeros(),
            ),
        }
    }
}

impl Default for AgingState {
    fn default() -> Self {
        Self::fresh()
    }
}

pub fn age(aging: &AgingState, additional_cycles: u64) -> AgingState {
    AgingState::at_cycles(aging.cycles + additional_cycles)
}

/// Lateral displacement (mm) of the core center under a tilted payload.
///
/// The wrist axis is tilted by `angle_rad` about its x axis, so gravity acts
/// along `(0, sin a, -cos a)` in the wrist frame on a payload hanging
/// `lever_arm_m` below the core along -z.
pub fn payload_displacement(
    k: &StiffnessMatrix,
    payload_kg: f64,
    lever_arm_m: f64,
    angle_rad: f64,
) -> f64 {
    let weight = payload_kg * GRAVITY;
    let force = Vector3::new(0.0, angle_rad.sin(), -angle_rad.cos()) * weight;
    let torque = Vector3::new(0.0, 0.0, -lever_arm_m).cross(&force);
    let w = Wrench::new(force, torque).expect("finite gravity wrench");
    let s = deform(k, &w);
    s.translation_mm.x.hypot(s.translation_mm.y)
}

/// Convenience for the stability table: default payload and lever arm.
pub fn stability_displacement(k: &StiffnessMatrix, angle_deg: f64) -> f64 {
    let angle = angle_deg.to_radians().clamp(0.0, FRAC_PI_2);
    payload_displacement(k, STABILITY_PAYLOAD_KG, STABILITY_LEVER_ARM_M, angle)
}

/// Simulated wrist: stiffness, aging, camera and the fixed mounting frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WristSimulator {
    pub stiffness: StiffnessMatrix,
    pub camera: CameraModel,
    #[serde(default)]
    pub aging: AgingState,
    /// Unloaded pose of the lower-connector center in the flange frame.
    pub rest_connector_in_flange: Pose,
    /// Lower-connector center expressed in the tag frame (the CAD alignment).
    pub connector_in_tag: Pose,
    /// When false, observations are exact.
    #[serde(default = "default_true")]
    pub noise: bool,
}

fn default_true() -> bool {
    true
}

impl Default for WristSimulator {
    fn default() -> Self {
        Self {
            stiffness: StiffnessMatrix::default_wrist(),
            camera: CameraModel::default(),
            aging: AgingState::fresh(),
            rest_connector_in_flange: Pose::from_translation(Vector3::new(0.0, 0.0, -0.06)),
            connector_in_tag: Pose::new(
                Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
                Vector3::new(0.0, 0.0, 0.004),
            )
            .expect("valid alignment"),
            noise: true,
        }
    }
}

impl WristSimulator {
    pub fn noiseless(mut self) -> Self {
        self.noise = false;
        self
    }

    pub fn with_aging(mut self, aging: AgingState) -> Self {
        self.aging = aging;
        self
    }

    /// Stiffness after aging: `stiffness_scale * K`.
    pub fn effective_stiffness(&self) -> StiffnessMatrix {
        self.stiffness
            .scaled(self.aging.stiffness_scale)
            .expect("positive scale keeps K invertible")
    }

    /// Deformation of the core under `w`, including plastic drift.
    pub fn true_signal(&self, w: &Wrench) -> DeformationSignal {
        let elastic = self.effective_stiffness().compliance() * w.as_vector6();
        DeformationSignal::from_vector6(&(elastic + self.aging.drift_offset.as_vector6()))
    }

    /// Tag pose in the camera frame for a given core deformation, without noise.
    pub fn tag_in_cam_for(&self, signal: &DeformationSignal) -> Pose {
        let connector = self.rest_connector_in_flange.compose(&recompose(signal));
        let tag = connector.compose(&self.connector_in_tag.inverse());
        self.camera.extrinsic.inverse().compose(&tag)
    }

    /// Tag pose in the camera frame when nothing loads the wrist and it has not aged.
    pub fn unloaded_tag_in_cam(&self) -> Pose {
        self.tag_in_cam_for(&DeformationSignal::zero())
    }

    /// Simulated camera observation of the tag under wrench `w`.
    ///
    /// Translation gets Gaussian jitter (σ = half a quantum) and is then
    /// quantized to the metric quantum of the pixel resolution; rotation gets
    /// independent Gaussian jitter about the tag axes at the rotational
    /// sensitivity of the camera.
    pub fn observe<R: Rng + ?Sized>(&self, w: &Wrench, rng: &mut R) -> Pose {
        let clean = self.tag_in_cam_for(&self.true_signal(w));
        if !self.noise {
            return clean;
        }
        let q_m = self.camera.translation_quantum_mm() / 1000.0;
        let jitter = Normal::new(0.0, 0.5 * q_m).expect("positive sigma");
        let t = clean.translation().map(|v| {
            let noisy = v + jitter.sample(rng);
            (noisy / q_m).round() * q_m
        });
        let s = sensitivity(&self.camera).0;
        let angles = Vector3::new(
            s[3] * standard_normal(rng),
            s[4] * standard_normal(rng),
            s[5] * standard_normal(rng),
        );
        let r = clean.rotation() * Pose::from_euler_xyz(angles, Vector3::zeros()).rotation();
        Pose::new(r, t).expect("product of rotations stays orthonormal")
    }

    /// Zeroing pose: the chordal mean of `REFERENCE_FRAMES` unloaded observations.
    pub fn reference_observation<R: Rng + ?Sized>(&self, rng: &mut R) -> Pose {
        let frames: Vec<Pose> = (0..REFERENCE_FRAMES)
            .map(|_| self.observe(&Wrench::zero(), rng))
            .collect();
        mean_pose(&frames).expect("non-empty frame set")
    }

    pub fn observe_seeded(&self, w: &Wrench, seed: u64) -> Pose {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.observe(w, &mut rng)
    }

    /// Signal recovered from a tag observation by the exact inverse chain
    /// (no filtering), referenced to the fresh unloaded pose.
    pub fn recover_signal(&self, tag_in_cam: &Pose) -> DeformationSignal {
        let connector = self
            .camera
            .extrinsic
            .compose(tag_in_cam)
            .compose(&self.connector_in_tag);
        decompose(&deformation(&self.rest_connector_in_flange, &connector))
    }

    /// Per-axis translation noise variance (mm²) of an observation: Gaussian
    /// jitter plus the uniform quantization error, `q²/4 + q²/12`.
    pub fn translation_noise_variance_mm2(&self) -> f64 {
        let q = self.camera.translation_quantum_mm();
        q * q / 4.0 + q * q / 12.0
    }

    /// Covariance (signal units) of the observation noise after the frame
    /// chain, linearized about the unloaded pose.
    pub fn signal_noise_covariance(&self) -> Matrix6<f64> {
        if !self.noise {
            return Matrix6::zeros();
        }
        let s = sensitivity(&self.camera).0;
        let rot_cov = Matrix3::from_diagonal(&Vector3::new(s[3] * s[3], s[4] * s[4], s[5] * s[5]));
        let a_r = self.connector_in_tag.rotation();
        let lever_mm = self.connector_in_tag.translation() * 1000.0;
        let lever_x = lever_mm.cross_matrix();
        // translation: A_R^T (R_c^T n_t - [a]x w); rotation: A_R^T w
        let tt = a_r.transpose()
            * (Matrix3::identity() * self.translation_noise_variance_mm2()
                + lever_x * rot_cov * lever_x.transpose())
            * a_r;
        let tr = a_r.transpose() * (-lever_x * rot_cov) * a_r;
        let rr = a_r.transpose() * rot_cov * a_r;
        let mut cov = Matrix6::zeros();
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&tt);
        cov.fixed_view_mut::<3, 3>(0, 3).copy_from(&tr);
        cov.fixed_view_mut::<3, 3>(3, 0).copy_from(&tr.transpose());
        cov.fixed_view_mut::<3, 3>(3, 3).copy_from(&rr);
        cov
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

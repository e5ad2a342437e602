//! Kinematic and force model of the hand.
//!
//! Everything is computed in the grasp plane. Finger 1 (the thumb) pivots at
//! the origin; its open heading is +y and increasing `f1_angle` rotates it
//! clockwise toward the flipper. The flipper pivot sits `motor_axis_separation`
//! away along a bearing tilted from the thumb heading by the inter-motor
//! offset. The flipper center axis points along +x and a positive
//! `flipper_angle` rotates the bridge counter-clockwise, toward Finger 1.
//!
//! Fingers 2 and 3 ride on the bridge with their tips symmetric about the
//! grasp plane, so in projection they share one tip site.
//!
//! Apertures are surface-to-surface openings: the distance between the two
//! contact sites on the finger centerlines minus `finger_thickness`, clamped
//! at zero.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::grasp_controller::GraspMode;

/// Heading of the thumb at `f1_angle == 0`, degrees from +x.
const THUMB_OPEN_HEADING: f64 = 90.0;
/// Heading of the flipper center axis relative to the thumb open heading.
const FLIPPER_AXIS_FROM_THUMB: f64 = -90.0;

/// Tolerance used when checking angles against joint limits.
pub const LIMIT_EPSILON: f64 = 1e-9;

/// Calibration succeeds only below this residual RMS, mm.
pub const CALIBRATION_RMS_LIMIT: f64 = 1.0;

const MIN_CALIBRATED_LENGTH: f64 = 1.0;

const CALIBRATED_GEOMETRY_JSON: &str = include_str!("../data/geometry.calibrated.json");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HandError {
    #[error("{joint} angle {angle:.4}° outside [{min}, {max}]")]
    LimitViolation {
        joint: Joint,
        angle: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("geometry file: {0}")]
    Io(String),
}

/// The three fingers. Finger 1 is the thumb; 2 and 3 form the flipper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    F1,
    F2,
    F3,
}

impl Finger {
    pub const ALL: [Finger; 3] = [Finger::F1, Finger::F2, Finger::F3];

    pub fn index(self) -> u8 {
        match self {
            Finger::F1 => 1,
            Finger::F2 => 2,
            Finger::F3 => 3,
        }
    }

    /// The actuated joint that drives this finger.
    pub fn joint(self) -> Joint {
        match self {
            Finger::F1 => Joint::F1,
            Finger::F2 | Finger::F3 => Joint::Flipper,
        }
    }
}

impl fmt::Display for Finger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.index())
    }
}

/// The two actuated joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Joint {
    F1,
    Flipper,
}

impl fmt::Display for Joint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Joint::F1 => f.write_str("f1"),
            Joint::Flipper => f.write_str("flipper"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    #[default]
    Position,
    Torque,
}

/// Closed angle interval in degrees. Serialized as `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct AngleRange {
    pub min: f64,
    pub max: f64,
}

impl AngleRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min - LIMIT_EPSILON && angle <= self.max + LIMIT_EPSILON
    }

    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.min, self.max)
    }
}

impl From<[f64; 2]> for AngleRange {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<AngleRange> for [f64; 2] {
    fn from(r: AngleRange) -> Self {
        [r.min, r.max]
    }
}

/// Calibrated kinematic parameters of the hand. Lengths in mm, angles in
/// degrees, masses in grams (metadata only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandGeometry {
    /// Pivot to fingertip, identical for all three fingers.
    pub finger_length: f64,
    /// Pivot to the mid-side contact point used in the lateral grasp.
    pub side_contact_offset: f64,
    /// Distance between the thumb pivot and the flipper pivot.
    pub motor_axis_separation: f64,
    /// Finger diameter; the opening is measured between finger surfaces.
    pub finger_thickness: f64,
    pub inter_motor_offset: f64,
    pub gear_ratio_f1: f64,
    pub gear_ratio_flipper: f64,
    pub f1_joint_range: AngleRange,
    pub flipper_range: AngleRange,
    pub finger_mass: f64,
    pub hand_mass: f64,
}

impl HandGeometry {
    /// Uncalibrated template: fixed angles, gearing and ranges with rough
    /// lengths. Calibration only touches the three lengths.
    pub fn nominal() -> Self {
        Self {
            finger_length: 80.0,
            side_contact_offset: 60.0,
            motor_axis_separation: 25.0,
            finger_thickness: 20.0,
            inter_motor_offset: 15.0,
            gear_ratio_f1: 3.0,
            gear_ratio_flipper: 1.0,
            f1_joint_range: AngleRange::new(0.0, 100.0),
            flipper_range: AngleRange::new(-50.0, 40.0),
            finger_mass: 37.0,
            hand_mass: 361.0,
        }
    }

    /// The shipped calibrated geometry (`data/geometry.calibrated.json`).
    pub fn calibrated() -> Self {
        Self::from_json_str(CALIBRATED_GEOMETRY_JSON)
            .expect("shipped geometry.calibrated.json is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self, HandError> {
        let geom: Self = serde_json::from_str(s).map_err(|e| HandError::Io(e.to_string()))?;
        geom.validate()?;
        Ok(geom)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("geometry serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HandError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HandError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HandError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_pretty() + "\n")
            .map_err(|e| HandError::Io(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), HandError> {
        let lengths = [
            ("finger_length", self.finger_length),
            ("side_contact_offset", self.side_contact_offset),
            ("motor_axis_separation", self.motor_axis_separation),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HandError::InvalidGeometry(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.finger_thickness >= 0.0 && self.finger_thickness.is_finite()) {
            return Err(HandError::InvalidGeometry("finger_thickness must be >= 0".into()));
        }
        if !(self.gear_ratio_f1 > 0.0 && self.gear_ratio_flipper > 0.0) {
            return Err(HandError::InvalidGeometry("gear ratios must be positive".into()));
        }
        if (self.f1_joint_range.span() - 100.0).abs() > LIMIT_EPSILON {
            return Err(HandError::InvalidGeometry(format!(
                "f1_joint_range span must be 100°, got {}",
                self.f1_joint_range.span()
            )));
        }
        if (self.flipper_range.span() - 90.0).abs() > LIMIT_EPSILON {
            return Err(HandError::InvalidGeometry(format!(
                "flipper_range span must be 90°, got {}",
                self.flipper_range.span()
            )));
        }
        for mode in GraspMode::ALL {
            if !self.flipper_range.contains(mode.setpoint()) {
                return Err(HandError::InvalidGeometry(format!(
                    "flipper_range does not contain the {mode} setpoint {}°",
                    mode.setpoint()
                )));
            }
        }
        Ok(())
    }

    pub fn range(&self, joint: Joint) -> AngleRange {
        match joint {
            Joint::F1 => self.f1_joint_range,
            Joint::Flipper => self.flipper_range,
        }
    }

    pub fn gear_ratio(&self, joint: Joint) -> f64 {
        match joint {
            Joint::F1 => self.gear_ratio_f1,
            Joint::Flipper => self.gear_ratio_flipper,
        }
    }

    pub fn check_limit(&self, joint: Joint, angle: f64) -> Result<(), HandError> {
        let range = self.range(joint);
        if angle.is_finite() && range.contains(angle) {
            Ok(())
        } else {
            Err(HandError::LimitViolation {
                joint,
                angle,
                min: range.min,
                max: range.max,
            })
        }
    }

    pub fn flipper_pivot(&self) -> Vector2<f64> {
        let bearing = (THUMB_OPEN_HEADING - self.inter_motor_offset).to_radians();
        Vector2::new(bearing.cos(), bearing.sin()) * self.motor_axis_separation
    }
}

/// Fingertip force limits (N).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSpec {
    pub max_normal_tip: f64,
    pub max_tangential_f1: f64,
    pub max_tangential_flipper: f64,
}

impl ForceSpec {
    pub const TABLE: ForceSpec = ForceSpec {
        max_normal_tip: 2.5,
        max_tangential_f1: 6.3,
        max_tangential_flipper: 2.2,
    };

    pub fn tangential_cap(&self, finger: Finger) -> f64 {
        match finger {
            Finger::F1 => self.max_tangential_f1,
            Finger::F2 | Finger::F3 => self.max_tangential_flipper,
        }
    }

    /// True when the tangential caps are in the gear ratio within `tolerance`.
    pub fn consistent_with_gearing(&self, gear_ratio_f1: f64, tolerance: f64) -> bool {
        let ratio = self.max_tangential_f1 / self.max_tangential_flipper;
        ratio >= gear_ratio_f1 * (1.0 - tolerance) && ratio <= gear_ratio_f1 * (1.0 + tolerance)
    }
}

impl Default for ForceSpec {
    fn default() -> Self {
        Self::TABLE
    }
}

/// Joint-side state. Angles in degrees; torque is joint-side, N·mm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub f1_angle: f64,
    pub flipper_angle: f64,
    pub f1_mode: ControlMode,
    pub flipper_mode: ControlMode,
    pub f1_torque_setpoint: f64,
}

impl JointState {
    pub fn at(f1_angle: f64, flipper_angle: f64) -> Self {
        Self {
            f1_angle,
            flipper_angle,
            ..Self::default()
        }
    }

    pub fn angle(&self, joint: Joint) -> f64 {
        match joint {
            Joint::F1 => self.f1_angle,
            Joint::Flipper => self.flipper_angle,
        }
    }

    pub fn check_limits(&self, geom: &HandGeometry) -> Result<(), HandError> {
        geom.check_limit(Joint::F1, self.f1_angle)?;
        geom.check_limit(Joint::Flipper, self.flipper_angle)
    }
}

/// Motor-side state. Angles in degrees at the motor shaft; torque N·mm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorState {
    pub f1_angle: f64,
    pub flipper_angle: f64,
    pub f1_mode: ControlMode,
    pub flipper_mode: ControlMode,
    pub f1_torque_setpoint: f64,
}

pub fn joint_to_motor(joint: &JointState, geom: &HandGeometry) -> Result<MotorState, HandError> {
    joint.check_limits(geom)?;
    Ok(MotorState {
        f1_angle: joint.f1_angle * geom.gear_ratio_f1,
        flipper_angle: joint.flipper_angle * geom.gear_ratio_flipper,
        f1_mode: joint.f1_mode,
        flipper_mode: joint.flipper_mode,
        f1_torque_setpoint: joint.f1_torque_setpoint / geom.gear_ratio_f1,
    })
}

pub fn motor_to_joint(motor: &MotorState, geom: &HandGeometry) -> Result<JointState, HandError> {
    let joint = JointState {
        f1_angle: motor.f1_angle / geom.gear_ratio_f1,
        flipper_angle: motor.flipper_angle / geom.gear_ratio_flipper,
        f1_mode: motor.f1_mode,
        flipper_mode: motor.flipper_mode,
        f1_torque_setpoint: motor.f1_torque_setpoint * geom.gear_ratio_f1,
    };
    joint.check_limits(geom)?;
    Ok(joint)
}

/// Centerline contact sites `(finger1_site, flipper_site)` for a mode.
pub fn contact_sites(
    mode: GraspMode,
    f1_angle: f64,
    flipper_angle: f64,
    geom: &HandGeometry,
) -> (Vector2<f64>, Vector2<f64>) {
    let radius = match mode {
        GraspMode::Pinch | GraspMode::Opposition => geom.finger_length,
        GraspMode::Lateral => geom.side_contact_offset,
    };
    let thumb_heading = (THUMB_OPEN_HEADING - f1_angle).to_radians();
    let flipper_heading = (THUMB_OPEN_HEADING + FLIPPER_AXIS_FROM_THUMB + flipper_angle).to_radians();
    let thumb = Vector2::new(thumb_heading.cos(), thumb_heading.sin()) * radius;
    let flipper =
        geom.flipper_pivot() + Vector2::new(flipper_heading.cos(), flipper_heading.sin()) * radius;
    (thumb, flipper)
}

/// Aperture without limit checks; used for sweeps and the optimizer.
pub fn aperture_unchecked(mode: GraspMode, f1_angle: f64, flipper_angle: f64, geom: &HandGeometry) -> f64 {
    let (a, b) = contact_sites(mode, f1_angle, flipper_angle, geom);
    ((a - b).norm() - geom.finger_thickness).max(0.0)
}

/// Opening between the mode's two contact sites, mm.
pub fn aperture(mode: GraspMode, joint: &JointState, geom: &HandGeometry) -> Result<f64, HandError> {
    joint.check_limits(geom)?;
    Ok(aperture_unchecked(mode, joint.f1_angle, joint.flipper_angle, geom))
}

/// Aperture with Finger 1 fully open and the flipper at the mode setpoint.
pub fn max_aperture(mode: GraspMode, geom: &HandGeometry) -> f64 {
    aperture_unchecked(mode, geom.f1_joint_range.min, mode.setpoint(), geom)
}

/// Tangential fingertip force before saturation, N.
pub fn tangential_force_unsaturated(
    motor_torque: f64,
    finger: Finger,
    geom: &HandGeometry,
) -> Result<f64, HandError> {
    if !(motor_torque >= 0.0 && motor_torque.is_finite()) {
        return Err(HandError::InvalidArgument(format!(
            "motor torque must be a non-negative number, got {motor_torque}"
        )));
    }
    Ok(motor_torque * geom.gear_ratio(finger.joint()) / geom.finger_length)
}

/// Tangential fingertip force for a motor torque (N·mm), saturated at the
/// finger's cap.
pub fn fingertip_force(motor_torque: f64, finger: Finger, geom: &HandGeometry) -> Result<f64, HandError> {
    let raw = tangential_force_unsaturated(motor_torque, finger, geom)?;
    Ok(raw.min(ForceSpec::TABLE.tangential_cap(finger)))
}

/// Motor torque that produces `force` N at the fingertip (inverse of the
/// unsaturated force map).
pub fn motor_torque_for_force(force: f64, finger: Finger, geom: &HandGeometry) -> f64 {
    force * geom.finger_length / geom.gear_ratio(finger.joint())
}

/// Observed fully-open apertures, one per mode, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureTargets {
    pub pinch: f64,
    pub lateral: f64,
    pub opposition: f64,
}

impl ApertureTargets {
    /// The three openings reported for the real hand.
    pub const REPORTED: ApertureTargets = ApertureTargets {
        pinch: 63.0,
        lateral: 80.0,
        opposition: 72.0,
    };

    pub fn new(pinch: f64, lateral: f64, opposition: f64) -> Self {
        Self {
            pinch,
            lateral,
            opposition,
        }
    }

    pub fn get(&self, mode: GraspMode) -> f64 {
        match mode {
            GraspMode::Pinch => self.pinch,
            GraspMode::Lateral => self.lateral,
            GraspMode::Opposition => self.opposition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub geometry: HandGeometry,
    /// Fitted minus observed aperture, ordered pinch, lateral, opposition.
    pub residuals: [f64; 3],
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("invalid calibration targets: {0}")]
    InvalidTargets(String),
    #[error("calibration did not converge: best residual RMS {best_rms:.3} mm (residuals {residuals:?})")]
    NotConverged { best_rms: f64, residuals: [f64; 3] },
}

/// Fitted-minus-target residuals for the length triple
/// `[finger_length, side_contact_offset, motor_axis_separation]`.
pub fn aperture_residuals(params: [f64; 3], template: &HandGeometry, targets: &ApertureTargets) -> [f64; 3] {
    let geom = with_lengths(template, params);
    GraspMode::ALL.map(|mode| max_aperture(mode, &geom) - targets.get(mode))
}

fn with_lengths(template: &HandGeometry, params: [f64; 3]) -> HandGeometry {
    HandGeometry {
        finger_length: params[0],
        side_contact_offset: params[1],
        motor_axis_separation: params[2],
        ..template.clone()
    }
}

/// Fit the three free lengths of the nominal template to observed apertures.
pub fn calibrate_geometry(targets: &ApertureTargets) -> Result<Calibration, CalibrationError> {
    calibrate_geometry_from(&HandGeometry::nominal(), targets)
}

/// Least-squares fit of `{finger_length, side_contact_offset,
/// motor_axis_separation}`; angles, gearing and thickness come from
/// `template`.
pub fn calibrate_geometry_from(
    template: &HandGeometry,
    targets: &ApertureTargets,
) -> Result<Calibration, CalibrationError> {
    for mode in GraspMode::ALL {
        let t = targets.get(mode);
        if !(t > 0.0 && t.is_finite()) {
            return Err(CalibrationError::InvalidTargets(format!(
                "{mode} aperture must be a positive length, got {t}"
            )));
        }
    }

    let mut best: Option<([f64; 3], f64)> = None;
    for &l in &[40.0, 70.0, 100.0, 130.0] {
        for &c in &[20.0, 50.0, 80.0] {
            for &d in &[5.0, 25.0, 50.0] {
                let (p, cost) = levenberg_marquardt([l, c, d], template, targets);
                if best.is_none_or(|(_, b)| cost < b) {
                    best = Some((p, cost));
                }
            }
        }
    }
    let (params, _) = best.expect("at least one start");
    let residuals = aperture_residuals(params, template, targets);
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / 3.0).sqrt();
    if !(rms < CALIBRATION_RMS_LIMIT) {
        return Err(CalibrationError::NotConverged {
            best_rms: rms,
            residuals,
        });
    }
    let geometry = with_lengths(template, params);
    geometry.validate().map_err(|e| CalibrationError::InvalidTargets(e.to_string()))?;
    Ok(Calibration {
        geometry,
        residuals,
        rms,
    })
}

fn sum_sq(r: &[f64; 3]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn levenberg_marquardt(start: [f64; 3], template: &HandGeometry, targets: &ApertureTargets) -> ([f64; 3], f64) {
    let clamp = |p: [f64; 3]| p.map(|v| v.max(MIN_CALIBRATED_LENGTH));
    let mut p = clamp(start);
    let mut r = aperture_residuals(p, template, targets);
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;

    for _ in 0..300 {
        if cost < 1e-24 {
            break;
        }
        // Central-difference Jacobian.
        let mut jac = Matrix3::<f64>::zeros();
        for k in 0..3 {
            let h = 1e-6 * p[k].abs().max(1.0);
            let mut hi = p;
            let mut lo = p;
            hi[k] += h;
            lo[k] -= h;
            let rh = aperture_residuals(hi, template, targets);
            let rl = aperture_residuals(lo, template, targets);
            for i in 0..3 {
                jac[(i, k)] = (rh[i] - rl[i]) / (2.0 * h);
            }
        }
        let jt = jac.transpose();
        let jtj = jt * jac;
        let grad = jt * Vector3::from(r);
        if grad.norm() < 1e-14 {
            break;
        }

        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-9);
            }
            let Some(step) = damped.lu().solve(&(-grad)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = clamp([p[0] + step[0], p[1] + step[1], p[2] + step[2]]);
            let rc = aperture_residuals(candidate, template, targets);
            let cc = sum_sq(&rc);
            if cc < cost {
                let converged = (cost - cc) < 1e-15 * cost.max(1.0);
                p = candidate;
                r = rc;
                cost = cc;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !converged;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p, cost)
}

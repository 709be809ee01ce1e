//! Rigid transforms and the forklift kinematic chain.
//!
//! All frames are right-handed with x forward, y lateral-left, z up. The
//! chassis origin frame sits at the base of the mast. Angles are radians.
//!
//! Fork tilt is a rotation about the y axis using the right-hand rule, so
//! positive tilt pitches the blade tip *downward* (toward the ground ahead)
//! and negative tilt pitches it upward. A pallet resting on ground that
//! rises away from the machine therefore settles at a negative pitch, and
//! one on ground that falls away settles at a positive pitch. The same
//! convention applies to pallet pitch, surface slopes and all tilt deltas.
//!
//! Two kinematic chains matter:
//!
//! * camera: origin -> reach carriage -> inner mast -> depth camera. The
//!   inner mast rises as a piecewise-linear function of fork height, so the
//!   camera does not translate one-to-one with the fork.
//! * pallet gaze: origin -> reach carriage -> fork height -> fork tilt ->
//!   nominal pallet point. The tilt pivot sits at the fork heel.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Rotations must satisfy `‖RᵀR − I‖∞ ≤ ORTHONORMAL_TOL` and `det R = 1`
/// within the same tolerance to be accepted by [`RigidTransform::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Composition re-orthonormalizes its result when drift exceeds this.
const REORTHONORMALIZE_AT: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("rotation matrix is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation matrix is improper (det = {det:.6})")]
    ImproperRotation { det: f64 },
    #[error("fork height {value} is outside the mast polyline domain [{min}, {max}]")]
    HeightOutOfDomain { value: f64, min: f64, max: f64 },
    #[error("mast polyline invalid: {reason}")]
    BadPolyline { reason: String },
}

/// A proper rigid transform: orthonormal rotation plus translation.
///
/// The rotation is kept orthonormal as an invariant; constructors validate
/// and [`compose`] repairs accumulated drift by polar projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Builds a transform after checking the rotation for orthonormality
    /// and a positive unit determinant.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeomError> {
        let deviation = orthonormal_deviation(&rotation);
        if deviation > ORTHONORMAL_TOL {
            return Err(GeomError::NotOrthonormal { deviation });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(GeomError::ImproperRotation { det });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation about x (right-hand rule).
    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let rotation = Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
        Self { rotation, translation: Vector3::zeros() }
    }

    /// Rotation about y (right-hand rule). Positive angle tips the forward
    /// axis downward; this is the fork-tilt generator.
    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let rotation = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        Self { rotation, translation: Vector3::zeros() }
    }

    /// Rotation about z (right-hand rule).
    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self { rotation, translation: Vector3::zeros() }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Maps a point through the transform.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }
}

/// `‖RᵀR − I‖∞` over all nine entries.
pub fn orthonormal_deviation(rotation: &Matrix3<f64>) -> f64 {
    let residual = rotation.transpose() * rotation - Matrix3::identity();
    residual.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Nearest proper rotation by polar projection (SVD with sign correction).
fn polar_project(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("3x3 SVD always yields U");
    let vt = svd.v_t.expect("3x3 SVD always yields Vᵀ");
    let mut repaired = u * vt;
    if repaired.determinant() < 0.0 {
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        repaired = u * flip * vt;
    }
    repaired
}

/// `a ∘ b`: apply `b` first, then `a`. Re-orthonormalizes the product
/// rotation if drift from long chains exceeds the internal threshold.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let mut rotation = a.rotation * b.rotation;
    if orthonormal_deviation(&rotation) > REORTHONORMALIZE_AT {
        rotation = polar_project(&rotation);
    }
    RigidTransform { rotation, translation: a.rotation * b.translation + a.translation }
}

/// Joint values plus the fixed mounting transforms of one machine.
#[derive(Debug, Clone)]
pub struct KinematicConfig {
    /// Reach-carriage extension along x, meters.
    pub reach: f64,
    /// Fork heel height above ground, meters.
    pub fork_height: f64,
    /// Fork tilt about y, radians; positive tips the blade downward.
    pub fork_tilt: f64,
    /// Camera mount relative to the inner-mast frame.
    pub camera_on_mast: RigidTransform,
    /// Nominal pallet point relative to the tilted fork frame.
    pub gaze_on_fork: RigidTransform,
    /// Breakpoints `(fork_height, mast_displacement)` of the inner-mast
    /// lift curve. Exactly two segments; the second slope is 1/2.
    pub mast_polyline: Vec<(f64, f64)>,
}

impl KinematicConfig {
    /// Checks the polyline shape invariants: three strictly-increasing
    /// breakpoints and a second-segment slope of exactly 0.5.
    pub fn validate(&self) -> Result<(), GeomError> {
        validate_polyline(&self.mast_polyline)
    }
}

fn validate_polyline(polyline: &[(f64, f64)]) -> Result<(), GeomError> {
    if polyline.len() != 3 {
        return Err(GeomError::BadPolyline {
            reason: format!("expected 3 breakpoints (2 segments), got {}", polyline.len()),
        });
    }
    for pair in polyline.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(GeomError::BadPolyline {
                reason: format!(
                    "breakpoint heights must strictly increase ({} then {})",
                    pair[0].0, pair[1].0
                ),
            });
        }
    }
    let (h0, d0) = polyline[1];
    let (h1, d1) = polyline[2];
    let slope = (d1 - d0) / (h1 - h0);
    if (slope - 0.5).abs() > 1e-9 {
        return Err(GeomError::BadPolyline {
            reason: format!("second-segment slope must be 0.5, got {slope}"),
        });
    }
    Ok(())
}

/// Inner-mast displacement for a fork height, by linear interpolation over
/// the polyline. Heights outside the breakpoint domain are an error.
pub fn mast_from_height(fork_height: f64, polyline: &[(f64, f64)]) -> Result<f64, GeomError> {
    validate_polyline(polyline)?;
    let (min, _) = polyline[0];
    let (max, _) = polyline[polyline.len() - 1];
    if fork_height < min || fork_height > max {
        return Err(GeomError::HeightOutOfDomain { value: fork_height, min, max });
    }
    for pair in polyline.windows(2) {
        let (ha, da) = pair[0];
        let (hb, db) = pair[1];
        if fork_height <= hb {
            let t = (fork_height - ha) / (hb - ha);
            return Ok(da + t * (db - da));
        }
    }
    unreachable!("domain check guarantees a containing segment");
}

/// Camera pose in the chassis origin frame:
/// reach translation, then inner-mast lift, then the fixed camera mount.
pub fn camera_pose(cfg: &KinematicConfig) -> Result<RigidTransform, GeomError> {
    let mast = mast_from_height(cfg.fork_height, &cfg.mast_polyline)?;
    let reach = RigidTransform::from_translation(Vector3::new(cfg.reach, 0.0, 0.0));
    let lift = RigidTransform::from_translation(Vector3::new(0.0, 0.0, mast));
    Ok(compose(&compose(&reach, &lift), &cfg.camera_on_mast))
}

/// Nominal pallet pose in the chassis origin frame: reach, fork height,
/// tilt about the heel, then the fixed gaze offset.
pub fn pallet_pose(cfg: &KinematicConfig) -> RigidTransform {
    let reach = RigidTransform::from_translation(Vector3::new(cfg.reach, 0.0, 0.0));
    let lift = RigidTransform::from_translation(Vector3::new(0.0, 0.0, cfg.fork_height));
    let tilt = RigidTransform::rot_y(cfg.fork_tilt);
    compose(&compose(&compose(&reach, &lift), &tilt), &cfg.gaze_on_fork)
}

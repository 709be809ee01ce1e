//! Pallet alignment controller.
//!
//! The tracker captures a reference view of the load once, then every
//! control cycle registers the reference against the live cloud to estimate
//! how the pallet has pitched and dropped relative to the blade since
//! capture. Tilt corrections and descent commands are issued on alternating
//! cycles; the fork is ready for withdrawal when the heel switch has opened
//! and the relative tilt is inside a small threshold.
//!
//! All angles are radians, lengths meters, times seconds.

use nalgebra::Vector3;
use thiserror::Error;

use crate::cloud::{
    crop_bb, derive_seed, random_downsample, BoundingBox, PointCloud,
};
use crate::geom::{compose, RigidTransform};
use crate::icp::{icp_register, IcpError, IcpParams};

/// Stream tag for per-cycle downsample seeds.
const DOWNSAMPLE_STREAM: u64 = 0x54_52_41_43;

/// Controller phase. Only the tracker moves between `Acquire`, `Track`,
/// `ReadyToWithdraw` and `Halted`; the caller advances to `Withdrawing`
/// when it hands the fork to the withdrawal profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Waiting to capture the reference cloud.
    Acquire,
    /// Closed-loop tilt and descent control.
    Track,
    /// Switch open and tilt aligned; safe to start pulling back.
    ReadyToWithdraw,
    /// Withdrawal profile is driving the fork.
    Withdrawing,
    /// Reserved for a lowering maneuver that releases a snagged load; no
    /// transition in this controller produces it.
    LowerToRelease,
    /// Gave up after the halt timeout without reaching readiness.
    Halted,
}

impl Phase {
    /// Label used in log output.
    pub fn name(self) -> &'static str {
        match self {
            Phase::Acquire => "acquire",
            Phase::Track => "track",
            Phase::ReadyToWithdraw => "ready",
            Phase::Withdrawing => "withdrawing",
            Phase::LowerToRelease => "lower_to_release",
            Phase::Halted => "halted",
        }
    }
}

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("cropped cloud has {available} points, tracker needs {required}")]
    CloudTooSparse { available: usize, required: usize },
    #[error("registration failed: {0}")]
    Registration(#[from] IcpError),
}

/// Tuning for the tracking controller.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Control cycle period, seconds.
    pub cycle_period: f64,
    /// Descent commanded per height cycle while the heel switch is closed.
    pub descend_step: f64,
    /// Relative tilt magnitude treated as aligned, radians.
    pub delta_tilt_threshold: f64,
    /// Give up after this much elapsed time without readiness.
    pub halt_timeout: f64,
    /// Crop box around the load, chassis frame, used tight at capture.
    pub crop_box: BoundingBox,
    /// Margin added to the crop box on every later cycle so the load stays
    /// inside as it sinks.
    pub crop_dilation: f64,
    /// Downsample budget for cropped clouds.
    pub target_points: usize,
    /// Base seed for the per-cycle downsample streams.
    pub seed: u64,
    /// When false the tracker never commands tilt and the readiness gate
    /// reduces to the switch alone.
    pub tilt_control: bool,
    pub icp: IcpParams,
}

impl TrackerConfig {
    /// Defaults for everything except the crop box, which depends on where
    /// the load sits.
    pub fn new(crop_box: BoundingBox) -> Self {
        Self {
            cycle_period: 0.2,
            descend_step: 0.005,
            delta_tilt_threshold: 0.25_f64.to_radians(),
            halt_timeout: 30.0,
            crop_box,
            crop_dilation: 0.15,
            target_points: 4000,
            seed: 0,
            tilt_control: true,
            icp: IcpParams::default(),
        }
    }
}

/// Everything the tracker needs from the rig on one cycle.
#[derive(Debug, Clone)]
pub struct TrackerInput<'a> {
    /// Live depth cloud, camera frame.
    pub cloud: &'a PointCloud,
    /// Camera pose in the chassis frame right now.
    pub camera_pose: RigidTransform,
    /// Measured fork tilt, radians.
    pub fork_tilt: f64,
    /// Measured fork height, meters.
    pub fork_height: f64,
    /// Heel contact switch, closed while the pallet presses on the blade.
    pub limit_switch: bool,
}

/// Actuator references for one cycle. `None` holds the current reference.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrackerCommand {
    pub tilt_ref: Option<f64>,
    pub height_ref: Option<f64>,
}

/// Estimates produced by the latest successful registration.
#[derive(Debug, Clone, Copy)]
pub struct CycleEstimate {
    /// Pallet-minus-blade pitch change since capture, radians. This is the
    /// quantity the tilt loop drives to zero.
    pub delta_tilt: f64,
    /// Pallet height change since capture in the chassis frame, meters.
    pub delta_height: f64,
    /// Final registration RMS error, meters.
    pub icp_error: f64,
    pub icp_iterations: usize,
}

#[derive(Debug, Clone)]
struct Capture {
    cloud: PointCloud,
    camera_pose: RigidTransform,
    fork_tilt: f64,
    fork_height: f64,
}

/// Controller state carried across cycles.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub phase: Phase,
    pub cycle_count: u64,
    pub elapsed: f64,
    pub last: Option<CycleEstimate>,
    capture: Option<Capture>,
}

impl TrackerState {
    pub fn new() -> Self {
        Self { phase: Phase::Acquire, cycle_count: 0, elapsed: 0.0, last: None, capture: None }
    }

    /// Advances time after a cycle whose measurement failed, so skipped
    /// cycles still count against the halt timeout.
    pub fn after_skipped_cycle(&mut self, config: &TrackerConfig) {
        self.cycle_count += 1;
        self.elapsed += config.cycle_period;
        if self.phase == Phase::Track && self.elapsed >= config.halt_timeout {
            self.phase = Phase::Halted;
        }
    }
}

impl Default for TrackerState {
    fn default() -> Self {
        Self::new()
    }
}

/// Predicted transform from the capture-time camera frame to the current
/// one, assuming the load moved straight down with the fork.
///
/// The prediction is a pure vertical translation in the chassis frame by
/// the fork height change, wrapped into camera coordinates on both sides.
/// It absorbs mast-driven camera motion exactly, leaving registration only
/// the part of the motion the fork did not cause.
pub fn warm_start(
    camera_at_capture: &RigidTransform,
    camera_now: &RigidTransform,
    fork_height_change: f64,
) -> RigidTransform {
    let drop = RigidTransform::from_translation(Vector3::new(0.0, 0.0, fork_height_change));
    compose(&camera_now.inverse(), &compose(&drop, camera_at_capture))
}

/// Converts a camera-frame registration transform into pallet pitch and
/// height changes in the chassis frame.
///
/// The registration maps capture-time camera points onto current camera
/// points; conjugating by the camera poses yields the pallet motion as seen
/// from the chassis. Pitch is measured about the lateral axis with the same
/// sign as fork tilt (positive pitches the front edge down), height along
/// the vertical axis.
pub fn extract_delta(
    registration: &RigidTransform,
    camera_at_capture: &RigidTransform,
    camera_now: &RigidTransform,
) -> (f64, f64) {
    let motion = compose(camera_now, &compose(registration, &camera_at_capture.inverse()));
    let r = motion.rotation();
    let delta_tilt = r[(0, 2)].atan2(r[(2, 2)]);
    let delta_height = motion.translation().z;
    (delta_tilt, delta_height)
}

/// Runs one control cycle.
///
/// On success the state advances one cycle and the returned command holds
/// the references to apply until the next cycle. On error the state is
/// untouched; call [`TrackerState::after_skipped_cycle`] to burn the cycle.
/// Phases other than `Acquire` and `Track` always hold.
pub fn tracker_step(
    state: &mut TrackerState,
    config: &TrackerConfig,
    input: &TrackerInput,
) -> Result<TrackerCommand, TrackerError> {
    match state.phase {
        Phase::Acquire => {
            let cloud = prepare_cloud(state, config, input, false)?;
            state.capture = Some(Capture {
                cloud,
                camera_pose: input.camera_pose,
                fork_tilt: input.fork_tilt,
                fork_height: input.fork_height,
            });
            state.phase = Phase::Track;
            advance(state, config);
            Ok(TrackerCommand::default())
        }
        Phase::Track => {
            let live = prepare_cloud(state, config, input, true)?;
            let capture = state.capture.as_ref().expect("capture exists in Track");
            let init = warm_start(
                &capture.camera_pose,
                &input.camera_pose,
                input.fork_height - capture.fork_height,
            );
            let reg = icp_register(&capture.cloud, &live, &init, &config.icp)?;
            let (tilt_icp, delta_height) =
                extract_delta(&reg.transform, &capture.camera_pose, &input.camera_pose);
            // The raw estimate includes the fork's own commanded tilt since
            // capture; subtracting it leaves the pallet-relative part.
            let delta_tilt = tilt_icp - (input.fork_tilt - capture.fork_tilt);
            state.last = Some(CycleEstimate {
                delta_tilt,
                delta_height,
                icp_error: reg.final_error,
                icp_iterations: reg.iterations,
            });

            let aligned = !config.tilt_control || delta_tilt.abs() <= config.delta_tilt_threshold;
            if !input.limit_switch && aligned {
                state.phase = Phase::ReadyToWithdraw;
                advance(state, config);
                return Ok(TrackerCommand::default());
            }

            let mut command = TrackerCommand::default();
            if state.cycle_count % 2 == 0 {
                if input.limit_switch {
                    command.height_ref = Some(input.fork_height - config.descend_step);
                }
            } else if config.tilt_control && delta_tilt.abs() > config.delta_tilt_threshold {
                command.tilt_ref = Some(input.fork_tilt + delta_tilt);
            }
            advance(state, config);
            if state.phase == Phase::Halted {
                return Ok(TrackerCommand::default());
            }
            Ok(command)
        }
        _ => Ok(TrackerCommand::default()),
    }
}

fn advance(state: &mut TrackerState, config: &TrackerConfig) {
    state.cycle_count += 1;
    state.elapsed += config.cycle_period;
    if state.phase == Phase::Track && state.elapsed >= config.halt_timeout {
        state.phase = Phase::Halted;
    }
}

/// Crops the live cloud to the configured box (dilated after capture) and
/// downsamples to the target budget.
fn prepare_cloud(
    state: &TrackerState,
    config: &TrackerConfig,
    input: &TrackerInput,
    dilate: bool,
) -> Result<PointCloud, TrackerError> {
    let bb = if dilate { config.crop_box.dilated(config.crop_dilation) } else { config.crop_box };
    // The box lives in chassis coordinates and the cloud in camera
    // coordinates, so the box-to-cloud mapping is the inverse camera pose.
    let cropped = crop_bb(input.cloud, &bb, &input.camera_pose.inverse());
    if cropped.len() < config.icp.min_points {
        return Err(TrackerError::CloudTooSparse {
            available: cropped.len(),
            required: config.icp.min_points,
        });
    }
    if cropped.len() <= config.target_points {
        return Ok(cropped);
    }
    let seed = derive_seed(config.seed, DOWNSAMPLE_STREAM, state.cycle_count);
    random_downsample(&cropped, config.target_points, seed).map_err(|_| {
        TrackerError::CloudTooSparse { available: 0, required: config.target_points }
    })
}

//! Withdrawal profile: back the fork out along the channel axis.
//!
//! Once the pallet is grounded and the blade is free in the channel, the
//! fork must retreat while its heel height follows the channel line, which
//! falls or rises with the blade tilt locked at withdrawal start:
//!
//! `profile(s) = start_height - free_clearance + s * tan(start_tilt)`
//!
//! where `s` is the distance withdrawn so far. The `free_clearance` term
//! drops the ramp a few millimeters below the handover height: descent
//! stops the moment the heel switch opens, which can leave the blade still
//! kissing the channel ceiling, and backing out from there would lift the
//! load again. The height loop is proportional plus a feedforward of the
//! ramp slope, so the steady tracking error is zero rather than
//! `slope / kp`; travel runs at constant speed until the target distance
//! is reached. Odometry must be monotone: a regressing `s` means the drive
//! or encoder failed, and the run latches into a fault with all rates
//! zeroed.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WithdrawError {
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
}

/// Tuning for a withdrawal run.
#[derive(Debug, Clone, Copy)]
pub struct WithdrawParams {
    /// Total travel before the blade is declared clear, m.
    pub target_distance: f64,
    /// Constant retreat speed, m/s.
    pub back_speed: f64,
    /// Proportional gain from height error to height rate, 1/s.
    pub kp_height: f64,
    /// Extra drop below the handover height baked into the ramp, m.
    pub free_clearance: f64,
}

impl Default for WithdrawParams {
    fn default() -> Self {
        Self { target_distance: 0.6, back_speed: 0.2, kp_height: 4.0, free_clearance: 0.006 }
    }
}

/// Frozen geometry for one withdrawal: where the ramp starts and the slope
/// it must hold.
#[derive(Debug, Clone, Copy)]
pub struct WithdrawPlan {
    pub start_height: f64,
    pub start_tilt: f64,
    pub params: WithdrawParams,
}

/// Builds the plan from the pose at handover.
pub fn plan_withdraw(
    start_height: f64,
    start_tilt: f64,
    params: WithdrawParams,
) -> Result<WithdrawPlan, WithdrawError> {
    for (what, value) in [
        ("target_distance", params.target_distance),
        ("back_speed", params.back_speed),
        ("kp_height", params.kp_height),
    ] {
        if !(value > 0.0) {
            return Err(WithdrawError::NonPositive { what, value });
        }
    }
    if !(params.free_clearance >= 0.0) {
        return Err(WithdrawError::NonPositive {
            what: "free_clearance",
            value: params.free_clearance,
        });
    }
    Ok(WithdrawPlan { start_height: start_height - params.free_clearance, start_tilt, params })
}

impl WithdrawPlan {
    /// Heel height the ramp wants after withdrawing `s` meters.
    pub fn profile_height(&self, s: f64) -> f64 {
        self.start_height + s * self.start_tilt.tan()
    }
}

/// Rates commanded for the next control interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WithdrawCommand {
    /// Fork travel rate along x; negative retreats.
    pub drive_rate: f64,
    /// Heel height rate.
    pub height_rate: f64,
    /// Target distance reached; rates are zero.
    pub done: bool,
}

impl WithdrawCommand {
    fn hold() -> Self {
        Self { drive_rate: 0.0, height_rate: 0.0, done: false }
    }
}

/// One pure control update: `s` is the odometry distance withdrawn,
/// `measured_height` the current heel height.
pub fn withdraw_step(plan: &WithdrawPlan, s: f64, measured_height: f64) -> WithdrawCommand {
    if s >= plan.params.target_distance {
        return WithdrawCommand { drive_rate: 0.0, height_rate: 0.0, done: true };
    }
    // Feedforward of the ramp slope (s advances at back_speed) plus a
    // proportional correction of the remaining error.
    let feedforward = plan.params.back_speed * plan.start_tilt.tan();
    WithdrawCommand {
        drive_rate: -plan.params.back_speed,
        height_rate: plan.params.kp_height * (plan.profile_height(s) - measured_height)
            + feedforward,
        done: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WithdrawStatus {
    Active,
    Done,
    /// Odometry regressed; rates are latched to zero.
    Faulted,
}

/// Stateful wrapper that latches completion and faults across cycles.
#[derive(Debug, Clone)]
pub struct WithdrawRun {
    plan: WithdrawPlan,
    last_s: f64,
    status: WithdrawStatus,
}

impl WithdrawRun {
    pub fn new(plan: WithdrawPlan) -> Self {
        Self { plan, last_s: 0.0, status: WithdrawStatus::Active }
    }

    pub fn plan(&self) -> &WithdrawPlan {
        &self.plan
    }

    pub fn status(&self) -> WithdrawStatus {
        self.status
    }

    /// Control update with odometry supervision.
    pub fn update(&mut self, s: f64, measured_height: f64) -> WithdrawCommand {
        match self.status {
            WithdrawStatus::Faulted => return WithdrawCommand::hold(),
            WithdrawStatus::Done => {
                return WithdrawCommand { done: true, ..WithdrawCommand::hold() }
            }
            WithdrawStatus::Active => {}
        }
        if s < self.last_s {
            self.status = WithdrawStatus::Faulted;
            return WithdrawCommand::hold();
        }
        self.last_s = s;
        let cmd = withdraw_step(&self.plan, s, measured_height);
        if cmd.done {
            self.status = WithdrawStatus::Done;
        }
        cmd
    }
}

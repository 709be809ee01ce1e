//! Scenario runner: wires camera, tracker, withdrawal, and plant into one
//! fixed-rate loop and logs a CSV row per control cycle.
//!
//! The loop runs the controller at the tracker cycle period and the plant
//! at a fixed 50 Hz substep. Rendering, downsampling, and registration all
//! draw from seeds derived from the scenario seed, so a scenario and seed
//! pair reproduces its CSV byte for byte.

pub mod scenario;

pub use scenario::{ControlMode, Scenario, ScenarioError};

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::cloud::{derive_seed, render_depth, CameraModel, CloudError, OrientedBox};
use crate::geom::{camera_pose, compose, GeomError, KinematicConfig, RigidTransform};
use crate::simworld::{step_world, ForkJoints, WorldError, WorldParams, WorldState};
use crate::tracker::{tracker_step, Phase, TrackerInput, TrackerState};
use crate::withdraw::{plan_withdraw, WithdrawError, WithdrawRun, WithdrawStatus};

/// Plant integration step, s. The control period must be a multiple.
pub const PLANT_DT: f64 = 0.02;

/// Withdrawal travel before height tracking error counts, m.
pub const TRACKING_TRANSIENT: f64 = 0.1;

/// Stream tag for per-cycle render seeds.
const RENDER_STREAM: u64 = 0x52_45_4e_44;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("plant: {0}")]
    World(#[from] WorldError),
    #[error("kinematics: {0}")]
    Geom(#[from] GeomError),
    #[error("camera: {0}")]
    Cloud(#[from] CloudError),
    #[error("withdrawal: {0}")]
    Withdraw(#[from] WithdrawError),
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    /// The withdrawal profile reached its target distance.
    WithdrawCompleted,
    /// The tracker halted or the simulated-time budget ran out.
    HaltedTimeout,
    /// Withdrawal odometry regressed and the run latched a fault.
    JamFault,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::WithdrawCompleted => "WithdrawCompleted",
            Outcome::HaltedTimeout => "HaltedTimeout",
            Outcome::JamFault => "JamFault",
        }
    }
}

/// End-of-run summary. Angles are radians, lengths meters.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub outcome: Outcome,
    /// Fork tilt when the run ended.
    pub final_fork_tilt: f64,
    /// Largest pallet displacement after withdrawal began.
    pub max_drag: f64,
    /// Control cycles executed.
    pub cycles: u64,
    /// Relative tilt logged at the tracking-to-withdrawal handoff; absent
    /// when the run never reached the handoff.
    pub converged_delta_tilt: Option<f64>,
    /// Worst |height - profile| past the withdrawal transient; absent when
    /// the run never withdrew that far.
    pub max_height_tracking_error: Option<f64>,
    /// Control cycles whose measurement failed and was skipped.
    pub skipped_cycles: u64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Report plus the full per-cycle CSV log.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: RunReport,
    pub csv: String,
}

/// The fixed column set of the CSV log.
pub const CSV_HEADER: &str = "time_s,phase,delta_tilt_deg,delta_height_m,fork_tilt_meas_deg,\
fork_tilt_ref_deg,fork_height_m,limit_switch,pallet_pitch_deg,pallet_x_m,surface_tilt_deg,\
icp_error_m,icp_iters";

/// Camera optical axes in mount coordinates: optical forward is the mount
/// x axis, image right is -y, image down is -z.
fn optical_mount() -> RigidTransform {
    let rot = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    RigidTransform::new(rot, Vector3::zeros()).expect("constant rotation is orthonormal")
}

/// Fixed camera mount in the inner-mast frame: offset, downward pitch,
/// then the optical axis convention.
fn camera_on_mast(scn: &Scenario) -> RigidTransform {
    let offset = RigidTransform::from_translation(Vector3::new(
        scn.camera.mount_x,
        0.0,
        scn.camera.mount_z,
    ));
    let pitch = RigidTransform::rot_y(scn.camera.pitch);
    compose(&offset, &compose(&pitch, &optical_mount()))
}

/// Renderable scene: ground slab, support bed, pallet deck, and load box,
/// all placed from the live plant state.
fn scene_boxes(scn: &Scenario, world: &WorldState) -> Vec<OrientedBox> {
    let s = &scn.scene;
    let surface = &scn.world.surface;

    let ground = OrientedBox::new(
        RigidTransform::from_translation(Vector3::new(0.5, 0.0, -0.05)),
        Vector3::new(2.5, 1.5, 0.05),
    );

    // The bed's top face contains the surface line through the anchor.
    let bed_rot = RigidTransform::rot_y(-world.surface_tilt);
    let bed_normal = bed_rot.rotation() * Vector3::z();
    let bed_center = Vector3::new(surface.anchor_x, 0.0, surface.anchor_z)
        - bed_normal * (s.bed_thickness * 0.5);
    let bed = OrientedBox::new(
        RigidTransform::new(*bed_rot.rotation(), bed_center).expect("rotation stays orthonormal"),
        Vector3::new(s.bed_size[0] * 0.5, s.bed_size[1] * 0.5, s.bed_thickness * 0.5),
    );

    // Pallet body frame: origin at the bottom-face center, pitched with
    // the pallet.
    let body = RigidTransform::rot_y(world.pallet_pitch);
    let body_at = |local: Vector3<f64>| {
        Vector3::new(world.pallet_x, 0.0, world.pallet_z) + body.rotation() * local
    };
    let deck = OrientedBox::new(
        RigidTransform::new(*body.rotation(), body_at(Vector3::new(0.0, 0.0, s.deck_height * 0.5)))
            .expect("rotation stays orthonormal"),
        Vector3::new(scn.world.pallet.length * 0.5, s.pallet_width * 0.5, s.deck_height * 0.5),
    );
    let load_center = Vector3::new(
        s.load_offset_x,
        0.0,
        s.deck_height + s.load_size[2] * 0.5,
    );
    let load = OrientedBox::new(
        RigidTransform::new(*body.rotation(), body_at(load_center))
            .expect("rotation stays orthonormal"),
        Vector3::new(s.load_size[0] * 0.5, s.load_size[1] * 0.5, s.load_size[2] * 0.5),
    );

    vec![ground, bed, deck, load]
}

/// Runs one scenario to completion and returns the report plus CSV log.
pub fn run_scenario(scn: &Scenario) -> Result<RunResult, HarnessError> {
    let params: &WorldParams = &scn.world;
    let fork = ForkJoints::at(scn.start.fork_x, scn.start.fork_height, scn.start.fork_tilt);
    let mut world = WorldState::new(params, fork, scn.start.pallet_x)?;

    let mut tstate = TrackerState::new();
    let mut kin = KinematicConfig {
        reach: 0.0,
        fork_height: world.fork.height,
        fork_tilt: world.fork.tilt,
        camera_on_mast: camera_on_mast(scn),
        gaze_on_fork: RigidTransform::identity(),
        mast_polyline: scn.mast.clone(),
    };
    let mut camera = CameraModel::new(
        scn.camera.width,
        scn.camera.height,
        scn.camera.fov_h,
        scn.camera.fov_v,
        RigidTransform::identity(),
        scn.camera.noise_sigma,
    )?;

    let substeps = (scn.tracker.cycle_period / PLANT_DT).round().max(1.0) as usize;
    let mut withdraw: Option<WithdrawRun> = None;
    let mut odom_origin = 0.0;
    let mut drag_origin = world.pallet_x;
    let mut max_drag: f64 = 0.0;
    let mut converged_delta_tilt = None;
    let mut max_height_tracking_error: Option<f64> = None;
    let mut skipped_cycles: u64 = 0;
    let mut cycles: u64 = 0;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');

    let mut outcome: Option<Outcome> = None;
    while outcome.is_none() {
        let label;
        match tstate.phase {
            Phase::Acquire | Phase::Track => {
                let pre_step = tstate.phase;
                kin.fork_height = world.fork.height;
                kin.fork_tilt = world.fork.tilt;
                camera.pose = camera_pose(&kin)?;
                let scene = scene_boxes(scn, &world);
                let seed = derive_seed(scn.seed, RENDER_STREAM, tstate.cycle_count);
                let cloud = render_depth(&scene, &camera, seed);
                let input = TrackerInput {
                    cloud: &cloud,
                    camera_pose: camera.pose,
                    fork_tilt: world.fork.tilt,
                    fork_height: world.fork.height,
                    limit_switch: world.limit_switch(params),
                };
                match tracker_step(&mut tstate, &scn.tracker, &input) {
                    Ok(cmd) => {
                        if let Some(t) = cmd.tilt_ref {
                            world.fork.tilt_ref = t;
                        }
                        if let Some(h) = cmd.height_ref {
                            world.fork.height_ref = h;
                        }
                    }
                    Err(_) => {
                        skipped_cycles += 1;
                        tstate.after_skipped_cycle(&scn.tracker);
                    }
                }
                label = match tstate.phase {
                    Phase::Halted => {
                        outcome = Some(Outcome::HaltedTimeout);
                        Phase::Halted.name()
                    }
                    Phase::ReadyToWithdraw => Phase::ReadyToWithdraw.name(),
                    _ => pre_step.name(),
                };
                if tstate.phase == Phase::ReadyToWithdraw {
                    converged_delta_tilt = tstate.last.map(|e| e.delta_tilt);
                    let plan = plan_withdraw(world.fork.height, world.fork.tilt, scn.withdraw)?;
                    withdraw = Some(WithdrawRun::new(plan));
                    odom_origin = world.fork.heel_x;
                    drag_origin = world.pallet_x;
                    world.withdraw_started = true;
                    tstate.phase = Phase::Withdrawing;
                }
            }
            Phase::Withdrawing => {
                label = Phase::Withdrawing.name();
                let run = withdraw.as_mut().expect("withdrawal planned at handoff");
                let s = odom_origin - world.fork.heel_x;
                let cmd = run.update(s, world.fork.height);
                world.fork.drive_rate = cmd.drive_rate;
                world.fork.height_rate_ref = Some(cmd.height_rate);
                if s >= TRACKING_TRANSIENT {
                    let err = (run.plan().profile_height(s) - world.fork.height).abs();
                    max_height_tracking_error =
                        Some(max_height_tracking_error.unwrap_or(0.0).max(err));
                }
                match run.status() {
                    WithdrawStatus::Done => outcome = Some(Outcome::WithdrawCompleted),
                    WithdrawStatus::Faulted => outcome = Some(Outcome::JamFault),
                    WithdrawStatus::Active => {}
                }
            }
            // The tracker never leaves these phases in place: readiness is
            // promoted to Withdrawing and a halt ends the loop above.
            Phase::ReadyToWithdraw | Phase::LowerToRelease | Phase::Halted => {
                unreachable!("phase {} cannot start a cycle", tstate.phase.name())
            }
        }

        for _ in 0..substeps {
            step_world(&mut world, params, PLANT_DT);
        }
        if world.withdraw_started {
            max_drag = max_drag.max((drag_origin - world.pallet_x).abs());
        }
        cycles += 1;
        push_row(&mut csv, label, &world, params, &tstate);

        if outcome.is_none() && world.time >= scn.duration_limit {
            outcome = Some(Outcome::HaltedTimeout);
        }
    }

    let report = RunReport {
        scenario: scn.name.clone(),
        outcome: outcome.expect("loop exits with an outcome"),
        final_fork_tilt: world.fork.tilt,
        max_drag,
        cycles,
        converged_delta_tilt,
        max_height_tracking_error,
        skipped_cycles,
    };
    Ok(RunResult { report, csv })
}

fn push_row(
    csv: &mut String,
    label: &str,
    world: &WorldState,
    params: &WorldParams,
    tstate: &TrackerState,
) {
    use std::fmt::Write;
    let (delta_tilt, delta_height, icp_error, icp_iters) = match tstate.last {
        Some(e) => (e.delta_tilt, e.delta_height, e.icp_error, e.icp_iterations),
        None => (0.0, 0.0, 0.0, 0),
    };
    writeln!(
        csv,
        "{:.3},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.8},{}",
        world.time,
        label,
        delta_tilt.to_degrees(),
        delta_height,
        world.fork.tilt.to_degrees(),
        world.fork.tilt_ref.to_degrees(),
        world.fork.height,
        u8::from(world.limit_switch(params)),
        world.pallet_pitch.to_degrees(),
        world.pallet_x,
        world.surface_tilt.to_degrees(),
        icp_error,
        icp_iters,
    )
    .expect("formatting into a String cannot fail");
}

/// One bundled scenario plus its expected outcome.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: &'static str,
    pub text: &'static str,
    pub expect: Expectation,
}

/// Pass conditions checked against a run report.
#[derive(Debug, Clone, Copy)]
pub struct Expectation {
    pub outcome: Outcome,
    /// Upper bound on drag, m.
    pub max_drag_at_most: Option<f64>,
    /// Lower bound on drag for runs that must exhibit it, m.
    pub min_drag: Option<f64>,
    /// Final fork tilt target and tolerance, radians.
    pub final_tilt: Option<(f64, f64)>,
    /// Upper bound on |relative tilt| at handoff, radians.
    pub converged_at_most: Option<f64>,
}

impl Expectation {
    /// Returns one line per violated condition; empty means pass.
    pub fn check(&self, report: &RunReport) -> Vec<String> {
        let mut failures = Vec::new();
        if report.outcome != self.outcome {
            failures.push(format!(
                "outcome {} (expected {})",
                report.outcome.name(),
                self.outcome.name()
            ));
        }
        if let Some(limit) = self.max_drag_at_most {
            if report.max_drag > limit {
                failures.push(format!(
                    "max_drag {:.1} mm (expected <= {:.1} mm)",
                    report.max_drag * 1e3,
                    limit * 1e3
                ));
            }
        }
        if let Some(floor) = self.min_drag {
            if report.max_drag <= floor {
                failures.push(format!(
                    "max_drag {:.1} mm (expected > {:.1} mm)",
                    report.max_drag * 1e3,
                    floor * 1e3
                ));
            }
        }
        if let Some((target, tol)) = self.final_tilt {
            let err = (report.final_fork_tilt - target).abs();
            if err > tol {
                failures.push(format!(
                    "final tilt {:.2} deg (expected {:.2} +/- {:.2} deg)",
                    report.final_fork_tilt.to_degrees(),
                    target.to_degrees(),
                    tol.to_degrees()
                ));
            }
        }
        if let Some(limit) = self.converged_at_most {
            match report.converged_delta_tilt {
                Some(d) if d.abs() <= limit => {}
                Some(d) => failures.push(format!(
                    "handoff tilt {:.3} deg (expected <= {:.3} deg)",
                    d.abs().to_degrees(),
                    limit.to_degrees()
                )),
                None => failures.push("handoff tilt never recorded".to_string()),
            }
        }
        failures
    }
}

/// The four bundled cases with their expected outcomes.
pub fn suite_cases() -> Vec<SuiteCase> {
    let threshold = 0.25_f64.to_radians();
    let tilt_tol = 0.5_f64.to_radians();
    vec![
        SuiteCase {
            name: "case1",
            text: include_str!("../../scenarios/case1.scn"),
            expect: Expectation {
                outcome: Outcome::WithdrawCompleted,
                max_drag_at_most: Some(0.010),
                min_drag: None,
                final_tilt: Some((-4.0_f64.to_radians(), tilt_tol)),
                converged_at_most: Some(threshold),
            },
        },
        SuiteCase {
            name: "case2",
            text: include_str!("../../scenarios/case2.scn"),
            expect: Expectation {
                outcome: Outcome::HaltedTimeout,
                max_drag_at_most: None,
                min_drag: None,
                final_tilt: None,
                converged_at_most: None,
            },
        },
        SuiteCase {
            name: "case3",
            text: include_str!("../../scenarios/case3.scn"),
            expect: Expectation {
                outcome: Outcome::WithdrawCompleted,
                max_drag_at_most: Some(0.010),
                min_drag: None,
                final_tilt: Some((2.0_f64.to_radians(), tilt_tol)),
                converged_at_most: Some(threshold),
            },
        },
        SuiteCase {
            name: "case4",
            text: include_str!("../../scenarios/case4.scn"),
            expect: Expectation {
                outcome: Outcome::WithdrawCompleted,
                max_drag_at_most: None,
                min_drag: Some(0.050),
                final_tilt: None,
                converged_at_most: None,
            },
        },
    ]
}

/// Bundled scenario text by name; the suite cases plus the flat smoke
/// scenario.
pub fn bundled_scenario(name: &str) -> Option<&'static str> {
    match name {
        "case1" => Some(include_str!("../../scenarios/case1.scn")),
        "case2" => Some(include_str!("../../scenarios/case2.scn")),
        "case3" => Some(include_str!("../../scenarios/case3.scn")),
        "case4" => Some(include_str!("../../scenarios/case4.scn")),
        "flat" => Some(include_str!("../../scenarios/flat.scn")),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat_scenario() -> Scenario {
        Scenario::parse(bundled_scenario("flat").unwrap()).unwrap()
    }

    #[test]
    fn bundled_scenarios_parse_and_validate() {
        for case in suite_cases() {
            let scn = Scenario::parse(case.text).unwrap();
            assert_eq!(scn.name, case.name);
        }
        assert!(bundled_scenario("flat").is_some());
        assert!(bundled_scenario("nope").is_none());
    }

    #[test]
    fn parse_reads_sections_and_units() {
        let scn = flat_scenario();
        assert_eq!(scn.seed, 55);
        assert_eq!(scn.control_mode, ControlMode::Proposed);
        assert!(scn.tracker.tilt_control);
        assert_eq!(scn.tracker.seed, 55);
        assert_relative_eq!(scn.start.fork_height, 0.2172);
        assert_relative_eq!(scn.camera.fov_h, 75.0_f64.to_radians());
        assert_relative_eq!(scn.tracker.delta_tilt_threshold, 0.25_f64.to_radians());
        assert_eq!(scn.mast.len(), 3);
        assert_relative_eq!(scn.withdraw.free_clearance, 0.006);
    }

    #[test]
    fn parse_rejects_malformed_input() {
        let text = bundled_scenario("flat").unwrap();
        let wrong = |from: &str, to: &str| Scenario::parse(&text.replace(from, to)).unwrap_err();

        assert!(matches!(
            wrong("seed = 55", "seed 55"),
            ScenarioError::Syntax { .. }
        ));
        assert!(matches!(
            wrong("seed = 55", "seed = 55\nseed = 56"),
            ScenarioError::DuplicateKey { .. }
        ));
        assert!(matches!(
            wrong("pallet.mass = 500", "pallet.masse = 500"),
            ScenarioError::MissingKey { .. } | ScenarioError::UnknownKey { .. }
        ));
        assert!(matches!(
            wrong("seed = 55", "seed = 55\nextra.key = 1"),
            ScenarioError::UnknownKey { .. }
        ));
        assert!(matches!(
            wrong("pallet.mass = 500", "pallet.mass = heavy"),
            ScenarioError::BadValue { .. }
        ));
        assert!(matches!(
            wrong("control_mode = proposed", "control_mode = manual"),
            ScenarioError::BadValue { .. }
        ));
        assert!(matches!(
            wrong("duration_limit = 40.0", "duration_limit = -1"),
            ScenarioError::Invalid(_)
        ));
        assert!(matches!(
            wrong("pallet.mass = 500", "pallet.mass = -5"),
            ScenarioError::Invalid(_)
        ));
    }

    #[test]
    fn csv_header_is_the_fixed_column_set() {
        assert_eq!(
            CSV_HEADER,
            "time_s,phase,delta_tilt_deg,delta_height_m,fork_tilt_meas_deg,fork_tilt_ref_deg,\
             fork_height_m,limit_switch,pallet_pitch_deg,pallet_x_m,surface_tilt_deg,\
             icp_error_m,icp_iters"
        );
    }

    #[test]
    fn flat_scenario_completes_without_drag() {
        let scn = flat_scenario();
        let result = run_scenario(&scn).unwrap();
        let report = &result.report;
        assert_eq!(report.outcome, Outcome::WithdrawCompleted);
        assert!(report.max_drag < 1e-9, "drag {}", report.max_drag);
        assert!(
            report.final_fork_tilt.abs() < 0.5_f64.to_radians(),
            "tilt {}",
            report.final_fork_tilt.to_degrees()
        );
        let converged = report.converged_delta_tilt.expect("handoff reached");
        assert!(converged.abs() <= 0.25_f64.to_radians());
        let err = report.max_height_tracking_error.expect("withdrew past transient");
        assert!(err <= 0.005, "tracking error {err}");

        let mut lines = result.csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.clone().count() as u64, report.cycles);
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.200,acquire,"), "first row: {first}");
        assert!(result.csv.lines().any(|l| l.contains(",ready,")));
    }

    #[test]
    fn rerun_reproduces_the_csv_byte_for_byte() {
        let scn = flat_scenario();
        let a = run_scenario(&scn).unwrap();
        let b = run_scenario(&scn).unwrap();
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.report.cycles, b.report.cycles);
    }

    #[test]
    fn report_serializes_the_contract_fields() {
        let report = RunReport {
            scenario: "flat".to_string(),
            outcome: Outcome::WithdrawCompleted,
            final_fork_tilt: -0.07,
            max_drag: 0.001,
            cycles: 42,
            converged_delta_tilt: Some(0.001),
            max_height_tracking_error: Some(0.002),
            skipped_cycles: 0,
        };
        let json = report.to_json();
        for field in [
            "\"scenario\"",
            "\"outcome\"",
            "\"WithdrawCompleted\"",
            "\"final_fork_tilt\"",
            "\"max_drag\"",
            "\"cycles\"",
            "\"converged_delta_tilt\"",
        ] {
            assert!(json.contains(field), "missing {field} in {json}");
        }
    }

    #[test]
    fn expectation_reports_each_violation() {
        let expect = Expectation {
            outcome: Outcome::WithdrawCompleted,
            max_drag_at_most: Some(0.010),
            min_drag: None,
            final_tilt: Some((0.0, 0.01)),
            converged_at_most: Some(0.004),
        };
        let report = RunReport {
            scenario: "x".to_string(),
            outcome: Outcome::HaltedTimeout,
            final_fork_tilt: 0.05,
            max_drag: 0.02,
            cycles: 1,
            converged_delta_tilt: None,
            max_height_tracking_error: None,
            skipped_cycles: 0,
        };
        let failures = expect.check(&report);
        assert_eq!(failures.len(), 4, "{failures:?}");
        let pass = RunReport {
            scenario: "x".to_string(),
            outcome: Outcome::WithdrawCompleted,
            final_fork_tilt: 0.005,
            max_drag: 0.0,
            cycles: 1,
            converged_delta_tilt: Some(0.003),
            max_height_tracking_error: None,
            skipped_cycles: 0,
        };
        assert!(expect.check(&pass).is_empty());
    }
}

//! Quasi-static plant for the unloading task, in the vertical x-z plane.
//!
//! The world holds a fork (heel position, height, tilt), a pallet with a
//! through channel for the blade, and a support surface whose incline can
//! depend on the weight it carries. Motion is slow enough that inertia is
//! ignored: every substep the actuators move, then the pallet and fork
//! settle into the unique contact configuration that supports them.
//!
//! One-way effects are modeled explicitly: the lift chain can hold the fork
//! up but never pull it below whatever it rests on, the blade can carry the
//! pallet but never pull it down, and the pallet sinks only under gravity.
//! Horizontal pallet motion happens only by friction drag from a sliding
//! blade.
//!
//! Angles are radians (positive pitch tips the nose down), lengths meters,
//! forces newtons.

mod contact;

pub use contact::{resolve_contacts, ContactMode, ContactReport};

use thiserror::Error;

/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("load map needs at least two points with increasing loads")]
    BadLoadMap,
}

/// First-order lag plus slew limit for one joint.
#[derive(Debug, Clone, Copy)]
pub struct ActuatorParams {
    /// Lag time constant, seconds.
    pub tau: f64,
    /// Slew limit, units of the joint per second.
    pub rate: f64,
}

impl ActuatorParams {
    /// One lag-plus-slew update toward `reference`.
    pub fn track(&self, current: f64, reference: f64, dt: f64) -> f64 {
        let step = (1.0 - (-dt / self.tau).exp()) * (reference - current);
        let cap = self.rate * dt;
        current + step.clamp(-cap, cap)
    }
}

/// Fork geometry, mass and actuation.
#[derive(Debug, Clone)]
pub struct ForkParams {
    /// Blade length from heel to tip.
    pub blade_length: f64,
    /// Fraction of the blade, at the heel, monitored by the contact switch.
    pub heel_zone: f64,
    /// Fork assembly mass, kg.
    pub mass: f64,
    pub tilt_actuator: ActuatorParams,
    pub height_actuator: ActuatorParams,
}

/// Pallet-with-load geometry seen from the side.
#[derive(Debug, Clone)]
pub struct PalletParams {
    /// Bottom face length along the travel axis.
    pub length: f64,
    /// Channel floor height above the bottom face.
    pub floor_offset: f64,
    /// Per-side play of the blade centered in the channel; the channel is
    /// `2 * clearance` tall.
    pub clearance: f64,
    /// Pallet plus payload mass, kg.
    pub mass: f64,
    /// Center-of-mass offset from the pallet center along its body axis.
    pub com_offset: f64,
    /// Friction coefficient between blade and channel boards.
    pub friction: f64,
}

/// How the support surface tilts.
#[derive(Debug, Clone)]
pub enum TiltSource {
    /// Constant incline, radians.
    Fixed(f64),
    /// Piecewise-linear incline as a function of carried mass. The map is
    /// `(kg, radians)` breakpoints; `preload` is already on the surface
    /// before the pallet arrives. Clamped outside the breakpoints.
    LoadMap { preload: f64, points: Vec<(f64, f64)> },
}

impl TiltSource {
    /// Incline for the given supported pallet-side mass, kg.
    pub fn tilt_for(&self, supported: f64) -> f64 {
        match self {
            TiltSource::Fixed(a) => *a,
            TiltSource::LoadMap { preload, points } => {
                let load = preload + supported;
                interp_clamped(points, load)
            }
        }
    }

    fn validate(&self) -> Result<(), WorldError> {
        if let TiltSource::LoadMap { points, .. } = self {
            if points.len() < 2 || points.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(WorldError::BadLoadMap);
            }
        }
        Ok(())
    }
}

fn interp_clamped(points: &[(f64, f64)], x: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    last.1
}

/// Support surface: a line through an anchor point.
#[derive(Debug, Clone)]
pub struct SurfaceParams {
    /// Point the incline pivots about, world coordinates.
    pub anchor_x: f64,
    pub anchor_z: f64,
    /// Friction coefficient between pallet and surface.
    pub friction: f64,
    pub tilt: TiltSource,
}

/// Everything fixed about the rig and scene.
#[derive(Debug, Clone)]
pub struct WorldParams {
    pub fork: ForkParams,
    pub pallet: PalletParams,
    pub surface: SurfaceParams,
}

impl WorldParams {
    pub fn validate(&self) -> Result<(), WorldError> {
        for (what, value) in [
            ("blade_length", self.fork.blade_length),
            ("fork mass", self.fork.mass),
            ("pallet length", self.pallet.length),
            ("clearance", self.pallet.clearance),
            ("pallet mass", self.pallet.mass),
            ("heel_zone", self.fork.heel_zone),
        ] {
            if !(value > 0.0) {
                return Err(WorldError::NonPositive { what, value });
            }
        }
        self.surface.tilt.validate()
    }
}

/// Fork joints plus their references. Height obeys either a position
/// reference (tracking) or a rate reference (withdrawal ramp).
#[derive(Debug, Clone, Copy)]
pub struct ForkJoints {
    /// Heel x position in the world.
    pub heel_x: f64,
    /// Heel height.
    pub height: f64,
    /// Blade tilt, positive nose-down.
    pub tilt: f64,
    pub tilt_ref: f64,
    pub height_ref: f64,
    /// When set, height integrates this rate instead of tracking
    /// `height_ref`.
    pub height_rate_ref: Option<f64>,
    /// Travel rate of the whole fork along x (withdrawal drive).
    pub drive_rate: f64,
}

impl ForkJoints {
    pub fn at(heel_x: f64, height: f64, tilt: f64) -> Self {
        Self {
            heel_x,
            height,
            tilt,
            tilt_ref: tilt,
            height_ref: height,
            height_rate_ref: None,
            drive_rate: 0.0,
        }
    }
}

/// Full plant state.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub time: f64,
    pub fork: ForkJoints,
    /// Pallet bottom-face center.
    pub pallet_x: f64,
    pub pallet_z: f64,
    /// Pallet pitch, positive nose-down.
    pub pallet_pitch: f64,
    /// Current surface incline, radians.
    pub surface_tilt: f64,
    pub contacts: ContactReport,
    /// Set by the harness when the withdrawal profile takes over; drag
    /// metrics are measured from this point on.
    pub withdraw_started: bool,
}

impl WorldState {
    /// Starts with the pallet carried on the blade and everything settled.
    pub fn new(params: &WorldParams, fork: ForkJoints, pallet_x: f64) -> Result<Self, WorldError> {
        params.validate()?;
        let mut world = Self {
            time: 0.0,
            fork,
            pallet_x,
            pallet_z: 0.0,
            pallet_pitch: fork.tilt,
            surface_tilt: params.surface.tilt.tilt_for(0.0),
            contacts: ContactReport::default(),
            withdraw_started: false,
        };
        resolve_contacts(&mut world, params);
        Ok(world)
    }

    /// The heel-zone contact switch: closed while the pallet presses down
    /// on the blade top within the heel zone.
    pub fn limit_switch(&self, params: &WorldParams) -> bool {
        let zone_end = self.fork.heel_x + params.fork.heel_zone * params.fork.blade_length;
        self.contacts
            .ceiling
            .iter()
            .any(|&(x, n)| n > contact::FORCE_EPS && x <= zone_end)
    }
}

/// Advances the plant by one substep: actuators, then contact settling,
/// then the load-dependent surface update (which lags one substep).
pub fn step_world(world: &mut WorldState, params: &WorldParams, dt: f64) {
    let f = &params.fork;
    let j = &mut world.fork;

    j.tilt = f.tilt_actuator.track(j.tilt, j.tilt_ref, dt);
    match j.height_rate_ref {
        Some(rate) => {
            let v = rate.clamp(-f.height_actuator.rate, f.height_actuator.rate);
            j.height += v * dt;
            j.height_ref = j.height;
        }
        None => {
            j.height = f.height_actuator.track(j.height, j.height_ref, dt);
        }
    }
    let travel = j.drive_rate * dt;
    j.heel_x += travel;

    resolve_contacts(world, params);

    // A sliding blade drags the pallet along when blade friction beats the
    // surface's hold (friction plus the gravity component along the slope).
    if travel.abs() > 0.0 {
        let c = &world.contacts;
        let blade_normal = c.n_ceiling() + c.n_floor();
        let hold = c.n_surface() * (params.surface.friction - world.surface_tilt.tan());
        if blade_normal > contact::FORCE_EPS && params.pallet.friction * blade_normal > hold {
            world.pallet_x += travel;
            resolve_contacts(world, params);
        }
    }

    let supported = world.contacts.n_surface() / GRAVITY;
    world.surface_tilt = params.surface.tilt.tilt_for(supported);
    world.time += dt;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    pub(super) fn desk_params(tilt: TiltSource) -> WorldParams {
        WorldParams {
            fork: ForkParams {
                blade_length: 0.50,
                heel_zone: 0.15,
                mass: 50.0,
                tilt_actuator: ActuatorParams { tau: 0.3, rate: deg(5.0) },
                height_actuator: ActuatorParams { tau: 0.1, rate: 0.05 },
            },
            pallet: PalletParams {
                length: 0.55,
                floor_offset: 0.02,
                clearance: 0.012,
                mass: 500.0,
                com_offset: 0.0,
                friction: 0.5,
            },
            surface: SurfaceParams {
                anchor_x: 1.0,
                anchor_z: 0.10,
                friction: 0.4,
                tilt,
            },
        }
    }

    pub(super) fn carried_start(params: &WorldParams) -> WorldState {
        WorldState::new(params, ForkJoints::at(0.70, 0.22, 0.0), 1.0).unwrap()
    }

    #[test]
    fn actuator_lag_step_is_frozen() {
        let act = ActuatorParams { tau: 0.3, rate: deg(5.0) };
        // Small error: pure lag, no slew. 1 - exp(-0.02/0.3) = 0.06449...
        let next = act.track(0.0, 0.01, 0.02);
        assert_relative_eq!(next, 0.000_644_930_149_683_822_2, epsilon = 1e-15);
        // Large error: slew-limited to rate * dt.
        let next = act.track(0.0, 1.0, 0.02);
        assert_relative_eq!(next, deg(5.0) * 0.02, epsilon = 1e-15);
        // Symmetric downward.
        let next = act.track(0.0, -1.0, 0.02);
        assert_relative_eq!(next, -deg(5.0) * 0.02, epsilon = 1e-15);
    }

    #[test]
    fn height_rate_mode_integrates_with_clamp() {
        let params = desk_params(TiltSource::Fixed(0.0));
        let mut world = carried_start(&params);
        world.fork.height_rate_ref = Some(0.2);
        let h0 = world.fork.height;
        step_world(&mut world, &params, 0.02);
        // Requested 0.2 m/s clamps to the 0.05 m/s actuator limit.
        assert_relative_eq!(world.fork.height, h0 + 0.05 * 0.02, epsilon = 1e-12);
    }

    #[test]
    fn load_map_interpolates_and_clamps() {
        let map = TiltSource::LoadMap {
            preload: 1500.0,
            points: vec![(0.0, 0.0), (1500.0, deg(3.0)), (2000.0, deg(4.0))],
        };
        assert_relative_eq!(map.tilt_for(0.0), deg(3.0), epsilon = 1e-12);
        assert_relative_eq!(map.tilt_for(250.0), deg(3.5), epsilon = 1e-12);
        assert_relative_eq!(map.tilt_for(500.0), deg(4.0), epsilon = 1e-12);
        assert_relative_eq!(map.tilt_for(5000.0), deg(4.0), epsilon = 1e-12);
    }

    #[test]
    fn carried_pallet_descends_with_the_fork() {
        let params = desk_params(TiltSource::Fixed(0.0));
        let mut world = carried_start(&params);
        let z0 = world.pallet_z;
        assert!(world.limit_switch(&params));
        world.fork.height_ref = world.fork.height - 0.01;
        for _ in 0..150 {
            step_world(&mut world, &params, 0.02);
        }
        assert_relative_eq!(world.fork.height, world.fork.height_ref, epsilon = 1e-9);
        assert_relative_eq!(world.pallet_z, z0 - 0.01, epsilon = 1e-9);
        assert_eq!(world.contacts.mode, ContactMode::Carried);
    }

    #[test]
    fn pallet_never_rises_during_plain_descent() {
        // Only gravity and a descending fork act: pallet height must be
        // monotone non-increasing through grounding and release.
        let params = desk_params(TiltSource::Fixed(0.0));
        let mut world = carried_start(&params);
        let mut prev = world.pallet_z;
        world.fork.height_ref = 0.10;
        for _ in 0..600 {
            step_world(&mut world, &params, 0.02);
            assert!(world.pallet_z <= prev + 1e-12, "pallet rose");
            prev = world.pallet_z;
        }
        assert_eq!(world.contacts.mode, ContactMode::Flat);
        assert!(!world.limit_switch(&params));
    }

    #[test]
    fn level_ground_settles_flat_at_surface_height() {
        let params = desk_params(TiltSource::Fixed(0.0));
        let mut world = carried_start(&params);
        world.fork.height_ref = 0.10;
        for _ in 0..600 {
            step_world(&mut world, &params, 0.02);
        }
        assert_relative_eq!(world.pallet_pitch, 0.0, epsilon = 1e-9);
        assert_relative_eq!(world.pallet_z, 0.10, epsilon = 1e-9);
        // Full pallet weight rests on the surface; fork rides the channel
        // floor once its commanded height dips below it.
        let w_p = params.pallet.mass * GRAVITY;
        assert!(world.contacts.n_surface() >= w_p - 1e-6);
    }

    #[test]
    fn surface_tilt_follows_transferred_load() {
        let map = TiltSource::LoadMap {
            preload: 1500.0,
            points: vec![(0.0, 0.0), (1500.0, deg(3.0)), (2000.0, deg(4.0))],
        };
        let params = desk_params(map);
        let mut world = carried_start(&params);
        assert_relative_eq!(world.surface_tilt, deg(3.0), epsilon = 1e-12);
        // Ground the pallet fully: the surface sinks to the 2000 kg point.
        world.fork.tilt_ref = -deg(4.0);
        world.fork.height_ref = 0.10;
        for _ in 0..800 {
            step_world(&mut world, &params, 0.02);
        }
        assert_relative_eq!(world.surface_tilt, deg(4.0), epsilon = 1e-9);
        assert_relative_eq!(world.pallet_pitch, -deg(4.0), epsilon = 1e-6);
    }

    #[test]
    fn stepping_is_bit_deterministic() {
        let run = || {
            let params = desk_params(TiltSource::Fixed(-deg(2.0)));
            let mut world = carried_start(&params);
            world.fork.height_ref = 0.12;
            let mut trace = Vec::new();
            for _ in 0..400 {
                step_world(&mut world, &params, 0.02);
                trace.push((
                    world.pallet_z.to_bits(),
                    world.pallet_pitch.to_bits(),
                    world.fork.height.to_bits(),
                ));
            }
            trace
        };
        assert_eq!(run(), run());
    }
}

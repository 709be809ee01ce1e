//! Scenario files: flat `key = value` text with dotted section keys.
//!
//! One line per setting, `#` starts a comment, keys are grouped by dotted
//! prefixes (`fork.`, `surface.tilt.`, ...). Every key is consumed exactly
//! once; unknown or duplicate keys are errors so typos cannot silently
//! fall back to defaults. Tuning keys (`tracker.*` except the crop box,
//! and `withdraw.*`) are optional and default to the controller defaults.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use thiserror::Error;

use crate::cloud::BoundingBox;
use crate::geom::mast_from_height;
use crate::simworld::{
    ActuatorParams, ForkParams, PalletParams, SurfaceParams, TiltSource, WorldParams,
};
use crate::tracker::TrackerConfig;
use crate::withdraw::{plan_withdraw, WithdrawParams};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("missing key `{key}`")]
    MissingKey { key: String },
    #[error("key `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("unknown key `{key}`")]
    UnknownKey { key: String },
    #[error("{0}")]
    Invalid(String),
}

/// Who closes the tilt loop. `NoControl` leaves tilt alone and gates
/// readiness on the heel switch only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Proposed,
    NoControl,
}

/// Initial joint values and pallet placement.
#[derive(Debug, Clone, Copy)]
pub struct StartPose {
    pub fork_x: f64,
    pub fork_height: f64,
    pub fork_tilt: f64,
    pub pallet_x: f64,
}

/// Rendered geometry that is not part of the contact plant: box sizes for
/// the depth camera's view of the load, deck, and surface slab.
#[derive(Debug, Clone, Copy)]
pub struct SceneParams {
    /// Pallet extent across the travel axis.
    pub pallet_width: f64,
    /// Deck board thickness above the pallet bottom face.
    pub deck_height: f64,
    /// Load box dimensions (along, across, up).
    pub load_size: [f64; 3],
    /// Load box center offset from pallet center along the body axis.
    pub load_offset_x: f64,
    /// Surface slab extent (along, across).
    pub bed_size: [f64; 2],
    pub bed_thickness: f64,
}

/// Depth camera intrinsics and its fixed mount on the inner mast.
#[derive(Debug, Clone, Copy)]
pub struct CameraParams {
    pub width: u32,
    pub height: u32,
    /// Fields of view, radians.
    pub fov_h: f64,
    pub fov_v: f64,
    /// One-sigma ranging noise, m.
    pub noise_sigma: f64,
    /// Mount position in the inner-mast frame.
    pub mount_x: f64,
    pub mount_z: f64,
    /// Downward mount pitch, radians.
    pub pitch: f64,
}

/// Everything one run needs: plant, scene, sensing, controllers, seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Simulated-time budget; exceeding it ends the run as a timeout.
    pub duration_limit: f64,
    pub control_mode: ControlMode,
    pub world: WorldParams,
    pub start: StartPose,
    pub scene: SceneParams,
    pub camera: CameraParams,
    /// Inner-mast lift curve breakpoints `(fork_height, displacement)`.
    pub mast: Vec<(f64, f64)>,
    pub tracker: TrackerConfig,
    pub withdraw: WithdrawParams,
}

/// Key/value store that tracks consumption so leftovers can be rejected.
struct Fields {
    map: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ScenarioError::Syntax { line, text: content.to_string() });
            };
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if key.is_empty() || value.is_empty() {
                return Err(ScenarioError::Syntax { line, text: content.to_string() });
            }
            if map.insert(key.clone(), (line, value)).is_some() {
                return Err(ScenarioError::DuplicateKey { line, key });
            }
        }
        Ok(Self { map })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(_, v)| v)
    }

    fn req(&mut self, key: &str) -> Result<String, ScenarioError> {
        self.take(key).ok_or_else(|| ScenarioError::MissingKey { key: key.to_string() })
    }

    fn f64(&mut self, key: &str) -> Result<f64, ScenarioError> {
        parse_f64(key, &self.req(key)?)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ScenarioError> {
        match self.take(key) {
            Some(v) => parse_f64(key, &v),
            None => Ok(default),
        }
    }

    /// Angle given in degrees, returned in radians.
    fn deg(&mut self, key: &str) -> Result<f64, ScenarioError> {
        Ok(self.f64(key)?.to_radians())
    }

    fn deg_or(&mut self, key: &str, default: f64) -> Result<f64, ScenarioError> {
        Ok(self.f64_or(key, default.to_degrees())?.to_radians())
    }

    fn u64(&mut self, key: &str) -> Result<u64, ScenarioError> {
        let v = self.req(key)?;
        v.parse().map_err(|_| bad(key, format!("expected an integer, got `{v}`")))
    }

    fn u32(&mut self, key: &str) -> Result<u32, ScenarioError> {
        let v = self.u64(key)?;
        u32::try_from(v).map_err(|_| bad(key, format!("{v} does not fit in 32 bits")))
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, ScenarioError> {
        match self.take(key) {
            Some(v) => v.parse().map_err(|_| bad(key, format!("expected an integer, got `{v}`"))),
            None => Ok(default),
        }
    }

    /// Comma-separated floats, exactly `N` of them.
    fn floats<const N: usize>(&mut self, key: &str) -> Result<[f64; N], ScenarioError> {
        let v = self.req(key)?;
        let parts: Vec<f64> = v
            .split(',')
            .map(|p| parse_f64(key, p.trim()))
            .collect::<Result<_, _>>()?;
        parts.try_into().map_err(|parts: Vec<f64>| {
            bad(key, format!("expected {N} comma-separated numbers, got {}", parts.len()))
        })
    }

    /// Comma-separated `a:b` pairs.
    fn pairs(&mut self, key: &str) -> Result<Vec<(f64, f64)>, ScenarioError> {
        let v = self.req(key)?;
        v.split(',')
            .map(|item| {
                let item = item.trim();
                let Some((a, b)) = item.split_once(':') else {
                    return Err(bad(key, format!("expected `a:b` pairs, got `{item}`")));
                };
                Ok((parse_f64(key, a.trim())?, parse_f64(key, b.trim())?))
            })
            .collect()
    }

    fn finish(self) -> Result<(), ScenarioError> {
        match self.map.into_keys().next() {
            Some(key) => Err(ScenarioError::UnknownKey { key }),
            None => Ok(()),
        }
    }
}

fn parse_f64(key: &str, text: &str) -> Result<f64, ScenarioError> {
    let value: f64 =
        text.parse().map_err(|_| bad(key, format!("expected a number, got `{text}`")))?;
    if !value.is_finite() {
        return Err(bad(key, format!("`{text}` is not finite")));
    }
    Ok(value)
}

fn bad(key: &str, reason: String) -> ScenarioError {
    ScenarioError::BadValue { key: key.to_string(), reason }
}

impl Scenario {
    /// Parses and fully validates scenario text.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut f = Fields::parse(text)?;

        let name = f.req("name")?;
        let seed = f.u64("seed")?;
        let duration_limit = f.f64("duration_limit")?;
        let control_mode = match f.req("control_mode")?.as_str() {
            "proposed" => ControlMode::Proposed,
            "no_control" => ControlMode::NoControl,
            other => {
                return Err(bad(
                    "control_mode",
                    format!("expected `proposed` or `no_control`, got `{other}`"),
                ))
            }
        };

        let tilt = match f.req("surface.tilt.mode")?.as_str() {
            "fixed" => TiltSource::Fixed(f.deg("surface.tilt.fixed_deg")?),
            "load_map" => TiltSource::LoadMap {
                preload: f.f64("surface.tilt.preload_kg")?,
                points: f
                    .pairs("surface.tilt.map")?
                    .into_iter()
                    .map(|(kg, deg)| (kg, deg.to_radians()))
                    .collect(),
            },
            other => {
                return Err(bad(
                    "surface.tilt.mode",
                    format!("expected `fixed` or `load_map`, got `{other}`"),
                ))
            }
        };
        let surface = SurfaceParams {
            anchor_x: f.f64("surface.anchor_x")?,
            anchor_z: f.f64("surface.anchor_z")?,
            friction: f.f64("surface.friction")?,
            tilt,
        };

        let pallet = PalletParams {
            length: f.f64("pallet.length")?,
            floor_offset: f.f64("pallet.floor_offset")?,
            clearance: f.f64("pallet.clearance")?,
            mass: f.f64("pallet.mass")?,
            com_offset: f.f64_or("pallet.com_offset", 0.0)?,
            friction: f.f64("pallet.friction")?,
        };
        let pallet_x = f.f64("pallet.x")?;

        let fork = ForkParams {
            blade_length: f.f64("fork.blade_length")?,
            heel_zone: f.f64("fork.heel_zone")?,
            mass: f.f64("fork.mass")?,
            tilt_actuator: ActuatorParams {
                tau: f.f64("fork.tilt_tau")?,
                rate: f.deg("fork.tilt_rate_deg")?,
            },
            height_actuator: ActuatorParams {
                tau: f.f64("fork.height_tau")?,
                rate: f.f64("fork.height_rate")?,
            },
        };
        let start = StartPose {
            fork_x: f.f64("fork.start_x")?,
            fork_height: f.f64("fork.start_height")?,
            fork_tilt: f.deg("fork.start_tilt_deg")?,
            pallet_x,
        };

        let camera = CameraParams {
            width: f.u32("camera.width")?,
            height: f.u32("camera.height")?,
            fov_h: f.deg("camera.fov_h_deg")?,
            fov_v: f.deg("camera.fov_v_deg")?,
            noise_sigma: f.f64("camera.noise_sigma")?,
            mount_x: f.f64("camera.mount_x")?,
            mount_z: f.f64("camera.mount_z")?,
            pitch: f.deg("camera.pitch_deg")?,
        };

        let mast = f.pairs("mast.points")?;

        let scene = SceneParams {
            pallet_width: f.f64("scene.pallet_width")?,
            deck_height: f.f64("scene.deck_height")?,
            load_size: f.floats::<3>("scene.load_size")?,
            load_offset_x: f.f64_or("scene.load_offset_x", 0.0)?,
            bed_size: f.floats::<2>("scene.bed_size")?,
            bed_thickness: f.f64("scene.bed_thickness")?,
        };

        let crop_min = f.floats::<3>("tracker.crop_min")?;
        let crop_max = f.floats::<3>("tracker.crop_max")?;
        let crop_box = BoundingBox::new(Vector3::from(crop_min), Vector3::from(crop_max))
            .map_err(|e| ScenarioError::Invalid(format!("tracker crop box: {e}")))?;
        let defaults = TrackerConfig::new(crop_box);
        let mut tracker = TrackerConfig {
            cycle_period: f.f64_or("tracker.cycle_period", defaults.cycle_period)?,
            descend_step: f.f64_or("tracker.descend_step", defaults.descend_step)?,
            delta_tilt_threshold: f
                .deg_or("tracker.tilt_threshold_deg", defaults.delta_tilt_threshold)?,
            halt_timeout: f.f64_or("tracker.halt_timeout", defaults.halt_timeout)?,
            crop_dilation: f.f64_or("tracker.crop_dilation", defaults.crop_dilation)?,
            target_points: f.usize_or("tracker.target_points", defaults.target_points)?,
            ..defaults
        };
        tracker.icp.max_iterations =
            f.usize_or("tracker.icp_max_iterations", tracker.icp.max_iterations)?;
        tracker.icp.convergence_tol =
            f.f64_or("tracker.icp_convergence_tol", tracker.icp.convergence_tol)?;
        tracker.icp.max_correspondence_dist =
            f.f64_or("tracker.icp_max_correspondence", tracker.icp.max_correspondence_dist)?;
        tracker.icp.min_points = f.usize_or("tracker.icp_min_points", tracker.icp.min_points)?;
        tracker.seed = seed;
        tracker.tilt_control = control_mode == ControlMode::Proposed;

        let withdraw = WithdrawParams {
            target_distance: f.f64_or("withdraw.target_distance", 0.6)?,
            back_speed: f.f64_or("withdraw.back_speed", 0.2)?,
            kp_height: f.f64_or("withdraw.kp_height", 4.0)?,
            free_clearance: f.f64_or("withdraw.free_clearance", 0.006)?,
        };

        f.finish()?;

        let scenario = Self {
            name,
            seed,
            duration_limit,
            control_mode,
            world: WorldParams { fork, pallet, surface },
            start,
            scene,
            camera,
            mast,
            tracker,
            withdraw,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Cross-component validation beyond per-key parsing.
    fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |e: String| ScenarioError::Invalid(e);
        if !(self.duration_limit > 0.0) {
            return Err(invalid(format!(
                "duration_limit must be positive, got {}",
                self.duration_limit
            )));
        }
        self.world.validate().map_err(|e| invalid(e.to_string()))?;
        mast_from_height(self.start.fork_height, &self.mast)
            .map_err(|e| invalid(format!("mast lift curve: {e}")))?;
        plan_withdraw(self.start.fork_height, self.start.fork_tilt, self.withdraw)
            .map_err(|e| invalid(format!("withdrawal tuning: {e}")))?;
        for (what, value) in [
            ("camera.noise_sigma", self.camera.noise_sigma),
            ("tracker.cycle_period", self.tracker.cycle_period),
            ("tracker.descend_step", self.tracker.descend_step),
            ("tracker.halt_timeout", self.tracker.halt_timeout),
        ] {
            if !(value >= 0.0) {
                return Err(invalid(format!("{what} must be non-negative, got {value}")));
            }
        }
        for (what, value, limit) in [
            ("camera.fov_h_deg", self.camera.fov_h, std::f64::consts::PI),
            ("camera.fov_v_deg", self.camera.fov_v, std::f64::consts::PI),
        ] {
            if !(value > 0.0 && value < limit) {
                return Err(invalid(format!("{what} must be in (0, 180), got {value}")));
            }
        }
        for (what, value) in [
            ("scene.pallet_width", self.scene.pallet_width),
            ("scene.deck_height", self.scene.deck_height),
            ("scene.bed_thickness", self.scene.bed_thickness),
        ] {
            if !(value > 0.0) {
                return Err(invalid(format!("{what} must be positive, got {value}")));
            }
        }
        for v in self.scene.load_size.iter().chain(self.scene.bed_size.iter()) {
            if !(*v > 0.0) {
                return Err(invalid(format!("scene box sizes must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

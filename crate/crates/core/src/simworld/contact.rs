//! Quasi-static contact settling for the pallet, blade and surface.
//!
//! Every call finds the pose the pallet falls into under gravity given the
//! current fork joints, then the forces that hold it there. Hypotheses are
//! tried from "fully carried" downward and the first self-consistent one
//! wins:
//!
//! 1. Carried: the channel ceiling rests along the blade, corners airborne.
//! 2. Pivot: one corner grounded, the ceiling touching the blade at one
//!    end of the overlap, the rest of the channel clear.
//! 3. Pinched: the channel has run out of play; the blade is squeezed
//!    between the ceiling at one end and the floor at the other while a
//!    corner carries the pile. The fork rides on the floor board instead
//!    of its chain.
//! 4. Flat: both corners down. The blade floats in the channel or rests
//!    on its floor.
//!
//! All force balances are vertical-only with moments about contact points;
//! inclines stay shallow so cosine corrections to lever arms are dropped,
//! while the pose geometry itself is exact.

use super::{WorldParams, WorldState, GRAVITY};

/// Contact forces below this are treated as zero.
pub(crate) const FORCE_EPS: f64 = 1e-6;
/// Penetrations shallower than this are accepted as touching.
const GAP_TOL: f64 = 1e-9;
const BISECT_ITERS: usize = 80;
/// Pitch bracket half-width around the working angles, radians.
const BRACKET_PAD: f64 = 0.35;

/// Which hypothesis settled the pallet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContactMode {
    Carried,
    Pivot,
    Pinched,
    Flat,
    /// Blade and pallet no longer overlap.
    #[default]
    Clear,
}

/// Where the load paths run after settling. Positions are world x, forces
/// newtons, all non-negative.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactReport {
    pub mode: ContactMode,
    /// Corner rests: upward force from the surface on the pallet.
    pub surface: Vec<(f64, f64)>,
    /// Pallet hanging on the blade: downward force on the blade top.
    pub ceiling: Vec<(f64, f64)>,
    /// Blade resting on the channel floor: downward force on the board.
    pub floor: Vec<(f64, f64)>,
    /// Blade-pallet overlap interval, if any.
    pub span: Option<(f64, f64)>,
    /// Fork held by contact rather than its lift chain.
    pub fork_clamped: bool,
}

impl ContactReport {
    pub fn n_surface(&self) -> f64 {
        self.surface.iter().map(|c| c.1).sum()
    }
    pub fn n_ceiling(&self) -> f64 {
        self.ceiling.iter().map(|c| c.1).sum()
    }
    pub fn n_floor(&self) -> f64 {
        self.floor.iter().map(|c| c.1).sum()
    }
}

/// Pallet pose candidate in the vertical plane.
#[derive(Debug, Clone, Copy)]
struct Pose {
    z_p: f64,
    pitch: f64,
}

/// Values fixed for one settling call.
struct Ctx<'a> {
    p: &'a WorldParams,
    heel_x: f64,
    tip_x: f64,
    theta: f64,
    tan_theta: f64,
    pallet_x: f64,
    surface_tilt: f64,
    anchor_x: f64,
    anchor_z: f64,
    w_pallet: f64,
    w_fork: f64,
}

impl Ctx<'_> {
    fn surface_z(&self, x: f64) -> f64 {
        self.anchor_z + self.surface_tilt.tan() * (x - self.anchor_x)
    }

    fn blade_z(&self, x: f64, z_f: f64) -> f64 {
        z_f - self.tan_theta * (x - self.heel_x)
    }

    /// `side` is +1 for the front (+x) corner, -1 for the rear.
    fn corner_x(&self, pose: Pose, side: f64) -> f64 {
        self.pallet_x + side * 0.5 * self.p.pallet.length * pose.pitch.cos()
    }

    fn corner_z(&self, pose: Pose, side: f64) -> f64 {
        pose.z_p - side * 0.5 * self.p.pallet.length * pose.pitch.sin()
    }

    fn corner_gap(&self, pose: Pose, side: f64) -> f64 {
        self.corner_z(pose, side) - self.surface_z(self.corner_x(pose, side))
    }

    /// Pallet bottom face line.
    fn bottom_z(&self, pose: Pose, x: f64) -> f64 {
        pose.z_p - pose.pitch.tan() * (x - self.pallet_x)
    }

    fn floor_z(&self, pose: Pose, x: f64) -> f64 {
        self.bottom_z(pose, x) + self.p.pallet.floor_offset / pose.pitch.cos()
    }

    fn ceiling_z(&self, pose: Pose, x: f64) -> f64 {
        let lift = self.p.pallet.floor_offset + 2.0 * self.p.pallet.clearance;
        self.bottom_z(pose, x) + lift / pose.pitch.cos()
    }

    fn ceiling_gap(&self, pose: Pose, x: f64, z_f: f64) -> f64 {
        self.ceiling_z(pose, x) - self.blade_z(x, z_f)
    }

    fn floor_gap(&self, pose: Pose, x: f64, z_f: f64) -> f64 {
        self.blade_z(x, z_f) - self.floor_z(pose, x)
    }

    /// Blade-pallet horizontal overlap for this pitch.
    fn span(&self, pitch: f64) -> Option<(f64, f64)> {
        let half = 0.5 * self.p.pallet.length * pitch.cos();
        let lo = self.heel_x.max(self.pallet_x - half);
        let hi = self.tip_x.min(self.pallet_x + half);
        (hi - lo > GAP_TOL).then_some((lo, hi))
    }

    fn com_x(&self, pitch: f64) -> f64 {
        self.pallet_x + self.p.pallet.com_offset * pitch.cos()
    }

    /// Pose with corner `side` resting on the surface at the given pitch.
    fn corner_grounded(&self, side: f64, pitch: f64) -> Pose {
        let half = 0.5 * self.p.pallet.length;
        let x_k = self.pallet_x + side * half * pitch.cos();
        let z_p = self.surface_z(x_k) + side * half * pitch.sin();
        Pose { z_p, pitch }
    }
}

/// Settles the pallet and fork for the current joints. Writes the pallet
/// pose, the (possibly contact-raised) fork height and the contact report
/// back into `world`.
pub fn resolve_contacts(world: &mut WorldState, params: &WorldParams) {
    let ctx = Ctx {
        p: params,
        heel_x: world.fork.heel_x,
        tip_x: world.fork.heel_x + params.fork.blade_length * world.fork.tilt.cos(),
        theta: world.fork.tilt,
        tan_theta: world.fork.tilt.tan(),
        pallet_x: world.pallet_x,
        surface_tilt: world.surface_tilt,
        anchor_x: params.surface.anchor_x,
        anchor_z: params.surface.anchor_z,
        w_pallet: params.pallet.mass * GRAVITY,
        w_fork: params.fork.mass * GRAVITY,
    };
    let z_chain = world.fork.height;

    let (pose, z_fork, report) = settle(&ctx, z_chain);
    world.pallet_z = pose.z_p;
    world.pallet_pitch = pose.pitch;
    world.fork.height = z_fork;
    world.contacts = report;
}

fn settle(ctx: &Ctx, z_chain: f64) -> (Pose, f64, ContactReport) {
    if let Some(result) = try_carried(ctx, z_chain) {
        return result;
    }
    if let Some(result) = try_pivot_family(ctx, z_chain) {
        return result;
    }
    flat(ctx, z_chain)
}

/// Hypothesis 1: ceiling flush along the blade, both corners airborne,
/// weight between the overlap ends.
fn try_carried(ctx: &Ctx, z_chain: f64) -> Option<(Pose, f64, ContactReport)> {
    let lift = ctx.p.pallet.floor_offset + 2.0 * ctx.p.pallet.clearance;
    let pose = Pose {
        z_p: ctx.blade_z(ctx.pallet_x, z_chain) - lift / ctx.theta.cos(),
        pitch: ctx.theta,
    };
    let (lo, hi) = ctx.span(pose.pitch)?;
    let com = ctx.com_x(pose.pitch);
    if !(lo..=hi).contains(&com) {
        return None;
    }
    if ctx.corner_gap(pose, 1.0) < -GAP_TOL || ctx.corner_gap(pose, -1.0) < -GAP_TOL {
        return None;
    }
    // Static equivalent of the line contact: end forces by the lever rule.
    let n_lo = ctx.w_pallet * (hi - com) / (hi - lo);
    let n_hi = ctx.w_pallet - n_lo;
    let report = ContactReport {
        mode: ContactMode::Carried,
        surface: vec![],
        ceiling: vec![(lo, n_lo), (hi, n_hi)],
        floor: vec![],
        span: Some((lo, hi)),
        fork_clamped: false,
    };
    Some((pose, z_chain, report))
}

/// Hypotheses 2 and 3: one grounded corner plus blade contact. Tries each
/// corner as the ground pivot and each overlap end as the hang point; the
/// first statically valid combination wins. Channel floor interference
/// turns the pivot into a pinch.
fn try_pivot_family(ctx: &Ctx, z_chain: f64) -> Option<(Pose, f64, ContactReport)> {
    let carried_pose = Pose {
        z_p: ctx.blade_z(ctx.pallet_x, z_chain)
            - (ctx.p.pallet.floor_offset + 2.0 * ctx.p.pallet.clearance) / ctx.theta.cos(),
        pitch: ctx.theta,
    };
    let gap_front = ctx.corner_gap(carried_pose, 1.0);
    let gap_rear = ctx.corner_gap(carried_pose, -1.0);
    // First-touch corner leads; the other is the fallback for tip-over
    // geometries near the end of withdrawal.
    let corner_order = if gap_front <= gap_rear { [1.0, -1.0] } else { [-1.0, 1.0] };

    for side in corner_order {
        for far_end in [true, false] {
            if let Some(result) = try_pivot(ctx, z_chain, side, far_end) {
                return Some(result);
            }
        }
    }
    None
}

fn try_pivot(
    ctx: &Ctx,
    z_chain: f64,
    side: f64,
    far_end: bool,
) -> Option<(Pose, f64, ContactReport)> {
    // Hang-point x for a candidate pitch: one end of the overlap, picked
    // far from or near to the pivot corner.
    let hang_x = |pitch: f64| -> Option<f64> {
        let (lo, hi) = ctx.span(pitch)?;
        let far = if side > 0.0 { lo } else { hi };
        let near = if side > 0.0 { hi } else { lo };
        Some(if far_end { far } else { near })
    };
    let gap_at = |pitch: f64| -> Option<f64> {
        let pose = ctx.corner_grounded(side, pitch);
        Some(ctx.ceiling_gap(pose, hang_x(pitch)?, z_chain))
    };

    let lo_pitch = ctx.theta.min(-ctx.surface_tilt) - BRACKET_PAD;
    let hi_pitch = ctx.theta.max(-ctx.surface_tilt) + BRACKET_PAD;
    let f_lo = gap_at(lo_pitch)?;
    let f_hi = gap_at(hi_pitch)?;
    if f_lo == 0.0 && f_hi == 0.0 {
        return None;
    }
    if f_lo.signum() == f_hi.signum() {
        return None;
    }
    let (mut a, mut b) = (lo_pitch, hi_pitch);
    let mut f_a = f_lo;
    for _ in 0..BISECT_ITERS {
        let m = 0.5 * (a + b);
        let f_m = gap_at(m)?;
        if f_m == 0.0 {
            a = m;
            break;
        }
        if f_m.signum() == f_a.signum() {
            a = m;
            f_a = f_m;
        } else {
            b = m;
        }
    }
    let pitch = 0.5 * (a + b);
    let pose = ctx.corner_grounded(side, pitch);
    let (lo, hi) = ctx.span(pitch)?;
    let x_e = hang_x(pitch)?;
    let x_k = ctx.corner_x(pose, side);

    // Channel floor interference: the play has run out, this is a pinch.
    if ctx.floor_gap(pose, lo, z_chain) < -GAP_TOL || ctx.floor_gap(pose, hi, z_chain) < -GAP_TOL {
        return try_pinch(ctx, z_chain, side, far_end);
    }
    // Other corner grounded too: flat handles it.
    if ctx.corner_gap(pose, -side) < -GAP_TOL {
        return None;
    }
    // Lever rule between the corner and the hang point.
    let com = ctx.com_x(pitch);
    let n_e = ctx.w_pallet * (com - x_k) / (x_e - x_k);
    let n_k = ctx.w_pallet - n_e;
    if n_e < -FORCE_EPS || n_k < -FORCE_EPS {
        return None;
    }
    let report = ContactReport {
        mode: ContactMode::Pivot,
        surface: vec![(x_k, n_k.max(0.0))],
        ceiling: vec![(x_e, n_e.max(0.0))],
        floor: vec![],
        span: Some((lo, hi)),
        fork_clamped: false,
    };
    Some((pose, z_chain, report))
}

/// Hypothesis 3: ceiling at one overlap end, floor at the other, corner
/// grounded. The relative pitch is fixed by the channel play; the fork is
/// pushed up off its chain by the floor board.
fn try_pinch(
    ctx: &Ctx,
    z_chain: f64,
    side: f64,
    ceiling_far: bool,
) -> Option<(Pose, f64, ContactReport)> {
    let c2 = 2.0 * ctx.p.pallet.clearance;
    let f0 = ctx.p.pallet.floor_offset;
    let half = 0.5 * ctx.p.pallet.length;

    // Fixed point on the pitch: the gap equations are linear in tan(pitch)
    // once cos(pitch) is frozen, and the cosine converges in a few rounds.
    let mut pitch = ctx.theta;
    let (mut x_ceil, mut x_floor) = (0.0, 0.0);
    for _ in 0..12 {
        let (lo, hi) = ctx.span(pitch)?;
        let far = if side > 0.0 { lo } else { hi };
        let near = if side > 0.0 { hi } else { lo };
        x_ceil = if ceiling_far { far } else { near };
        x_floor = if ceiling_far { near } else { far };
        if (x_ceil - x_floor).abs() < 1e-9 {
            return None;
        }
        let t = ctx.tan_theta + (c2 / pitch.cos()) / (x_ceil - x_floor);
        pitch = t.atan();
    }
    // Corner on the surface fixes the pallet; the floor equation then
    // fixes the blade height the fork is clamped at.
    let pose = ctx.corner_grounded(side, pitch);
    if ctx.corner_gap(pose, -side) < -GAP_TOL {
        // The squeeze pitch would push the other corner underground: the
        // pallet reaches flat before the play runs out.
        return None;
    }
    let z_fork = pose.z_p - pitch.tan() * (x_floor - ctx.pallet_x) + f0 / pitch.cos()
        + ctx.tan_theta * (x_floor - ctx.heel_x);
    if z_fork < z_chain - GAP_TOL {
        // The chain still holds the blade above the squeeze: not a pinch.
        return None;
    }
    let x_k = ctx.pallet_x + side * half * pitch.cos();
    let com = ctx.com_x(pitch);
    // Pallet moments about the corner with the fork riding the floor
    // board: N_ceil spans the squeeze, N_floor returns it plus the fork
    // weight, the corner carries everything.
    let n_ceil =
        (ctx.w_pallet * (com - x_k) + ctx.w_fork * (x_floor - x_k)) / (x_ceil - x_floor);
    if n_ceil < -FORCE_EPS {
        return None;
    }
    let n_ceil = n_ceil.max(0.0);
    let n_floor = ctx.w_fork + n_ceil;
    let n_k = ctx.w_pallet + ctx.w_fork;
    let report = ContactReport {
        mode: ContactMode::Pinched,
        surface: vec![(x_k, n_k)],
        ceiling: vec![(x_ceil, n_ceil)],
        floor: vec![(x_floor, n_floor)],
        span: ctx.span(pitch),
        fork_clamped: true,
    };
    Some((pose, z_fork, report))
}

/// Hypothesis 4: both corners down, pitch matching the surface. The blade
/// floats in the channel, rests on its floor, or is already clear.
fn flat(ctx: &Ctx, z_chain: f64) -> (Pose, f64, ContactReport) {
    let pitch = -ctx.surface_tilt;
    let pose = Pose { z_p: ctx.surface_z(ctx.pallet_x), pitch };
    let x_rear = ctx.corner_x(pose, -1.0);
    let x_front = ctx.corner_x(pose, 1.0);
    let com = ctx.com_x(pitch);

    let Some((lo, hi)) = ctx.span(pitch) else {
        let n_front = ctx.w_pallet * (com - x_rear) / (x_front - x_rear);
        let report = ContactReport {
            mode: ContactMode::Clear,
            surface: vec![(x_rear, ctx.w_pallet - n_front), (x_front, n_front)],
            ceiling: vec![],
            floor: vec![],
            span: None,
            fork_clamped: false,
        };
        return (pose, z_chain, report);
    };

    // Raise the fork out of the floor board if the chain let it sink.
    let gap_lo = ctx.floor_gap(pose, lo, z_chain);
    let gap_hi = ctx.floor_gap(pose, hi, z_chain);
    let deficit = (-gap_lo.min(gap_hi)).max(0.0);
    let z_fork = z_chain + deficit;
    let clamped = deficit > 0.0;
    let floor = if clamped {
        let x_rest = if gap_lo <= gap_hi { lo } else { hi };
        vec![(x_rest, ctx.w_fork)]
    } else {
        vec![]
    };

    // Corner loads: pallet weight plus whatever the blade rests on the
    // floor board, by moments about the rear corner.
    let mut down = ctx.w_pallet;
    let mut moment = ctx.w_pallet * (com - x_rear);
    if let Some(&(x_rest, n)) = floor.first() {
        down += n;
        moment += n * (x_rest - x_rear);
    }
    let n_front = moment / (x_front - x_rear);
    let report = ContactReport {
        mode: ContactMode::Flat,
        surface: vec![(x_rear, down - n_front), (x_front, n_front)],
        ceiling: vec![],
        floor,
        span: Some((lo, hi)),
        fork_clamped: clamped,
    };
    (pose, z_fork, report)
}

//! One receding-horizon planning cycle: candidate generation over the FOV
//! ensemble, collision pruning, aggregate costing, local-goal selection,
//! control-horizon stitching, and emergency stops.
//!
//! Each cycle solves one minimum-snap segment per candidate endpoint (with a
//! per-candidate weight from the speed profile), discards colliding
//! segments, and selects the argmin of
//! `c = k1·d_i/d_max + k2·c_coll` where `d_i` is the endpoint's distance to
//! the intermediate point (the collision-free endpoint closest to the goal).
//! When no collision-free candidate survives, the cycle reports an
//! emergency stop.

use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::collision::{collision_cost, is_colliding, PointCloudIndex, SafetyParams};
use crate::error::{Error, Result};
use crate::fov::{self, FovParams, Pose};
use crate::trajgen::{
    candidate_speed, check_feasibility, feasibility_samples, solve_segment,
    solve_segment_fixed_time, solve_yaw, speed_to_weight, wrap_angle, ActuationLimits, FlatState,
    TrajectorySegment, VelocityProfileParams, GRAVITY,
};

/// Cost weights and cycle timing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerParams {
    /// Goal-distance weight, in (0, 1).
    pub k1: f64,
    /// Collision-cost weight, in (0, 1).
    pub k2: f64,
    /// Planning cycle period δt [s].
    pub cycle_dt: f64,
    /// Portion of each reference actually tracked before switching [s].
    pub control_horizon: f64,
    /// Goal acceptance radius [m].
    pub goal_radius: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            k1: 0.7,
            k2: 0.3,
            cycle_dt: 1.0 / 15.0,
            control_horizon: 1.0 / 15.0,
            goal_radius: 0.5,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1 < 1.0 && self.k2 > 0.0 && self.k2 < 1.0) {
            return Err(Error::invalid("k1 and k2 must lie in (0, 1)"));
        }
        if !(self.cycle_dt > 0.0 && self.control_horizon > 0.0) {
            return Err(Error::invalid("cycle_dt and control_horizon must be > 0"));
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::invalid("goal_radius must be > 0"));
        }
        Ok(())
    }
}

/// Everything a planning cycle needs besides the instantaneous state.
#[derive(Debug, Clone)]
pub struct PlannerConfig {
    pub fov: FovParams,
    pub velocity: VelocityProfileParams,
    pub limits: ActuationLimits,
    pub safety: SafetyParams,
    pub params: PlannerParams,
    /// Sensor position in the body frame [m].
    pub sensor_offset: Vector3<f64>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            fov: FovParams::default(),
            velocity: VelocityProfileParams::default(),
            limits: ActuationLimits::default(),
            safety: SafetyParams::default(),
            params: PlannerParams::default(),
            sensor_offset: Vector3::zeros(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.fov.validate()?;
        self.velocity.validate()?;
        self.limits.validate()?;
        self.safety.validate()?;
        self.params.validate()
    }
}

/// Per-cycle context: mission clock and current yaw state.
#[derive(Debug, Clone, Copy)]
pub struct CycleContext {
    /// Time since the start of the whole maneuver [s].
    pub elapsed: f64,
    pub yaw: f64,
    pub yaw_rate: f64,
    /// Remaining distance fed to the speed profile. Defaults to the
    /// goal distance; interception missions pass the target distance
    /// instead, which stays at the standoff and keeps the speed allowance
    /// strictly positive while following a moving target.
    pub remaining_distance: Option<f64>,
}

impl CycleContext {
    pub fn new(elapsed: f64, yaw: f64, yaw_rate: f64) -> Self {
        Self {
            elapsed,
            yaw,
            yaw_rate,
            remaining_distance: None,
        }
    }
}

/// Evaluation of one collision-free candidate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CandidateEvaluation {
    /// Index into the FOV ensemble.
    pub index: usize,
    pub endpoint: [f64; 3],
    /// Distance to the intermediate point [m].
    pub d_i: f64,
    /// Collision cost in [0, 1].
    pub c_coll: f64,
    /// Minimum clearance along the candidate [m].
    pub rho: f64,
    /// Aggregate cost `k1·d_i/d_max + k2·c_coll`.
    pub c_total: f64,
}

/// Outcome of a cycle: a reference segment or an emergency-stop marker.
#[derive(Debug, Clone)]
pub enum SelectedPlan {
    Segment(TrajectorySegment),
    EmergencyStop,
}

impl SelectedPlan {
    pub fn is_stop(&self) -> bool {
        matches!(self, SelectedPlan::EmergencyStop)
    }
}

/// Result of one receding-horizon planning cycle.
#[derive(Debug, Clone)]
pub struct PlanCycleResult {
    pub selected: SelectedPlan,
    pub local_goal: Option<Vector3<f64>>,
    pub intermediate_point: Option<Vector3<f64>>,
    pub evaluations: Vec<CandidateEvaluation>,
    /// Wall-clock duration of the cycle [s]; diagnostic only, excluded from
    /// deterministic data outputs.
    pub timing: f64,
}

/// The collision-free ensemble point closest to the goal; ties break toward
/// the earliest index.
pub fn intermediate_point(ensemble_world: &[Vector3<f64>], goal: &Vector3<f64>) -> Result<Vector3<f64>> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in ensemble_world.iter().enumerate() {
        let d = (p - goal).norm();
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| ensemble_world[i]).ok_or(Error::NoCandidates)
}

/// Floor applied to the candidate speed before inverting the calibration
/// curve, so the weight stays positive at mission start when erf(k_t·t) = 0.
const SPEED_FLOOR: f64 = 0.05;

/// The candidate speed also gets floored at this fraction of the boundary
/// speed: a segment that starts at ‖v₀‖ moves at least that fast, and a
/// near-zero weight with a moving boundary would demand an enormous terminal
/// time whose polynomial swings far outside the actuation envelope.
const BOUNDARY_SPEED_FRACTION: f64 = 0.8;

/// Run one planning cycle from the reference state `state` toward `goal`.
pub fn plan_cycle(
    state: &FlatState,
    goal: &Vector3<f64>,
    cloud: &PointCloudIndex,
    pose: &Pose,
    ctx: &CycleContext,
    cfg: &PlannerConfig,
) -> Result<PlanCycleResult> {
    let t0 = Instant::now();
    if !state.is_finite() || !goal.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite planning state or goal"));
    }
    let mut ensemble = fov::build_ensemble(&cfg.fov)?;
    fov::to_world(&mut ensemble, pose, &cfg.sensor_offset)?;

    let d_goal = ctx
        .remaining_distance
        .unwrap_or_else(|| (goal - state.position).norm());

    struct Free {
        index: usize,
        seg: TrajectorySegment,
        endpoint: Vector3<f64>,
        c_coll: f64,
        rho: f64,
    }
    let mut free: Vec<Free> = Vec::with_capacity(ensemble.len());
    let v_floor = SPEED_FLOOR.max(BOUNDARY_SPEED_FRACTION * state.velocity.norm());
    for (index, e) in ensemble.iter().enumerate() {
        let v = candidate_speed(ctx.elapsed, d_goal, e.polar.0, &cfg.velocity)?;
        let k = speed_to_weight(v.max(v_floor), &cfg.velocity)?;
        let end = FlatState::at_rest(e.world_xyz);
        let Ok(seg) = solve_segment(state, &end, k, &cfg.limits) else {
            // Degenerate or infeasible candidates simply drop out.
            continue;
        };
        if is_colliding(&seg, cloud, &cfg.safety) {
            continue;
        }
        let (c_coll, rho) = collision_cost(&seg, cloud, &cfg.safety);
        free.push(Free {
            index,
            seg,
            endpoint: e.world_xyz,
            c_coll,
            rho,
        });
    }

    if free.is_empty() {
        return Ok(PlanCycleResult {
            selected: SelectedPlan::EmergencyStop,
            local_goal: None,
            intermediate_point: None,
            evaluations: Vec::new(),
            timing: t0.elapsed().as_secs_f64(),
        });
    }

    let endpoints: Vec<Vector3<f64>> = free.iter().map(|f| f.endpoint).collect();
    let ip = intermediate_point(&endpoints, goal)?;
    let d: Vec<f64> = endpoints.iter().map(|p| (p - ip).norm()).collect();
    let d_max = d.iter().cloned().fold(0.0f64, f64::max);

    let mut evaluations = Vec::with_capacity(free.len());
    let mut best: Option<(f64, usize)> = None;
    for (slot, f) in free.iter().enumerate() {
        let d_norm = if d_max > 1e-12 { d[slot] / d_max } else { 0.0 };
        let c_total = cfg.params.k1 * d_norm + cfg.params.k2 * f.c_coll;
        evaluations.push(CandidateEvaluation {
            index: f.index,
            endpoint: [f.endpoint.x, f.endpoint.y, f.endpoint.z],
            d_i: d[slot],
            c_coll: f.c_coll,
            rho: f.rho,
            c_total,
        });
        if best.map_or(true, |(bc, _)| c_total < bc) {
            best = Some((c_total, slot));
        }
    }
    let (_, winner) = best.expect("non-empty candidate set");
    let mut selected = free[winner].seg.clone();
    selected.yaw_coeffs = plan_segment_yaw(&selected, ctx)?;

    Ok(PlanCycleResult {
        selected: SelectedPlan::Segment(selected),
        local_goal: Some(free[winner].endpoint),
        intermediate_point: Some(ip),
        evaluations,
        timing: t0.elapsed().as_secs_f64(),
    })
}

/// Yaw plan for a selected segment: aim the heading along the segment chord
/// (candidates terminate at rest, and long low-weight segments overshoot
/// mid-horizon, so neither terminal nor peak velocity carries a usable
/// heading); hold the current yaw when the segment barely moves laterally.
fn plan_segment_yaw(seg: &TrajectorySegment, ctx: &CycleContext) -> Result<[f64; 4]> {
    let chord = seg.end().position - seg.start().position;
    let psi_t = if chord.xy().norm() < 0.05 {
        ctx.yaw
    } else {
        let raw = chord.y.atan2(chord.x);
        ctx.yaw + wrap_angle(raw - ctx.yaw)
    };
    solve_yaw(ctx.yaw, ctx.yaw_rate, psi_t, 0.0, seg.terminal_time)
}

/// Flat state on the current reference at the stitch time, seeding the next
/// cycle's boundary condition (C³ continuity across the seam).
pub fn stitch(current: &TrajectorySegment, t_now: f64, next_start_time: f64) -> Result<FlatState> {
    if !(t_now <= next_start_time) {
        return Err(Error::invalid(format!(
            "stitch time {next_start_time} precedes current time {t_now}"
        )));
    }
    current.eval(next_start_time).map(|(fs, _)| fs)
}

/// Deceleration available for emergency stops: the horizontal acceleration
/// left over at full thrust, `sqrt((f_max/m)² - g²)`, floored at 1 m/s² for
/// vehicles with no thrust margin.
pub fn stop_deceleration(limits: &ActuationLimits) -> f64 {
    let a_max = limits.f_max / limits.mass;
    let horiz_sq = a_max * a_max - GRAVITY * GRAVITY;
    if horiz_sq > 1.0 {
        horiz_sq.sqrt()
    } else {
        1.0
    }
}

/// Feasible deceleration-to-rest segment along the current velocity
/// direction; the stop point sits `‖v‖²/(2·a_stop)` ahead.
pub fn emergency_stop(state: &FlatState, limits: &ActuationLimits) -> Result<TrajectorySegment> {
    if !state.is_finite() {
        return Err(Error::invalid("non-finite state"));
    }
    let speed = state.velocity.norm();
    if speed < 1e-6 {
        return Ok(TrajectorySegment::hold(state.position, 1.0, 0.0));
    }
    let a_stop = stop_deceleration(limits);
    let stop_point = state.position + state.velocity / speed * (speed * speed / (2.0 * a_stop));
    let end = FlatState::at_rest(stop_point);
    // Fixed-horizon min-snap with feasibility retries; 1.5·v/a is a stopping
    // time with margin over the bang-bang bound v/a.
    let mut t = (1.5 * speed / a_stop).max(0.3);
    let mut last = None;
    for _ in 0..=limits.max_retries {
        let seg = solve_segment_fixed_time(state, &end, 0.0, t)?;
        match check_feasibility(&seg, limits, feasibility_samples(t))? {
            None => return Ok(seg),
            Some(v) => last = Some(v),
        }
        t *= 1.25;
    }
    Err(Error::InfeasibleSegment {
        retries: limits.max_retries,
        t_final: t,
        detail: last.map(|v| v.to_string()).unwrap_or_default(),
    })
}

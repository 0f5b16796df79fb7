//! World generation (Poisson forests), synthetic depth sensing, closed-loop
//! trials, and Monte Carlo campaigns.
//!
//! A trial runs the full pipeline in simulated time: 15 Hz sensing and
//! replanning over 1 kHz control and dynamics. Everything is seeded; a
//! config with the same seed reproduces a trial bit-identically, and
//! per-trial seeds derive from the root seed by a splittable scheme so
//! campaign results do not depend on worker count.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{build_index, SafetyParams};
use crate::error::{Error, Result};
use crate::fov::{FovParams, Pose};
use crate::planner::{
    emergency_stop, plan_cycle, CycleContext, PlannerConfig, PlannerParams, SelectedPlan,
};
use crate::radiation::{
    decide, perceived_intensity, preset, run_window, simulate_counts, DetectionState, SourceModel,
};
use crate::target::{
    kf_predict, kf_update, measure, KfState, MeasurementNoise, TargetModel, TargetTruth,
};
use crate::trajgen::{ActuationLimits, TrajectorySegment, VelocityProfileParams};
use crate::vehicle::{
    desired_attitude, track_step, vee, ControllerGains, VehicleParams, VehicleState,
};

pub const CONTROL_DT: f64 = 1e-3;

/// Seed-stream tags so the same root seed feeds independent generators.
const STREAM_FOREST: u64 = 0xF0;
const STREAM_SENSOR: u64 = 0x5E;
const STREAM_MEAS: u64 = 0x3A;
const STREAM_COUNTS: u64 = 0xC0;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed from a root seed and a word path. Stable
/// across platforms and worker counts.
pub fn derive_seed(root: u64, words: &[u64]) -> u64 {
    let mut z = splitmix64(root ^ 0xA5A5_A5A5_A5A5_A5A5);
    for &w in words {
        z = splitmix64(z ^ splitmix64(w));
    }
    z
}

/// Vertical cylinder obstacle standing on the ground plane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    /// Axis position in the xy plane [m].
    pub center: [f64; 2],
    pub radius: f64,
    pub height: f64,
}

impl Cylinder {
    fn center_v(&self) -> Vector2<f64> {
        Vector2::new(self.center[0], self.center[1])
    }

    /// Signed distance from a point to the cylinder surface (negative
    /// inside).
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let radial = (p.xy() - self.center_v()).norm() - self.radius;
        if p.z >= 0.0 && p.z <= self.height {
            radial
        } else {
            let dz = if p.z < 0.0 { -p.z } else { p.z - self.height };
            (radial.max(0.0).powi(2) + dz * dz).sqrt()
        }
    }
}

/// Axis-aligned ground rectangle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn area(&self) -> f64 {
        (self.x[1] - self.x[0]).max(0.0) * (self.y[1] - self.y[0]).max(0.0)
    }
}

/// A sampled obstacle field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub obstacles: Vec<Cylinder>,
    pub density: f64,
    pub extent: Rect,
}

/// Sample a Poisson forest: obstacle count `~ Poisson(density·area)`,
/// centers uniform over the extent, with centers landing inside any
/// `keep_clear` disc (center, radius) redrawn.
pub fn sample_forest(
    density: f64,
    extent: &Rect,
    radius_range: (f64, f64),
    height: f64,
    keep_clear: &[(Vector2<f64>, f64)],
    seed: u64,
) -> Result<Forest> {
    if !(density >= 0.0) {
        return Err(Error::invalid("density must be >= 0"));
    }
    if extent.area() <= 0.0 {
        return Err(Error::invalid("forest extent must have positive area"));
    }
    if !(radius_range.0 > 0.0 && radius_range.0 <= radius_range.1) {
        return Err(Error::invalid("invalid obstacle radius range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = density * extent.area();
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| Error::invalid(format!("poisson: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let mut obstacles = Vec::with_capacity(count);
    for _ in 0..count {
        let radius = rng.gen_range(radius_range.0..=radius_range.1);
        let mut attempts = 0;
        let center = loop {
            let c = Vector2::new(
                rng.gen_range(extent.x[0]..extent.x[1]),
                rng.gen_range(extent.y[0]..extent.y[1]),
            );
            let blocked = keep_clear.iter().any(|(p, r)| (c - p).norm() < r + radius);
            if !blocked {
                break c;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::invalid(
                    "cannot place obstacle outside keep-clear discs",
                ));
            }
        };
        obstacles.push(Cylinder {
            center: [center.x, center.y],
            radius,
            height,
        });
    }
    Ok(Forest {
        obstacles,
        density,
        extent: *extent,
    })
}

/// Depth-sensor model for the synthetic point cloud.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    /// Voxel-filter cell size [m].
    pub voxel: f64,
    /// Range noise std [m].
    pub noise_std: f64,
    /// Angular spacing of the cast rays [rad].
    pub ray_dtheta: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            voxel: 0.125,
            noise_std: 0.01,
            ray_dtheta: 0.035,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel > 0.0 && self.ray_dtheta > 0.0 && self.noise_std >= 0.0) {
            return Err(Error::invalid("invalid sensor model parameters"));
        }
        Ok(())
    }
}

fn ray_cylinder_hit(origin: &Vector3<f64>, dir: &Vector3<f64>, cyl: &Cylinder) -> Option<f64> {
    let o = origin.xy() - cyl.center_v();
    let u = dir.xy();
    let a = u.norm_squared();
    if a < 1e-12 {
        return None; // vertical ray: side surface parallel, caps ignored
    }
    let b = 2.0 * o.dot(&u);
    let c = o.norm_squared() - cyl.radius * cyl.radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
        if t > 0.0 {
            let z = origin.z + t * dir.z;
            if z >= 0.0 && z <= cyl.height {
                return Some(t);
            }
        }
    }
    None
}

/// Cast the FOV ray grid against the cylinder field, perturb hit ranges with
/// Gaussian noise, and voxel-downsample to one point per cell.
pub fn synth_pointcloud(
    world: &[Cylinder],
    pose: &Pose,
    fov: &FovParams,
    sensor: &SensorModel,
    sensor_offset: &Vector3<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vector3<f64>> {
    let origin = pose.position + pose.rotation * sensor_offset;
    // Prune to cylinders reachable within the sensing range.
    let nearby: Vec<&Cylinder> = world
        .iter()
        .filter(|c| (origin.xy() - c.center_v()).norm() <= fov.r_max + c.radius + 1.0)
        .collect();
    if nearby.is_empty() {
        return Vec::new();
    }
    // Odd counts per axis keep the boresight ray in the grid.
    let mut n_theta = ((2.0 * fov.phi_y / sensor.ray_dtheta).ceil() as usize).max(1) + 1;
    if n_theta % 2 == 0 {
        n_theta += 1;
    }
    let mut n_phi = ((2.0 * fov.phi_z / sensor.ray_dtheta).ceil() as usize).max(1) + 1;
    if n_phi % 2 == 0 {
        n_phi += 1;
    }
    let noise = Normal::new(0.0, sensor.noise_std.max(f64::MIN_POSITIVE)).expect("std >= 0");
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for it in 0..n_theta {
        let theta = -fov.phi_y + 2.0 * fov.phi_y * it as f64 / (n_theta - 1) as f64;
        for ip in 0..n_phi {
            let phi = -fov.phi_z + 2.0 * fov.phi_z * ip as f64 / (n_phi - 1) as f64;
            let (st, ct) = theta.sin_cos();
            let (sp, cp) = phi.sin_cos();
            let dir = pose.rotation * Vector3::new(ct * cp, st * cp, sp);
            let mut best: Option<f64> = None;
            for cyl in &nearby {
                if let Some(t) = ray_cylinder_hit(&origin, &dir, cyl) {
                    if t >= fov.r_min && t <= fov.r_max && best.map_or(true, |b| t < b) {
                        best = Some(t);
                    }
                }
            }
            if let Some(t) = best {
                let t_noisy = if sensor.noise_std > 0.0 {
                    t + noise.sample(rng)
                } else {
                    t
                };
                let p = origin + dir * t_noisy;
                let key = (
                    (p.x / sensor.voxel).floor() as i64,
                    (p.y / sensor.voxel).floor() as i64,
                    (p.z / sensor.voxel).floor() as i64,
                );
                if seen.insert(key) {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// World description in a scenario config.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorldConfig {
    #[default]
    Empty,
    Forest {
        density: f64,
        extent: Rect,
        #[serde(default = "default_radius_range")]
        radius_range: [f64; 2],
        #[serde(default = "default_obstacle_height")]
        height: f64,
    },
    Obstacles {
        cylinders: Vec<Cylinder>,
    },
}

fn default_radius_range() -> [f64; 2] {
    [0.15, 0.4]
}

fn default_obstacle_height() -> f64 {
    4.0
}

/// Mission: fly to a static goal, or intercept a moving target.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionConfig {
    Goal {
        position: [f64; 3],
    },
    Target {
        start: [f64; 3],
        #[serde(default = "default_target_model")]
        model: TargetModel,
        /// Desired sensor-target distance [m].
        #[serde(default = "default_standoff")]
        standoff: f64,
        #[serde(default)]
        noise: MeasurementNoise,
        /// White-jerk process noise intensity [m²/s⁵].
        #[serde(default = "default_q_jerk")]
        q_jerk: f64,
        /// Consecutive seconds within interception range that count as
        /// success when no radiation window is configured.
        #[serde(default = "default_dwell")]
        dwell: f64,
    },
}

fn default_target_model() -> TargetModel {
    TargetModel::Static
}

fn default_standoff() -> f64 {
    2.5
}

fn default_q_jerk() -> f64 {
    1.0
}

fn default_dwell() -> f64 {
    5.0
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig::Goal {
            position: [12.0, 0.0, 1.2],
        }
    }
}

/// Interception counts once the sensor-target distance stays within this
/// range [m].
pub const INTERCEPT_RANGE: f64 = 3.0;

/// Rigid-body parameters in config form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleConfig {
    pub mass: f64,
    pub inertia_diag: [f64; 3],
    pub gravity: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            mass: 1.2,
            inertia_diag: [0.0082, 0.0082, 0.0148],
            gravity: crate::trajgen::GRAVITY,
        }
    }
}

impl VehicleConfig {
    pub fn params(&self) -> VehicleParams {
        VehicleParams {
            mass: self.mass,
            inertia: Matrix3::from_diagonal(&Vector3::new(
                self.inertia_diag[0],
                self.inertia_diag[1],
                self.inertia_diag[2],
            )),
            gravity: self.gravity,
        }
    }
}

/// Radiation-detection settings for a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiationConfig {
    /// Named counter preset ("gm10" or "gm90").
    pub preset: Option<String>,
    /// Explicit source model; overrides `preset` when given.
    pub source: Option<SourceModel>,
    pub alpha: f64,
    /// Sensor integration window [s].
    pub window: f64,
    /// Whether the target actually carries the source (H1 truth).
    pub source_present: bool,
}

impl Default for RadiationConfig {
    fn default() -> Self {
        Self {
            preset: None,
            source: None,
            alpha: 0.01,
            window: 200.0,
            source_present: true,
        }
    }
}

impl RadiationConfig {
    pub fn resolve_source(&self) -> Result<SourceModel> {
        if let Some(src) = self.source {
            src.validate()?;
            return Ok(src);
        }
        match &self.preset {
            Some(name) => preset(name)
                .ok_or_else(|| Error::Config(format!("unknown radiation preset '{name}'"))),
            None => Err(Error::Config(
                "radiation enabled but neither 'preset' nor 'source' given".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("radiation alpha must lie in (0, 1)".into()));
        }
        if !(self.window > 1.0) {
            return Err(Error::Config("radiation window must exceed 1 s".into()));
        }
        self.resolve_source().map(|_| ())
    }
}

/// Sweep settings for Monte Carlo campaigns.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub densities: Vec<f64>,
    pub v_max: Vec<f64>,
    pub n_trials: usize,
}

/// Detection-campaign settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub n_seeds: usize,
    /// When set, skip flight and script a constant sensor-target distance.
    pub scripted_distance: Option<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            n_seeds: 200,
            scripted_distance: None,
        }
    }
}

/// Complete scenario description; seed is mandatory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "default_max_sim_time")]
    pub max_sim_time: f64,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default = "default_start")]
    pub start: [f64; 3],
    #[serde(default)]
    pub mission: MissionConfig,
    #[serde(default)]
    pub vehicle: VehicleConfig,
    #[serde(default)]
    pub gains: ControllerGains,
    #[serde(default)]
    pub planner: PlannerParams,
    #[serde(default)]
    pub fov: FovParams,
    #[serde(default)]
    pub safety: SafetyParams,
    #[serde(default)]
    pub velocity: VelocityProfileParams,
    #[serde(default)]
    pub limits: ActuationLimits,
    #[serde(default)]
    pub sensor: SensorModel,
    /// Physical collision radius [m] (smaller than the planning radius
    /// `safety.r_robot`, which carries margin).
    #[serde(default = "default_collision_radius")]
    pub collision_radius: f64,
    #[serde(default)]
    pub sensor_offset: [f64; 3],
    #[serde(default)]
    pub radiation: Option<RadiationConfig>,
    #[serde(default)]
    pub montecarlo: Option<MonteCarloConfig>,
    #[serde(default)]
    pub detect: Option<DetectConfig>,
}

fn default_max_sim_time() -> f64 {
    45.0
}

fn default_start() -> [f64; 3] {
    [0.0, 0.0, 1.2]
}

fn default_collision_radius() -> f64 {
    0.3
}

impl ScenarioConfig {
    /// A scenario with every knob at its default and the given seed.
    pub fn with_seed(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed }))
            .expect("default scenario config")
    }

    pub fn planner_config(&self) -> PlannerConfig {
        let mut velocity = self.velocity;
        velocity.r_max = self.fov.r_max;
        PlannerConfig {
            fov: self.fov,
            velocity,
            limits: self.limits,
            safety: self.safety,
            params: self.planner,
            sensor_offset: Vector3::new(
                self.sensor_offset[0],
                self.sensor_offset[1],
                self.sensor_offset[2],
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.planner_config().validate()?;
        self.vehicle.params().validate()?;
        self.gains.validate()?;
        self.sensor.validate()?;
        if !(self.max_sim_time > 0.0) {
            return Err(Error::Config("max_sim_time must be > 0".into()));
        }
        if !(self.collision_radius > 0.0 && self.collision_radius <= self.safety.r_robot) {
            return Err(Error::Config(
                "collision_radius must lie in (0, safety.r_robot]".into(),
            ));
        }
        if let WorldConfig::Forest {
            density,
            extent,
            radius_range,
            height,
        } = &self.world
        {
            if *density < 0.0 || extent.area() <= 0.0 {
                return Err(Error::Config("invalid forest description".into()));
            }
            if !(radius_range[0] > 0.0 && radius_range[0] <= radius_range[1]) {
                return Err(Error::Config("invalid forest radius range".into()));
            }
            if !(*height > 0.0) {
                return Err(Error::Config("forest height must be > 0".into()));
            }
        }
        if let MissionConfig::Target { standoff, dwell, .. } = &self.mission {
            if !(*standoff > 0.0 && *standoff < INTERCEPT_RANGE) {
                return Err(Error::Config(format!(
                    "standoff must lie in (0, {INTERCEPT_RANGE})"
                )));
            }
            if !(*dwell > 0.0) {
                return Err(Error::Config("dwell must be > 0".into()));
            }
        }
        if let Some(r) = &self.radiation {
            r.validate()?;
            if matches!(self.mission, MissionConfig::Goal { .. })
                && self
                    .detect
                    .as_ref()
                    .map_or(true, |d| d.scripted_distance.is_none())
            {
                return Err(Error::Config(
                    "radiation detection needs a target mission or a scripted distance".into(),
                ));
            }
        }
        if let Some(mc) = &self.montecarlo {
            if mc.densities.is_empty() || mc.v_max.is_empty() || mc.n_trials == 0 {
                return Err(Error::Config("montecarlo sweep must be non-empty".into()));
            }
            if !matches!(self.world, WorldConfig::Forest { .. }) {
                return Err(Error::Config("montecarlo sweep needs a forest world".into()));
            }
        }
        Ok(())
    }

    fn goal_hint(&self) -> Vector3<f64> {
        match &self.mission {
            MissionConfig::Goal { position } => {
                Vector3::new(position[0], position[1], position[2])
            }
            MissionConfig::Target { start, .. } => Vector3::new(start[0], start[1], start[2]),
        }
    }

    /// Materialize the obstacle field (sampling forests from the forest
    /// seed stream).
    pub fn build_world(&self) -> Result<Vec<Cylinder>> {
        match &self.world {
            WorldConfig::Empty => Ok(Vec::new()),
            WorldConfig::Obstacles { cylinders } => Ok(cylinders.clone()),
            WorldConfig::Forest {
                density,
                extent,
                radius_range,
                height,
            } => {
                let start = Vector2::new(self.start[0], self.start[1]);
                let goal = self.goal_hint();
                let forest = sample_forest(
                    *density,
                    extent,
                    (radius_range[0], radius_range[1]),
                    *height,
                    &[(start, 2.0), (goal.xy(), 2.0)],
                    derive_seed(self.seed, &[STREAM_FOREST]),
                )?;
                Ok(forest.obstacles)
            }
        }
    }
}

/// Detection result attached to a trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// "H0", "H1", or "insufficient-information".
    pub verdict: String,
    pub decision_time: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub p_star: Option<f64>,
    pub threshold_log: Option<f64>,
    pub ef: Option<f64>,
    pub em: Option<f64>,
}

impl DetectionOutcome {
    fn insufficient() -> Self {
        DetectionOutcome {
            verdict: "insufficient-information".into(),
            decision_time: None,
            log_likelihood: None,
            p_star: None,
            threshold_log: None,
            ef: None,
            em: None,
        }
    }
}

/// Outcome of one closed-loop trial. Exactly one of `success`, `collision`,
/// `timeout` holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub success: bool,
    pub collision: bool,
    pub timeout: bool,
    pub time_to_goal: Option<f64>,
    pub min_clearance: Option<f64>,
    pub cycles: usize,
    pub emergency_stops: usize,
    pub detection: Option<DetectionOutcome>,
}

impl TrialOutcome {
    pub fn classify(&self) -> &'static str {
        match (self.success, self.collision, self.timeout) {
            (true, false, false) => "success",
            (false, true, false) => "collision",
            (false, false, true) => "timeout",
            _ => "invalid",
        }
    }
}

/// Full trial result: serializable outcome plus diagnostics that stay out
/// of the deterministic data files.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub outcome: TrialOutcome,
    pub detection_state: Option<DetectionState>,
    /// Wall-clock planning-cycle durations [s].
    pub cycle_times: Vec<f64>,
    /// Flown path sampled at the planning rate.
    pub path: Vec<[f64; 3]>,
}

struct MissionState {
    truth: Option<TargetTruth>,
    kf: Option<KfState>,
    standoff: f64,
    noise: MeasurementNoise,
    q_jerk: f64,
    dwell_required: f64,
    dwell: f64,
    static_goal: Option<Vector3<f64>>,
    prior_goal: Vector3<f64>,
    /// Last target position confirmed by a measurement (world frame).
    last_seen: Option<Vector3<f64>>,
    /// Planning cycles since the last accepted measurement.
    unseen_cycles: usize,
}

/// Coasting budget: the KF prediction may lead the goal for this many
/// cycles without a measurement before the goal freezes at the last
/// confirmed target position.
const MAX_COAST_CYCLES: usize = 15;

/// Squared-Mahalanobis gate on the position innovation (~10σ); rejects the
/// gross false-identification outliers while passing ordinary noise.
const INNOVATION_GATE_SQ: f64 = 100.0;

impl MissionState {
    fn new(cfg: &ScenarioConfig) -> Self {
        match &cfg.mission {
            MissionConfig::Goal { position } => {
                let goal = Vector3::new(position[0], position[1], position[2]);
                MissionState {
                    truth: None,
                    kf: None,
                    standoff: 0.0,
                    noise: MeasurementNoise::default(),
                    q_jerk: 1.0,
                    dwell_required: 0.0,
                    dwell: 0.0,
                    static_goal: Some(goal),
                    prior_goal: goal,
                    last_seen: None,
                    unseen_cycles: 0,
                }
            }
            MissionConfig::Target {
                start,
                model,
                standoff,
                noise,
                q_jerk,
                dwell,
            } => {
                let start_v = Vector3::new(start[0], start[1], start[2]);
                let dwell_required = cfg
                    .radiation
                    .as_ref()
                    .map(|r| r.window)
                    .unwrap_or(*dwell);
                MissionState {
                    truth: Some(TargetTruth::new(start_v, model.clone())),
                    kf: None,
                    standoff: *standoff,
                    noise: *noise,
                    q_jerk: *q_jerk,
                    dwell_required,
                    dwell: 0.0,
                    static_goal: None,
                    prior_goal: start_v,
                    last_seen: None,
                    unseen_cycles: 0,
                }
            }
        }
    }

    /// Current navigation goal for the planner: the static goal, or the
    /// estimated target position backed off by the standoff. While the
    /// target is unmeasured the KF prediction leads the goal only for a
    /// bounded number of cycles, after which the goal freezes at the last
    /// confirmed sighting.
    fn goal(&self, vehicle_position: &Vector3<f64>) -> Vector3<f64> {
        if let Some(g) = self.static_goal {
            return g;
        }
        let estimate = self.goal_estimate(vehicle_position);
        if self.unseen_cycles > MAX_COAST_CYCLES {
            // Blind: fly at the last sighting itself to reacquire; backing
            // off a stale estimate would park short of the search area.
            return estimate;
        }
        let dir = estimate - vehicle_position;
        let dist = dir.norm();
        if dist > self.standoff + 1e-6 {
            vehicle_position + dir * (1.0 - self.standoff / dist)
        } else {
            *vehicle_position
        }
    }

    /// Best current estimate of the target's absolute position.
    fn goal_estimate(&self, vehicle_position: &Vector3<f64>) -> Vector3<f64> {
        let estimate = match (&self.kf, &self.last_seen) {
            (Some(kf), _) if self.unseen_cycles <= MAX_COAST_CYCLES => {
                vehicle_position + kf.position()
            }
            (_, Some(seen)) => *seen,
            (Some(kf), None) => vehicle_position + kf.position(),
            (None, None) => self.prior_goal,
        };
        estimate
    }
}

/// Run one closed-loop trial.
pub fn run_trial(cfg: &ScenarioConfig) -> Result<TrialResult> {
    cfg.validate()?;
    let world = cfg.build_world()?;
    let params = cfg.vehicle.params();
    let gains = cfg.gains;
    let planner_cfg = cfg.planner_config();
    let sensor_offset = planner_cfg.sensor_offset;

    let start = Vector3::new(cfg.start[0], cfg.start[1], cfg.start[2]);
    let mut state = VehicleState::hover_at(start);
    let mut mission = MissionState::new(cfg);

    let mut rng_sensor = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_SENSOR]));
    let mut rng_meas = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_MEAS]));

    let cycle_dt = cfg.planner.cycle_dt;
    let horizon = cfg.planner.control_horizon;
    let mut active = TrajectorySegment::hold(start, cfg.max_sim_time + horizon + 1.0, 0.0);
    let mut seg_start = 0.0f64;
    let mut pending: Option<(TrajectorySegment, f64)> = None;
    let mut next_plan = 0.0f64;

    let mut cycle_times = Vec::new();
    let mut distance_hist: Vec<f64> = Vec::new();
    let mut path = Vec::new();
    let mut min_clearance = f64::INFINITY;
    let mut emergency_stops = 0usize;
    let mut cycles = 0usize;

    let steps = (cfg.max_sim_time / CONTROL_DT).round() as usize;
    let mut success_at: Option<f64> = None;
    let mut collided = false;

    for i in 0..=steps {
        let t = i as f64 * CONTROL_DT;

        if let Some((seg, at)) = &pending {
            if t + 1e-9 >= *at {
                active = seg.clone();
                seg_start = *at;
                pending = None;
            }
        }

        if t + 1e-9 >= next_plan {
            let pose = Pose {
                position: state.position,
                rotation: state.rotation,
            };
            let cloud_points = synth_pointcloud(
                &world,
                &pose,
                &cfg.fov,
                &cfg.sensor,
                &sensor_offset,
                &mut rng_sensor,
            );
            let index = build_index(&cloud_points);

            if let Some(truth) = &mission.truth {
                let target_pos = truth.position;
                distance_hist.push((target_pos - state.position).norm());
                let meas = measure(&target_pos, &pose, &cfg.fov, &mission.noise, &mut rng_meas);
                let (next_kf, accepted) = match mission.kf.take() {
                    None => {
                        if meas.valid {
                            (
                                KfState::new(meas.z, meas.sigma_m.powi(2).max(1e-4), 1.0, 1.0),
                                true,
                            )
                        } else {
                            // No fix yet: wide prior at the briefed start.
                            (
                                KfState::new(mission.prior_goal - state.position, 25.0, 4.0, 1.0),
                                false,
                            )
                        }
                    }
                    Some(prev) => {
                        let pred = kf_predict(&prev, cycle_dt, mission.q_jerk)?;
                        if meas.valid {
                            // Mahalanobis-style gate against gross outliers,
                            // using the position covariance plus noise.
                            let inn = meas.z - pred.position();
                            let mut var = meas.sigma_m * meas.sigma_m;
                            for i in 0..3 {
                                var += pred.covariance[(i, i)] / 3.0;
                            }
                            if inn.norm_squared() / var.max(1e-9) <= INNOVATION_GATE_SQ {
                                (kf_update(&pred, &meas), true)
                            } else {
                                (pred, false)
                            }
                        } else {
                            (pred, false)
                        }
                    }
                };
                if accepted {
                    mission.last_seen = Some(state.position + next_kf.position());
                    mission.unseen_cycles = 0;
                } else {
                    mission.unseen_cycles += 1;
                }
                mission.kf = Some(next_kf);
            }
            let goal = mission.goal(&state.position);

            let stitch_tau = (t + horizon) - seg_start;
            let boundary = active.eval_clamped(stitch_tau).0;
            let (yaw_b, yaw_rate_b) = active.yaw(stitch_tau);
            let ctx = CycleContext {
                elapsed: t,
                yaw: yaw_b,
                yaw_rate: yaw_rate_b,
                // Interception tracks the target distance so the speed
                // allowance stays positive while shadowing a moving target.
                remaining_distance: mission.static_goal.map_or_else(
                    || Some((mission.goal_estimate(&state.position) - state.position).norm()),
                    |_| None,
                ),
            };
            // Interception missions station-keep once the standoff goal
            // collapses inside the sensing near shell: selecting among
            // forward candidates for a goal underfoot would only wander.
            let station_keep = mission.static_goal.is_none()
                && (goal - boundary.position).norm() < cfg.fov.r_min;
            if std::env::var_os("RADNAV_DEBUG").is_some() {
                eprintln!(
                    "cycle t={t:6.2} pos=({:6.2},{:5.2},{:5.2}) yaw={yaw_b:5.2} goal=({:6.2},{:5.2},{:5.2}) unseen={} park={station_keep}",
                    state.position.x, state.position.y, state.position.z,
                    goal.x, goal.y, goal.z,
                    mission.unseen_cycles,
                );
            }
            let next_seg = if station_keep {
                cycle_times.push(0.0);
                cycles += 1;
                // Brake smoothly into the park when still moving; a hold
                // reference at speed would be a step the tracker overshoots.
                if boundary.velocity.norm() > 0.15 {
                    match emergency_stop(&boundary, &cfg.limits) {
                        Ok(mut seg) => {
                            seg.yaw_coeffs = [yaw_b, 0.0, 0.0, 0.0];
                            seg
                        }
                        Err(_) => TrajectorySegment::hold(boundary.position, 1.0, yaw_b),
                    }
                } else {
                    TrajectorySegment::hold(boundary.position, 1.0, yaw_b)
                }
            } else {
                let res = plan_cycle(&boundary, &goal, &index, &pose, &ctx, &planner_cfg)?;
                cycle_times.push(res.timing);
                cycles += 1;
                match res.selected {
                    SelectedPlan::Segment(seg) => seg,
                    SelectedPlan::EmergencyStop => {
                        emergency_stops += 1;
                        match emergency_stop(&boundary, &cfg.limits) {
                            Ok(mut seg) => {
                                seg.yaw_coeffs = [yaw_b, 0.0, 0.0, 0.0];
                                seg
                            }
                            Err(_) => TrajectorySegment::hold(boundary.position, 1.0, yaw_b),
                        }
                    }
                }
            };
            pending = Some((next_seg, t + horizon));
            path.push([state.position.x, state.position.y, state.position.z]);
            next_plan += cycle_dt;
        }

        if i == steps {
            break;
        }

        // Control tick against the active reference.
        let tau = t - seg_start;
        let (flat, _) = active.eval_clamped(tau);
        let (psi, _) = active.yaw(tau);
        let omega_d = reference_omega(&active, tau, &params);
        let (next_state, _input) = track_step(
            &state,
            &flat,
            psi,
            omega_d,
            &gains,
            &params,
            Some(&cfg.limits),
            CONTROL_DT,
        )?;
        state = next_state;
        if let Some(truth) = &mut mission.truth {
            truth.advance(CONTROL_DT);
        }
        let t_next = t + CONTROL_DT;

        // True-geometry clearance check at the control rate.
        if !world.is_empty() {
            let c = world
                .iter()
                .map(|cyl| cyl.surface_distance(&state.position))
                .fold(f64::INFINITY, f64::min);
            min_clearance = min_clearance.min(c);
            if c <= cfg.collision_radius {
                collided = true;
                break;
            }
        }

        // Mission progress.
        match (&mission.static_goal, &mission.truth) {
            (Some(goal), _) => {
                if (state.position - goal).norm() <= cfg.planner.goal_radius {
                    success_at = Some(t_next);
                    break;
                }
            }
            (None, Some(truth)) => {
                let dist = (truth.position - state.position).norm();
                if dist <= INTERCEPT_RANGE {
                    mission.dwell += CONTROL_DT;
                } else {
                    mission.dwell = 0.0;
                }
                if mission.dwell >= mission.dwell_required {
                    success_at = Some(t_next);
                    break;
                }
            }
            (None, None) => {}
        }
    }

    // Radiation post-processing over the recorded distance history.
    let (detection_state, detection) = match (cfg.radiation.as_ref(), mission.truth.is_some()) {
        (Some(rad), true) => {
            let available = (distance_hist.len().saturating_sub(1)) as f64 * cycle_dt;
            let window = rad.window.min(available).floor();
            if window < 2.0 {
                (None, Some(DetectionOutcome::insufficient()))
            } else {
                let src = rad.resolve_source()?;
                let rate = 1.0 / cycle_dt;
                let hist = distance_hist.clone();
                let present = rad.source_present;
                let intensity = move |t: f64| {
                    let x = t * rate;
                    let idx = (x.floor() as usize).min(hist.len() - 1);
                    let j = (idx + 1).min(hist.len() - 1);
                    let a = x - idx as f64;
                    let d = hist[idx] * (1.0 - a) + hist[j] * a;
                    if present {
                        src.background + perceived_intensity(d, &src)
                    } else {
                        src.background
                    }
                };
                let d_min = distance_hist.iter().cloned().fold(f64::INFINITY, f64::min);
                let majorant = src.background
                    + if present {
                        perceived_intensity(d_min, &src)
                    } else {
                        0.0
                    }
                    + 1e-9;
                let counts = simulate_counts(
                    intensity,
                    window,
                    majorant,
                    derive_seed(cfg.seed, &[STREAM_COUNTS]),
                )?;
                match run_window(&distance_hist, rate, &src, rad.alpha, &counts) {
                    Ok(det) => {
                        let outcome = DetectionOutcome {
                            verdict: decide(&det).to_string(),
                            decision_time: det.decision_time,
                            log_likelihood: Some(det.log_likelihood),
                            p_star: Some(det.p_star),
                            threshold_log: Some(det.threshold_log),
                            ef: Some(det.ef),
                            em: Some(det.em),
                        };
                        (Some(det), Some(outcome))
                    }
                    Err(Error::InsufficientInformation(_)) => {
                        (None, Some(DetectionOutcome::insufficient()))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        _ => (None, None),
    };

    let success = success_at.is_some();
    let timeout = !success && !collided;
    let outcome = TrialOutcome {
        success,
        collision: collided,
        timeout,
        time_to_goal: success_at,
        min_clearance: if world.is_empty() {
            None
        } else {
            Some(min_clearance)
        },
        cycles,
        emergency_stops,
        detection,
    };
    Ok(TrialResult {
        outcome,
        detection_state,
        cycle_times,
        path,
    })
}

/// Desired body rate along the reference, from a central difference of the
/// reference attitude: `Ω̂ = R_dᵀ Ṙ_d`.
fn reference_omega(seg: &TrajectorySegment, tau: f64, params: &VehicleParams) -> Vector3<f64> {
    let h = 1e-3;
    let att = |t: f64| {
        let (s, _) = seg.eval_clamped(t);
        let (yaw, _) = seg.yaw(t);
        desired_attitude(&s.acceleration, yaw, params)
    };
    match (att(tau - h), att(tau), att(tau + h)) {
        (Ok(rm), Ok(r0), Ok(rp)) => {
            let skew = r0.transpose() * ((rp - rm) / (2.0 * h));
            vee(&(0.5 * (skew - skew.transpose())))
        }
        _ => Vector3::zeros(),
    }
}

/// One row of a Monte Carlo sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub density: f64,
    pub v_max: f64,
    pub n_trials: usize,
    pub successes: usize,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Wilson 95% binomial interval.
pub fn wilson_ci(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054f64;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Run the (density × v_max) sweep; rows come back sorted by
/// (density, v_max) and independent of worker count.
pub fn monte_carlo(
    base: &ScenarioConfig,
    mc: &MonteCarloConfig,
    root_seed: u64,
) -> Result<Vec<SweepRow>> {
    base.validate()?;
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for di in 0..mc.densities.len() {
        for vi in 0..mc.v_max.len() {
            cells.push((di, vi));
        }
    }
    let mut rows = Vec::with_capacity(cells.len());
    for (di, vi) in cells {
        let density = mc.densities[di];
        let v_max = mc.v_max[vi];
        let results: Vec<bool> = (0..mc.n_trials)
            .into_par_iter()
            .map(|trial| {
                let mut cfg = base.clone();
                cfg.velocity.v_max = v_max;
                if let WorldConfig::Forest { density: d, .. } = &mut cfg.world {
                    *d = density;
                }
                cfg.seed = derive_seed(root_seed, &[di as u64, vi as u64, trial as u64]);
                run_trial(&cfg).map(|r| r.outcome.success).unwrap_or(false)
            })
            .collect();
        let successes = results.iter().filter(|&&s| s).count();
        let (ci_lo, ci_hi) = wilson_ci(successes, mc.n_trials);
        rows.push(SweepRow {
            density,
            v_max,
            n_trials: mc.n_trials,
            successes,
            p_hat: successes as f64 / mc.n_trials as f64,
            ci_lo,
            ci_hi,
        });
    }
    rows.sort_by(|a, b| {
        a.density
            .partial_cmp(&b.density)
            .unwrap()
            .then(a.v_max.partial_cmp(&b.v_max).unwrap())
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn extent_10x10() -> Rect {
        Rect {
            x: [0.0, 10.0],
            y: [0.0, 10.0],
        }
    }

    #[test]
    fn zero_density_forest_is_empty() {
        let f = sample_forest(0.0, &extent_10x10(), (0.2, 0.4), 4.0, &[], 1).unwrap();
        assert!(f.obstacles.is_empty());
    }

    #[test]
    fn forest_count_matches_poisson_mean() {
        let mut total = 0usize;
        let n = 1000;
        for s in 0..n {
            let f = sample_forest(0.18, &extent_10x10(), (0.2, 0.4), 4.0, &[], s).unwrap();
            total += f.obstacles.len();
        }
        let mean = total as f64 / n as f64;
        let se = (18.0f64 / n as f64).sqrt();
        assert!(
            (mean - 18.0).abs() <= 3.0 * se,
            "mean {mean} vs 18 ± {}",
            3.0 * se
        );
    }

    #[test]
    fn keep_clear_discs_are_respected() {
        let clear = [
            (Vector2::new(2.0, 2.0), 2.0),
            (Vector2::new(8.0, 8.0), 2.0),
        ];
        for s in 0..200 {
            let f = sample_forest(0.3, &extent_10x10(), (0.2, 0.4), 4.0, &clear, s).unwrap();
            for c in &f.obstacles {
                for (p, r) in &clear {
                    assert!(
                        (c.center_v() - p).norm() >= r + c.radius - 1e-12,
                        "obstacle at {:?} violates keep-clear",
                        c.center
                    );
                }
            }
        }
    }

    #[test]
    fn empty_world_yields_empty_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = synth_pointcloud(
            &[],
            &Pose::identity(),
            &FovParams::default(),
            &SensorModel::default(),
            &Vector3::zeros(),
            &mut rng,
        );
        assert!(cloud.is_empty());
    }

    #[test]
    fn single_cylinder_range_oracle() {
        // Independent oracle: march along the forward ray and find where it
        // first enters the cylinder.
        let cyl = Cylinder {
            center: [3.0, 0.0],
            radius: 0.4,
            height: 4.0,
        };
        let mut entry = None;
        let mut s = 0.0;
        while s < 5.0 {
            if (Vector2::new(s, 0.0) - cyl.center_v()).norm() <= cyl.radius {
                entry = Some(s);
                break;
            }
            s += 1e-5;
        }
        let oracle = entry.unwrap();
        assert_relative_eq!(oracle, 3.0 - 0.4, epsilon = 1e-4);

        let sensor = SensorModel {
            noise_std: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = synth_pointcloud(
            &[cyl],
            &Pose::identity(),
            &FovParams::default(),
            &sensor,
            &Vector3::zeros(),
            &mut rng,
        );
        assert!(!cloud.is_empty());
        // The on-axis return sits at x = 2.6 exactly.
        let on_axis = cloud
            .iter()
            .min_by(|a, b| {
                (a.y.abs() + a.z.abs())
                    .partial_cmp(&(b.y.abs() + b.z.abs()))
                    .unwrap()
            })
            .unwrap();
        assert_relative_eq!(on_axis.x, 2.6, epsilon = 1e-9);
        assert_relative_eq!(on_axis.y, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn voxel_filter_keeps_one_point_per_cell() {
        let cyl = Cylinder {
            center: [2.0, 0.0],
            radius: 0.5,
            height: 4.0,
        };
        let sensor = SensorModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = synth_pointcloud(
            &[cyl],
            &Pose::identity(),
            &FovParams::default(),
            &sensor,
            &Vector3::zeros(),
            &mut rng,
        );
        let mut cells = HashSet::new();
        for p in &cloud {
            let key = (
                (p.x / sensor.voxel).floor() as i64,
                (p.y / sensor.voxel).floor() as i64,
                (p.z / sensor.voxel).floor() as i64,
            );
            assert!(cells.insert(key), "two surviving points share a voxel");
        }
    }

    #[test]
    fn surface_distance_inside_and_outside() {
        let cyl = Cylinder {
            center: [0.0, 0.0],
            radius: 1.0,
            height: 2.0,
        };
        assert_relative_eq!(
            cyl.surface_distance(&Vector3::new(2.0, 0.0, 1.0)),
            1.0,
            epsilon = 1e-12
        );
        assert!(cyl.surface_distance(&Vector3::new(0.5, 0.0, 1.0)) < 0.0);
        // Above the cap: diagonal distance.
        let d = cyl.surface_distance(&Vector3::new(2.0, 0.0, 3.0));
        assert_relative_eq!(d, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn derive_seed_is_stable_and_distinct() {
        let a = derive_seed(42, &[1, 2, 3]);
        let b = derive_seed(42, &[1, 2, 3]);
        let c = derive_seed(42, &[1, 2, 4]);
        let d = derive_seed(43, &[1, 2, 3]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn wilson_interval_sane() {
        let (lo, hi) = wilson_ci(90, 100);
        assert!(lo > 0.8 && lo < 0.9);
        assert!(hi > 0.9 && hi < 1.0);
        let (lo, hi) = wilson_ci(0, 50);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.2);
    }

    #[test]
    fn config_round_trip_and_unknown_key_rejection() {
        let json = serde_json::json!({
            "seed": 7,
            "world": {"forest": {"density": 0.18, "extent": {"x": [0.0, 14.0], "y": [-6.0, 6.0]}}},
            "mission": {"goal": {"position": [12.0, 0.0, 1.2]}}
        });
        let cfg: ScenarioConfig = serde_json::from_value(json).unwrap();
        cfg.validate().unwrap();
        let bad = serde_json::json!({"seed": 7, "wrold": "empty"});
        let err = serde_json::from_value::<ScenarioConfig>(bad).unwrap_err();
        assert!(err.to_string().contains("wrold"), "{err}");
    }

    #[test]
    fn collision_radius_must_not_exceed_planning_radius() {
        let mut cfg = ScenarioConfig::with_seed(1);
        cfg.collision_radius = cfg.safety.r_robot + 0.1;
        assert!(cfg.validate().is_err());
    }
}

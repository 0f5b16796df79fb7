//! Ground-target motion models, FOV-gated noisy relative-position
//! measurements, and a constant-acceleration Kalman filter.
//!
//! The measurement path stands in for the vision stack: when the target is
//! inside the sensor pyramid the simulator returns the true relative
//! position plus isotropic Gaussian noise, with occasional gross outliers
//! emulating false identifications. The filter runs on the relative state
//! `(position, velocity, acceleration)` with a white-jerk process model.

use nalgebra::{SMatrix, SVector, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fov::{FovParams, Pose};

/// Target path models.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetModel {
    /// Stationary target.
    Static,
    /// Constant speed along a waypoint polyline; holds at the last waypoint.
    Polyline {
        waypoints: Vec<[f64; 3]>,
        speed: f64,
    },
    /// Constant-rate circle at fixed height.
    Circular {
        center: [f64; 3],
        radius: f64,
        angular_rate: f64,
    },
    /// Piecewise-linear speed schedule along a fixed direction.
    ScriptedSpeed {
        direction: [f64; 3],
        /// `(time [s], speed [m/s])` knots, linearly interpolated.
        schedule: Vec<(f64, f64)>,
    },
}

/// Ground-truth target state advanced by the simulator.
#[derive(Debug, Clone)]
pub struct TargetTruth {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    model: TargetModel,
    elapsed: f64,
    start: Vector3<f64>,
    /// Polyline bookkeeping: current segment and distance along it.
    leg: usize,
    leg_progress: f64,
}

impl TargetTruth {
    pub fn new(start: Vector3<f64>, model: TargetModel) -> Self {
        let mut t = Self {
            position: start,
            velocity: Vector3::zeros(),
            model,
            elapsed: 0.0,
            start,
            leg: 0,
            leg_progress: 0.0,
        };
        t.refresh(0.0);
        t
    }

    /// Largest speed the model can command (for the bounded-speed check).
    pub fn max_speed(&self) -> f64 {
        match &self.model {
            TargetModel::Static => 0.0,
            TargetModel::Polyline { speed, .. } => *speed,
            TargetModel::Circular { radius, angular_rate, .. } => radius.abs() * angular_rate.abs(),
            TargetModel::ScriptedSpeed { schedule, .. } => schedule
                .iter()
                .map(|&(_, v)| v.abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn advance(&mut self, dt: f64) {
        self.elapsed += dt;
        self.refresh(dt);
    }

    fn refresh(&mut self, dt: f64) {
        match &self.model {
            TargetModel::Static => {
                self.velocity = Vector3::zeros();
            }
            TargetModel::Polyline { waypoints, speed } => {
                if waypoints.is_empty() || *speed <= 0.0 {
                    self.velocity = Vector3::zeros();
                    return;
                }
                let mut remaining = speed * dt;
                let pts: Vec<Vector3<f64>> = std::iter::once(self.start)
                    .chain(waypoints.iter().map(|w| Vector3::new(w[0], w[1], w[2])))
                    .collect();
                while remaining > 0.0 && self.leg + 1 < pts.len() {
                    let a = pts[self.leg];
                    let b = pts[self.leg + 1];
                    let leg_len = (b - a).norm();
                    let left = leg_len - self.leg_progress;
                    if remaining < left {
                        self.leg_progress += remaining;
                        remaining = 0.0;
                    } else {
                        remaining -= left;
                        self.leg += 1;
                        self.leg_progress = 0.0;
                    }
                }
                if self.leg + 1 < pts.len() {
                    let a = pts[self.leg];
                    let b = pts[self.leg + 1];
                    let dir = (b - a).normalize();
                    self.position = a + dir * self.leg_progress;
                    self.velocity = dir * *speed;
                } else {
                    self.position = *pts.last().unwrap();
                    self.velocity = Vector3::zeros();
                }
            }
            TargetModel::Circular {
                center,
                radius,
                angular_rate,
            } => {
                let c = Vector3::new(center[0], center[1], center[2]);
                let phase = self.elapsed * angular_rate;
                self.position = c + Vector3::new(radius * phase.cos(), radius * phase.sin(), 0.0);
                self.velocity = Vector3::new(
                    -radius * angular_rate * phase.sin(),
                    radius * angular_rate * phase.cos(),
                    0.0,
                );
            }
            TargetModel::ScriptedSpeed { direction, schedule } => {
                let dir = Vector3::new(direction[0], direction[1], direction[2]);
                let dir = if dir.norm() > 0.0 { dir.normalize() } else { dir };
                let speed = interp_schedule(schedule, self.elapsed);
                self.position += dir * speed * dt;
                self.velocity = dir * speed;
            }
        }
    }
}

fn interp_schedule(schedule: &[(f64, f64)], t: f64) -> f64 {
    if schedule.is_empty() {
        return 0.0;
    }
    if t <= schedule[0].0 {
        return schedule[0].1;
    }
    for w in schedule.windows(2) {
        let (t0, v0) = w[0];
        let (t1, v1) = w[1];
        if t <= t1 {
            let a = (t - t0) / (t1 - t0);
            return v0 + a * (v1 - v0);
        }
    }
    schedule.last().unwrap().1
}

/// Measurement-noise model for the vision stand-in.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementNoise {
    /// Isotropic position noise std [m].
    pub sigma_m: f64,
    /// Probability of a gross outlier per valid measurement.
    pub outlier_rate: f64,
    /// Outlier magnitude scale [m] (uniform in a cube of this half-width).
    pub outlier_mag: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self {
            sigma_m: 0.05,
            outlier_rate: 0.01,
            outlier_mag: 3.0,
        }
    }
}

/// One relative-position measurement; `valid` is false when the target is
/// outside the sensor FOV.
#[derive(Debug, Clone, Copy)]
pub struct RelMeasurement {
    /// Target position minus vehicle position (world frame) [m].
    pub z: Vector3<f64>,
    pub sigma_m: f64,
    pub valid: bool,
}

/// Whether a world point lies inside the sensor pyramid for a given pose.
pub fn in_fov(point: &Vector3<f64>, pose: &Pose, fov: &FovParams) -> bool {
    let body = pose.rotation.transpose() * (point - pose.position);
    let r = body.norm();
    if r < fov.r_min || r > fov.r_max {
        return false;
    }
    let theta = body.y.atan2(body.x);
    let phi = (body.z / r).asin();
    theta.abs() <= fov.phi_y && phi.abs() <= fov.phi_z
}

/// Generate one measurement of the target from the current vehicle pose.
pub fn measure(
    target_position: &Vector3<f64>,
    pose: &Pose,
    fov: &FovParams,
    noise: &MeasurementNoise,
    rng: &mut impl Rng,
) -> RelMeasurement {
    if !in_fov(target_position, pose, fov) {
        return RelMeasurement {
            z: Vector3::zeros(),
            sigma_m: noise.sigma_m,
            valid: false,
        };
    }
    let mut z = target_position - pose.position;
    if noise.sigma_m > 0.0 {
        let n = Normal::new(0.0, noise.sigma_m).expect("sigma_m >= 0");
        z += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
    }
    if noise.outlier_rate > 0.0 && rng.gen::<f64>() < noise.outlier_rate {
        z += Vector3::new(
            rng.gen_range(-noise.outlier_mag..noise.outlier_mag),
            rng.gen_range(-noise.outlier_mag..noise.outlier_mag),
            rng.gen_range(-noise.outlier_mag..noise.outlier_mag),
        );
    }
    RelMeasurement {
        z,
        sigma_m: noise.sigma_m,
        valid: true,
    }
}

/// Kalman state over relative `(position, velocity, acceleration)`.
#[derive(Debug, Clone)]
pub struct KfState {
    pub mean: SVector<f64, 9>,
    pub covariance: SMatrix<f64, 9, 9>,
}

impl KfState {
    /// Initialize from a first position fix with diagonal uncertainty.
    pub fn new(rel_position: Vector3<f64>, pos_var: f64, vel_var: f64, acc_var: f64) -> Self {
        let mut mean = SVector::<f64, 9>::zeros();
        for i in 0..3 {
            mean[i] = rel_position[i];
        }
        let mut cov = SMatrix::<f64, 9, 9>::zeros();
        for i in 0..3 {
            cov[(i, i)] = pos_var;
            cov[(3 + i, 3 + i)] = vel_var;
            cov[(6 + i, 6 + i)] = acc_var;
        }
        Self { mean, covariance: cov }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.mean[0], self.mean[1], self.mean[2])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.mean[3], self.mean[4], self.mean[5])
    }

    /// `max |P - Pᵀ|`, which stays at machine precision because both
    /// predict and update re-symmetrize.
    pub fn symmetry_error(&self) -> f64 {
        (self.covariance - self.covariance.transpose())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn symmetrize(p: &mut SMatrix<f64, 9, 9>) {
    *p = (*p + p.transpose()) * 0.5;
}

/// Constant-acceleration predict step with white-jerk process noise of
/// intensity `q_jerk` [m²/s⁵].
pub fn kf_predict(state: &KfState, dt: f64, q_jerk: f64) -> Result<KfState> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
    }
    let mut f = SMatrix::<f64, 9, 9>::identity();
    for i in 0..3 {
        f[(i, 3 + i)] = dt;
        f[(i, 6 + i)] = 0.5 * dt * dt;
        f[(3 + i, 6 + i)] = dt;
    }
    let (d2, d3, d4, d5) = (dt * dt, dt * dt * dt, dt * dt * dt * dt, dt * dt * dt * dt * dt);
    let mut q = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..3 {
        q[(i, i)] = d5 / 20.0;
        q[(i, 3 + i)] = d4 / 8.0;
        q[(3 + i, i)] = d4 / 8.0;
        q[(i, 6 + i)] = d3 / 6.0;
        q[(6 + i, i)] = d3 / 6.0;
        q[(3 + i, 3 + i)] = d3 / 3.0;
        q[(3 + i, 6 + i)] = d2 / 2.0;
        q[(6 + i, 3 + i)] = d2 / 2.0;
        q[(6 + i, 6 + i)] = dt;
    }
    let mut cov = f * state.covariance * f.transpose() + q * q_jerk;
    symmetrize(&mut cov);
    Ok(KfState {
        mean: f * state.mean,
        covariance: cov,
    })
}

/// Position-only measurement update in Joseph form; invalid measurements
/// leave the state unchanged.
pub fn kf_update(state: &KfState, meas: &RelMeasurement) -> KfState {
    if !meas.valid {
        return state.clone();
    }
    let mut h = SMatrix::<f64, 3, 9>::zeros();
    for i in 0..3 {
        h[(i, i)] = 1.0;
    }
    let r = SMatrix::<f64, 3, 3>::identity() * meas.sigma_m * meas.sigma_m;
    let s = h * state.covariance * h.transpose() + r;
    let Some(s_inv) = s.try_inverse() else {
        return state.clone();
    };
    let k = state.covariance * h.transpose() * s_inv;
    let innovation = meas.z - h * state.mean;
    let mean = state.mean + k * innovation;
    let ikh = SMatrix::<f64, 9, 9>::identity() - k * h;
    let mut cov = ikh * state.covariance * ikh.transpose() + k * r * k.transpose();
    symmetrize(&mut cov);
    KfState { mean, covariance: cov }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless() -> MeasurementNoise {
        MeasurementNoise {
            sigma_m: 0.0,
            outlier_rate: 0.0,
            outlier_mag: 0.0,
        }
    }

    #[test]
    fn noiseless_measurement_is_exact() {
        let pose = Pose::identity();
        let fov = FovParams::default();
        let target = Vector3::new(3.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = measure(&target, &pose, &fov, &noiseless(), &mut rng);
        assert!(m.valid);
        assert_eq!(m.z, target);
    }

    #[test]
    fn target_behind_is_invalid() {
        let pose = Pose::identity();
        let fov = FovParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = measure(&Vector3::new(-3.0, 0.0, 0.0), &pose, &fov, &noiseless(), &mut rng);
        assert!(!m.valid);
    }

    #[test]
    fn fov_gate_respects_ranges() {
        let pose = Pose::identity();
        let fov = FovParams::default();
        assert!(!in_fov(&Vector3::new(0.2, 0.0, 0.0), &pose, &fov)); // inside blind zone
        assert!(!in_fov(&Vector3::new(9.0, 0.0, 0.0), &pose, &fov)); // beyond range
        assert!(in_fov(&Vector3::new(3.0, 0.2, -0.1), &pose, &fov));
    }

    #[test]
    fn empirical_noise_std() {
        let pose = Pose::identity();
        let fov = FovParams::default();
        let noise = MeasurementNoise {
            sigma_m: 0.05,
            outlier_rate: 0.0,
            outlier_mag: 0.0,
        };
        let target = Vector3::new(3.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let m = measure(&target, &pose, &fov, &noise, &mut rng);
            let e = m.z.x - target.x;
            sum += e;
            sum_sq += e * e;
        }
        let var = (sum_sq - sum * sum / n as f64) / (n as f64 - 1.0);
        let std = var.sqrt();
        assert!(
            (std - noise.sigma_m).abs() < 0.05 * noise.sigma_m,
            "std = {std}"
        );
    }

    #[test]
    fn predict_static_state_holds() {
        let kf = KfState::new(Vector3::new(1.0, 2.0, 3.0), 0.1, 0.1, 0.1);
        let next = kf_predict(&kf, 0.5, 1.0).unwrap();
        assert_eq!(next.position(), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn predict_advances_with_velocity() {
        let mut kf = KfState::new(Vector3::zeros(), 0.1, 0.1, 0.1);
        kf.mean[3] = 1.0;
        let next = kf_predict(&kf, 0.5, 1.0).unwrap();
        assert_relative_eq!(next.position().x, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn predict_inflates_covariance() {
        let kf = KfState::new(Vector3::zeros(), 0.1, 0.1, 0.1);
        let next = kf_predict(&kf, 0.1, 1.0).unwrap();
        assert!(next.covariance.trace() > kf.covariance.trace());
    }

    #[test]
    fn predict_rejects_bad_dt() {
        let kf = KfState::new(Vector3::zeros(), 0.1, 0.1, 0.1);
        assert!(kf_predict(&kf, 0.0, 1.0).is_err());
    }

    #[test]
    fn exact_measurement_pins_position() {
        let kf = KfState::new(Vector3::zeros(), 1.0, 1.0, 1.0);
        let m = RelMeasurement {
            z: Vector3::new(2.0, -1.0, 0.5),
            sigma_m: 0.0,
            valid: true,
        };
        let post = kf_update(&kf, &m);
        assert!((post.position() - m.z).norm() < 1e-12);
    }

    #[test]
    fn uninformative_measurement_keeps_prior() {
        let kf = KfState::new(Vector3::new(1.0, 1.0, 1.0), 0.5, 0.5, 0.5);
        let m = RelMeasurement {
            z: Vector3::new(50.0, 0.0, 0.0),
            sigma_m: 1e9,
            valid: true,
        };
        let post = kf_update(&kf, &m);
        assert!((post.position() - kf.position()).norm() < 1e-6);
    }

    #[test]
    fn invalid_measurement_is_ignored() {
        let kf = KfState::new(Vector3::new(1.0, 1.0, 1.0), 0.5, 0.5, 0.5);
        let m = RelMeasurement {
            z: Vector3::new(50.0, 0.0, 0.0),
            sigma_m: 0.1,
            valid: false,
        };
        let post = kf_update(&kf, &m);
        assert_eq!(post.mean, kf.mean);
    }

    #[test]
    fn static_target_converges() {
        let pose = Pose::identity();
        let fov = FovParams::default();
        let noise = MeasurementNoise {
            sigma_m: 0.1,
            outlier_rate: 0.0,
            outlier_mag: 0.0,
        };
        let target = Vector3::new(3.0, 0.3, -0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let first = measure(&target, &pose, &fov, &noise, &mut rng);
        let mut kf = KfState::new(first.z, noise.sigma_m.powi(2), 1.0, 1.0);
        for _ in 0..200 {
            kf = kf_predict(&kf, 1.0 / 15.0, 1e-4).unwrap();
            let m = measure(&target, &pose, &fov, &noise, &mut rng);
            kf = kf_update(&kf, &m);
            assert!(kf.symmetry_error() <= 1e-9);
        }
        let err = (kf.position() - target).norm();
        assert!(err < 0.02, "converged to error {err}");
    }

    #[test]
    fn noiseless_static_error_monotone_after_burn_in() {
        let pose = Pose::identity();
        let fov = FovParams::default();
        let target = Vector3::new(2.5, 0.1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Deliberately wrong initial estimate; exact measurements must pull
        // it in monotonically once transients settle.
        let mut kf = KfState::new(Vector3::new(1.0, -1.0, 0.5), 4.0, 1.0, 1.0);
        let mut prev = f64::INFINITY;
        for i in 0..60 {
            kf = kf_predict(&kf, 1.0 / 15.0, 1e-6).unwrap();
            let m = measure(&target, &pose, &fov, &noiseless(), &mut rng);
            kf = kf_update(&kf, &m);
            let err = (kf.position() - target).norm();
            if i >= 10 {
                assert!(err <= prev + 1e-12, "error rose at step {i}: {err} > {prev}");
            }
            prev = err;
        }
    }

    #[test]
    fn covariance_stays_psd() {
        let pose = Pose::identity();
        let fov = FovParams::default();
        let noise = MeasurementNoise::default();
        let target = Vector3::new(3.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut kf = KfState::new(Vector3::new(2.9, 0.1, 0.0), 0.1, 1.0, 1.0);
        for _ in 0..300 {
            kf = kf_predict(&kf, 1.0 / 15.0, 1.0).unwrap();
            let m = measure(&target, &pose, &fov, &noise, &mut rng);
            kf = kf_update(&kf, &m);
            assert!(kf.symmetry_error() <= 1e-9);
            let eig = kf.covariance.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > -1e-9), "covariance not PSD: {eig:?}");
        }
    }

    #[test]
    fn polyline_target_follows_waypoints() {
        let mut t = TargetTruth::new(
            Vector3::zeros(),
            TargetModel::Polyline {
                waypoints: vec![[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]],
                speed: 1.0,
            },
        );
        for _ in 0..1500 {
            t.advance(0.001);
        }
        // 1.5 m along the polyline: 1 m on leg one, 0.5 m on leg two.
        assert_relative_eq!(t.position.x, 1.0, epsilon = 1e-9);
        assert_relative_eq!(t.position.y, 0.5, epsilon = 1e-9);
        assert!(t.max_speed() <= 1.0 + 1e-12);
        for _ in 0..2000 {
            t.advance(0.001);
        }
        assert_relative_eq!(t.position.y, 1.0, epsilon = 1e-9); // holds at end
        assert_eq!(t.velocity, Vector3::zeros());
    }

    #[test]
    fn circular_target_speed_bound() {
        let mut t = TargetTruth::new(
            Vector3::new(2.0, 0.0, 0.0),
            TargetModel::Circular {
                center: [0.0, 0.0, 0.0],
                radius: 2.0,
                angular_rate: 0.5,
            },
        );
        for _ in 0..1000 {
            t.advance(0.01);
            assert!(t.velocity.norm() <= t.max_speed() + 1e-12);
            assert_relative_eq!(t.position.xy().norm(), 2.0, epsilon = 1e-9);
        }
    }
}

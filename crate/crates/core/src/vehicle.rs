//! Rigid-body quadrotor dynamics on SE(3) and the geometric tracking
//! controller.
//!
//! Dynamics: `ẋ = v`, `m v̇ = f R e₃ - m g e₃`, `Ṙ = R Ω̂`,
//! `J Ω̇ = M - Ω × J Ω`, integrated with fixed-step RK4 and re-orthonormalized
//! after every step. The controller is the standard geometric design: thrust
//! is the projection of the desired force onto the body thrust axis, the
//! moment is negative feedback on the rotation and rate errors plus the
//! gyroscopic term.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajgen::{ActuationLimits, GRAVITY};

/// Mass, inertia, and gravity.
#[derive(Debug, Clone, Copy)]
pub struct VehicleParams {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1.2,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.0082, 0.0082, 0.0148)),
            gravity: GRAVITY,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::invalid("mass must be positive"));
        }
        let sym_err = (self.inertia - self.inertia.transpose())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if sym_err > 1e-9 {
            return Err(Error::invalid("inertia matrix must be symmetric"));
        }
        if self.inertia.symmetric_eigenvalues().iter().any(|&e| e <= 0.0) {
            return Err(Error::invalid("inertia matrix must be positive definite"));
        }
        Ok(())
    }
}

/// Rigid-body state `(x, v, R, Ω)`.
#[derive(Debug, Clone, Copy)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub omega: Vector3<f64>,
}

impl VehicleState {
    pub fn hover_at(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            rotation: Matrix3::identity(),
            omega: Vector3::zeros(),
        }
    }

    /// Maximum absolute deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Positive controller gains.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    pub k_x: f64,
    pub k_v: f64,
    pub k_r: f64,
    pub k_omega: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            k_x: 8.0,
            k_v: 4.0,
            k_r: 2.0,
            k_omega: 0.4,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        if [self.k_x, self.k_v, self.k_r, self.k_omega]
            .iter()
            .any(|&k| !(k > 0.0))
        {
            return Err(Error::invalid("controller gains must be positive"));
        }
        Ok(())
    }
}

/// Thrust and body moment; `thrust_clamped` records whether the actuation
/// limits cut the commanded thrust.
#[derive(Debug, Clone, Copy)]
pub struct ControlInput {
    pub thrust: f64,
    pub moment: Vector3<f64>,
    pub thrust_clamped: bool,
}

/// Reference for the tracking controller.
#[derive(Debug, Clone, Copy)]
pub struct TrackingRef {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub rotation_d: Matrix3<f64>,
    pub omega_d: Vector3<f64>,
}

impl TrackingRef {
    pub fn hover_at(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            rotation_d: Matrix3::identity(),
            omega_d: Vector3::zeros(),
        }
    }
}

/// Tracking errors `(e_x, e_v, e_R, e_Ω)`.
#[derive(Debug, Clone, Copy)]
pub struct TrackingErrors {
    pub e_x: Vector3<f64>,
    pub e_v: Vector3<f64>,
    pub e_r: Vector3<f64>,
    pub e_omega: Vector3<f64>,
}

/// Skew-symmetric (hat) map.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] for a skew-symmetric matrix.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `e_x = x - x_d`, `e_v = v - v_d`, `e_R = ½(R_dᵀR - RᵀR_d)ᵛ`,
/// `e_Ω = Ω - RᵀR_d Ω_d`.
pub fn tracking_errors(state: &VehicleState, reference: &TrackingRef) -> TrackingErrors {
    let r = &state.rotation;
    let rd = &reference.rotation_d;
    let skew = 0.5 * (rd.transpose() * r - r.transpose() * rd);
    TrackingErrors {
        e_x: state.position - reference.position,
        e_v: state.velocity - reference.velocity,
        e_r: vee(&skew),
        e_omega: state.omega - r.transpose() * rd * reference.omega_d,
    }
}

/// Geometric tracking control law.
///
/// `f = (-k_x e_x - k_v e_v + m g e₃ + m ẍ_d) · (R e₃)`,
/// `M = -k_R e_R - k_Ω e_Ω + Ω × J Ω`. Thrust is clamped into
/// `[f_min, f_max]` when limits are supplied.
pub fn control(
    state: &VehicleState,
    reference: &TrackingRef,
    gains: &ControllerGains,
    params: &VehicleParams,
    limits: Option<&ActuationLimits>,
) -> ControlInput {
    let e = tracking_errors(state, reference);
    let e3 = Vector3::new(0.0, 0.0, 1.0);
    let force = -gains.k_x * e.e_x - gains.k_v * e.e_v
        + params.mass * params.gravity * e3
        + params.mass * reference.acceleration;
    let raw = force.dot(&(state.rotation * e3));
    let (thrust, thrust_clamped) = match limits {
        Some(l) => {
            let clamped = raw.clamp(l.f_min, l.f_max);
            (clamped, clamped != raw)
        }
        None => (raw, false),
    };
    let moment = -gains.k_r * e.e_r - gains.k_omega * e.e_omega
        + state.omega.cross(&(params.inertia * state.omega));
    ControlInput {
        thrust,
        moment,
        thrust_clamped,
    }
}

/// Desired attitude consistent with a reference acceleration and yaw:
/// `b₃ ∝ ẍ_d + g e₃`, `b₁d = (cos ψ, sin ψ, 0)`, `b₂ ∝ b₃ × b₁d`,
/// `R_d = [b₂×b₃, b₂, b₃]`.
pub fn desired_attitude(
    ref_accel: &Vector3<f64>,
    yaw: f64,
    params: &VehicleParams,
) -> Result<Matrix3<f64>> {
    let dir = ref_accel + Vector3::new(0.0, 0.0, params.gravity);
    let norm = dir.norm();
    if norm <= 1e-6 {
        return Err(Error::SingularAttitude);
    }
    let b3 = dir / norm;
    let b1d = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let b2_raw = b3.cross(&b1d);
    let b2_norm = b2_raw.norm();
    if b2_norm <= 1e-9 {
        return Err(Error::SingularAttitude);
    }
    let b2 = b2_raw / b2_norm;
    let b1 = b2.cross(&b3);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0).normalize();
    let mut c1: Vector3<f64> = r.column(1).into();
    c1 -= c0 * c0.dot(&c1);
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

struct Derivative {
    dx: Vector3<f64>,
    dv: Vector3<f64>,
    dr: Matrix3<f64>,
    domega: Vector3<f64>,
}

fn dynamics(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    inertia_inv: &Matrix3<f64>,
) -> Derivative {
    let e3 = Vector3::new(0.0, 0.0, 1.0);
    Derivative {
        dx: state.velocity,
        dv: (input.thrust / params.mass) * (state.rotation * e3)
            - params.gravity * e3,
        dr: state.rotation * hat(&state.omega),
        domega: inertia_inv
            * (input.moment - state.omega.cross(&(params.inertia * state.omega))),
    }
}

/// Advance the rigid body one RK4 step of length `dt ∈ (0, 0.01]`; the
/// rotation is re-orthonormalized afterwards.
pub fn step(
    state: &VehicleState,
    input: &ControlInput,
    dt: f64,
    params: &VehicleParams,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::invalid(format!(
            "integration step must lie in (0, 0.01] s, got {dt}"
        )));
    }
    let inertia_inv = params
        .inertia
        .try_inverse()
        .ok_or_else(|| Error::invalid("inertia matrix is singular"))?;

    let advance = |s: &VehicleState, d: &Derivative, h: f64| VehicleState {
        position: s.position + d.dx * h,
        velocity: s.velocity + d.dv * h,
        rotation: s.rotation + d.dr * h,
        omega: s.omega + d.domega * h,
    };

    let k1 = dynamics(state, input, params, &inertia_inv);
    let s2 = advance(state, &k1, dt / 2.0);
    let k2 = dynamics(&s2, input, params, &inertia_inv);
    let s3 = advance(state, &k2, dt / 2.0);
    let k3 = dynamics(&s3, input, params, &inertia_inv);
    let s4 = advance(state, &k3, dt);
    let k4 = dynamics(&s4, input, params, &inertia_inv);

    let h6 = dt / 6.0;
    let mut next = VehicleState {
        position: state.position + h6 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx),
        velocity: state.velocity + h6 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv),
        rotation: state.rotation + h6 * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr),
        omega: state.omega + h6 * (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega),
    };
    next.rotation = orthonormalize(&next.rotation);
    Ok(next)
}

/// One controller-plus-dynamics tick against a flat reference.
///
/// The desired attitude is built from the feedback-shaped acceleration
/// command `ẍ_d - (k_x e_x + k_v e_v)/m`, so position errors tilt the
/// vehicle; the thrust projection then matches the control law exactly.
#[allow(clippy::too_many_arguments)]
pub fn track_step(
    state: &VehicleState,
    flat_ref: &crate::trajgen::FlatState,
    yaw_ref: f64,
    omega_d: Vector3<f64>,
    gains: &ControllerGains,
    params: &VehicleParams,
    limits: Option<&ActuationLimits>,
    dt: f64,
) -> Result<(VehicleState, ControlInput)> {
    let e_x = state.position - flat_ref.position;
    let e_v = state.velocity - flat_ref.velocity;
    let a_cmd = flat_ref.acceleration - (gains.k_x * e_x + gains.k_v * e_v) / params.mass;
    let rotation_d = match desired_attitude(&a_cmd, yaw_ref, params) {
        Ok(r) => r,
        // Free-fall-singular command: hold the current attitude for a tick.
        Err(Error::SingularAttitude) => state.rotation,
        Err(e) => return Err(e),
    };
    let reference = TrackingRef {
        position: flat_ref.position,
        velocity: flat_ref.velocity,
        acceleration: flat_ref.acceleration,
        rotation_d,
        omega_d,
    };
    let input = control(state, &reference, gains, params, limits);
    let next = step(state, &input, dt, params)?;
    Ok((next, input))
}

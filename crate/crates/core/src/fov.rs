//! Pyramidal sensor field of view discretized into candidate endpoints.
//!
//! The FOV is a solid pyramid sector with its apex at the sensor: range
//! `r ∈ [r_min, r_max]`, azimuth `|θ| ≤ phi_y`, elevation `|φ| ≤ phi_z`,
//! depth along the body x axis. The grid is inclusive on every boundary and
//! angular sample counts are forced odd so the straight-ahead ray is always
//! a candidate.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field-of-view extents and grid resolutions.
///
/// Defaults follow a RealSense-D435-class sensor: 69.4° × 42.5° full angles,
/// reliable depth to 4.5 m, and a 0.5 m blind zone at the near end.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FovParams {
    pub r_min: f64,
    pub r_max: f64,
    /// Azimuth half-angle [rad].
    pub phi_y: f64,
    /// Elevation half-angle [rad].
    pub phi_z: f64,
    /// Range resolution [m].
    pub dr: f64,
    /// Angular resolution [rad], shared by both angle axes.
    pub dtheta: f64,
}

impl Default for FovParams {
    fn default() -> Self {
        Self {
            r_min: 0.5,
            r_max: 4.5,
            phi_y: 69.4_f64.to_radians() / 2.0,
            phi_z: 42.5_f64.to_radians() / 2.0,
            dr: 1.0,
            dtheta: 0.15,
        }
    }
}

impl FovParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return Err(Error::invalid(format!(
                "FOV ranges must satisfy 0 < r_min < r_max, got ({}, {})",
                self.r_min, self.r_max
            )));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.phi_y > 0.0 && self.phi_y < half_pi && self.phi_z > 0.0 && self.phi_z < half_pi)
        {
            return Err(Error::invalid("FOV half-angles must lie in (0, π/2)"));
        }
        if !(self.dr > 0.0 && self.dr <= self.r_max - self.r_min) {
            return Err(Error::invalid("dr must lie in (0, r_max - r_min]"));
        }
        if !(self.dtheta > 0.0 && self.dtheta <= (2.0 * self.phi_y).min(2.0 * self.phi_z)) {
            return Err(Error::invalid("dtheta must lie in (0, min(2 phi_y, 2 phi_z)]"));
        }
        Ok(())
    }
}

/// One candidate endpoint of the discretized FOV.
#[derive(Debug, Clone, Copy)]
pub struct CandidateEndpoint {
    /// `(r, θ, φ)` polar coordinates in the sensor frame.
    pub polar: (f64, f64, f64),
    /// Cartesian body-frame position; depth along body x.
    pub body_xyz: Vector3<f64>,
    /// World-frame position; equals `body_xyz` until [`to_world`] runs.
    pub world_xyz: Vector3<f64>,
}

/// Vehicle pose: world position plus body-to-world rotation.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: Matrix3::identity(),
        }
    }

    pub fn from_yaw(position: Vector3<f64>, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            position,
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        }
    }

    /// Maximum absolute deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn validate_rotation(&self) -> Result<()> {
        let err = self.orthonormality_error();
        if err > 1e-9 {
            return Err(Error::invalid(format!(
                "rotation matrix is not orthonormal (deviation {err:.2e})"
            )));
        }
        Ok(())
    }
}

fn grid_count(span: f64, step: f64) -> usize {
    ((span / step - 1e-9).ceil().max(1.0) as usize) + 1
}

/// Discretize the FOV into candidate endpoints (body frame).
///
/// Ranges run `r_min..=r_max` with spacing at most `dr`; angles are sampled
/// symmetrically around zero with spacing at most `dtheta`, counts forced
/// odd so θ = φ = 0 (the forward ray) always appears.
pub fn build_ensemble(params: &FovParams) -> Result<Vec<CandidateEndpoint>> {
    params.validate()?;
    let n_r = grid_count(params.r_max - params.r_min, params.dr);
    let mut n_theta = grid_count(2.0 * params.phi_y, params.dtheta);
    if n_theta % 2 == 0 {
        n_theta += 1;
    }
    let mut n_phi = grid_count(2.0 * params.phi_z, params.dtheta);
    if n_phi % 2 == 0 {
        n_phi += 1;
    }

    let mut out = Vec::with_capacity(n_r * n_theta * n_phi);
    let r_step = (params.r_max - params.r_min) / (n_r - 1) as f64;
    let th_step = 2.0 * params.phi_y / (n_theta - 1) as f64;
    let ph_step = 2.0 * params.phi_z / (n_phi - 1) as f64;
    let th_half = (n_theta - 1) as i64 / 2;
    let ph_half = (n_phi - 1) as i64 / 2;
    for ir in 0..n_r {
        let r = if ir + 1 == n_r {
            params.r_max
        } else {
            params.r_min + ir as f64 * r_step
        };
        for it in 0..n_theta as i64 {
            let theta = (it - th_half) as f64 * th_step;
            for ip in 0..n_phi as i64 {
                let phi = (ip - ph_half) as f64 * ph_step;
                let (st, ct) = theta.sin_cos();
                let (sp, cp) = phi.sin_cos();
                let body = Vector3::new(r * ct * cp, r * st * cp, r * sp);
                out.push(CandidateEndpoint {
                    polar: (r, theta, phi),
                    body_xyz: body,
                    world_xyz: body,
                });
            }
        }
    }
    Ok(out)
}

/// Fill `world_xyz` for every endpoint:
/// `world = position + R · (sensor_offset + body)`.
pub fn to_world(
    ensemble: &mut [CandidateEndpoint],
    pose: &Pose,
    sensor_offset: &Vector3<f64>,
) -> Result<()> {
    pose.validate_rotation()?;
    for e in ensemble.iter_mut() {
        e.world_xyz = pose.position + pose.rotation * (sensor_offset + e.body_xyz);
    }
    Ok(())
}

//! Closed-form minimum-snap trajectory generation with free terminal time.
//!
//! Each candidate trajectory minimizes `∫ (k + ½‖u‖²) dt` over the
//! quadruple-integrator flat dynamics, with snap `u` as the control input.
//! The optimum along each axis is a 7th-order polynomial in time; enforcing
//! the boundary conditions leaves a 4×4 linear solve for the upper
//! coefficients, and the free terminal time `T` is the positive real root of
//! a degree-8 polynomial obtained from the transversality condition
//! `‖u(T)‖² = 2k` (zero terminal velocity/acceleration/jerk).
//!
//! The weight `k` trades trajectory duration against snap: larger `k` yields
//! shorter, more aggressive segments (`T ∝ k^(-1/8)` for rest-to-rest
//! motion). A calibration curve `v = cal_a · k^(1/cal_b)` maps a speed budget
//! to the weight.

use nalgebra::{Complex, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// Standard gravity [m/s²]; shared by thrust feasibility and the vehicle
/// dynamics defaults.
pub const GRAVITY: f64 = 9.81;

/// Flat-output boundary state: position and its first three derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
}

impl FlatState {
    pub fn new(
        position: Vector3<f64>,
        velocity: Vector3<f64>,
        acceleration: Vector3<f64>,
        jerk: Vector3<f64>,
    ) -> Self {
        Self {
            position,
            velocity,
            acceleration,
            jerk,
        }
    }

    /// State at rest: all derivatives zero.
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self::new(position, Vector3::zeros(), Vector3::zeros(), Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.acceleration.iter().all(|v| v.is_finite())
            && self.jerk.iter().all(|v| v.is_finite())
    }
}

/// Speed-profile and weight-calibration parameters.
///
/// `cal_a`/`cal_b` are the constants of the interpolated curve
/// `v = cal_a · k^(1/cal_b)` relating top segment speed to the weight `k`.
/// The defaults are calibration knobs; recalibrate against the simulator if
/// the vehicle parameters change.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VelocityProfileParams {
    /// Time ramp rate [1/s].
    pub k_t: f64,
    /// Distance taper rate [1/m].
    pub k_d: f64,
    /// Mission speed cap [m/s].
    pub v_max: f64,
    /// Sensor range used to normalize candidate range [m].
    pub r_max: f64,
    /// Calibration curve scale.
    pub cal_a: f64,
    /// Calibration curve exponent.
    pub cal_b: f64,
}

impl Default for VelocityProfileParams {
    fn default() -> Self {
        Self {
            k_t: 0.5,
            k_d: 0.5,
            v_max: 2.0,
            r_max: 4.5,
            cal_a: 1.6,
            cal_b: 8.0,
        }
    }
}

impl VelocityProfileParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_t", self.k_t),
            ("k_d", self.k_d),
            ("v_max", self.v_max),
            ("r_max", self.r_max),
            ("cal_a", self.cal_a),
            ("cal_b", self.cal_b),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "velocity profile parameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Actuation limits and the feasibility retry policy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuationLimits {
    /// Lower thrust bound [N] (open interval).
    pub f_min: f64,
    /// Upper thrust bound [N] (open interval).
    pub f_max: f64,
    /// Vehicle mass [kg] used to convert acceleration to thrust.
    pub mass: f64,
    /// Angular-rate bound [rad/s].
    pub omega_max: f64,
    /// Bound on ‖j‖²/f² [rad²/s²].
    pub body_rate_sq_max: f64,
    /// Linear speed bound [m/s].
    pub v_limit: f64,
    /// Terminal-time retry increment [s]; a value of 0 selects the adaptive
    /// policy of 10% of the current terminal time per attempt.
    pub dt_retry: f64,
    /// Retry budget before a segment is declared infeasible.
    pub max_retries: u32,
}

impl Default for ActuationLimits {
    fn default() -> Self {
        Self {
            f_min: 0.5,
            f_max: 20.0,
            mass: 1.2,
            omega_max: 6.0,
            body_rate_sq_max: 36.0,
            v_limit: 6.0,
            dt_retry: 0.0,
            max_retries: 10,
        }
    }
}

impl ActuationLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_min < self.f_max) {
            return Err(Error::invalid(format!(
                "thrust bounds must satisfy 0 < f_min < f_max, got ({}, {})",
                self.f_min, self.f_max
            )));
        }
        if !(self.omega_max > 0.0) {
            return Err(Error::invalid("omega_max must be positive"));
        }
        if !(self.mass > 0.0) {
            return Err(Error::invalid("mass must be positive"));
        }
        if !(self.body_rate_sq_max > 0.0) {
            return Err(Error::invalid("body_rate_sq_max must be positive"));
        }
        if self.v_limit < 0.0 || self.dt_retry < 0.0 {
            return Err(Error::invalid("v_limit and dt_retry must be non-negative"));
        }
        Ok(())
    }
}

/// One reference trajectory segment: per-axis 7th-order position polynomials
/// in plain monomial form (`coeffs[axis][i]` multiplies `t^i`), the terminal
/// time, and a cubic yaw polynomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub coeffs: [[f64; 8]; 3],
    pub terminal_time: f64,
    pub yaw_coeffs: [f64; 4],
    pub weight_k: f64,
}

impl TrajectorySegment {
    /// Constant-position hold segment (used for emergency stops at rest).
    pub fn hold(position: Vector3<f64>, duration: f64, yaw: f64) -> Self {
        let mut coeffs = [[0.0; 8]; 3];
        for ax in 0..3 {
            coeffs[ax][0] = position[ax];
        }
        Self {
            coeffs,
            terminal_time: duration,
            yaw_coeffs: [yaw, 0.0, 0.0, 0.0],
            weight_k: 0.0,
        }
    }

    /// Evaluate position through snap at `t ∈ [0, T]`.
    pub fn eval(&self, t: f64) -> Result<(FlatState, Vector3<f64>)> {
        if !t.is_finite() || t < 0.0 || t > self.terminal_time {
            return Err(Error::OutOfRange {
                t,
                t_max: self.terminal_time,
            });
        }
        Ok(self.eval_unchecked(t))
    }

    /// Evaluate with `t` clamped into the segment domain; used by the
    /// tracker to hold the terminal state after the horizon is flown out.
    pub fn eval_clamped(&self, t: f64) -> (FlatState, Vector3<f64>) {
        self.eval_unchecked(t.clamp(0.0, self.terminal_time))
    }

    fn eval_unchecked(&self, t: f64) -> (FlatState, Vector3<f64>) {
        let mut pw = [1.0; 8];
        for i in 1..8 {
            pw[i] = pw[i - 1] * t;
        }
        let mut pos = Vector3::zeros();
        let mut vel = Vector3::zeros();
        let mut acc = Vector3::zeros();
        let mut jrk = Vector3::zeros();
        let mut snp = Vector3::zeros();
        for ax in 0..3 {
            let c = &self.coeffs[ax];
            let mut p = 0.0;
            let mut v = 0.0;
            let mut a = 0.0;
            let mut j = 0.0;
            let mut s = 0.0;
            for i in 0..8 {
                let fi = i as f64;
                p += c[i] * pw[i];
                if i >= 1 {
                    v += fi * c[i] * pw[i - 1];
                }
                if i >= 2 {
                    a += fi * (fi - 1.0) * c[i] * pw[i - 2];
                }
                if i >= 3 {
                    j += fi * (fi - 1.0) * (fi - 2.0) * c[i] * pw[i - 3];
                }
                if i >= 4 {
                    s += fi * (fi - 1.0) * (fi - 2.0) * (fi - 3.0) * c[i] * pw[i - 4];
                }
            }
            pos[ax] = p;
            vel[ax] = v;
            acc[ax] = a;
            jrk[ax] = j;
            snp[ax] = s;
        }
        (FlatState::new(pos, vel, acc, jrk), snp)
    }

    /// Yaw angle and yaw rate at `t` (clamped into the domain).
    pub fn yaw(&self, t: f64) -> (f64, f64) {
        let t = t.clamp(0.0, self.terminal_time);
        let g = &self.yaw_coeffs;
        let psi = g[0] + t * (g[1] + t * (g[2] + t * g[3]));
        let rate = g[1] + t * (2.0 * g[2] + t * 3.0 * g[3]);
        (psi, rate)
    }

    pub fn start(&self) -> FlatState {
        self.eval_unchecked(0.0).0
    }

    pub fn end(&self) -> FlatState {
        self.eval_unchecked(self.terminal_time).0
    }

    /// Exact snap cost `½ ∫₀ᵀ ‖u(t)‖² dt` of the polynomial segment.
    ///
    /// Snap per axis is cubic in `t`, so the integral of its square is a
    /// degree-7 polynomial evaluated in closed form.
    pub fn snap_cost(&self) -> f64 {
        let t = self.terminal_time;
        let mut total = 0.0;
        for ax in 0..3 {
            let c = &self.coeffs[ax];
            let s = [24.0 * c[4], 120.0 * c[5], 360.0 * c[6], 840.0 * c[7]];
            for i in 0..4 {
                for j in 0..4 {
                    let p = (i + j + 1) as f64;
                    total += s[i] * s[j] * t.powi((i + j + 1) as i32) / p;
                }
            }
        }
        0.5 * total
    }

    /// Approximate arc length from a coarse polyline.
    pub fn approx_length(&self, samples: usize) -> f64 {
        let n = samples.max(2);
        let mut len = 0.0;
        let mut prev = self.eval_unchecked(0.0).0.position;
        for i in 1..n {
            let t = self.terminal_time * i as f64 / (n - 1) as f64;
            let p = self.eval_unchecked(t).0.position;
            len += (p - prev).norm();
            prev = p;
        }
        len
    }
}

/// Speed budget for one candidate endpoint: ramps up with mission time,
/// tapers with remaining distance to the goal, and scales with the
/// candidate's range fraction.
pub fn candidate_speed(t: f64, d: f64, r: f64, params: &VelocityProfileParams) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid(format!("elapsed time must be >= 0, got {t}")));
    }
    if !(d.is_finite() && d >= 0.0) {
        return Err(Error::invalid(format!(
            "remaining distance must be >= 0, got {d}"
        )));
    }
    if !(r.is_finite() && (0.0..=params.r_max).contains(&r)) {
        return Err(Error::invalid(format!(
            "candidate range must lie in [0, {}], got {r}",
            params.r_max
        )));
    }
    Ok(erf(params.k_t * t) * erf(params.k_d * d) * (r / params.r_max) * params.v_max)
}

/// Invert the calibration curve: `k = (v / cal_a)^cal_b`.
pub fn speed_to_weight(v: f64, params: &VelocityProfileParams) -> Result<f64> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid(format!("speed must be > 0, got {v}")));
    }
    Ok((v / params.cal_a).powf(params.cal_b))
}

/// All complex roots of the monic polynomial `y^n + Σ b[i] y^i` by
/// Aberth-Ehrlich simultaneous iteration.
///
/// Initial guesses sit on a spiral slightly off the real axis, which also
/// handles the cyclic structure (`y^n - c`) of rest-to-rest boundary inputs
/// where QR-style eigenvalue iterations stall.
fn aberth_roots(monic: &[f64]) -> Vec<Complex<f64>> {
    let deg = monic.len();
    let eval = |z: Complex<f64>| -> (Complex<f64>, Complex<f64>) {
        let mut p = Complex::new(1.0, 0.0);
        let mut dp = Complex::new(0.0, 0.0);
        for &c in monic.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    };
    // Cauchy bound on root magnitude.
    let radius = 1.0 + monic.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut z: Vec<Complex<f64>> = (0..deg)
        .map(|j| {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / deg as f64 + 0.35;
            let r = radius * (0.4 + 0.55 * (j as f64 + 1.0) / deg as f64);
            Complex::new(r * angle.cos(), r * angle.sin())
        })
        .collect();
    for _ in 0..200 {
        let mut max_step = 0.0f64;
        for j in 0..deg {
            let (p, dp) = eval(z[j]);
            if p.norm() == 0.0 {
                continue;
            }
            let w = if dp.norm() > 0.0 { p / dp } else { p };
            let mut sum = Complex::new(0.0, 0.0);
            for k in 0..deg {
                if k != j {
                    let d = z[j] - z[k];
                    if d.norm() > 1e-300 {
                        sum += Complex::new(1.0, 0.0) / d;
                    }
                }
            }
            let denom = Complex::new(1.0, 0.0) - w * sum;
            let step = if denom.norm() > 1e-300 { w / denom } else { w };
            z[j] -= step;
            max_step = max_step.max(step.norm() / (1.0 + z[j].norm()));
        }
        if max_step < 1e-14 {
            break;
        }
    }
    z
}

/// All strictly positive real roots of `Σ a[i] x^i`, deduplicated.
///
/// The polynomial is scaled so roots are O(1), solved by [`aberth_roots`],
/// filtered to the real axis (`|Im| ≤ 1e-8·|Re| + 1e-12`), and polished by
/// real Newton iterations on the original coefficients.
pub fn positive_real_roots(a: &[f64]) -> Vec<f64> {
    // Trim exact-zero high coefficients, then factor out roots at zero.
    let mut hi = a.len();
    while hi > 1 && a[hi - 1] == 0.0 {
        hi -= 1;
    }
    let mut lo = 0;
    while lo < hi - 1 && a[lo] == 0.0 {
        lo += 1;
    }
    let coeffs = &a[lo..hi];
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Vec::new();
    }

    // Monic coefficients, then substitute x = c·y with the root-radius bound
    // c = max |b_i|^(1/(n-i)) so the scaled roots are O(1).
    let an = coeffs[deg];
    let monic: Vec<f64> = coeffs.iter().map(|&c| c / an).collect();
    let mut scale: f64 = 0.0;
    for (i, &b) in monic.iter().enumerate().take(deg) {
        if b != 0.0 {
            scale = scale.max(b.abs().powf(1.0 / (deg - i) as f64));
        }
    }
    if scale <= 0.0 {
        return Vec::new();
    }
    let scaled: Vec<f64> = monic
        .iter()
        .enumerate()
        .take(deg)
        .map(|(i, &b)| b / scale.powi((deg - i) as i32))
        .collect();

    let eig = aberth_roots(&scaled);
    let poly_val = |x: f64| -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &c in coeffs.iter().rev() {
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp)
    };

    let mut roots: Vec<f64> = Vec::new();
    for ev in eig.iter() {
        if ev.im.abs() > 1e-8 * ev.re.abs() + 1e-12 {
            continue;
        }
        let mut x = scale * ev.re;
        if x <= 0.0 {
            continue;
        }
        // Newton polish on the original polynomial.
        for _ in 0..30 {
            let (p, dp) = poly_val(x);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if x > 0.0 && x.is_finite() {
            // Residual check relative to the coefficient magnitude at x
            // rejects near-real complex pairs that polished away.
            let (p, _) = poly_val(x);
            let mut mag = 0.0;
            let mut xp = 1.0;
            for &c in coeffs {
                mag += c.abs() * xp;
                xp *= x.abs();
            }
            if p.abs() <= 1e-8 * mag.max(f64::MIN_POSITIVE) {
                roots.push(x);
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-6 * b.abs().max(1e-12));
    roots
}

/// Free terminal time for a segment ending at rest (zero terminal
/// velocity/acceleration/jerk) at `end_position`.
///
/// Solves the degree-8 transversality polynomial
/// `-2k T⁸ + Σo² T⁶ + 2Σno T⁵ + Σ(n²+2mo) T⁴ + 2Σ(lo+mn) T³
///  + Σ(m²+2ln) T² + 2Σlm T + Σl² = 0`
/// with per-axis `l = 840(x₀-x_T)`, `m = 360 v₀`, `n = 60 a₀`, `o = 4 j₀`,
/// and returns its smallest strictly positive real root.
pub fn solve_terminal_time(start: &FlatState, end_position: &Vector3<f64>, k: f64) -> Result<f64> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid(format!("weight k must be > 0, got {k}")));
    }
    if !start.is_finite() || !end_position.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("non-finite boundary state"));
    }
    let l = 840.0 * (start.position - end_position);
    let m = 360.0 * start.velocity;
    let n = 60.0 * start.acceleration;
    let o = 4.0 * start.jerk;

    let mut a = [0.0f64; 9];
    a[8] = -2.0 * k;
    a[6] = o.norm_squared();
    a[5] = 2.0 * n.dot(&o);
    a[4] = n.norm_squared() + 2.0 * m.dot(&o);
    a[3] = 2.0 * (l.dot(&o) + m.dot(&n));
    a[2] = m.norm_squared() + 2.0 * l.dot(&n);
    a[1] = 2.0 * l.dot(&m);
    a[0] = l.norm_squared();

    positive_real_roots(&a)
        .first()
        .copied()
        .ok_or_else(|| Error::DegenerateBoundary("no positive real terminal time".into()))
}

/// Minimum-snap segment between full boundary states at a fixed terminal
/// time.
///
/// The lower coefficients come directly from the start state; the upper four
/// come from a 4×4 solve in the scaled time variable `s = t/T`, which keeps
/// the system well conditioned for long horizons.
pub fn solve_segment_fixed_time(
    start: &FlatState,
    end: &FlatState,
    k: f64,
    t_final: f64,
) -> Result<TrajectorySegment> {
    if !(t_final.is_finite() && t_final > 1e-9) {
        return Err(Error::DegenerateBoundary(format!(
            "terminal time {t_final} is not strictly positive"
        )));
    }
    let t = t_final;
    let t2 = t * t;
    let t3 = t2 * t;
    // Boundary derivative matrix of s^4..s^7 at s = 1 (rows: value, s-dot,
    // s-ddot, s-dddot).
    let m = Matrix4::new(
        1.0, 1.0, 1.0, 1.0, //
        4.0, 5.0, 6.0, 7.0, //
        12.0, 20.0, 30.0, 42.0, //
        24.0, 60.0, 120.0, 210.0,
    );
    let lu = m.lu();
    let mut coeffs = [[0.0; 8]; 3];
    for ax in 0..3 {
        let b0 = start.position[ax];
        let b1 = t * start.velocity[ax];
        let b2 = t2 * start.acceleration[ax] / 2.0;
        let b3 = t3 * start.jerk[ax] / 6.0;
        let rhs = Vector4::new(
            end.position[ax] - (b0 + b1 + b2 + b3),
            t * end.velocity[ax] - (b1 + 2.0 * b2 + 3.0 * b3),
            t2 * end.acceleration[ax] - (2.0 * b2 + 6.0 * b3),
            t3 * end.jerk[ax] - 6.0 * b3,
        );
        let beta = lu
            .solve(&rhs)
            .ok_or_else(|| Error::DegenerateBoundary("singular coefficient system".into()))?;
        coeffs[ax][0] = start.position[ax];
        coeffs[ax][1] = start.velocity[ax];
        coeffs[ax][2] = start.acceleration[ax] / 2.0;
        coeffs[ax][3] = start.jerk[ax] / 6.0;
        for j in 0..4 {
            coeffs[ax][4 + j] = beta[j] / t.powi(4 + j as i32);
        }
    }
    Ok(TrajectorySegment {
        coeffs,
        terminal_time: t,
        yaw_coeffs: [0.0; 4],
        weight_k: k,
    })
}

/// Feasibility sampling density: `max(50, ceil(100·T))`, capped so
/// pathologically long low-weight segments stay cheap to verify.
pub fn feasibility_samples(t_final: f64) -> usize {
    ((100.0 * t_final).ceil() as usize).clamp(50, 2000)
}

/// Minimum-snap segment with free terminal time and actuation-feasibility
/// retries.
///
/// The terminal time comes from [`solve_terminal_time`] (which uses the end
/// position only; the full end state is still enforced by the coefficient
/// solve). On a feasibility violation the terminal time is increased and the
/// coefficients recomputed, up to `limits.max_retries` attempts.
pub fn solve_segment(
    start: &FlatState,
    end: &FlatState,
    k: f64,
    limits: &ActuationLimits,
) -> Result<TrajectorySegment> {
    let mut t = solve_terminal_time(start, &end.position, k)?;
    let mut last: Option<Violation> = None;
    for _ in 0..=limits.max_retries {
        let seg = solve_segment_fixed_time(start, end, k, t)?;
        match check_feasibility(&seg, limits, feasibility_samples(t))? {
            None => return Ok(seg),
            Some(v) => last = Some(v),
        }
        t += if limits.dt_retry > 0.0 {
            limits.dt_retry
        } else {
            0.1 * t
        };
    }
    Err(Error::InfeasibleSegment {
        retries: limits.max_retries,
        t_final: t,
        detail: last.map(|v| v.to_string()).unwrap_or_default(),
    })
}

/// Evaluate a segment, returning the flat state and snap. Errors when `t`
/// lies outside `[0, T]`.
pub fn eval_trajectory(seg: &TrajectorySegment, t: f64) -> Result<(FlatState, Vector3<f64>)> {
    seg.eval(t)
}

/// Cubic yaw polynomial meeting angle/rate boundary conditions at both ends.
pub fn solve_yaw(psi0: f64, psidot0: f64, psi_t: f64, psidot_t: f64, t_final: f64) -> Result<[f64; 4]> {
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(Error::invalid(format!(
            "yaw horizon must be > 0, got {t_final}"
        )));
    }
    let t = t_final;
    let g2 = 0.5 * (6.0 * (psi_t - psi0) / (t * t) - 2.0 * (psidot_t + 2.0 * psidot0) / t);
    let g3 = (6.0 * (psidot_t + psidot0) / (t * t) - 12.0 * (psi_t - psi0) / (t * t * t)) / 6.0;
    Ok([psi0, psidot0, g2, g3])
}

/// Which actuation bound a sample violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    ThrustLow,
    ThrustHigh,
    BodyRate,
    Speed,
}

/// Earliest feasibility violation along a segment.
#[derive(Debug, Clone, Copy)]
pub struct Violation {
    pub t: f64,
    pub kind: ViolationKind,
    pub value: f64,
    pub bound: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.kind {
            ViolationKind::ThrustLow => "thrust below f_min",
            ViolationKind::ThrustHigh => "thrust above f_max",
            ViolationKind::BodyRate => "body-rate proxy above bound",
            ViolationKind::Speed => "speed above v_limit",
        };
        write!(
            f,
            "{what} at t = {:.4} s ({:.4} vs bound {:.4})",
            self.t, self.value, self.bound
        )
    }
}

/// Sample the segment uniformly and test thrust `f = m‖a + g e₃‖ ∈
/// (f_min, f_max)`, the body-rate proxy `‖j‖²/f²`, and the speed limit.
/// Returns the earliest violation, or `None` when feasible.
pub fn check_feasibility(
    seg: &TrajectorySegment,
    limits: &ActuationLimits,
    n_samples: usize,
) -> Result<Option<Violation>> {
    if n_samples < 2 {
        return Err(Error::invalid("feasibility check needs at least 2 samples"));
    }
    for i in 0..n_samples {
        let t = seg.terminal_time * i as f64 / (n_samples - 1) as f64;
        let (state, _) = seg.eval_clamped(t);
        let thrust_dir = state.acceleration + Vector3::new(0.0, 0.0, GRAVITY);
        let f = limits.mass * thrust_dir.norm();
        if f <= limits.f_min {
            return Ok(Some(Violation {
                t,
                kind: ViolationKind::ThrustLow,
                value: f,
                bound: limits.f_min,
            }));
        }
        if f >= limits.f_max {
            return Ok(Some(Violation {
                t,
                kind: ViolationKind::ThrustHigh,
                value: f,
                bound: limits.f_max,
            }));
        }
        let rate_sq = state.jerk.norm_squared() / (f * f);
        if rate_sq > limits.body_rate_sq_max {
            return Ok(Some(Violation {
                t,
                kind: ViolationKind::BodyRate,
                value: rate_sq,
                bound: limits.body_rate_sq_max,
            }));
        }
        let speed = state.velocity.norm();
        if speed > limits.v_limit {
            return Ok(Some(Violation {
                t,
                kind: ViolationKind::Speed,
                value: speed,
                bound: limits.v_limit,
            }));
        }
    }
    Ok(None)
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * std::f64::consts::PI);
    if x <= -std::f64::consts::PI {
        x += 2.0 * std::f64::consts::PI;
    } else if x > std::f64::consts::PI {
        x -= 2.0 * std::f64::consts::PI;
    }
    x
}

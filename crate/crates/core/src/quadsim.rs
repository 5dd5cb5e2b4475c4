//! 6-DOF quadrotor dynamics, motor mixing, fault injection and fixed-step
//! RK4 integration.
//!
//! State layout (12 entries): position `(px, py, pz)`, body velocity
//! `(vu, vv, vw)`, Euler angles `(phi, theta, psi)` and body rates
//! `(r, q, p)`. The rate triple is stored in the order that pairs it with the
//! Euler triple: slot 9 is the rate that drives `phi`, slot 11 the one that
//! drives `psi`. Under [`Convention::AsPrinted`] those are literally `r`, `q`,
//! `p` of the original equations; under [`Convention::StandardZyx`] they are
//! the textbook roll, pitch and yaw rates.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const GRAVITY: f64 = 9.8;
pub const STATE_DIM: usize = 12;
pub const OUTPUT_DIM: usize = 6;
pub const INPUT_DIM: usize = 4;

/// Named slots of [`State`].
pub mod idx {
    pub const PX: usize = 0;
    pub const PY: usize = 1;
    pub const PZ: usize = 2;
    pub const VU: usize = 3;
    pub const VV: usize = 4;
    pub const VW: usize = 5;
    pub const PHI: usize = 6;
    pub const THETA: usize = 7;
    pub const PSI: usize = 8;
    pub const R: usize = 9;
    pub const Q: usize = 10;
    pub const P: usize = 11;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State(pub [f64; STATE_DIM]);

impl State {
    pub fn hover() -> Self {
        State([0.0; STATE_DIM])
    }

    pub fn output(&self) -> Output {
        let x = &self.0;
        Output([x[idx::PX], x[idx::PY], x[idx::PZ], x[idx::PHI], x[idx::THETA], x[idx::PSI]])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// True once the state is non-finite or any entry exceeds `bound`.
    pub fn diverged(&self, bound: f64) -> bool {
        !self.is_finite() || self.max_abs() > bound
    }

    fn axpy(&self, a: f64, other: &State) -> State {
        let mut out = *self;
        for (o, d) in out.0.iter_mut().zip(other.0.iter()) {
            *o += a * d;
        }
        out
    }
}

/// Measured output: position and Euler angles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Output(pub [f64; OUTPUT_DIM]);

/// Collective thrust `U1` (N) and moments `U2..U4` (N·m).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench(pub [f64; INPUT_DIM]);

impl Wrench {
    pub fn hover(params: &QuadParams) -> Self {
        Wrench([params.mass * params.gravity, 0.0, 0.0, 0.0])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Squared motor speeds, rpm².
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotorCommand(pub [f64; INPUT_DIM]);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    pub mass: f64,
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    /// Thrust coefficient, N/rpm².
    pub ct: f64,
    /// Drag coefficient, N/rpm².
    pub cd: f64,
    /// Arm length, m.
    pub arm: f64,
    pub gravity: f64,
}

impl QuadParams {
    /// Crazyflie-class parameters used for training.
    pub fn nominal() -> Self {
        QuadParams {
            mass: 0.0299,
            ixx: 1.395e-5,
            iyy: 1.395e-5,
            izz: 2.173e-5,
            ct: 3.1582e-10,
            cd: 7.9379e-12,
            arm: 0.03973,
            gravity: GRAVITY,
        }
    }

    /// "Nominal" column of the parameter-perturbation table.
    pub fn table_nominal() -> Self {
        QuadParams {
            mass: 0.02,
            ixx: 1.395e-5,
            iyy: 1.395e-5,
            izz: 2.173e-5,
            ct: 3.158e-10,
            cd: 7.9379e-12,
            arm: 0.03973,
            gravity: GRAVITY,
        }
    }

    /// "Perturbed" column of the parameter-perturbation table.
    pub fn table_perturbed() -> Self {
        QuadParams {
            mass: 0.015,
            ixx: 2.0e-5,
            iyy: 1.0e-5,
            izz: 3.0e-5,
            ct: 2.5e-10,
            cd: 9.0e-12,
            arm: 0.05,
            gravity: GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mass, self.ixx, self.iyy, self.izz, self.ct, self.cd, self.arm, self.gravity];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("quadrotor parameters must be finite and positive: {self:?}")))
        }
    }

    /// Squared motor speed that hovers the vehicle with all four motors equal.
    pub fn hover_speed_sq(&self) -> f64 {
        self.mass * self.gravity / (4.0 * self.ct)
    }

    /// Moment arm coefficient `d·C_T·√2` of the roll/pitch rows.
    fn moment_coeff(&self) -> f64 {
        self.arm * self.ct * std::f64::consts::SQRT_2
    }

    /// Stable hex digest of the parameter set, used as a cache key.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in [self.mass, self.ixx, self.iyy, self.izz, self.ct, self.cd, self.arm, self.gravity] {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

impl Default for QuadParams {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Which transcription of the rigid-body equations to integrate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// The equations exactly as published, including their non-standard
    /// Euler-rate and moment couplings.
    #[default]
    AsPrinted,
    /// Textbook ZYX Euler kinematics with Newton-Euler body rates.
    StandardZyx,
}

/// Per-motor effectiveness in `[0, 1]`; at most one motor degraded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultVector(pub [f64; INPUT_DIM]);

impl FaultVector {
    pub fn healthy() -> Self {
        FaultVector([1.0; INPUT_DIM])
    }

    /// Fault with effectiveness `level` on motor `motor` (1-based).
    pub fn single(motor: usize, level: f64) -> Result<Self> {
        if !(1..=INPUT_DIM).contains(&motor) {
            return Err(Error::Config(format!("motor index {motor} outside 1..=4")));
        }
        let mut v = [1.0; INPUT_DIM];
        v[motor - 1] = level;
        Self::new(v)
    }

    pub fn new(v: [f64; INPUT_DIM]) -> Result<Self> {
        if v.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config(format!("fault entries must lie in [0, 1]: {v:?}")));
        }
        if v.iter().filter(|t| **t < 1.0).count() > 1 {
            return Err(Error::Config(format!("at most one motor may be faulty: {v:?}")));
        }
        Ok(FaultVector(v))
    }

    pub fn is_healthy(&self) -> bool {
        self.0.iter().all(|t| *t == 1.0)
    }

    /// 1-based index of the degraded motor, if any.
    pub fn faulty_motor(&self) -> Option<usize> {
        self.0.iter().position(|t| *t < 1.0).map(|i| i + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub fault: FaultVector,
    pub onset_step: usize,
}

impl FaultSchedule {
    pub fn none() -> Self {
        FaultSchedule { fault: FaultVector::healthy(), onset_step: 0 }
    }

    /// Fault vector in effect at `step`: healthy up to and including the onset.
    pub fn active_at(&self, step: usize) -> FaultVector {
        if step <= self.onset_step {
            FaultVector::healthy()
        } else {
            self.fault
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Integration step and sampling period, s.
    pub dt: f64,
    /// Number of integration steps; trajectories carry `horizon + 1` samples.
    pub horizon: usize,
    pub divergence_bound: f64,
    pub convention: Convention,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: 0.01, horizon: 200, divergence_bound: 1e3, convention: Convention::AsPrinted }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(Error::Config("divergence bound must be positive".into()));
        }
        Ok(())
    }
}

/// Time derivative of the state under wrench `w`.
pub fn derivative(x: &State, w: &Wrench, params: &QuadParams, convention: Convention) -> State {
    match convention {
        Convention::AsPrinted => derivative_as_printed(x, w, params),
        Convention::StandardZyx => derivative_standard(x, w, params),
    }
}

fn derivative_as_printed(x: &State, w: &Wrench, pr: &QuadParams) -> State {
    let [_, _, _, u, v, ww, phi, theta, psi, r, q, p] = x.0;
    let [u1, u2, u3, u4] = w.0;
    let g = pr.gravity;
    let (sphi, cphi) = phi.sin_cos();
    let (sth, cth) = theta.sin_cos();
    let (spsi, cpsi) = psi.sin_cos();
    let tth = theta.tan();

    let dpx = (cphi * cpsi * sth + sphi * spsi) * ww - (spsi * cphi - cpsi * sphi * sth) * v + u * cpsi * cth;
    let dpy = (sphi * spsi * sth + cphi * cpsi) * v - (cpsi * sphi - spsi * cphi * sth) * ww + u * spsi * cth;
    let dpz = ww * cpsi * cphi - u * sth + v * sphi * cth;
    let du = r * v - q * ww + g * sth;
    let dv = p * ww - r * u - g * sphi * cth;
    let dw = q * u - p * v + u1 / pr.mass - g * cth * cphi;
    let dphi = r * cphi / cth + q * sphi / cth;
    let dtheta = q * cphi - r * sphi;
    let dpsi = p + r * cphi * tth + q * sphi * tth;
    let dr = (u2 - p * q * (pr.iyy - pr.ixx)) / pr.izz;
    let dq = (u3 - p * r * (pr.ixx - pr.izz)) / pr.iyy;
    let dp = (u4 + q * r * (pr.izz - pr.iyy)) / pr.ixx;
    State([dpx, dpy, dpz, du, dv, dw, dphi, dtheta, dpsi, dr, dq, dp])
}

fn derivative_standard(x: &State, w: &Wrench, pr: &QuadParams) -> State {
    // wx, wy, wz: roll, pitch and yaw body rates (slots 9, 10, 11).
    let [_, _, _, u, v, ww, phi, theta, psi, wx, wy, wz] = x.0;
    let [u1, u2, u3, u4] = w.0;
    let g = pr.gravity;
    let (sphi, cphi) = phi.sin_cos();
    let (sth, cth) = theta.sin_cos();
    let (spsi, cpsi) = psi.sin_cos();
    let tth = theta.tan();

    // World velocity = Rz(psi) Ry(theta) Rx(phi) * body velocity.
    let dpx = cpsi * cth * u + (cpsi * sth * sphi - spsi * cphi) * v + (cpsi * sth * cphi + spsi * sphi) * ww;
    let dpy = spsi * cth * u + (spsi * sth * sphi + cpsi * cphi) * v + (spsi * sth * cphi - cpsi * sphi) * ww;
    let dpz = -sth * u + cth * sphi * v + cth * cphi * ww;
    let du = wz * v - wy * ww + g * sth;
    let dv = wx * ww - wz * u - g * cth * sphi;
    let dw = wy * u - wx * v + u1 / pr.mass - g * cth * cphi;
    let dphi = wx + (wy * sphi + wz * cphi) * tth;
    let dtheta = wy * cphi - wz * sphi;
    let dpsi = (wy * sphi + wz * cphi) / cth;
    let dwx = (u2 + wy * wz * (pr.iyy - pr.izz)) / pr.ixx;
    let dwy = (u3 + wx * wz * (pr.izz - pr.ixx)) / pr.iyy;
    let dwz = (u4 + wx * wy * (pr.ixx - pr.iyy)) / pr.izz;
    State([dpx, dpy, dpz, du, dv, dw, dphi, dtheta, dpsi, dwx, dwy, dwz])
}

/// Wrench produced by squared motor speeds.
pub fn mix(cmd: &MotorCommand, params: &QuadParams) -> Wrench {
    let [w1, w2, w3, w4] = cmd.0;
    let a = params.moment_coeff();
    Wrench([
        params.ct * (w1 + w2 + w3 + w4),
        a * (-w1 - w2 + w3 + w4),
        a * (-w1 + w2 + w3 - w4),
        params.cd * (-w1 + w2 - w3 + w4),
    ])
}

/// Exact inverse of [`mix`] without clamping; entries may be negative.
pub fn unmix_raw(w: &Wrench, params: &QuadParams) -> Result<MotorCommand> {
    let a = params.moment_coeff();
    let (ct, cd) = (params.ct, params.cd);
    if ![ct, cd, a].iter().all(|c| c.is_finite() && c.abs() > 0.0) {
        return Err(Error::Config("mixing matrix is singular".into()));
    }
    // The rows of the mixer are mutually orthogonal ±1 patterns, so the
    // inverse is a scaled transpose.
    let [u1, u2, u3, u4] = w.0;
    let (t, m2, m3, y) = (u1 / ct, u2 / a, u3 / a, u4 / cd);
    Ok(MotorCommand([
        0.25 * (t - m2 - m3 - y),
        0.25 * (t - m2 + m3 + y),
        0.25 * (t + m2 + m3 - y),
        0.25 * (t + m2 - m3 + y),
    ]))
}

/// Squared motor speeds realizing `w`, with negative entries clamped to zero.
/// The flag reports whether any clamping happened.
pub fn unmix(w: &Wrench, params: &QuadParams) -> Result<(MotorCommand, bool)> {
    let mut cmd = unmix_raw(w, params)?;
    let mut clamped = false;
    for v in cmd.0.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            clamped = true;
        }
    }
    Ok((cmd, clamped))
}

/// Wrench actually delivered at `step` when the controller commands `w`.
pub fn apply_fault(w: &Wrench, sched: &FaultSchedule, step: usize, params: &QuadParams) -> Result<Wrench> {
    let theta = sched.active_at(step);
    if theta.is_healthy() {
        return Ok(*w);
    }
    let (mut cmd, _) = unmix(w, params)?;
    for (c, t) in cmd.0.iter_mut().zip(theta.0.iter()) {
        *c *= t;
    }
    Ok(mix(&cmd, params))
}

/// One classical fourth-order Runge-Kutta step with the wrench held constant.
pub fn step_rk4(x: &State, w: &Wrench, params: &QuadParams, dt: f64, convention: Convention) -> State {
    let k1 = derivative(x, w, params, convention);
    let k2 = derivative(&x.axpy(0.5 * dt, &k1), w, params, convention);
    let k3 = derivative(&x.axpy(0.5 * dt, &k2), w, params, convention);
    let k4 = derivative(&x.axpy(dt, &k3), w, params, convention);
    let mut out = *x;
    for i in 0..STATE_DIM {
        out.0[i] += dt / 6.0 * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i]);
    }
    out
}

/// Closed-loop control law queried once per sample.
pub trait Controller {
    fn control(&self, step: usize, x: &State) -> Wrench;
}

impl<F> Controller for F
where
    F: Fn(usize, &State) -> Wrench,
{
    fn control(&self, step: usize, x: &State) -> Wrench {
        self(step, x)
    }
}

/// Sampled closed-loop rollout. Sample `t` pairs the state at step `t` with the
/// wrench the controller *commanded* there (never the faulted one).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub inputs: Vec<Wrench>,
    /// Sample index at which the rollout left the divergence bound, if it did.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        self.diverged_at.is_none()
    }

    pub fn outputs(&self) -> Vec<Output> {
        self.states.iter().map(State::output).collect()
    }
}

/// Roll out `cfg.horizon` steps from `x0`. Divergence truncates the trajectory
/// at the last finite sample and records where it happened.
pub fn simulate<C: Controller + ?Sized>(
    x0: &State,
    controller: &C,
    sched: &FaultSchedule,
    cfg: &SimConfig,
    params: &QuadParams,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = cfg.horizon + 1;
    let mut states = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    let mut x = *x0;
    for t in 0..n {
        if x.diverged(cfg.divergence_bound) {
            return Ok(Trajectory { states, inputs, diverged_at: Some(t) });
        }
        let u = controller.control(t, &x);
        if !u.is_finite() {
            return Ok(Trajectory { states, inputs, diverged_at: Some(t) });
        }
        states.push(x);
        inputs.push(u);
        if t + 1 < n {
            let applied = apply_fault(&u, sched, t, params)?;
            x = step_rk4(&x, &applied, params, cfg.dt, cfg.convention);
        }
    }
    Ok(Trajectory { states, inputs, diverged_at: None })
}

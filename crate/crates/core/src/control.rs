//! Hover regulation controllers: a constant-gain LQR designed on the
//! finite-difference linearization, and a single-constraint CBF-QP safety
//! filter layered on top of it.

use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};

use crate::quadsim::{derivative, Controller, Convention, QuadParams, State, Wrench, INPUT_DIM, STATE_DIM};
use crate::{Error, Result};

pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;
pub type GainMatrix = SMatrix<f64, INPUT_DIM, STATE_DIM>;

/// Continuous-time linearization `ẋ ≈ A x + B (u − u_trim)` about hover.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub u_trim: Wrench,
}

/// Central finite-difference Jacobians of the dynamics at (hover, u_trim).
pub fn linearize(params: &QuadParams, convention: Convention) -> Result<LinearModel> {
    linearize_with_step(params, convention, 1e-6)
}

/// As [`linearize`] with relative perturbation `rel_step` (column `j` uses
/// `rel_step · max(1, |z_j|)`).
pub fn linearize_with_step(params: &QuadParams, convention: Convention, rel_step: f64) -> Result<LinearModel> {
    params.validate()?;
    let x0 = State::hover();
    let u0 = Wrench::hover(params);
    let f0 = derivative(&x0, &u0, params, convention);
    if f0.max_abs() > 1e-12 {
        return Err(Error::Config(format!("hover is not an equilibrium: {f0:?}")));
    }
    let mut a = StateMatrix::zeros();
    for j in 0..STATE_DIM {
        let h = rel_step * x0.0[j].abs().max(1.0);
        let (mut xp, mut xm) = (x0, x0);
        xp.0[j] += h;
        xm.0[j] -= h;
        let fp = derivative(&xp, &u0, params, convention);
        let fm = derivative(&xm, &u0, params, convention);
        for i in 0..STATE_DIM {
            a[(i, j)] = (fp.0[i] - fm.0[i]) / (2.0 * h);
        }
    }
    let mut b = InputMatrix::zeros();
    for j in 0..INPUT_DIM {
        let h = rel_step * u0.0[j].abs().max(1.0);
        let (mut up, mut um) = (u0, u0);
        up.0[j] += h;
        um.0[j] -= h;
        let fp = derivative(&x0, &up, params, convention);
        let fm = derivative(&x0, &um, params, convention);
        for i in 0..STATE_DIM {
            b[(i, j)] = (fp.0[i] - fm.0[i]) / (2.0 * h);
        }
    }
    Ok(LinearModel { a, b, u_trim: u0 })
}

/// LQR weights. `r_diag` is expressed in normalized input units: channel `i`
/// of the wrench is divided by `input_scale[i]` before weighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q_diag: [f64; STATE_DIM],
    pub r_diag: [f64; INPUT_DIM],
}

impl Default for LqrWeights {
    fn default() -> Self {
        LqrWeights { q_diag: [1.0; STATE_DIM], r_diag: [0.1; INPUT_DIM] }
    }
}

/// Reference angular acceleration, rad/s², that defines one normalized unit
/// of moment.
pub const REFERENCE_ANGULAR_ACCEL: f64 = 10.0;

/// Reference magnitudes used to normalize wrench channels: hover thrust for
/// `U1`, and the moment producing [`REFERENCE_ANGULAR_ACCEL`] about each body
/// axis for `U2..U4`.
pub fn input_scale(params: &QuadParams) -> [f64; INPUT_DIM] {
    let thrust = params.mass * params.gravity;
    let a = REFERENCE_ANGULAR_ACCEL;
    [thrust, params.ixx * a, params.iyy * a, params.izz * a]
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqrGain {
    pub k: GainMatrix,
    pub u_trim: Wrench,
}

/// Result of a Riccati solve.
#[derive(Clone, Debug)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Frobenius norm of `AᵀP + PA − PBR⁻¹BᵀP + Q`, divided by `max(1, ‖Q‖_F)`.
    pub residual: f64,
    pub spectral_abscissa: f64,
}

/// Stabilizing solution of the continuous algebraic Riccati equation.
///
/// A Hamiltonian matrix-sign iteration provides the initial stabilizing
/// solution, which Newton-Kleinman iterations then polish until the relative
/// residual is at most `1e-8`.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<CareSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Shape("inconsistent Riccati dimensions".into()));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Config("R must be invertible".into()))?;
    let g = b * &r_inv * b.transpose();

    let mut z = DMatrix::zeros(2 * n, 2 * n);
    z.view_mut((0, 0), (n, n)).copy_from(a);
    z.view_mut((0, n), (n, n)).copy_from(&(-&g));
    z.view_mut((n, 0), (n, n)).copy_from(&(-q));
    z.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut converged = false;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant();
        let z_inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numeric("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let c = if det.is_finite() && det != 0.0 { det.abs().powf(-1.0 / (2 * n) as f64) } else { 1.0 };
        let next = (&z * c + &z_inv / c) * 0.5;
        let delta = (&next - &z).norm() / next.norm();
        z = next;
        if delta < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Config("matrix sign iteration did not converge".into()));
    }

    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(&w22 + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(&w11 + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-&w21));
    let svd = lhs.svd(true, true);
    let p0 = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numeric(format!("sign-function solve failed: {e}")))?;
    let mut p = (&p0 + p0.transpose()) * 0.5;

    let q_scale = q.norm().max(1.0);
    let residual_of = |p: &DMatrix<f64>| -> f64 {
        let res = a.transpose() * p + p * a - p * &g * p + q;
        res.norm() / q_scale
    };

    let mut residual = residual_of(&p);
    for _ in 0..50 {
        if residual <= 1e-10 {
            break;
        }
        let k = &r_inv * b.transpose() * &p;
        let acl = a - b * &k;
        let rhs = -(q + k.transpose() * r * &k);
        let next = solve_lyapunov(&acl, &rhs)?;
        let next = (&next + next.transpose()) * 0.5;
        let next_res = residual_of(&next);
        if !(next_res < residual) {
            break;
        }
        p = next;
        residual = next_res;
    }
    if !(residual <= 1e-8) {
        return Err(Error::Config(format!("Riccati residual {residual:e} above 1e-8")));
    }
    let k = &r_inv * b.transpose() * &p;
    let acl = a - b * &k;
    let spectral_abscissa = acl
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CareSolution { p, k, residual, spectral_abscissa })
}

/// Solves `Aᵀ X + X A = C` by Kronecker vectorization.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(AᵀX) = (I ⊗ Aᵀ) vec X, vec(XA) = (Aᵀ ⊗ I) vec X (column-major vec).
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DMatrix::from_column_slice(n * n, 1, c.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("Lyapunov operator is singular".into()))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Designs the hover LQR for `model` with weights given in normalized input
/// units.
pub fn solve_lqr(model: &LinearModel, weights: &LqrWeights, params: &QuadParams) -> Result<LqrGain> {
    let scale = input_scale(params);
    let a = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, model.a.as_slice());
    let b = DMatrix::from_column_slice(STATE_DIM, INPUT_DIM, model.b.as_slice());
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&weights.q_diag));
    let r = DMatrix::from_fn(INPUT_DIM, INPUT_DIM, |i, j| if i == j { weights.r_diag[i] / (scale[i] * scale[i]) } else { 0.0 });
    let sol = solve_care(&a, &b, &q, &r)?;
    if !(sol.spectral_abscissa < 0.0) {
        return Err(Error::Config(format!("closed loop not Hurwitz (abscissa {})", sol.spectral_abscissa)));
    }
    let k = GainMatrix::from_column_slice(sol.k.as_slice());
    Ok(LqrGain { k, u_trim: model.u_trim })
}

/// `u_trim − K x`, unclamped.
pub fn lqr_control(gain: &LqrGain, x: &State) -> Wrench {
    let xv = SMatrix::<f64, STATE_DIM, 1>::from_column_slice(&x.0);
    let du = gain.k * xv;
    let mut w = gain.u_trim;
    for i in 0..INPUT_DIM {
        w.0[i] -= du[i];
    }
    w
}

impl Controller for LqrGain {
    fn control(&self, _step: usize, x: &State) -> Wrench {
        lqr_control(self, x)
    }
}

/// Keep-in sphere for the CBF-QP filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    pub center: [f64; 3],
    pub radius: f64,
    /// Class-K gain, 1/s.
    pub cbf_alpha: f64,
    /// Prediction horizon of the barrier, s.
    pub lookahead: f64,
}

impl Default for SafetySpec {
    fn default() -> Self {
        SafetySpec { center: [0.0; 3], radius: 1.0, cbf_alpha: 1.0, lookahead: 0.1 }
    }
}

impl SafetySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.cbf_alpha > 0.0 && self.lookahead >= 0.0) {
            return Err(Error::Config(format!("invalid safety spec {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of one CBF-QP evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CbfStatus {
    Inactive,
    Active,
    /// Constraint violated but independent of the input; LQR input returned.
    Degenerate,
}

/// Linear constraint `a · u ≥ b` derived from the barrier at a given state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CbfConstraint {
    pub a: [f64; INPUT_DIM],
    pub b: f64,
    pub h: f64,
}

/// CBF-QP filter around an LQR gain.
///
/// The barrier is `h(x) = r² − ‖p̂(x) − c‖²`, where `p̂(x) = C e^{A L} x` is
/// the position predicted by the linear model's free response `L` seconds
/// ahead. With `L = 0` this is the plain keep-in sphere, whose derivative does
/// not depend on the input (relative degree > 1).
#[derive(Clone, Debug)]
pub struct CbfQpController {
    pub spec: SafetySpec,
    pub gain: LqrGain,
    model: LinearModel,
    predictor: SMatrix<f64, 3, STATE_DIM>,
}

impl CbfQpController {
    pub fn new(spec: SafetySpec, gain: LqrGain, model: LinearModel) -> Result<Self> {
        spec.validate()?;
        let phi = expm(&(model.a * spec.lookahead));
        let predictor = phi.fixed_rows::<3>(0).into_owned();
        Ok(CbfQpController { spec, gain, model, predictor })
    }

    pub fn constraint(&self, x: &State) -> CbfConstraint {
        let xv = SMatrix::<f64, STATE_DIM, 1>::from_column_slice(&x.0);
        let c = SMatrix::<f64, 3, 1>::from_column_slice(&self.spec.center);
        let e = self.predictor * xv - c;
        let h = self.spec.radius * self.spec.radius - e.norm_squared();
        // ḣ = −2 eᵀ M (A x + B (u − u_trim)) ≥ −α h
        let grad = -2.0 * e.transpose() * self.predictor;
        let ga = grad * self.model.a * xv;
        let gb = grad * self.model.b;
        let trim = SMatrix::<f64, INPUT_DIM, 1>::from_column_slice(&self.model.u_trim.0);
        let gb_trim = (gb * trim)[0];
        let a = [gb[0], gb[1], gb[2], gb[3]];
        let b = -self.spec.cbf_alpha * h - ga[0] + gb_trim;
        CbfConstraint { a, b, h }
    }

    /// Closed-form minimizer of `‖u − u_lqr‖²` subject to `a · u ≥ b`.
    pub fn filter(&self, x: &State) -> (Wrench, CbfStatus) {
        let u_lqr = lqr_control(&self.gain, x);
        let con = self.constraint(x);
        project_halfspace(&u_lqr, &con)
    }
}

/// Euclidean projection of `u` onto `{v : a · v ≥ b}`.
pub fn project_halfspace(u: &Wrench, con: &CbfConstraint) -> (Wrench, CbfStatus) {
    let au: f64 = con.a.iter().zip(u.0.iter()).map(|(a, u)| a * u).sum();
    if au >= con.b {
        return (*u, CbfStatus::Inactive);
    }
    let aa: f64 = con.a.iter().map(|a| a * a).sum();
    if aa == 0.0 || !aa.is_finite() {
        return (*u, CbfStatus::Degenerate);
    }
    let lambda = (con.b - au) / aa;
    let mut out = *u;
    for i in 0..INPUT_DIM {
        out.0[i] += lambda * con.a[i];
    }
    (out, CbfStatus::Active)
}

impl Controller for CbfQpController {
    fn control(&self, _step: usize, x: &State) -> Wrench {
        self.filter(x).0
    }
}

/// Which data-generating controller to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    #[default]
    Lqr,
    CbfQp,
}

/// A designed controller of either kind.
#[derive(Clone, Debug)]
pub enum ClosedLoop {
    Lqr(LqrGain),
    CbfQp(CbfQpController),
}

impl ClosedLoop {
    /// Hover LQR (and CBF filter) designed from `params` under `convention`.
    pub fn design(
        kind: ControllerKind,
        params: &QuadParams,
        convention: Convention,
        weights: &LqrWeights,
        safety: &SafetySpec,
    ) -> Result<Self> {
        let model = linearize(params, convention)?;
        let gain = solve_lqr(&model, weights, params)?;
        Ok(match kind {
            ControllerKind::Lqr => ClosedLoop::Lqr(gain),
            ControllerKind::CbfQp => ClosedLoop::CbfQp(CbfQpController::new(*safety, gain, model)?),
        })
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            ClosedLoop::Lqr(_) => ControllerKind::Lqr,
            ClosedLoop::CbfQp(_) => ControllerKind::CbfQp,
        }
    }
}

impl Controller for ClosedLoop {
    fn control(&self, step: usize, x: &State) -> Wrench {
        match self {
            ClosedLoop::Lqr(g) => g.control(step, x),
            ClosedLoop::CbfQp(c) => c.control(step, x),
        }
    }
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(m: &StateMatrix) -> StateMatrix {
    let norm = m.abs().row_sum().max();
    let mut squarings = 0;
    let mut scaled = *m;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as i32;
        scaled = m / 2f64.powi(squarings);
    }
    let mut term = StateMatrix::identity();
    let mut sum = StateMatrix::identity();
    for k in 1..=24 {
        term = term * scaled / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

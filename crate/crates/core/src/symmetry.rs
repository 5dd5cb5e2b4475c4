//! Quarter-turn yaw rotation cases and the matching motor relabelings.
//!
//! Case `n` rotates every 3-block of the state by `R_θ = [[c, s, 0], [−s, c, 0], [0, 0, 1]]`
//! with `θ = 0, π/2, π, 3π/2` for `n = 2, 3, 4, 1`. The motor relabeling of a
//! case is the signed permutation `P` solving `mix ∘ P = T ∘ mix`, where `T`
//! rotates the `(U2, U3)` moment pair by the same `R_θ`, keeps `U1`, and scales
//! `U4` by a sign `σ`. Adjacent motors spin in opposite directions, so quarter
//! turns come out with `σ = −1` and half turns with `σ = +1`.

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::control::{linearize, solve_lqr, LqrWeights};
use crate::quadsim::{
    mix, simulate, unmix_raw, Convention, FaultSchedule, FaultVector, MotorCommand, Output, QuadParams, SimConfig,
    State, Wrench, INPUT_DIM, STATE_DIM,
};
use crate::window::TrajectoryWindow;
use crate::{Error, Result};

/// One of the four rotation cases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationCase {
    /// Case index in `1..=4`.
    pub n: usize,
    /// Number of quarter turns `θ / (π/2)` in `0..4`.
    pub quarter_turns: usize,
    /// `motor_map[i − 1]` is the role played by physical motor `i`.
    pub motor_map: [usize; INPUT_DIM],
    /// Sign picked up by the yaw moment `U4` under the relabeling.
    pub yaw_sign: f64,
}

/// Case index for a given number of quarter turns.
pub fn n_for_quarter_turns(q: usize) -> usize {
    (q % 4 + 1) % 4 + 1
}

fn quarter_turns_for_n(n: usize) -> Result<usize> {
    match n {
        1..=4 => Ok((n + 2) % 4),
        _ => Err(Error::Config(format!("rotation case {n} outside 1..=4"))),
    }
}

/// Exact `(cos θ, sin θ)` for a multiple of a quarter turn.
fn cos_sin(q: usize) -> (f64, f64) {
    match q % 4 {
        0 => (1.0, 0.0),
        1 => (0.0, 1.0),
        2 => (-1.0, 0.0),
        _ => (0.0, -1.0),
    }
}

/// A motor relabeling together with the sign it induces on `U4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignedPermutation {
    pub motor_map: [usize; INPUT_DIM],
    pub yaw_sign: f64,
}

fn apply_map(map: &[usize; INPUT_DIM], v: &[f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
    let mut out = [0.0; INPUT_DIM];
    for i in 0..INPUT_DIM {
        out[map[i] - 1] = v[i];
    }
    out
}

fn rotate_wrench(w: &Wrench, q: usize, yaw_sign: f64) -> Wrench {
    let (c, s) = cos_sin(q);
    let [u1, u2, u3, u4] = w.0;
    Wrench([u1, c * u2 + s * u3, -s * u2 + c * u3, yaw_sign * u4])
}

fn permutations() -> Vec<[usize; INPUT_DIM]> {
    let mut out = Vec::with_capacity(24);
    for a in 1..=4 {
        for b in 1..=4 {
            for c in 1..=4 {
                for d in 1..=4 {
                    let p = [a, b, c, d];
                    let distinct = (0..4).all(|i| (i + 1..4).all(|j| p[i] != p[j]));
                    if distinct {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// Every motor permutation and yaw sign satisfying `mix ∘ P = T ∘ mix` for a
/// rotation of `q` quarter turns, searched over all 24 × 2 candidates.
pub fn signed_permutation_solutions(q: usize, params: &QuadParams) -> Vec<SignedPermutation> {
    let mut found = Vec::new();
    for map in permutations() {
        for yaw_sign in [1.0, -1.0] {
            let consistent = (0..INPUT_DIM).all(|j| {
                let mut e = [0.0; INPUT_DIM];
                e[j] = 1.0;
                let lhs = mix(&MotorCommand(apply_map(&map, &e)), params);
                let rhs = rotate_wrench(&mix(&MotorCommand(e), params), q, yaw_sign);
                lhs.0.iter().zip(rhs.0.iter()).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()))
            });
            if consistent {
                found.push(SignedPermutation { motor_map: map, yaw_sign });
            }
        }
    }
    found
}

/// The unique signed permutation for `q` quarter turns.
pub fn solve_signed_permutation(q: usize, params: &QuadParams) -> Result<SignedPermutation> {
    let sols = signed_permutation_solutions(q, params);
    match sols.as_slice() {
        [one] => Ok(*one),
        _ => Err(Error::Numeric(format!(
            "{} signed permutations solve the mixing consistency equation for {q} quarter turns",
            sols.len()
        ))),
    }
}

static CASES: OnceLock<[RotationCase; 4]> = OnceLock::new();

/// The four cases, indexed by `n − 1`.
pub fn cases() -> &'static [RotationCase; 4] {
    CASES.get_or_init(|| {
        let params = QuadParams::nominal();
        let mut out = [RotationCase { n: 0, quarter_turns: 0, motor_map: [1, 2, 3, 4], yaw_sign: 1.0 }; 4];
        for q in 0..4 {
            let sol = solve_signed_permutation(q, &params).expect("mixing matrix admits a unique relabeling");
            let n = n_for_quarter_turns(q);
            out[n - 1] = RotationCase { n, quarter_turns: q, motor_map: sol.motor_map, yaw_sign: sol.yaw_sign };
        }
        out
    })
}

impl RotationCase {
    pub fn by_n(n: usize) -> Result<Self> {
        quarter_turns_for_n(n)?;
        Ok(cases()[n - 1])
    }

    pub fn from_quarter_turns(q: usize) -> Self {
        cases()[n_for_quarter_turns(q) - 1]
    }

    /// The trained configuration, `θ = 0`.
    pub fn identity() -> Self {
        Self::from_quarter_turns(0)
    }

    pub fn theta(&self) -> f64 {
        self.quarter_turns as f64 * FRAC_PI_2
    }

    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let (c, s) = cos_sin(self.quarter_turns);
        [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    pub fn inverse(&self) -> Self {
        Self::from_quarter_turns((4 - self.quarter_turns) % 4)
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &RotationCase) -> Self {
        Self::from_quarter_turns(self.quarter_turns + other.quarter_turns)
    }

    pub fn role_of(&self, motor: usize) -> usize {
        self.motor_map[motor - 1]
    }

    pub fn motor_in_role(&self, role: usize) -> usize {
        self.motor_map.iter().position(|r| *r == role).expect("motor map is a bijection") + 1
    }

    fn rotate3(&self, v: &mut [f64]) {
        let (c, s) = cos_sin(self.quarter_turns);
        let (x, y) = (v[0], v[1]);
        v[0] = c * x + s * y;
        v[1] = -s * x + c * y;
    }
}

/// The case under which physical motor `motor` plays role #2.
pub fn case_for_motor(motor: usize) -> Result<RotationCase> {
    if !(1..=4).contains(&motor) {
        return Err(Error::Config(format!("motor index {motor} outside 1..=4")));
    }
    Ok(*cases().iter().find(|c| c.role_of(motor) == 2).expect("every motor reaches role 2"))
}

pub fn rotate_state(x: &State, case: &RotationCase) -> State {
    let mut out = *x;
    for b in 0..STATE_DIM / 3 {
        case.rotate3(&mut out.0[3 * b..3 * b + 3]);
    }
    out
}

pub fn rotate_output(y: &Output, case: &RotationCase) -> Output {
    let mut out = *y;
    case.rotate3(&mut out.0[0..3]);
    case.rotate3(&mut out.0[3..6]);
    out
}

pub fn permute_motor_command(cmd: &MotorCommand, case: &RotationCase) -> MotorCommand {
    MotorCommand(apply_map(&case.motor_map, &cmd.0))
}

/// Relabels a fault vector from physical motors to roles.
pub fn permute_fault(f: &FaultVector, case: &RotationCase) -> FaultVector {
    FaultVector(apply_map(&case.motor_map, &f.0))
}

/// Wrench of the relabeled motor command: unmix (without clamping), permute, remix.
pub fn permute_wrench(w: &Wrench, case: &RotationCase, params: &QuadParams) -> Result<Wrench> {
    let cmd = unmix_raw(w, params)?;
    Ok(mix(&permute_motor_command(&cmd, case), params))
}

/// Window as seen from the rotated frame; the label is relabeled to roles.
pub fn canonicalize_window(
    win: &TrajectoryWindow,
    case: &RotationCase,
    params: &QuadParams,
) -> Result<TrajectoryWindow> {
    win.validate()?;
    let u_seq = win.u_seq.iter().map(|u| permute_wrench(u, case, params)).collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryWindow {
        y_seq: win.y_seq.iter().map(|y| rotate_output(y, case)).collect(),
        u_seq,
        resid_seq: win.resid_seq.as_ref().map(|r| r.iter().map(|y| rotate_output(y, case)).collect()),
        label: permute_fault(&win.label, case),
        onset_offset: win.onset_offset,
    })
}

/// Inverse of [`canonicalize_window`].
pub fn decanonicalize_window(
    win: &TrajectoryWindow,
    case: &RotationCase,
    params: &QuadParams,
) -> Result<TrajectoryWindow> {
    canonicalize_window(win, &case.inverse(), params)
}

/// One row of the paired-simulation equivariance check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceRow {
    pub convention: Convention,
    pub case_n: usize,
    pub fault: FaultVector,
    pub onset_step: usize,
    pub steps: usize,
    /// Max-abs difference between the rotated rollout and the rollout of the
    /// rotated initial state with the relabeled fault; infinite on divergence.
    pub discrepancy: f64,
}

/// Simulate-then-rotate versus rotate-then-simulate under the hover LQR.
pub fn equivariance_discrepancy(
    convention: Convention,
    case: &RotationCase,
    sched: &FaultSchedule,
    x0: &State,
    steps: usize,
    params: &QuadParams,
) -> Result<EquivarianceRow> {
    let model = linearize(params, convention)?;
    let gain = solve_lqr(&model, &LqrWeights::default(), params)?;
    let cfg = SimConfig { horizon: steps, convention, ..SimConfig::default() };
    let direct = simulate(x0, &gain, sched, &cfg, params)?;
    let rotated_sched = FaultSchedule { fault: permute_fault(&sched.fault, case), onset_step: sched.onset_step };
    let rotated = simulate(&rotate_state(x0, case), &gain, &rotated_sched, &cfg, params)?;
    let discrepancy = if direct.is_valid() && rotated.is_valid() {
        direct
            .states
            .iter()
            .zip(rotated.states.iter())
            .flat_map(|(a, b)| {
                let ra = rotate_state(a, case);
                (0..STATE_DIM).map(move |i| (ra.0[i] - b.0[i]).abs())
            })
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(EquivarianceRow {
        convention,
        case_n: case.n,
        fault: sched.fault,
        onset_step: sched.onset_step,
        steps,
        discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn case_indices_follow_quarter_turns() {
        assert_eq!(RotationCase::identity().n, 2);
        assert_eq!(RotationCase::from_quarter_turns(1).n, 3);
        assert_eq!(RotationCase::from_quarter_turns(2).n, 4);
        assert_eq!(RotationCase::from_quarter_turns(3).n, 1);
        assert!(RotationCase::by_n(0).is_err());
        assert!(RotationCase::by_n(5).is_err());
    }

    #[test]
    fn identity_case_leaves_everything_alone() {
        let id = RotationCase::identity();
        assert_eq!(id.motor_map, [1, 2, 3, 4]);
        assert_eq!(id.yaw_sign, 1.0);
        let x = State(std::array::from_fn(|i| i as f64 + 0.5));
        assert_eq!(rotate_state(&x, &id), x);
    }

    #[test]
    fn quarter_turns_flip_yaw_and_half_turn_does_not() {
        for c in cases() {
            let expected = if c.quarter_turns % 2 == 1 { -1.0 } else { 1.0 };
            assert_eq!(c.yaw_sign, expected, "case {}", c.n);
        }
    }

    #[test]
    fn relabeling_follows_motor_geometry() {
        // Quarter turn: motor 1 takes role 2, then 2 -> 3 -> 4 -> 1.
        assert_eq!(RotationCase::from_quarter_turns(1).motor_map, [2, 3, 4, 1]);
        assert_eq!(RotationCase::from_quarter_turns(2).motor_map, [3, 4, 1, 2]);
        assert_eq!(case_for_motor(2).unwrap().n, 2);
        assert_eq!(case_for_motor(1).unwrap().quarter_turns, 1);
        assert_eq!(case_for_motor(4).unwrap().quarter_turns, 2);
        assert_eq!(case_for_motor(3).unwrap().quarter_turns, 3);
        assert!(case_for_motor(0).is_err());
    }

    #[test]
    fn permuted_wrench_is_the_signed_rotation() {
        let p = QuadParams::nominal();
        let w = Wrench([0.31, 2e-4, -3e-4, 5e-6]);
        for c in cases() {
            let got = permute_wrench(&w, c, &p).unwrap();
            let want = rotate_wrench(&w, c.quarter_turns, c.yaw_sign);
            for i in 0..INPUT_DIM {
                assert!((got.0[i] - want.0[i]).abs() <= 1e-12 * w.0[i].abs().max(1e-6));
            }
        }
    }

    #[test]
    fn hover_wrench_is_fixed_by_every_case() {
        let p = QuadParams::nominal();
        let h = Wrench::hover(&p);
        for c in cases() {
            let w = permute_wrench(&h, c, &p).unwrap();
            assert!((w.0[0] - h.0[0]).abs() <= 1e-15);
            assert!(w.0[1..].iter().all(|v| v.abs() <= 1e-15));
        }
    }

    #[test]
    fn output_rotation_is_the_projection_of_state_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = State(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        for c in cases() {
            assert_eq!(rotate_output(&x.output(), c), rotate_state(&x, c).output());
        }
    }

    #[test]
    fn rotation_matrices_are_proper() {
        for c in cases() {
            let r = c.rotation_matrix();
            let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
            assert_eq!(det, 1.0);
            assert!((r[0][0] - c.theta().cos()).abs() < 1e-15);
            assert!((r[0][1] - c.theta().sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn half_turn_is_equivariant_with_a_fault() {
        let p = QuadParams::nominal();
        let mut x0 = State::hover();
        x0.0[0] = 1e-3;
        x0.0[7] = -2e-3;
        let sched = FaultSchedule { fault: FaultVector::single(1, 0.7).unwrap(), onset_step: 5 };
        let row = equivariance_discrepancy(
            Convention::StandardZyx,
            &RotationCase::from_quarter_turns(2),
            &sched,
            &x0,
            50,
            &p,
        )
        .unwrap();
        assert!(row.discrepancy <= 1e-9, "{row:?}");
    }
}

use proptest::prelude::*;
use quadfdi::control::{CbfStatus, ClosedLoop, ControllerKind, LqrWeights, SafetySpec};
use quadfdi::quadsim::{derivative, mix, simulate, step_rk4, unmix, GRAVITY};
use quadfdi::symmetry::{canonicalize_window, cases, decanonicalize_window, RotationCase};
use quadfdi::train::InitialStateSampler;
use quadfdi::window::TrajectoryWindow;
use quadfdi::{Convention, FaultSchedule, FaultVector, MotorCommand, Output, QuadParams, SimConfig, State, Wrench};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONVENTIONS: [Convention; 2] = [Convention::AsPrinted, Convention::StandardZyx];

fn arb_state(scale: f64) -> impl Strategy<Value = State> {
    proptest::array::uniform12(-scale..scale).prop_map(State)
}

fn rollout_error(x0: &State, w: &Wrench, p: &QuadParams, c: Convention, dt: f64, t_end: f64) -> State {
    let n = (t_end / dt).round() as usize;
    (0..n).fold(*x0, |x, _| step_rk4(&x, w, p, dt, c))
}

#[test]
fn hover_is_an_exact_fixed_point() {
    let p = QuadParams::nominal();
    let w = Wrench([p.mass * GRAVITY, 0.0, 0.0, 0.0]);
    for c in CONVENTIONS {
        let d = derivative(&State::hover(), &w, &p, c);
        assert!(d.0.iter().all(|v| v.abs() <= 1e-12));
        let x = step_rk4(&State::hover(), &w, &p, 0.01, c);
        assert!(x.0.iter().all(|v| v.abs() <= 1e-12));
    }
}

#[test]
fn rk4_observed_order_is_four() {
    let p = QuadParams::nominal();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for c in CONVENTIONS {
        let x0 = State(std::array::from_fn(|_| rng.random_range(-0.3..0.3)));
        let w = Wrench([1.1 * p.mass * GRAVITY, 2e-6, -1e-6, 5e-7]);
        let t = 0.4;
        let reference = rollout_error(&x0, &w, &p, c, 0.02 / 64.0, t);
        let err = |dt: f64| {
            let x = rollout_error(&x0, &w, &p, c, dt, t);
            x.0.iter().zip(reference.0.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let order = (err(0.02) / err(0.01)).log2();
        assert!((3.5..=4.5).contains(&order), "{c:?}: observed order {order}");
    }
}

#[test]
fn mixer_round_trip_on_random_wrenches() {
    let p = QuadParams::nominal();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hover = p.hover_speed_sq();
    for _ in 0..1000 {
        let cmd = MotorCommand(std::array::from_fn(|_| rng.random_range(0.1 * hover..3.0 * hover)));
        let w = mix(&cmd, &p);
        let (back, clamped) = unmix(&w, &p).unwrap();
        assert!(!clamped);
        let w2 = mix(&back, &p);
        for i in 0..4 {
            assert!((w2.0[i] - w.0[i]).abs() <= 1e-9 * w.0[i].abs().max(1e-12), "{w:?} vs {w2:?}");
        }
    }
}

#[test]
fn lqr_keeps_random_initial_states_bounded() {
    let p = QuadParams::nominal();
    let sampler = InitialStateSampler::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for c in CONVENTIONS {
        let sim = SimConfig { convention: c, ..SimConfig::default() };
        let ctrl = ClosedLoop::design(ControllerKind::Lqr, &p, c, &LqrWeights::default(), &SafetySpec::default()).unwrap();
        let mut bounded = 0;
        for _ in 0..1000 {
            let x0 = sampler.sample(&mut rng);
            let traj = simulate(&x0, &ctrl, &FaultSchedule::none(), &sim, &p).unwrap();
            bounded += traj.is_valid() as usize;
        }
        assert!(bounded >= 990, "{c:?}: {bounded}/1000 bounded");
    }
}

#[test]
fn cbf_constraint_holds_along_closed_loop_rollouts() {
    let p = QuadParams::nominal();
    let c = Convention::StandardZyx;
    let ctrl = ClosedLoop::design(ControllerKind::CbfQp, &p, c, &LqrWeights::default(), &SafetySpec::default()).unwrap();
    let ClosedLoop::CbfQp(cbf) = &ctrl else { panic!("expected a CBF controller") };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sim = SimConfig { convention: c, ..SimConfig::default() };
    for _ in 0..20 {
        let x0 = InitialStateSampler::default().sample(&mut rng);
        let traj = simulate(&x0, &ctrl, &FaultSchedule::none(), &sim, &p).unwrap();
        for x in &traj.states {
            let con = cbf.constraint(x);
            let (u, status) = cbf.filter(x);
            let au: f64 = con.a.iter().zip(u.0.iter()).map(|(a, u)| a * u).sum();
            if status != CbfStatus::Degenerate {
                assert!(au >= con.b - 1e-9 * (con.b.abs() + au.abs()).max(1e-12), "{au} < {}", con.b);
            }
        }
    }
}

fn arb_window(t: usize) -> impl Strategy<Value = TrajectoryWindow> {
    let out = proptest::array::uniform6(-1.0..1.0f64).prop_map(Output);
    let p = QuadParams::nominal();
    let hover = p.hover_speed_sq();
    let wrench = proptest::array::uniform4(0.2 * hover..2.0 * hover).prop_map(move |c| mix(&MotorCommand(c), &p));
    (
        proptest::collection::vec(out.clone(), t),
        proptest::collection::vec(wrench, t),
        proptest::collection::vec(out, t),
        1usize..=4,
        0.0..1.0f64,
    )
        .prop_map(move |(y, u, r, motor, level)| TrajectoryWindow {
            y_seq: y,
            u_seq: u,
            resid_seq: Some(r),
            label: FaultVector::single(motor, level).unwrap(),
            onset_offset: t / 2,
        })
}

fn max_window_diff(a: &TrajectoryWindow, b: &TrajectoryWindow) -> f64 {
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1.0);
    let mut d: f64 = 0.0;
    for k in 0..a.len() {
        for i in 0..6 {
            d = d.max(rel(a.y_seq[k].0[i], b.y_seq[k].0[i]));
            d = d.max(rel(a.resid_seq.as_ref().unwrap()[k].0[i], b.resid_seq.as_ref().unwrap()[k].0[i]));
        }
        for i in 0..4 {
            d = d.max(rel(a.u_seq[k].0[i], b.u_seq[k].0[i]));
        }
    }
    d
}

proptest! {
    #[test]
    fn canonicalization_is_invertible(win in arb_window(6), n in 1usize..=4) {
        let p = QuadParams::nominal();
        let case = RotationCase::by_n(n).unwrap();
        let there = canonicalize_window(&win, &case, &p).unwrap();
        let back = decanonicalize_window(&there, &case, &p).unwrap();
        prop_assert!(max_window_diff(&back, &win) <= 1e-12);
        prop_assert_eq!(back.label, win.label);
        prop_assert_eq!(there.len(), win.len());
    }

    #[test]
    fn four_quarter_turns_compose_to_identity(x in arb_state(2.0)) {
        let q1 = RotationCase::from_quarter_turns(1);
        let mut y = x;
        for _ in 0..4 {
            y = quadfdi::symmetry::rotate_state(&y, &q1);
        }
        for i in 0..12 {
            prop_assert!((y.0[i] - x.0[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn recorded_inputs_do_not_depend_on_the_fault_before_onset(level in 0.0..1.0f64, motor in 1usize..=4) {
        let p = QuadParams::nominal();
        let c = Convention::StandardZyx;
        let ctrl = ClosedLoop::design(ControllerKind::Lqr, &p, c, &LqrWeights::default(), &SafetySpec::default()).unwrap();
        let sim = SimConfig { horizon: 30, convention: c, ..SimConfig::default() };
        let sched = FaultSchedule { fault: FaultVector::single(motor, level).unwrap(), onset_step: 15 };
        let mut x0 = State::hover();
        x0.0[0] = 0.1;
        let a = simulate(&x0, &ctrl, &sched, &sim, &p).unwrap();
        let b = simulate(&x0, &ctrl, &FaultSchedule::none(), &sim, &p).unwrap();
        prop_assert_eq!(&a.inputs[..=16], &b.inputs[..=16]);
    }
}

#[test]
fn case_products_stay_in_the_group() {
    for a in cases() {
        for b in cases() {
            let ab = a.then(b);
            assert!(cases().contains(&ab));
            assert_eq!(ab.quarter_turns, (a.quarter_turns + b.quarter_turns) % 4);
        }
        assert_eq!(a.then(&a.inverse()), RotationCase::identity());
    }
}

#[test]
fn cbf_filter_engages_once_a_motor_fails() {
    let p = QuadParams::nominal();
    let c = Convention::StandardZyx;
    let ctrl = ClosedLoop::design(ControllerKind::CbfQp, &p, c, &LqrWeights::default(), &SafetySpec::default()).unwrap();
    let ClosedLoop::CbfQp(cbf) = &ctrl else { panic!("expected a CBF controller") };
    let sim = SimConfig { convention: c, ..SimConfig::default() };
    let sched = FaultSchedule { fault: FaultVector::single(2, 0.0).unwrap(), onset_step: 100 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut before, mut after) = (0, 0);
    for _ in 0..20 {
        let x0 = InitialStateSampler::default().sample(&mut rng);
        let traj = simulate(&x0, &ctrl, &sched, &sim, &p).unwrap();
        for (k, x) in traj.states.iter().enumerate() {
            let active = cbf.filter(x).1 == CbfStatus::Active;
            if k <= 100 {
                before += active as usize;
            } else {
                after += active as usize;
            }
        }
    }
    assert!(after > 20 * before.max(1), "active steps: {before} before onset, {after} after");
}

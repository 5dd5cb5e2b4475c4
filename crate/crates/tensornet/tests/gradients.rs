use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensornet::{Architecture, FeatureMode, FeatureSpec, LstmConfig, MlpConfig, Network, Normalizer};

fn random_window(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

fn loss_of(net: &Network, window: &[f64], label: &[f64], eps: f64) -> f64 {
    let mut g = net.zero_gradients();
    net.accumulate_gradient(window, label, eps, &mut g).unwrap()
}

/// Largest relative disagreement between backprop and central differences.
fn worst_relative_error(net: &Network, window: &[f64], label: &[f64], eps: f64) -> f64 {
    let mut grads = net.zero_gradients();
    let loss = net.accumulate_gradient(window, label, eps, &mut grads).unwrap();
    assert!(loss > 0.0, "check needs an active hinge");
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for (pi, g) in grads.0.iter().enumerate() {
        for k in 0..g.len() {
            let orig = probe.params()[pi].data()[k];
            probe.params_mut()[pi].data_mut()[k] = orig + h;
            let up = loss_of(&probe, window, label, eps);
            probe.params_mut()[pi].data_mut()[k] = orig - h;
            let down = loss_of(&probe, window, label, eps);
            probe.params_mut()[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.data()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(rel);
        }
    }
    worst
}

fn small_spec() -> FeatureSpec {
    FeatureSpec::new(FeatureMode::ModelFree, 2, 1, 5).unwrap()
}

fn with_normalizer(mut net: Network) -> Network {
    let w = net.spec().per_step_width();
    let norm = Normalizer { offset: (0..w).map(|i| 0.1 * i as f64).collect(), scale: (0..w).map(|i| 1.0 + 0.5 * i as f64).collect() };
    net.set_normalizer(norm).unwrap();
    net
}

#[test]
fn lstm_bptt_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let arch = Architecture::Lstm(LstmConfig { hidden: 8, head: vec![8, 6] });
    let net = with_normalizer(Network::new(small_spec(), arch, 4, &mut rng).unwrap());
    let window = random_window(&mut rng, small_spec().flat_width());
    let worst = worst_relative_error(&net, &window, &[1.0, 0.0, 1.0, 1.0], 0.01);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn mlp_backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let arch = Architecture::Mlp(MlpConfig { hidden: vec![8, 8, 6] });
    let net = with_normalizer(Network::new(small_spec(), arch, 4, &mut rng).unwrap());
    let window = random_window(&mut rng, small_spec().flat_width());
    let worst = worst_relative_error(&net, &window, &[1.0, 0.3, 1.0, 1.0], 0.01);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn inactive_hinge_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let arch = Architecture::Lstm(LstmConfig { hidden: 4, head: vec![] });
    let net = Network::new(small_spec(), arch, 4, &mut rng).unwrap();
    let window = random_window(&mut rng, 15);
    let pred = net.forward(&window).unwrap();
    let mut g = net.zero_gradients();
    let loss = net.accumulate_gradient(&window, &pred, 0.01, &mut g).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn single_unit_sigmoid_chain_rule() {
    // One linear unit with sigmoid: dL/dw = dL/dp · p(1 − p) · x.
    let spec = FeatureSpec::new(FeatureMode::ResidualOnly, 1, 0, 1).unwrap();
    let mut net = Network::new(spec, Architecture::Mlp(MlpConfig { hidden: vec![] }), 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let layer = &mut net.as_mlp_mut().unwrap().layers_mut()[0];
    layer.w.data_mut()[0] = 0.7;
    layer.b.data_mut()[0] = -0.2;
    let x = 1.3;
    let p = 1.0 / (1.0 + (-(0.7 * x - 0.2f64)).exp());
    let mut g = net.zero_gradients();
    net.accumulate_gradient(&[x], &[0.0], 0.0, &mut g).unwrap();
    let expected = p * (1.0 - p) * x;
    assert!((g.0[0].data()[0] - expected).abs() < 1e-15);
    assert!((g.0[1].data()[0] - p * (1.0 - p)).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gradients_agree_for_random_lstms(seed in any::<u64>(), target in 0.0f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::Lstm(LstmConfig { hidden: 8, head: vec![5] });
        let net = Network::new(small_spec(), arch, 4, &mut rng).unwrap();
        let window = random_window(&mut rng, small_spec().flat_width());
        let label = [1.0, target, 1.0, 1.0];
        prop_assume!(loss_of(&net, &window, &label, 0.01) > 0.0);
        let worst = worst_relative_error(&net, &window, &label, 0.01);
        prop_assert!(worst <= 1e-4, "worst relative error {:e}", worst);
    }

    #[test]
    fn gradients_agree_for_random_mlps(seed in any::<u64>(), target in 0.0f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::Mlp(MlpConfig { hidden: vec![8, 6] });
        let net = Network::new(small_spec(), arch, 4, &mut rng).unwrap();
        let window = random_window(&mut rng, small_spec().flat_width());
        let label = [1.0, target, 1.0, 1.0];
        prop_assume!(loss_of(&net, &window, &label, 0.01) > 0.0);
        let worst = worst_relative_error(&net, &window, &label, 0.01);
        prop_assert!(worst <= 1e-4, "worst relative error {:e}", worst);
    }

    #[test]
    fn loss_is_nonnegative_and_outputs_in_unit_interval(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::Lstm(LstmConfig { hidden: 6, head: vec![4] });
        let net = Network::new(small_spec(), arch, 4, &mut rng).unwrap();
        let window: Vec<f64> = random_window(&mut rng, 15).iter().map(|v| v * scale).collect();
        let pred = net.forward(&window).unwrap();
        prop_assert!(pred.iter().all(|p| *p > 0.0 && *p < 1.0));
        prop_assert!(loss_of(&net, &window, &[1.0, 0.0, 1.0, 1.0], 0.01) >= 0.0);
    }
}

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalenet::certify::bound_envelope;
use scalenet::netmodel::{constant_history, integrate, max_deviation, output_deviation};
use scalenet::neuralnet::{
    decaying_sine, hopfield60, hopfield_weight_sampler, prop4_certificate, pulse_train, solve_equilibrium,
    solve_equilibrium_from, Activation, CGNetwork,
};
use scalenet::unicycle::{AdjacencyMode, CircleScenario, FormationGains};

fn random_hopfield(n: usize, c: f64, margin: f64, seed: u64) -> CGNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = hopfield_weight_sampler(n, margin, seed).unwrap();
    let inputs = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    CGNetwork::hopfield(vec![c; n], DMatrix::zeros(n, n), b, Activation::Tanh, Activation::Tanh, inputs, 0.2).unwrap()
}

#[test]
fn equilibrium_does_not_depend_on_start() {
    let net = hopfield60(9.0, 7).unwrap();
    let reference = solve_equilibrium(&net).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let x0: Vec<f64> = (0..net.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let eq = solve_equilibrium_from(&net, &x0).unwrap();
        let gap = eq.x_star.iter().zip(&reference.x_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-8, "gap {gap}");
    }
}

#[test]
fn undisturbed_formation_stays_on_its_trajectory() {
    let mut sc = CircleScenario::new(2, AdjacencyMode::IntraInter, FormationGains::scalable(), 0.1).unwrap();
    sc.disturbance = None;
    let sys = sc.build().unwrap();
    let hist = |t: f64| sys.desired(t);
    let drift = |dt: f64| {
        let tr = integrate(&sys, &hist, 10.0, dt).unwrap();
        max_deviation(&tr, &sys).unwrap().peak()
    };
    let (coarse, fine) = (drift(0.02), drift(0.01));
    assert!(coarse < 1e-6, "coarse drift {coarse}");
    // fourth-order integrator: halving the step cuts the error by about 16
    assert!(fine <= coarse / 8.0 + 1e-13, "coarse {coarse}, fine {fine}");
}

#[test]
fn output_deviation_within_lipschitz_bound() {
    let sc = CircleScenario::new(2, AdjacencyMode::IntraInter, FormationGains::scalable(), 0.1).unwrap();
    let sys = sc.build().unwrap();
    let tr = integrate(&sys, &constant_history(sys.desired(0.0)), 5.0, 0.01).unwrap();
    let state = max_deviation(&tr, &sys).unwrap();
    let output = output_deviation(&tr, &sys).unwrap();
    let l = sys.agents().iter().map(|a| a.output_lipschitz().unwrap()).fold(0.0, f64::max);
    for (s, o) in state.max_series().iter().zip(output.max_series()) {
        assert!(o <= l * s + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn unit_amplification_gain_is_inverse_margin(n in 2usize..10, c in 2.0..20.0f64, frac in 0.05..0.95f64, seed in 0u64..1000) {
        let net = random_hopfield(n, c, c * frac, seed);
        let cert = prop4_certificate(&net).unwrap();
        prop_assert!((cert.sigma_bar - c).abs() < 1e-12);
        prop_assert!((cert.sigma_under - c * frac).abs() < 1e-9);
        prop_assert!((cert.disturbance_gain() - 1.0 / (c - c * frac)).abs() < 1e-9 * cert.disturbance_gain());
    }

    #[test]
    fn certified_network_obeys_envelope_under_random_disturbance(
        n in 2usize..8,
        frac in 0.1..0.9f64,
        seed in 0u64..1000,
        amp in 0.5..5.0f64,
        start in 0.0..3.0f64,
        sine in any::<bool>(),
    ) {
        let mut net = random_hopfield(n, 4.0, 4.0 * frac, seed);
        let target = seed as usize % n;
        net = if sine {
            net.with_disturbance(target, decaying_sine(amp, 0.3))
        } else {
            net.with_disturbance(target, pulse_train(vec![(start, 1.0, amp)]))
        };
        let cert = prop4_certificate(&net).unwrap();
        let eq = solve_equilibrium(&net).unwrap();
        let sys = net.to_system(&eq.x_star).unwrap();
        let tr = integrate(&sys, &constant_history(eq.x_star.clone()), 8.0, 0.01).unwrap();
        let dev = max_deviation(&tr, &sys).unwrap();
        let d_sup = net.disturbance_sup((0..=8000).map(|k| k as f64 * 1e-3));
        let env = bound_envelope(&cert, 0.0, d_sup);
        for (t, d) in dev.times.iter().zip(dev.max_series()) {
            prop_assert!(env.eval(*t) + 1e-6 >= d, "t {} deviation {} envelope {}", t, d, env.eval(*t));
        }
    }

    #[test]
    fn initial_offset_decays_below_envelope(frac in 0.1..0.9f64, seed in 0u64..1000, offset in -2.0..2.0f64) {
        let net = random_hopfield(4, 3.0, 3.0 * frac, seed);
        let cert = prop4_certificate(&net).unwrap();
        let eq = solve_equilibrium(&net).unwrap();
        let sys = net.to_system(&eq.x_star).unwrap();
        let x0: Vec<f64> = eq.x_star.iter().map(|x| x + offset).collect();
        let tr = integrate(&sys, &constant_history(x0), 6.0, 0.01).unwrap();
        let dev = max_deviation(&tr, &sys).unwrap();
        let env = bound_envelope(&cert, offset.abs(), 0.0);
        for (t, d) in dev.times.iter().zip(dev.max_series()) {
            prop_assert!(env.eval(*t) + 1e-6 >= d);
        }
    }
}

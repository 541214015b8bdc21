//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.
//! Pass a criterion number (e.g. `cargo test --test acceptance -- 7`) to run a subset.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalenet::certify::{bound_envelope, Condition};
use scalenet::expcli::{cmd_simulate, cmd_sweep, LoadedConfig, RunOptions, ScenarioConfig};
use scalenet::generic::random_certified_spec;
use scalenet::halanay::{envelope, solve_rate, HalanayParams};
use scalenet::measures::{lemma1_measure_bound, lemma1_norm_bound, mu2, mu_inf, BlockMatrix};
use scalenet::netmodel::{
    constant_history, integrate, max_deviation, Agent, Coupling, CouplingTerm, DelaySpec, NetworkSystem, Signal, Source,
};
use scalenet::neuralnet::{hopfield60, prop4_certificate, small_hopfield, solve_equilibrium, with_random_pulses, CGNetwork};
use scalenet::unicycle::{
    default_alpha_grid, full_model_agent, hand_transform, prop3_certificate, reduced_model_agent, scenario_certificate,
    AdjacencyMode, CircleScenario, FormationGains, RobotParams, UnicycleState,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
}

fn spectral(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn row_sum_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

// (||I + hA|| - 1) / h at h = 1e-8: truncation and rounding are both near 1e-7
fn limit_quotient(a: &DMatrix<f64>, norm: fn(&DMatrix<f64>) -> f64) -> f64 {
    let h = 1e-8;
    let n = a.nrows();
    (norm(&(DMatrix::identity(n, n) + a * h)) - 1.0) / h
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_limit: f64 = 0.0;
    let mut worst_alg: f64 = 0.0;
    for k in 0..200 {
        let n = 1 + k % 12;
        let a = random_matrix(&mut rng, n);
        let b = random_matrix(&mut rng, n);
        let (m2, mi) = (mu2(&a).unwrap(), mu_inf(&a).unwrap());
        worst_limit = worst_limit.max((m2 - limit_quotient(&a, spectral)).abs());
        worst_limit = worst_limit.max((mi - limit_quotient(&a, row_sum_norm)).abs());
        let c: f64 = rng.random_range(-5.0..5.0);
        let shifted = &a + DMatrix::identity(n, n) * c;
        worst_alg = worst_alg.max((mu2(&shifted).unwrap() - m2 - c).abs());
        worst_alg = worst_alg.max((mu_inf(&shifted).unwrap() - mi - c).abs());
        let sum = &a + &b;
        worst_alg = worst_alg.max(mu2(&sum).unwrap() - m2 - mu2(&b).unwrap());
        worst_alg = worst_alg.max(mu_inf(&sum).unwrap() - mi - mu_inf(&b).unwrap());
    }
    check(worst_limit < 1e-5, format!("limit definition off by {worst_limit:.2e}"))?;
    check(worst_alg < 1e-10, format!("translation/subadditivity off by {worst_alg:.2e}"))?;
    Ok(format!("200 matrices, limit error {worst_limit:.1e}, algebraic error {worst_alg:.1e}"))
}

fn block_norms(z: &[f64], dims: &[usize]) -> Vec<f64> {
    let mut off = 0;
    dims.iter()
        .map(|&d| {
            let s = z[off..off + d].iter().map(|v| v * v).sum::<f64>().sqrt();
            off += d;
            s
        })
        .collect()
}

/// Direction on the unit sphere of the max-separable norm; with `all_active`
/// every block has unit norm.
fn unit_direction(rng: &mut ChaCha8Rng, dims: &[usize], all_active: bool) -> Vec<f64> {
    let mut z: Vec<f64> = Vec::new();
    for &d in dims {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let scale = if all_active { 1.0 } else { rng.random_range(0.0..1.0) };
        v.iter_mut().for_each(|x| *x *= scale / s);
        z.extend(v);
    }
    let top = block_norms(&z, dims).into_iter().fold(0.0, f64::max);
    z.iter().map(|v| v / top).collect()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut min_gap_mu = f64::INFINITY;
    let mut min_gap_norm = f64::INFINITY;
    for _ in 0..100 {
        let nb = rng.random_range(1..=5usize);
        let dims: Vec<usize> = (0..nb).map(|_| rng.random_range(1..=4usize)).collect();
        let n: usize = dims.iter().sum();
        let a = random_matrix(&mut rng, n) * 2.0;
        let bm = BlockMatrix::new(a.clone(), dims.clone()).unwrap();
        let mu_bound = lemma1_measure_bound(&bm).unwrap();
        let norm_bound = lemma1_norm_bound(&bm).unwrap();
        let (mut mu_est, mut norm_est) = (f64::NEG_INFINITY, 0.0_f64);
        for s in 0..1000 {
            let z = unit_direction(&mut rng, &dims, s % 2 == 0);
            let az: Vec<f64> = (&a * nalgebra::DVector::from_vec(z.clone())).iter().copied().collect();
            // one-sided derivative of the max-separable norm along Az, over the active blocks
            let zn = block_norms(&z, &dims);
            let mut off = 0;
            for (i, &d) in dims.iter().enumerate() {
                if (zn[i] - 1.0).abs() < 1e-12 {
                    let dot: f64 = (off..off + d).map(|r| z[r] * az[r]).sum();
                    mu_est = mu_est.max(dot);
                }
                off += d;
            }
            norm_est = norm_est.max(block_norms(&az, &dims).into_iter().fold(0.0, f64::max));
        }
        min_gap_mu = min_gap_mu.min(mu_bound - mu_est);
        min_gap_norm = min_gap_norm.min(norm_bound - norm_est);
    }
    check(min_gap_mu >= -1e-12, format!("measure bound below sampled estimate by {:.2e}", -min_gap_mu))?;
    check(min_gap_norm >= -1e-12, format!("norm bound below sampled estimate by {:.2e}", -min_gap_norm))?;
    Ok(format!("100 block matrices, min slack measure {min_gap_mu:.2e}, norm {min_gap_norm:.2e}"))
}

fn scalar_dde(a: f64, b: f64, c: f64, tau: f64) -> NetworkSystem {
    let agent = Agent::affine(DMatrix::from_element(1, 1, a), Some(Arc::new(move |_| vec![c]) as Signal));
    let self_loop = CouplingTerm::affine(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, b), nalgebra::DVector::zeros(1));
    NetworkSystem::new(
        vec![agent],
        vec![Coupling::delayed(0, Source::Agent(0), self_loop)],
        vec![],
        DelaySpec::constant(tau).unwrap(),
        Arc::new(|_| vec![0.0]),
    )
    .unwrap()
}

fn criterion_3() -> Outcome {
    let mut worst_res: f64 = 0.0;
    for a in [-0.5, -1.0, -3.0, -10.0] {
        for (frac, tau) in [(0.0, 0.5), (0.3, 0.1), (0.5, 1.0), (0.8, 2.0), (0.95, 0.05)] {
            let b = -a * frac;
            let l = solve_rate(a, b, tau).unwrap();
            worst_res = worst_res.max((l + a + b * (l * tau).exp()).abs());
        }
    }
    check(worst_res < 1e-10, format!("rate residual {worst_res:.2e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut min_margin = f64::INFINITY;
    for _ in 0..10 {
        let a = rng.random_range(-5.0..-0.5);
        let b = -a * rng.random_range(0.0..0.9);
        let c = rng.random_range(0.0..2.0);
        let tau = rng.random_range(0.05..2.0);
        let u0 = rng.random_range(0.0..3.0);
        let env = envelope(&HalanayParams::new(a, b, c, tau).unwrap(), u0).unwrap();
        let sys = scalar_dde(a, b, c, tau);
        let tr = integrate(&sys, &constant_history(vec![u0]), 20.0, 1e-3).unwrap();
        for k in tr.zero_index()..tr.len() {
            min_margin = min_margin.min(env.eval(tr.time(k)) - tr.state(k)[0]);
        }
    }
    check(min_margin >= -1e-6, format!("envelope undercut by {:.2e}", -min_margin))?;
    Ok(format!("rate residual {worst_res:.1e}, min envelope margin {min_margin:.2e}"))
}

fn criterion_4() -> Outcome {
    let mut min_margin = f64::INFINITY;
    let mut sizes = Vec::new();
    for seed in 0..20 {
        let (spec, cert) = random_certified_spec(seed).map_err(|e| e.to_string())?;
        let sys = spec.build().unwrap();
        let tr = integrate(&sys, &spec.history(), 20.0, 0.01).unwrap();
        let dev = max_deviation(&tr, &sys).unwrap();
        let d_sup = sys.disturbance_sup((0..=20_000).map(|k| k as f64 * 1e-3));
        let env = bound_envelope(&cert, spec.initial_sup(), d_sup);
        let series = dev.max_series();
        for (t, d) in dev.times.iter().zip(&series) {
            min_margin = min_margin.min(env.eval(*t) - d);
        }
        sizes.push(spec.agents.len());
    }
    check(min_margin >= -1e-6, format!("envelope undercut by {:.2e}", -min_margin))?;
    Ok(format!("20 networks (N = {sizes:?}), min margin {min_margin:.2e}"))
}

fn single(agent: Agent, x0: Vec<f64>) -> (NetworkSystem, Vec<f64>) {
    let n = x0.len();
    let sys = NetworkSystem::new(vec![agent], vec![], vec![], DelaySpec::constant(0.0).unwrap(), Arc::new(move |_| vec![0.0; n])).unwrap();
    (sys, x0)
}

fn final_state(agent: Agent, x0: Vec<f64>, dt: f64) -> Vec<f64> {
    let (sys, x0) = single(agent, x0);
    integrate(&sys, &constant_history(x0), 10.0, dt).unwrap().final_state().to_vec()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_5() -> Outcome {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..10 {
        let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.2..2.0));
        let nu: Signal = Arc::new(move |t| vec![c[0] * (w[0] * t).sin() + c[1], c[2] * (w[1] * t).cos() + c[3]]);
        let dist: Signal = Arc::new(move |t| vec![c[4] * (w[2] * t).sin(), c[5] * (w[3] * t).cos()]);
        let s0 = UnicycleState {
            px: rng.random_range(-2.0..2.0),
            py: rng.random_range(-2.0..2.0),
            v: rng.random_range(0.0..1.0),
            theta: rng.random_range(-3.0..3.0),
            omega: rng.random_range(-0.5..0.5),
        };
        let h0 = hand_transform(&s0, &p);
        let r0 = vec![h0.chi[0], h0.chi[1], h0.chi[2], h0.chi[3], h0.theta];
        let hand = |x: &[f64]| {
            let h = hand_transform(&UnicycleState::from_slice(x), &p);
            vec![h.chi[0], h.chi[1], h.chi[2], h.chi[3], h.theta]
        };
        let run = |dt: f64| {
            let full = hand(&final_state(full_model_agent(p, nu.clone(), dist.clone()), s0.to_array().to_vec(), dt));
            let red = final_state(reduced_model_agent(p, nu.clone(), dist.clone()), r0.clone(), dt);
            (full, red)
        };
        let (f1, r1) = run(0.01);
        let (f2, r2) = run(0.005);
        let integrator = max_diff(&f1, &f2).max(max_diff(&r1, &r2)) * 16.0 / 15.0;
        let tol = 10.0 * integrator + 1e-12;
        let gap = max_diff(&f2, &r2);
        worst_ratio = worst_ratio.max(gap / tol);
    }
    check(worst_ratio <= 1.0, format!("full/reduced gap reaches {worst_ratio:.2} of the tolerance"))?;
    Ok(format!("10 runs over 10 s, worst gap / tolerance {worst_ratio:.2e}"))
}

fn criterion_6() -> Outcome {
    let p = RobotParams::new(10.1, 0.13, 0.12).unwrap();
    let grid = default_alpha_grid();
    let rc = prop3_certificate(&FormationGains::scalable(), &p, 4, 0.1, &grid).map_err(|v| v.to_string())?;
    let c = &rc.certificate;
    let fail = prop3_certificate(&FormationGains::scalable().scale_kp(20.0), &p, 4, 0.1, &grid);
    check(fail.is_err(), "Kp x 20 was certified")?;
    Ok(format!(
        "sigma_bar {:.4}, sigma {:.4}, K {:.3}, lambda {:.4}, alpha {:.3}; Kp x 20 fails {}",
        c.sigma_bar,
        c.sigma_under,
        c.k_transform,
        c.lambda_hat,
        rc.alpha,
        fail.unwrap_err().condition
    ))
}

fn robot_config(extra: &str) -> LoadedConfig {
    let text = format!(
        "family = \"unicycle\"\ndt = 0.01\nt_end = 40.0\n\n[unicycle]\ncircles = 6\ntau0 = 0.1\n\
         gains = {{ kp = 0.035, kpl = 0.7, kvl = 1.0 }}\n\
         disturbance = {{ target = 0, amplitude = 2.0, decay = 0.2 }}\n\n{extra}"
    );
    LoadedConfig { config: ScenarioConfig::parse(&text).unwrap(), base_dir: ".".into() }
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = robot_config("[sweep]\naxis = \"circles\"\nvalues = [1, 2, 3, 4, 5, 6]\n");
    let r = cmd_sweep(&cfg, &RunOptions { out_dir: dir.path().into(), jobs: None }, &|_| {}).map_err(|e| e.to_string())?;
    let mut worst_growth: f64 = 0.0;
    let mut global: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    for row in &r.rows {
        let m = row.report.metrics.as_ref().unwrap();
        check(row.report.certified, format!("{} circles not certified", row.value))?;
        for k in 1..m.group_max.len().saturating_sub(1) {
            worst_growth = worst_growth.max(m.group_max[k + 1] / m.group_max[k]);
        }
        global = global.max(m.max_deviation);
        min_margin = min_margin.min(m.envelope_margin_min.unwrap());
    }
    check(worst_growth <= 1.05, format!("per-circle maximum grows by {worst_growth:.3}x"))?;
    check(min_margin >= -1e-6, format!("envelope undercut by {:.2e}", -min_margin))?;
    let last = &r.rows.last().unwrap().report.metrics.as_ref().unwrap().group_max;
    Ok(format!("global max {global:.3}, per-circle at 6 circles {last:?}, worst ratio {worst_growth:.3}, min margin {min_margin:.2}"))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = robot_config("[sweep]\naxis = \"tau0\"\nvalues = [0.05, 0.1, 0.2, 0.4]\n");
    let r = cmd_sweep(&cfg, &RunOptions { out_dir: dir.path().into(), jobs: None }, &|_| {}).map_err(|e| e.to_string())?;
    let mut lambdas = Vec::new();
    let mut peaks = Vec::new();
    for row in &r.rows {
        let m = row.report.metrics.as_ref().unwrap();
        let c = row.report.certificate.as_ref().ok_or(format!("tau0 = {} not certified", row.value))?;
        check(m.envelope_dominated == Some(true), format!("tau0 = {} exceeds its envelope", row.value))?;
        check(m.diverged_at.is_none(), format!("tau0 = {} diverged", row.value))?;
        lambdas.push(c.lambda_hat);
        peaks.push(m.max_deviation);
    }
    check(lambdas.windows(2).all(|w| w[1] < w[0]), format!("rates not strictly decreasing: {lambdas:?}"))?;
    Ok(format!("lambda {lambdas:.4?}, peaks {peaks:.3?}"))
}

fn neural_margin(net: &CGNetwork, t_end: f64, dt: f64) -> Result<(f64, f64), String> {
    let cert = prop4_certificate(net).map_err(|v| v.to_string())?;
    let eq = solve_equilibrium(net).map_err(|e| e.to_string())?;
    let sys = net.to_system(&eq.x_star).unwrap();
    let tr = integrate(&sys, &constant_history(eq.x_star.clone()), t_end, dt).unwrap();
    let dev = max_deviation(&tr, &sys).unwrap();
    let d_sup = net.disturbance_sup((0..=(t_end * 1000.0) as usize).map(|k| k as f64 * 1e-3));
    let env = bound_envelope(&cert, 0.0, d_sup);
    let margin = dev.times.iter().zip(dev.max_series()).map(|(t, d)| env.eval(*t) - d).fold(f64::INFINITY, f64::min);
    Ok((margin, dev.peak()))
}

fn criterion_9() -> Outcome {
    let net = with_random_pulses(hopfield60(9.0, 7).unwrap(), 55, &[5.0, 15.0], 1.0, 10.0, 7);
    let cert = prop4_certificate(&net).map_err(|v| v.to_string())?;
    check((cert.sigma_bar - 10.0).abs() < 1e-12 && (cert.sigma_under - 9.0).abs() < 1e-12, "sigma_bar/sigma differ from 10/9")?;
    check((cert.disturbance_gain() - 1.0).abs() < 1e-12, format!("gain {}", cert.disturbance_gain()))?;
    let (margin, peak) = neural_margin(&net, 30.0, 0.01)?;
    check(margin >= -1e-6, format!("envelope undercut by {:.2e}", -margin))?;
    Ok(format!("sigma_bar 10, sigma 9, gain 1, peak deviation {peak:.3}, min margin {margin:.3}"))
}

fn criterion_10() -> Outcome {
    let v = prop4_certificate(&small_hopfield(27.0).unwrap()).err().ok_or("c = 27 was certified")?;
    check(v.condition == Condition::Amplification, format!("c = 27 failed on {} instead of C4", v.condition))?;
    let net = small_hopfield(32.0).unwrap();
    let (margin, peak) = neural_margin(&net, 30.0, 1e-3)?;
    check(margin >= -1e-6, format!("envelope undercut by {:.2e}", -margin))?;
    Ok(format!("c = 27 fails {}, c = 32 passes; peak deviation {peak:.3}, min margin {margin:.3}", v.condition))
}

fn criterion_11() -> Outcome {
    let run = |mode| {
        let cfg = ScenarioConfig::parse(&format!(
            "family = \"unicycle\"\ndt = 0.01\nt_end = 40.0\n[unicycle]\ncircles = 14\nadjacency_mode = \"{mode}\"\ntau0 = 0.1\n\
             disturbance = {{ target = 0, amplitude = 2.0, decay = 0.2 }}\n"
        ))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        cmd_simulate(&LoadedConfig { config: cfg, base_dir: ".".into() }, &RunOptions { out_dir: dir.path().into(), jobs: None })
            .map_err(|e| e.to_string())
    };
    let certified = run("intra_inter")?;
    let dense = run("all_to_all")?;
    check(certified.certified, "14-circle nearest-neighbour formation not certified")?;
    let (pc, pd) = (certified.metrics.unwrap().max_deviation, dense.metrics.unwrap());
    let ratio = pd.max_deviation / pc;
    check(ratio >= 10.0, format!("all-to-all peak only {ratio:.2}x the certified one"))?;
    let sc = CircleScenario::new(14, AdjacencyMode::AllToAll, FormationGains::scalable(), 0.1).unwrap();
    let cert = scenario_certificate(&sc).map(|_| "certified".to_string()).unwrap_or_else(|v| format!("not certified ({})", v.condition));
    Ok(format!(
        "certified peak {pc:.3}, all-to-all peak {:.1} ({ratio:.0}x){}; all-to-all {cert}",
        pd.max_deviation,
        pd.diverged_at.map(|t| format!(", diverged at {t}")).unwrap_or_default()
    ))
}

type Criterion = (usize, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "matrix measure oracles", criterion_1, Duration::from_secs(5)),
        (2, "block bound dominance", criterion_2, Duration::from_secs(30)),
        (3, "delayed inequality rate and envelope", criterion_3, Duration::from_secs(10)),
        (4, "random certified networks obey the envelope", criterion_4, Duration::from_secs(120)),
        (5, "robot linearization matches the reduced model", criterion_5, Duration::from_secs(60)),
        (6, "robot certificate with the reference gains", criterion_6, Duration::from_secs(5)),
        (7, "circle sweep does not amplify outward", criterion_7, Duration::from_secs(600)),
        (8, "delay sweep bounded, rate decreasing", criterion_8, Duration::from_secs(600)),
        (9, "60-neuron network under pulses", criterion_9, Duration::from_secs(120)),
        (10, "small network c = 27 versus c = 32", criterion_10, Duration::from_secs(60)),
        (11, "all-to-all links destabilize the formation", criterion_11, Duration::from_secs(900)),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f, limit) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(_) if took > limit => Err(format!("took {took:.1?}, limit {limit:?}")),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} [{took:.2?}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} [{took:.2?}]: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

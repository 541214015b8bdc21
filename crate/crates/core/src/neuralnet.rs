//! Cohen-Grossberg and Hopfield networks with delayed activations.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{AgentMargin, Certificate, CertificateMode, Condition, Violation};
use crate::error::{ensure_finite, Error, Result};
use crate::netmodel::{
    Agent, Coupling, CouplingTerm, DelaySpec, Disturbance, Jacobian, NetworkSystem, PairField, PairJacobian,
    Signal, Source,
};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Activation {
    Tanh,
    Logistic,
    Linear,
    /// `f`, its derivative and a declared derivative range.
    Custom { f: ScalarFn, df: ScalarFn, range: Option<(f64, f64)> },
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => f.write_str("Tanh"),
            Activation::Logistic => f.write_str("Logistic"),
            Activation::Linear => f.write_str("Linear"),
            Activation::Custom { range, .. } => write!(f, "Custom({range:?})"),
        }
    }
}

impl Activation {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
            Activation::Custom { f, .. } => f(x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 / x.cosh().powi(2),
            Activation::Logistic => {
                let s = self.eval(x);
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
            Activation::Custom { df, .. } => df(x),
        }
    }

    /// Closed interval containing every derivative value.
    pub fn derivative_range(&self) -> Option<(f64, f64)> {
        match self {
            Activation::Tanh => Some((0.0, 1.0)),
            Activation::Logistic => Some((0.0, 0.25)),
            Activation::Linear => Some((1.0, 1.0)),
            Activation::Custom { range, .. } => *range,
        }
    }

    /// Checks the declared range on a uniform grid of `[lo, hi]`.
    pub fn verify_derivative_range(&self, lo: f64, hi: f64, samples: usize) -> bool {
        let Some((a, b)) = self.derivative_range() else { return false };
        (0..samples.max(2)).all(|k| {
            let x = lo + (hi - lo) * k as f64 / (samples.max(2) - 1) as f64;
            let d = self.deriv(x);
            d >= a && d <= b
        })
    }

    fn sup_abs_deriv(&self) -> Option<f64> {
        self.derivative_range().map(|(a, b)| a.abs().max(b.abs()))
    }
}

#[derive(Clone)]
pub enum Amplification {
    Unit,
    Custom { p: ScalarFn, lower: f64, upper: f64 },
}

impl fmt::Debug for Amplification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Amplification::Unit => f.write_str("Unit"),
            Amplification::Custom { lower, upper, .. } => write!(f, "Custom[{lower}, {upper}]"),
        }
    }
}

impl Amplification {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Amplification::Unit => 1.0,
            Amplification::Custom { p, .. } => p(x),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Amplification::Unit => (1.0, 1.0),
            Amplification::Custom { lower, upper, .. } => (*lower, *upper),
        }
    }
}

#[derive(Clone)]
pub enum Decay {
    /// `c x`.
    Linear(f64),
    /// `c(x)` with derivative and a lower bound on it.
    Custom { c: ScalarFn, dc: ScalarFn, dc_lower: f64 },
}

impl fmt::Debug for Decay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decay::Linear(c) => write!(f, "Linear({c})"),
            Decay::Custom { dc_lower, .. } => write!(f, "Custom(dc >= {dc_lower})"),
        }
    }
}

impl Decay {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Decay::Linear(c) => c * x,
            Decay::Custom { c, .. } => c(x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Decay::Linear(c) => *c,
            Decay::Custom { dc, .. } => dc(x),
        }
    }

    pub fn deriv_lower(&self) -> f64 {
        match self {
            Decay::Linear(c) => *c,
            Decay::Custom { dc_lower, .. } => *dc_lower,
        }
    }
}

/// `x_i' = p_i(x_i) (-c_i(x_i) + sum_j a_ij g_j(x_j) + sum_j b_ij g^tau_j(x_j(t - tau)) + u_i + d_i(t))`.
#[derive(Clone)]
pub struct CGNetwork {
    pub amplification: Vec<Amplification>,
    pub decay: Vec<Decay>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: Vec<Activation>,
    pub g_tau: Vec<Activation>,
    pub inputs: Vec<f64>,
    pub tau: f64,
    pub disturbances: Vec<Option<ScalarFn>>,
}

impl fmt::Debug for CGNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CGNetwork").field("n", &self.len()).field("tau", &self.tau).finish_non_exhaustive()
    }
}

impl CGNetwork {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        amplification: Vec<Amplification>,
        decay: Vec<Decay>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g: Vec<Activation>,
        g_tau: Vec<Activation>,
        inputs: Vec<f64>,
        tau: f64,
    ) -> Result<Self> {
        let n = decay.len();
        if n == 0 {
            return Err(Error::InvalidInput("network needs at least one neuron".into()));
        }
        if amplification.len() != n || g.len() != n || g_tau.len() != n || inputs.len() != n {
            return Err(Error::DimensionMismatch("per-neuron lists must all have the same length".into()));
        }
        if a.shape() != (n, n) || b.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("weight matrices must be {n}x{n}")));
        }
        ensure_finite(a.iter().chain(b.iter()).chain(&inputs).copied().chain([tau]), "network parameters")?;
        if tau < 0.0 {
            return Err(Error::InvalidInput(format!("delay {tau} must be non-negative")));
        }
        for (i, p) in amplification.iter().enumerate() {
            let (lo, hi) = p.bounds();
            if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
                return Err(Error::InvalidInput(format!("amplification bounds of neuron {i} must satisfy 0 < lower <= upper")));
            }
        }
        Ok(Self { amplification, decay, a, b, g, g_tau, inputs, tau, disturbances: vec![None; n] })
    }

    /// Unit amplification and linear decay `c_i x_i`.
    pub fn hopfield(
        c: Vec<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        g: Activation,
        g_tau: Activation,
        inputs: Vec<f64>,
        tau: f64,
    ) -> Result<Self> {
        let n = c.len();
        Self::new(
            vec![Amplification::Unit; n],
            c.into_iter().map(Decay::Linear).collect(),
            a,
            b,
            vec![g; n],
            vec![g_tau; n],
            inputs,
            tau,
        )
    }

    pub fn len(&self) -> usize {
        self.decay.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decay.is_empty()
    }

    pub fn with_disturbance(mut self, neuron: usize, d: ScalarFn) -> Self {
        self.disturbances[neuron] = Some(d);
        self
    }

    pub fn amplification_bounds(&self) -> (f64, f64) {
        self.amplification.iter().map(|p| p.bounds()).fold((f64::INFINITY, 0.0), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)))
    }

    /// `-c_i(x_i) + sum_j a_ij g_j(x_j) + sum_j b_ij g^tau_j(x_j) + u_i`, the equilibrium residual.
    pub fn equilibrium_residual(&self, x: &[f64]) -> Vec<f64> {
        let g: Vec<f64> = x.iter().zip(&self.g).map(|(v, f)| f.eval(*v)).collect();
        let gt: Vec<f64> = x.iter().zip(&self.g_tau).map(|(v, f)| f.eval(*v)).collect();
        (0..self.len())
            .map(|i| {
                let mut s = -self.decay[i].eval(x[i]) + self.inputs[i];
                for j in 0..self.len() {
                    s += self.a[(i, j)] * g[j] + self.b[(i, j)] * gt[j];
                }
                s
            })
            .collect()
    }

    fn residual_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            let mut v = self.a[(i, j)] * self.g[j].deriv(x[j]) + self.b[(i, j)] * self.g_tau[j].deriv(x[j]);
            if i == j {
                v -= self.decay[i].deriv(x[i]);
            }
            v
        })
    }

    /// Maximum `|d_i(t)|` over the given times.
    pub fn disturbance_sup(&self, times: impl IntoIterator<Item = f64>) -> f64 {
        let ds: Vec<&ScalarFn> = self.disturbances.iter().flatten().collect();
        times.into_iter().flat_map(|t| ds.iter().map(move |d| d(t).abs())).fold(0.0, f64::max)
    }

    /// Embeds the network as agents coupled through `g(x_j) - g(x_j*)`, so the
    /// couplings vanish at the equilibrium `x_star`.
    pub fn to_system(&self, x_star: &[f64]) -> Result<NetworkSystem> {
        let n = self.len();
        if x_star.len() != n {
            return Err(Error::DimensionMismatch(format!("equilibrium has length {}, network has {n}", x_star.len())));
        }
        let mut agents = Vec::with_capacity(n);
        for i in 0..n {
            let mut bias = self.inputs[i];
            for j in 0..n {
                if j != i {
                    bias += self.a[(i, j)] * self.g[j].eval(x_star[j]);
                }
                bias += self.b[(i, j)] * self.g_tau[j].eval(x_star[j]);
            }
            let (decay, gi, aii) = (self.decay[i].clone(), self.g[i].clone(), self.a[(i, i)]);
            let (decay_j, gi_j) = (decay.clone(), gi.clone());
            let mut agent = Agent::new(
                1,
                Arc::new(move |x, _t, out| out[0] = -decay.eval(x[0]) + aii * gi.eval(x[0]) + bias),
            )
            .with_jacobian(Jacobian::Analytic(Arc::new(move |x, _t| {
                DMatrix::from_element(1, 1, -decay_j.deriv(x[0]) + aii * gi_j.deriv(x[0]))
            })));
            if let Some(d) = &self.disturbances[i] {
                let d = d.clone();
                let signal: Signal = Arc::new(move |t| vec![d(t)]);
                agent = agent.with_disturbance(Disturbance::additive(1, signal));
            }
            if let Amplification::Custom { p, .. } = &self.amplification[i] {
                let p = p.clone();
                agent = agent.with_amplification(Arc::new(move |x| p(x[0])));
            }
            agents.push(agent);
        }
        let mut couplings = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if j != i && self.a[(i, j)] != 0.0 {
                    let term = activation_coupling(self.a[(i, j)], self.g[j].clone(), x_star[j]);
                    couplings.push(Coupling::delay_free(i, Source::Agent(j), term));
                }
                if self.b[(i, j)] != 0.0 {
                    let term = activation_coupling(self.b[(i, j)], self.g_tau[j].clone(), x_star[j]);
                    couplings.push(Coupling::delayed(i, Source::Agent(j), term));
                }
            }
        }
        let star = x_star.to_vec();
        NetworkSystem::new(agents, couplings, vec![], DelaySpec::constant(self.tau)?, Arc::new(move |_| star.clone()))
    }
}

fn activation_coupling(w: f64, g: Activation, xj_star: f64) -> CouplingTerm {
    let g0 = g.eval(xj_star);
    let gj = g.clone();
    let eval: PairField = Arc::new(move |_xi, xj, _t, out| out[0] += w * (g.eval(xj[0]) - g0));
    let jac = Arc::new(move |_xi: &[f64], xj: &[f64], _t: f64| {
        (DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, w * gj.deriv(xj[0])))
    });
    CouplingTerm::new(eval, PairJacobian::Analytic(jac))
}

/// Right-hand side of the network with explicit delayed states.
pub fn cg_rhs(x: &[f64], x_delayed: &[f64], net: &CGNetwork, t: f64) -> Vec<f64> {
    (0..net.len())
        .map(|i| {
            let mut s = -net.decay[i].eval(x[i]) + net.inputs[i];
            for j in 0..net.len() {
                s += net.a[(i, j)] * net.g[j].eval(x[j]) + net.b[(i, j)] * net.g_tau[j].eval(x_delayed[j]);
            }
            if let Some(d) = &net.disturbances[i] {
                s += d(t);
            }
            net.amplification[i].eval(x[i]) * s
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumMethod {
    /// Converged by simulation alone.
    Simulation,
    /// Simulation followed by damped Newton polishing.
    Polished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub x_star: Vec<f64>,
    pub residual: f64,
    pub method: EquilibriumMethod,
}

pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-8;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Equilibrium from the zero initial state.
pub fn solve_equilibrium(net: &CGNetwork) -> Result<EquilibriumResult> {
    solve_equilibrium_from(net, &vec![0.0; net.len()])
}

/// Simulates the undisturbed network with the delay collapsed (irrelevant at
/// rest) until `|x'|_inf < 1e-10`, then polishes with damped Newton steps.
pub fn solve_equilibrium_from(net: &CGNetwork, x0: &[f64]) -> Result<EquilibriumResult> {
    if x0.len() != net.len() {
        return Err(Error::DimensionMismatch("initial state length differs from the network".into()));
    }
    let f = |x: &[f64]| net.equilibrium_residual(x);
    let mut x = x0.to_vec();
    let dt = 0.01;
    let n = x.len();
    let mut converged = false;
    for _ in 0..200_000 {
        let k1 = f(&x);
        if max_abs(&k1) < 1e-10 {
            converged = true;
            break;
        }
        let shift = |k: &[f64], h: f64| x.iter().zip(k).map(|(a, b)| a + h * b).collect::<Vec<_>>();
        let k2 = f(&shift(&k1, 0.5 * dt));
        let k3 = f(&shift(&k2, 0.5 * dt));
        let k4 = f(&shift(&k3, dt));
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { time: f64::NAN });
        }
    }
    let mut method = EquilibriumMethod::Simulation;
    let mut r = max_abs(&f(&x));
    if !converged || r > 1e-12 {
        for _ in 0..50 {
            let res = DVector::from_vec(f(&x));
            let Some(step) = net.residual_jacobian(&x).lu().solve(&(-&res)) else { break };
            let mut h = 1.0;
            let mut improved = false;
            while h > 1e-6 {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + h * s).collect();
                let rt = max_abs(&f(&trial));
                if rt < r {
                    x = trial;
                    r = rt;
                    improved = true;
                    break;
                }
                h *= 0.5;
            }
            method = EquilibriumMethod::Polished;
            if !improved || r < 1e-14 {
                break;
            }
        }
    }
    if r >= EQUILIBRIUM_TOLERANCE {
        return Err(Error::NonConvergence { residual: r });
    }
    Ok(EquilibriumResult { x_star: x, residual: r, method })
}

/// Closed-form certificate from declared derivative and amplification ranges.
pub fn prop4_certificate(net: &CGNetwork) -> Result<Certificate, Violation> {
    let n = net.len();
    let undeclared = |what: &str, i: usize| Violation::new(Condition::Unsupported, format!("{what} of neuron {i} has no declared derivative range"));
    let mut sup_g = Vec::with_capacity(n);
    let mut sup_gt = Vec::with_capacity(n);
    for j in 0..n {
        sup_g.push(net.g[j].sup_abs_deriv().ok_or_else(|| undeclared("activation", j))?);
        sup_gt.push(net.g_tau[j].sup_abs_deriv().ok_or_else(|| undeclared("delayed activation", j))?);
    }
    let mut contraction = Vec::with_capacity(n);
    let mut delayed = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = net.g[i].derivative_range().expect("checked above");
        let aii = net.a[(i, i)];
        let mut lhs = -net.decay[i].deriv_lower() + (aii * lo).max(aii * hi);
        let mut s = 0.0;
        for j in 0..n {
            if j != i {
                lhs += net.a[(i, j)].abs() * sup_g[j];
            }
            s += net.b[(i, j)].abs() * sup_gt[j];
        }
        contraction.push(-lhs);
        delayed.push(s);
    }
    let (worst_c, sigma_bar) = contraction.iter().copied().enumerate().fold((0, f64::INFINITY), |b, (i, v)| if v < b.1 { (i, v) } else { b });
    let (worst_d, sigma) = delayed.iter().copied().enumerate().fold((0, 0.0), |b, (i, v)| if v > b.1 { (i, v) } else { b });
    let (p_lo, p_hi) = net.amplification_bounds();
    let fail = |condition, message: String, agent| {
        let mut v = Violation::new(condition, message);
        v.sigma_bar = Some(sigma_bar);
        v.sigma_under = Some(sigma);
        v.worst_agent = Some(agent);
        v
    };
    if !(sigma_bar > 0.0) {
        return Err(fail(Condition::Contraction, format!("sigma_bar = {sigma_bar:.6} is not positive"), worst_c));
    }
    if p_hi * sigma >= p_lo * sigma_bar {
        return Err(fail(
            Condition::Amplification,
            format!("p_upper*sigma = {:.6} >= p_lower*sigma_bar = {:.6}", p_hi * sigma, p_lo * sigma_bar),
            worst_d,
        ));
    }
    let mut cert = Certificate::with_amplification(sigma_bar, sigma, 1.0, net.tau, 1.0, CertificateMode::ClosedForm, p_lo, p_hi)?;
    cert.margins = (0..n)
        .map(|i| AgentMargin { agent: i, contraction: contraction[i] - sigma_bar, delayed: sigma - delayed[i] })
        .collect();
    Ok(cert)
}

/// Non-negative delayed weights without self-loops, each row summing to `row_margin`.
pub fn hopfield_weight_sampler(n: usize, row_margin: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(row_margin >= 0.0) || !row_margin.is_finite() {
        return Err(Error::InvalidInput(format!("row margin {row_margin} must be finite and non-negative")));
    }
    if n == 0 || (n == 1 && row_margin > 0.0) {
        return Err(Error::InvalidInput(format!("cannot spread a row margin of {row_margin} over {n} neurons without self-loops")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::zeros(n, n);
    if row_margin == 0.0 {
        return Ok(w);
    }
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { rng.random_range(0.05..1.0) }).collect();
        let total: f64 = row.iter().sum();
        for j in 0..n {
            w[(i, j)] = row_margin * row[j] / total;
        }
    }
    Ok(w)
}

/// Directed ring `j -> j+1` plus the chords `0 -> 3`, `2 -> 5`, `4 -> 1`:
/// six neurons, delayed in-degree at most two. Entry `(i, j)` weights `j -> i`.
pub fn ring_chords(weight: f64) -> DMatrix<f64> {
    let n = 6;
    let mut b = DMatrix::zeros(n, n);
    for j in 0..n {
        b[((j + 1) % n, j)] = weight;
    }
    for (from, to) in [(0, 3), (2, 5), (4, 1)] {
        b[(to, from)] = weight;
    }
    b
}

/// Piecewise-constant `sum_k amplitude_k 1[start_k, start_k + duration_k)(t)`.
pub fn pulse_train(pulses: Vec<(f64, f64, f64)>) -> ScalarFn {
    Arc::new(move |t| pulses.iter().filter(|(s, d, _)| t >= *s && t < s + d).map(|p| p.2).sum())
}

/// `amplitude sin(t) e^{-decay t}` for `t >= 0`.
pub fn decaying_sine(amplitude: f64, decay: f64) -> ScalarFn {
    Arc::new(move |t| if t < 0.0 { 0.0 } else { amplitude * t.sin() * (-decay * t).exp() })
}

/// Sixty all-to-all neurons with `c = 10`, tanh delayed activations, `tau = 1`
/// and rows of delayed weights summing to `row_margin`.
pub fn hopfield60(row_margin: f64, seed: u64) -> Result<CGNetwork> {
    let n = 60;
    let b = hopfield_weight_sampler(n, row_margin, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let inputs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    CGNetwork::hopfield(vec![10.0; n], DMatrix::zeros(n, n), b, Activation::Tanh, Activation::Tanh, inputs, 1.0)
}

/// Adds the two-pulse protocol: `count` random neurons, pulses of random
/// amplitude in `[0, max_amplitude]` lasting `duration` at each start time.
pub fn with_random_pulses(mut net: CGNetwork, count: usize, starts: &[f64], duration: f64, max_amplitude: f64, seed: u64) -> CGNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..net.len()).collect();
    for k in 0..idx.len() {
        let j = rng.random_range(k..idx.len());
        idx.swap(k, j);
    }
    for &i in idx.iter().take(count.min(net.len())) {
        let pulses = starts.iter().map(|&s| (s, duration, rng.random_range(0.0..=max_amplitude))).collect();
        net = net.with_disturbance(i, pulse_train(pulses));
    }
    net
}

/// Six-neuron ring-with-chords network: `b = 15`, tanh, `tau = 0.1`,
/// `u = (7, 1, 0, ...)`, disturbance `-10 sin(t) e^{-0.2 t}` on neurons 0 and 1.
pub fn small_hopfield(c: f64) -> Result<CGNetwork> {
    let mut inputs = vec![0.0; 6];
    inputs[0] = 7.0;
    inputs[1] = 1.0;
    let net = CGNetwork::hopfield(vec![c; 6], DMatrix::zeros(6, 6), ring_chords(15.0), Activation::Tanh, Activation::Tanh, inputs, 0.1)?;
    Ok(net.with_disturbance(0, decaying_sine(-10.0, 0.2)).with_disturbance(1, decaying_sine(-10.0, 0.2)))
}

/// Dense CSV without header, one row per line.
pub fn write_weights_csv<W: Write>(w: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for i in 0..w.nrows() {
        out.write_record(w.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_weights_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("weight row {r}: '{s}' is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(format!("weight matrix must be square ({n} rows)")));
    }
    let w = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    ensure_finite(w.iter().copied(), "weights")?;
    Ok(w)
}

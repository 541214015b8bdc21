//! Numerical verification of the scalability conditions and the resulting
//! deviation bound.
//!
//! Conditions that quantify over all states are discharged exactly when every
//! Jacobian in the network is constant (closed form). Otherwise they are
//! checked on a deterministic low-discrepancy sample of user-declared boxes,
//! and the certificate is marked as sampled.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halanay::{solve_rate, Envelope};
use crate::measures::{mu2, norm2, sigma_max, sigma_min};
use crate::netmodel::{Jacobian, NetworkSystem, PairJacobian, Source};

/// Residual below which a coupling counts as vanishing on the desired solution.
pub const DESIRED_TOLERANCE: f64 = 1e-9;

/// Per-agent state boxes and a time window to sample the conditions on.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDomain {
    pub boxes: Vec<(Vec<f64>, Vec<f64>)>,
    pub time_window: (f64, f64),
    pub samples: usize,
    pub seed: u64,
}

impl SampleDomain {
    pub fn new(boxes: Vec<(Vec<f64>, Vec<f64>)>, time_window: (f64, f64), samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidInput("sample count must be at least 1".into()));
        }
        if !(time_window.1 >= time_window.0) {
            return Err(Error::InvalidInput("time window is reversed".into()));
        }
        for (i, (lo, hi)) in boxes.iter().enumerate() {
            if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
                return Err(Error::InvalidInput(format!("box {i} is degenerate")));
            }
        }
        Ok(Self { boxes, time_window, samples, seed })
    }

    /// The same box `[lo, hi]^n` for every agent.
    pub fn uniform(system: &NetworkSystem, lo: f64, hi: f64, time_window: (f64, f64), samples: usize, seed: u64) -> Result<Self> {
        let boxes = system.agents().iter().map(|a| (vec![lo; a.dim()], vec![hi; a.dim()])).collect();
        Self::new(boxes, time_window, samples, seed)
    }

    fn check(&self, system: &NetworkSystem) -> Result<()> {
        if self.boxes.len() != system.num_agents()
            || self.boxes.iter().zip(system.agents()).any(|((lo, _), a)| lo.len() != a.dim())
        {
            return Err(Error::DimensionMismatch("sample boxes do not match the agents".into()));
        }
        Ok(())
    }

    /// Additive-recurrence points (generalised golden ratio) with a seeded random shift.
    fn points(&self, dims: usize) -> Vec<Vec<f64>> {
        let d = dims.max(1);
        let mut phi = 2.0_f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
        }
        let alpha: Vec<f64> = (1..=d).map(|k| (1.0 / phi).powi(k as i32).fract()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        (0..self.samples)
            .map(|s| {
                alpha
                    .iter()
                    .zip(&shift)
                    .map(|(a, sh)| (sh + (s as f64 + 1.0) * a).fract())
                    .collect()
            })
            .collect()
    }
}

/// Jacobians of every intrinsic field and coupling, analytic where declared and
/// central finite differences otherwise. Optionally expressed in per-agent
/// linear coordinates `T_i x_i`.
pub struct JacobianOracle<'a> {
    system: &'a NetworkSystem,
    fd_step: f64,
    transforms: Option<Vec<(DMatrix<f64>, DMatrix<f64>)>>,
    incoming: Vec<Vec<usize>>,
}

impl<'a> JacobianOracle<'a> {
    pub fn new(system: &'a NetworkSystem) -> Self {
        let mut incoming = vec![Vec::new(); system.num_agents()];
        for (k, c) in system.couplings().iter().enumerate() {
            incoming[c.target].push(k);
        }
        Self { system, fd_step: 1e-6, transforms: None, incoming }
    }

    /// Express the conditions in coordinates `T_i x_i`; each `T_i` must be invertible.
    pub fn with_transforms(mut self, transforms: Vec<DMatrix<f64>>) -> Result<Self> {
        if transforms.len() != self.system.num_agents() {
            return Err(Error::DimensionMismatch("one transform per agent is required".into()));
        }
        let mut pairs = Vec::with_capacity(transforms.len());
        for (i, t) in transforms.into_iter().enumerate() {
            let dim = self.system.agents()[i].dim();
            if t.nrows() != dim || t.ncols() != dim {
                return Err(Error::DimensionMismatch(format!("transform {i} is not {dim}x{dim}")));
            }
            let inv = t.clone().try_inverse().ok_or_else(|| Error::InvalidInput(format!("transform {i} is singular")))?;
            pairs.push((t, inv));
        }
        self.transforms = Some(pairs);
        Ok(self)
    }

    pub fn system(&self) -> &NetworkSystem {
        self.system
    }

    /// True when every Jacobian is constant, so one evaluation decides the conditions.
    pub fn is_closed_form(&self) -> bool {
        let agents = self.system.agents().iter().all(|a| matches!(a.jacobian(), Jacobian::Constant(_)));
        let couplings = self.system.couplings().iter().all(|c| {
            c.delay_free.as_ref().is_none_or(|t| t.jacobian().is_constant())
                && c.delayed.as_ref().is_none_or(|t| t.jacobian().is_constant())
        });
        agents && couplings
    }

    /// `max sigma_max(T_i) / min sigma_min(T_i)`, 1 without a coordinate change.
    pub fn transform_condition(&self) -> Result<f64> {
        let Some(ts) = &self.transforms else { return Ok(1.0) };
        let mut hi: f64 = 0.0;
        let mut lo = f64::INFINITY;
        for (t, _) in ts {
            hi = hi.max(sigma_max(t)?);
            lo = lo.min(sigma_min(t)?);
        }
        Ok(hi / lo)
    }

    pub fn intrinsic(&self, i: usize, x: &[f64], t: f64) -> DMatrix<f64> {
        let agent = &self.system.agents()[i];
        match agent.jacobian() {
            Jacobian::Constant(m) => m.clone(),
            Jacobian::Analytic(f) => f(x, t),
            Jacobian::FiniteDifference => self.fd_intrinsic(i, x, t),
        }
    }

    pub fn fd_intrinsic(&self, i: usize, x: &[f64], t: f64) -> DMatrix<f64> {
        let agent = &self.system.agents()[i];
        let n = agent.dim();
        let f = agent.intrinsic();
        let mut jac = DMatrix::zeros(n, n);
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
        for c in 0..n {
            let h = self.fd_step * x[c].abs().max(1.0);
            xp[c] = x[c] + h;
            xm[c] = x[c] - h;
            f(&xp, t, &mut fp);
            f(&xm, t, &mut fm);
            for r in 0..n {
                jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
            xp[c] = x[c];
            xm[c] = x[c];
        }
        jac
    }

    /// Jacobians of coupling `k` (its delayed term when `delayed`) with respect to
    /// the target and the source state.
    pub fn coupling(&self, k: usize, delayed: bool, xi: &[f64], xj: &[f64], t: f64) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let c = &self.system.couplings()[k];
        let term = if delayed { c.delayed.as_ref()? } else { c.delay_free.as_ref()? };
        Some(match term.jacobian() {
            PairJacobian::Constant { wrt_target, wrt_source } => (wrt_target.clone(), wrt_source.clone()),
            PairJacobian::Analytic(f) => f(xi, xj, t),
            PairJacobian::FiniteDifference => self.fd_coupling(k, delayed, xi, xj, t)?,
        })
    }

    pub fn fd_coupling(&self, k: usize, delayed: bool, xi: &[f64], xj: &[f64], t: f64) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let c = &self.system.couplings()[k];
        let term = if delayed { c.delayed.as_ref()? } else { c.delay_free.as_ref()? };
        let h_fn = term.eval();
        let n = xi.len();
        let eval = |a: &[f64], b: &[f64]| {
            let mut out = vec![0.0; n];
            h_fn(a, b, t, &mut out);
            out
        };
        let column = |x: &[f64], c: usize, wrt_target: bool| {
            let h = self.fd_step * x[c].abs().max(1.0);
            let (mut p, mut m) = (x.to_vec(), x.to_vec());
            p[c] += h;
            m[c] -= h;
            let (fp, fm) = if wrt_target { (eval(&p, xj), eval(&m, xj)) } else { (eval(xi, &p), eval(xi, &m)) };
            fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<f64>>()
        };
        let mut d1 = DMatrix::zeros(n, xi.len());
        let mut d2 = DMatrix::zeros(n, xj.len());
        for c in 0..xi.len() {
            d1.set_column(c, &nalgebra::DVector::from_vec(column(xi, c, true)));
        }
        for c in 0..xj.len() {
            d2.set_column(c, &nalgebra::DVector::from_vec(column(xj, c, false)));
        }
        Some((d1, d2))
    }

    /// Largest entrywise gap between declared analytic Jacobians and finite differences.
    pub fn consistency_error(&self, domain: &SampleDomain) -> Result<f64> {
        domain.check(self.system)?;
        let mut worst: f64 = 0.0;
        for (t, x) in sample_states(self.system, domain) {
            for (i, agent) in self.system.agents().iter().enumerate() {
                if let Jacobian::Analytic(f) = agent.jacobian() {
                    let xi = &x[self.system.agent_range(i)];
                    worst = worst.max((f(xi, t) - self.fd_intrinsic(i, xi, t)).amax());
                }
            }
            let leaders = self.system.leader_states(t);
            for (k, c) in self.system.couplings().iter().enumerate() {
                let xi = &x[self.system.agent_range(c.target)];
                let xj: &[f64] = match c.source {
                    Source::Agent(j) => &x[self.system.agent_range(j)],
                    Source::Leader(l) => &leaders[l],
                };
                for (delayed, term) in [(false, &c.delay_free), (true, &c.delayed)] {
                    if let Some(term) = term {
                        if let PairJacobian::Analytic(f) = term.jacobian() {
                            let (a1, a2) = f(xi, xj, t);
                            let (f1, f2) = self.fd_coupling(k, delayed, xi, xj, t).expect("term exists");
                            worst = worst.max((a1 - f1).amax()).max((a2 - f2).amax());
                        }
                    }
                }
            }
        }
        Ok(worst)
    }

    fn similar(&self, m: DMatrix<f64>, i: usize, j: usize) -> DMatrix<f64> {
        match &self.transforms {
            None => m,
            Some(ts) => &ts[i].0 * m * &ts[j].1,
        }
    }

    /// Left-hand sides of the contraction and delayed-gain conditions for every agent.
    fn condition_values(&self, x: &[f64], leaders: &[Vec<f64>], t: f64) -> Result<Vec<(f64, f64)>> {
        let sys = self.system;
        let mut out = Vec::with_capacity(sys.num_agents());
        for i in 0..sys.num_agents() {
            let xi = &x[sys.agent_range(i)];
            let mut own = self.intrinsic(i, xi, t);
            let mut cross = 0.0;
            let mut delayed_own = DMatrix::zeros(xi.len(), xi.len());
            let mut delayed_cross = 0.0;
            for &k in &self.incoming[i] {
                let c = &sys.couplings()[k];
                let (xj, j): (&[f64], Option<usize>) = match c.source {
                    Source::Agent(j) => (&x[sys.agent_range(j)], Some(j)),
                    Source::Leader(l) => (&leaders[l], None),
                };
                if let Some((d1, d2)) = self.coupling(k, false, xi, xj, t) {
                    own += d1;
                    if let Some(j) = j {
                        cross += norm2(&self.similar(d2, i, j))?;
                    }
                }
                if let Some((d1, d2)) = self.coupling(k, true, xi, xj, t) {
                    delayed_own += d1;
                    if let Some(j) = j {
                        delayed_cross += norm2(&self.similar(d2, i, j))?;
                    }
                }
            }
            let contraction = mu2(&self.similar(own, i, i))? + cross;
            let delayed = norm2(&self.similar(delayed_own, i, i))? + delayed_cross;
            out.push((contraction, delayed));
        }
        Ok(out)
    }
}

fn sample_states(system: &NetworkSystem, domain: &SampleDomain) -> Vec<(f64, Vec<f64>)> {
    let dims = system.total_dim() + 1;
    let (t0, t1) = domain.time_window;
    domain
        .points(dims)
        .into_iter()
        .map(|p| {
            let t = t0 + p[0] * (t1 - t0);
            let mut x = Vec::with_capacity(system.total_dim());
            let mut c = 1;
            for (lo, hi) in &domain.boxes {
                for (a, b) in lo.iter().zip(hi) {
                    x.push(a + p[c] * (b - a));
                    c += 1;
                }
            }
            (t, x)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    ClosedForm,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Couplings vanish on the desired solution.
    #[serde(rename = "C1")]
    DesiredSolution,
    /// Delay-free part contracts.
    #[serde(rename = "C2")]
    Contraction,
    /// Delayed gain stays below the contraction rate.
    #[serde(rename = "C3")]
    DelayedGain,
    /// Amplification spread still leaves a contraction margin.
    #[serde(rename = "C4")]
    Amplification,
    #[serde(rename = "disturbance-bound")]
    DisturbanceBound,
    #[serde(rename = "unsupported")]
    Unsupported,
}

impl Condition {
    pub fn label(&self) -> &'static str {
        match self {
            Condition::DesiredSolution => "C1",
            Condition::Contraction => "C2",
            Condition::DelayedGain => "C3",
            Condition::Amplification => "C4",
            Condition::DisturbanceBound => "disturbance-bound",
            Condition::Unsupported => "unsupported",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Why a network could not be certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: Condition,
    pub message: String,
    pub worst_agent: Option<usize>,
    pub worst_time: Option<f64>,
    pub sigma_bar: Option<f64>,
    pub sigma_under: Option<f64>,
}

impl Violation {
    pub fn new(condition: Condition, message: impl Into<String>) -> Self {
        Self { condition, message: message.into(), worst_agent: None, worst_time: None, sigma_bar: None, sigma_under: None }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated: {}", self.condition, self.message)
    }
}

impl std::error::Error for Violation {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentMargin {
    pub agent: usize,
    /// `-(worst contraction lhs) - sigma_bar`, never negative on a certificate.
    pub contraction: f64,
    /// `sigma_under - (worst delayed lhs)`.
    pub delayed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub sigma_bar: f64,
    pub sigma_under: f64,
    pub b_bar: f64,
    pub lambda_hat: f64,
    #[serde(rename = "K")]
    pub k_transform: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    pub tau0: f64,
    pub mode: CertificateMode,
    pub margins: Vec<AgentMargin>,
}

impl Certificate {
    /// Builds the certificate for unit amplification, checking `0 <= sigma_under < sigma_bar`.
    pub fn new(sigma_bar: f64, sigma_under: f64, b_bar: f64, tau0: f64, k_transform: f64, mode: CertificateMode) -> Result<Self, Violation> {
        Self::with_amplification(sigma_bar, sigma_under, b_bar, tau0, k_transform, mode, 1.0, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_amplification(
        sigma_bar: f64,
        sigma_under: f64,
        b_bar: f64,
        tau0: f64,
        k_transform: f64,
        mode: CertificateMode,
        p_lower: f64,
        p_upper: f64,
    ) -> Result<Self, Violation> {
        let v = |condition, message: String| {
            let mut v = Violation::new(condition, message);
            v.sigma_bar = Some(sigma_bar);
            v.sigma_under = Some(sigma_under);
            v
        };
        if !(sigma_bar > 0.0) || !sigma_bar.is_finite() {
            return Err(v(Condition::Contraction, format!("sigma_bar = {sigma_bar:.6} is not positive")));
        }
        if sigma_under >= sigma_bar {
            return Err(v(Condition::DelayedGain, format!("sigma = {sigma_under:.6} >= sigma_bar = {sigma_bar:.6}")));
        }
        if p_upper * sigma_under >= p_lower * sigma_bar {
            return Err(v(
                Condition::Amplification,
                format!("p_upper*sigma = {:.6} >= p_lower*sigma_bar = {:.6}", p_upper * sigma_under, p_lower * sigma_bar),
            ));
        }
        let lambda_hat = solve_rate(-p_lower * sigma_bar, p_upper * sigma_under, tau0)
            .map_err(|e| v(Condition::DelayedGain, e.to_string()))?;
        Ok(Self {
            sigma_bar,
            sigma_under,
            b_bar,
            lambda_hat,
            k_transform,
            p_lower,
            p_upper,
            tau0,
            mode,
            margins: Vec::new(),
        })
    }

    /// Gain from `max_i ||d_i||_inf` to the asymptotic deviation.
    pub fn disturbance_gain(&self) -> f64 {
        self.k_transform * self.b_bar * self.p_upper / (self.p_lower * self.sigma_bar - self.p_upper * self.sigma_under)
    }
}

/// Deviation envelope `K sup e^{-lambda t} + K b p_upper d / (p_lower sigma_bar - p_upper sigma)`.
pub fn bound_envelope(cert: &Certificate, initial_sup: f64, d_sup: f64) -> Envelope {
    Envelope {
        initial_sup: cert.k_transform * initial_sup,
        rate: cert.lambda_hat,
        offset: cert.disturbance_gain() * d_sup,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesiredReport {
    pub passed: bool,
    /// Largest coupling value on the desired solution.
    pub max_residual: f64,
    pub worst_coupling: Option<usize>,
    pub worst_time: Option<f64>,
    /// Largest `|d/dt x^d - f(x^d, t)|` (finite differences in time).
    pub desired_residual: f64,
}

/// Couplings must vanish along the desired solution, delayed ones at `t - tau(t)`.
pub fn check_condition_i(system: &NetworkSystem, domain: &SampleDomain) -> DesiredReport {
    let (t0, t1) = domain.time_window;
    let n = domain.samples.max(2);
    let mut report = DesiredReport { passed: true, max_residual: 0.0, worst_coupling: None, worst_time: None, desired_residual: 0.0 };
    let at = |s: f64| system.desired(s.max(0.0));
    for k in 0..n {
        let t = t0 + (t1 - t0) * k as f64 / (n - 1) as f64;
        let tau = system.delay().tau(t);
        let (xd, xd_del) = (at(t), at(t - tau));
        let (ln, ld) = (system.leader_states(t), system.leader_states(t - tau));
        for (ci, c) in system.couplings().iter().enumerate() {
            let r = system.agent_range(c.target);
            let mut out = vec![0.0; r.len()];
            let mut residual: f64 = 0.0;
            if let Some(term) = &c.delay_free {
                let src: &[f64] = match c.source {
                    Source::Agent(j) => &xd[system.agent_range(j)],
                    Source::Leader(l) => &ln[l],
                };
                (term.eval())(&xd[r.clone()], src, t, &mut out);
                residual = residual.max(out.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            if let Some(term) = &c.delayed {
                out.fill(0.0);
                let src: &[f64] = match c.source {
                    Source::Agent(j) => &xd_del[system.agent_range(j)],
                    Source::Leader(l) => &ld[l],
                };
                (term.eval())(&xd_del[r.clone()], src, t, &mut out);
                residual = residual.max(out.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            if residual > report.max_residual {
                report.max_residual = residual;
                report.worst_coupling = Some(ci);
                report.worst_time = Some(t);
            }
        }
        // the desired solution must solve the intrinsic dynamics
        let h = 1e-3;
        let (xp2, xp, xm, xm2) = (system.desired(t + 2.0 * h), system.desired(t + h), system.desired(t - h), system.desired(t - 2.0 * h));
        for (i, agent) in system.agents().iter().enumerate() {
            let r = system.agent_range(i);
            let mut f = vec![0.0; r.len()];
            (agent.intrinsic())(&xd[r.clone()], t, &mut f);
            for (c, idx) in r.enumerate() {
                let deriv = (8.0 * (xp[idx] - xm[idx]) - (xp2[idx] - xm2[idx])) / (12.0 * h);
                let tol = 1.0 + deriv.abs();
                report.desired_residual = report.desired_residual.max((deriv - f[c]).abs() / tol);
            }
        }
    }
    report.passed = report.max_residual < DESIRED_TOLERANCE && report.desired_residual < 1e-6;
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEstimate {
    /// `sigma_bar` for the contraction check, `sigma_under` for the delayed one.
    pub value: f64,
    /// Worst left-hand side per agent.
    pub per_agent: Vec<f64>,
    pub worst_agent: usize,
    pub worst_time: f64,
    pub mode: CertificateMode,
}

impl ConditionEstimate {
    pub fn passed_contraction(&self) -> bool {
        self.value > 0.0
    }
}

struct Sweep {
    contraction: ConditionEstimate,
    delayed: ConditionEstimate,
    b_sampled: f64,
}

fn sweep(oracle: &JacobianOracle, domain: &SampleDomain) -> Result<Sweep> {
    let sys = oracle.system();
    domain.check(sys)?;
    let closed = oracle.is_closed_form();
    let mode = if closed { CertificateMode::ClosedForm } else { CertificateMode::Sampled };
    let samples = if closed {
        let x: Vec<f64> = domain.boxes.iter().flat_map(|(lo, hi)| lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b))).collect();
        vec![(domain.time_window.0, x)]
    } else {
        sample_states(sys, domain)
    };
    let n = sys.num_agents();
    // (time, per-agent (contraction, delayed) values, disturbance gain)
    type Sample = (f64, Vec<(f64, f64)>, f64);
    let evaluated: Vec<Sample> = samples
        .par_iter()
        .map(|(t, x)| {
            let leaders = sys.leader_states(*t);
            let vals = oracle.condition_values(x, &leaders, *t)?;
            let mut b: f64 = 0.0;
            for (i, agent) in sys.agents().iter().enumerate() {
                if let Some(d) = agent.disturbance() {
                    b = b.max(norm2(&(d.gain)(&x[sys.agent_range(i)], *t))?);
                }
            }
            Ok((*t, vals, b))
        })
        .collect::<Result<_>>()?;
    let mut per_c = vec![f64::NEG_INFINITY; n];
    let mut per_d = vec![f64::NEG_INFINITY; n];
    let mut worst_c = (f64::NEG_INFINITY, 0, 0.0);
    let mut worst_d = (f64::NEG_INFINITY, 0, 0.0);
    let mut b_sampled: f64 = 0.0;
    for (t, vals, b) in &evaluated {
        b_sampled = b_sampled.max(*b);
        for (i, &(c, d)) in vals.iter().enumerate() {
            per_c[i] = per_c[i].max(c);
            per_d[i] = per_d[i].max(d);
            if c > worst_c.0 {
                worst_c = (c, i, *t);
            }
            if d > worst_d.0 {
                worst_d = (d, i, *t);
            }
        }
    }
    Ok(Sweep {
        contraction: ConditionEstimate { value: -worst_c.0, per_agent: per_c, worst_agent: worst_c.1, worst_time: worst_c.2, mode },
        delayed: ConditionEstimate { value: worst_d.0.max(0.0), per_agent: per_d, worst_agent: worst_d.1, worst_time: worst_d.2, mode },
        b_sampled,
    })
}

/// `sigma_bar = -max (mu2(own Jacobian) + sum_j ||d_2 h_ij||)`; passes when positive.
pub fn check_condition_ii(oracle: &JacobianOracle, domain: &SampleDomain) -> Result<ConditionEstimate> {
    Ok(sweep(oracle, domain)?.contraction)
}

/// `sigma = max (||sum d_1 h^tau|| + sum_j ||d_2 h^tau_ij||)`.
pub fn check_condition_iii(oracle: &JacobianOracle, domain: &SampleDomain) -> Result<ConditionEstimate> {
    Ok(sweep(oracle, domain)?.delayed)
}

/// Runs all checks and, when they hold, returns the certificate.
pub fn certify(oracle: &JacobianOracle, domain: &SampleDomain) -> Result<Certificate, Violation> {
    let sys = oracle.system();
    if sys.agents().iter().any(|a| a.has_amplification()) {
        return Err(Violation::new(
            Condition::Unsupported,
            "agents with amplified dynamics need the neural-network certificate",
        ));
    }
    let desired = check_condition_i(sys, domain);
    if !desired.passed {
        let mut v = Violation::new(
            Condition::DesiredSolution,
            format!(
                "coupling residual {:.3e} / desired-solution residual {:.3e} on the desired solution",
                desired.max_residual, desired.desired_residual
            ),
        );
        v.worst_agent = desired.worst_coupling.map(|k| sys.couplings()[k].target);
        v.worst_time = desired.worst_time;
        return Err(v);
    }
    let s = sweep(oracle, domain).map_err(|e| Violation::new(Condition::Unsupported, e.to_string()))?;
    let b_bar = sys.disturbance_gain_bound();
    if s.b_sampled > b_bar * (1.0 + 1e-12) + 1e-12 {
        return Err(Violation::new(
            Condition::DisturbanceBound,
            format!("sampled ||b_i|| = {:.6} exceeds the declared bound {b_bar:.6}", s.b_sampled),
        ));
    }
    let k_transform = oracle.transform_condition().map_err(|e| Violation::new(Condition::Unsupported, e.to_string()))?;
    let (sb, su) = (s.contraction.value, s.delayed.value);
    let mut cert = Certificate::new(sb, su, b_bar, sys.delay().tau0(), k_transform, s.contraction.mode).map_err(|mut v| {
        let est = if v.condition == Condition::Contraction { &s.contraction } else { &s.delayed };
        v.worst_agent = Some(est.worst_agent);
        v.worst_time = Some(est.worst_time);
        v
    })?;
    cert.margins = (0..sys.num_agents())
        .map(|i| AgentMargin { agent: i, contraction: -s.contraction.per_agent[i] - sb, delayed: su - s.delayed.per_agent[i] })
        .collect();
    Ok(cert)
}

//! The closed-loop network: agents with intrinsic dynamics, disturbance
//! channels and outputs, joined by delay-free and delayed couplings, plus
//! leaders and a desired solution.

mod integrate;
mod trace;

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

pub use integrate::{constant_history, integrate, integrate_with, IntegrationOptions};
pub use trace::{
    initial_deviation_sup, max_deviation, output_deviation, write_trace_csv, DeviationSeries,
    RunMetadata, Trace,
};

/// `f(x, t)` written into the output slice.
pub type VectorField = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync>;
pub type Signal = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
/// `h(x_target, x_source, t)` *added* into the output slice.
pub type PairField = Arc<dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync>;
pub type PairJacobianFn = Arc<dyn Fn(&[f64], &[f64], f64) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync>;
pub type OutputFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// How the Jacobian of an intrinsic vector field is obtained.
#[derive(Clone)]
pub enum Jacobian {
    Constant(DMatrix<f64>),
    Analytic(MatrixField),
    FiniteDifference,
}

/// Jacobians of a coupling with respect to the target and source states.
#[derive(Clone)]
pub enum PairJacobian {
    Constant { wrt_target: DMatrix<f64>, wrt_source: DMatrix<f64> },
    Analytic(PairJacobianFn),
    FiniteDifference,
}

impl PairJacobian {
    pub fn is_constant(&self) -> bool {
        matches!(self, PairJacobian::Constant { .. })
    }
}

/// `b(x, t) d(t)` with a declared bound on `||b(x, t)||_2`.
#[derive(Clone)]
pub struct Disturbance {
    pub gain: MatrixField,
    pub signal: Signal,
    pub gain_bound: f64,
}

impl Disturbance {
    pub fn new(gain: MatrixField, signal: Signal, gain_bound: f64) -> Self {
        Self { gain, signal, gain_bound }
    }

    /// Identity intensity: `d(t)` enters the dynamics directly.
    pub fn additive(dim: usize, signal: Signal) -> Self {
        let eye = DMatrix::identity(dim, dim);
        Self { gain: Arc::new(move |_, _| eye.clone()), signal, gain_bound: 1.0 }
    }
}

#[derive(Clone)]
pub struct OutputMap {
    pub dim: usize,
    pub map: OutputFn,
    pub lipschitz: Option<f64>,
}

#[derive(Clone)]
pub struct Agent {
    pub(crate) dim: usize,
    pub(crate) intrinsic: VectorField,
    pub(crate) jacobian: Jacobian,
    pub(crate) disturbance: Option<Disturbance>,
    pub(crate) output: Option<OutputMap>,
    pub(crate) amplification: Option<ScalarField>,
}

impl Agent {
    pub fn new(dim: usize, intrinsic: VectorField) -> Self {
        Self {
            dim,
            intrinsic,
            jacobian: Jacobian::FiniteDifference,
            disturbance: None,
            output: None,
            amplification: None,
        }
    }

    /// `f(x, t) = A x + forcing(t)`.
    pub fn affine(a: DMatrix<f64>, forcing: Option<Signal>) -> Self {
        let dim = a.nrows();
        let entries: Vec<(usize, usize, f64)> = sparse_entries(&a);
        let field: VectorField = Arc::new(move |x, t, out| {
            match &forcing {
                Some(g) => out.copy_from_slice(&g(t)),
                None => out.fill(0.0),
            }
            for &(r, c, v) in &entries {
                out[r] += v * x[c];
            }
        });
        Self::new(dim, field).with_jacobian(Jacobian::Constant(a))
    }

    pub fn with_jacobian(mut self, jacobian: Jacobian) -> Self {
        self.jacobian = jacobian;
        self
    }

    pub fn with_disturbance(mut self, disturbance: Disturbance) -> Self {
        self.disturbance = Some(disturbance);
        self
    }

    pub fn with_output(mut self, output: OutputMap) -> Self {
        self.output = Some(output);
        self
    }

    /// Positive scalar gain multiplying the whole right-hand side,
    /// as in amplified (Cohen-Grossberg type) neuron models.
    pub fn with_amplification(mut self, amplification: ScalarField) -> Self {
        self.amplification = Some(amplification);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intrinsic(&self) -> &VectorField {
        &self.intrinsic
    }

    pub fn jacobian(&self) -> &Jacobian {
        &self.jacobian
    }

    pub fn disturbance(&self) -> Option<&Disturbance> {
        self.disturbance.as_ref()
    }

    pub fn output(&self) -> Option<&OutputMap> {
        self.output.as_ref()
    }

    pub fn has_amplification(&self) -> bool {
        self.amplification.is_some()
    }

    pub fn output_dim(&self) -> usize {
        self.output.as_ref().map_or(self.dim, |o| o.dim)
    }

    pub fn output_lipschitz(&self) -> Option<f64> {
        match &self.output {
            None => Some(1.0),
            Some(o) => o.lipschitz,
        }
    }

    pub fn eval_output(&self, x: &[f64]) -> Vec<f64> {
        match &self.output {
            None => x.to_vec(),
            Some(o) => (o.map)(x),
        }
    }
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("dim", &self.dim)
            .field("disturbed", &self.disturbance.is_some())
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct CouplingTerm {
    pub(crate) eval: PairField,
    pub(crate) jacobian: PairJacobian,
    // constant offset of an affine term; its matrices live in `jacobian`
    pub(crate) affine_constant: Option<DVector<f64>>,
}

impl CouplingTerm {
    pub fn new(eval: PairField, jacobian: PairJacobian) -> Self {
        Self { eval, jacobian, affine_constant: None }
    }

    /// `h(x_i, x_j) = S x_i + M x_j + c`.
    pub fn affine(wrt_target: DMatrix<f64>, wrt_source: DMatrix<f64>, constant: DVector<f64>) -> Self {
        let s = sparse_entries(&wrt_target);
        let m = sparse_entries(&wrt_source);
        let c: Vec<(usize, f64)> =
            constant.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        let eval: PairField = Arc::new(move |xi, xj, _t, out| {
            for &(r, col, v) in &s {
                out[r] += v * xi[col];
            }
            for &(r, col, v) in &m {
                out[r] += v * xj[col];
            }
            for &(r, v) in &c {
                out[r] += v;
            }
        });
        Self { eval, jacobian: PairJacobian::Constant { wrt_target, wrt_source }, affine_constant: Some(constant) }
    }

    pub fn is_affine(&self) -> bool {
        self.affine_constant.is_some()
    }

    pub fn eval(&self) -> &PairField {
        &self.eval
    }

    pub fn jacobian(&self) -> &PairJacobian {
        &self.jacobian
    }
}

fn sparse_entries(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            if v != 0.0 {
                out.push((r, c, v));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Agent(usize),
    Leader(usize),
}

#[derive(Clone)]
pub struct Coupling {
    pub target: usize,
    pub source: Source,
    pub delay_free: Option<CouplingTerm>,
    pub delayed: Option<CouplingTerm>,
}

impl Coupling {
    pub fn delay_free(target: usize, source: Source, term: CouplingTerm) -> Self {
        Self { target, source, delay_free: Some(term), delayed: None }
    }

    pub fn delayed(target: usize, source: Source, term: CouplingTerm) -> Self {
        Self { target, source, delay_free: None, delayed: Some(term) }
    }
}

#[derive(Clone)]
pub struct Leader {
    pub dim: usize,
    pub trajectory: Signal,
}

/// Bounded time-varying delay `0 <= tau(t) <= tau0`. No smoothness is assumed.
#[derive(Clone)]
pub struct DelaySpec {
    tau: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    tau0: f64,
}

impl DelaySpec {
    pub fn constant(tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidInput(format!("delay {tau} must be finite and >= 0")));
        }
        Ok(Self { tau: Arc::new(move |_| tau), tau0: tau })
    }

    pub fn varying(tau: Arc<dyn Fn(f64) -> f64 + Send + Sync>, tau0: f64) -> Result<Self> {
        if !(tau0 >= 0.0) || !tau0.is_finite() {
            return Err(Error::InvalidInput(format!("delay bound {tau0} must be finite and >= 0")));
        }
        Ok(Self { tau, tau0 })
    }

    pub fn tau(&self, t: f64) -> f64 {
        (self.tau)(t)
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }
}

/// Scratch buffers reused across right-hand-side evaluations.
pub(crate) struct RhsScratch {
    coupling: Vec<f64>,
    agent: Vec<f64>,
}

pub struct NetworkSystem {
    agents: Vec<Agent>,
    couplings: Vec<Coupling>,
    leaders: Vec<Leader>,
    delay: DelaySpec,
    desired: Signal,
    offsets: Vec<usize>,
    total_dim: usize,
    linear: LinearCouplings,
}

/// Affine agent-to-agent couplings folded into `M x + c` for the delay-free
/// and the delayed part; every other coupling is evaluated term by term.
struct LinearCouplings {
    free: Option<(CsrMatrix<f64>, Vec<f64>)>,
    delayed: Option<(CsrMatrix<f64>, Vec<f64>)>,
    generic: Vec<usize>,
}

impl LinearCouplings {
    fn compile(couplings: &[Coupling], offsets: &[usize], total_dim: usize) -> Self {
        let mut parts = [CooMatrix::new(total_dim, total_dim), CooMatrix::new(total_dim, total_dim)];
        let mut consts = [vec![0.0; total_dim], vec![0.0; total_dim]];
        let mut used = [false, false];
        let mut generic = Vec::new();
        for (k, c) in couplings.iter().enumerate() {
            let Source::Agent(j) = c.source else {
                generic.push(k);
                continue;
            };
            let terms = [&c.delay_free, &c.delayed];
            if terms.iter().any(|t| t.as_ref().is_some_and(|t| !t.is_affine())) {
                generic.push(k);
                continue;
            }
            for (slot, term) in terms.into_iter().enumerate() {
                let Some(term) = term else { continue };
                let PairJacobian::Constant { wrt_target, wrt_source } = &term.jacobian else { unreachable!() };
                let (ri, rj) = (offsets[c.target], offsets[j]);
                for (m, col0) in [(wrt_target, ri), (wrt_source, rj)] {
                    for (r, col, v) in sparse_entries(m) {
                        parts[slot].push(ri + r, col0 + col, v);
                    }
                }
                let constant = term.affine_constant.as_ref().expect("affine term");
                for (r, v) in constant.iter().enumerate() {
                    consts[slot][ri + r] += v;
                }
                used[slot] = true;
            }
        }
        let [free_coo, delayed_coo] = parts;
        let [free_c, delayed_c] = consts;
        Self {
            free: used[0].then(|| (CsrMatrix::from(&free_coo), free_c)),
            delayed: used[1].then(|| (CsrMatrix::from(&delayed_coo), delayed_c)),
            generic,
        }
    }
}

fn csr_apply(m: &CsrMatrix<f64>, c: &[f64], x: &[f64], out: &mut [f64]) {
    let (offsets, cols, vals) = (m.row_offsets(), m.col_indices(), m.values());
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = c[r];
        for k in offsets[r]..offsets[r + 1] {
            acc += vals[k] * x[cols[k]];
        }
        *o += acc;
    }
}

impl fmt::Debug for NetworkSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetworkSystem")
            .field("agents", &self.agents.len())
            .field("couplings", &self.couplings.len())
            .field("leaders", &self.leaders.len())
            .field("tau0", &self.delay.tau0)
            .finish()
    }
}

impl NetworkSystem {
    pub fn new(
        agents: Vec<Agent>,
        couplings: Vec<Coupling>,
        leaders: Vec<Leader>,
        delay: DelaySpec,
        desired: Signal,
    ) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidInput("network needs at least one agent".into()));
        }
        if let Some(a) = agents.iter().position(|a| a.dim == 0) {
            return Err(Error::InvalidInput(format!("agent {a} has zero state dimension")));
        }
        let mut offsets = Vec::with_capacity(agents.len());
        let mut total_dim = 0;
        for a in &agents {
            offsets.push(total_dim);
            total_dim += a.dim;
        }
        for (k, c) in couplings.iter().enumerate() {
            if c.target >= agents.len() {
                return Err(Error::InvalidInput(format!("coupling {k} targets missing agent {}", c.target)));
            }
            match c.source {
                Source::Agent(j) if j >= agents.len() => {
                    return Err(Error::InvalidInput(format!("coupling {k} reads missing agent {j}")))
                }
                Source::Leader(l) if l >= leaders.len() => {
                    return Err(Error::InvalidInput(format!("coupling {k} reads missing leader {l}")))
                }
                _ => {}
            }
            if c.delay_free.is_none() && c.delayed.is_none() {
                return Err(Error::InvalidInput(format!("coupling {k} has neither a delay-free nor a delayed term")));
            }
        }
        let d0 = desired(0.0);
        if d0.len() != total_dim {
            return Err(Error::DimensionMismatch(format!(
                "desired solution has length {}, network state has {total_dim}",
                d0.len()
            )));
        }
        let linear = LinearCouplings::compile(&couplings, &offsets, total_dim);
        Ok(Self { agents, couplings, leaders, delay, desired, offsets, total_dim, linear })
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.couplings
    }

    pub fn leaders(&self) -> &[Leader] {
        &self.leaders
    }

    pub fn delay(&self) -> &DelaySpec {
        &self.delay
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.dim).collect()
    }

    pub fn agent_range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i] + self.agents[i].dim
    }

    pub fn desired(&self, t: f64) -> Vec<f64> {
        (self.desired)(t)
    }

    pub fn desired_signal(&self) -> &Signal {
        &self.desired
    }

    pub fn has_delayed_couplings(&self) -> bool {
        self.couplings.iter().any(|c| c.delayed.is_some())
    }

    pub fn leader_states(&self, t: f64) -> Vec<Vec<f64>> {
        self.leaders.iter().map(|l| (l.trajectory)(t)).collect()
    }

    /// Largest declared `||b_i||_2` bound over all disturbed agents.
    pub fn disturbance_gain_bound(&self) -> f64 {
        self.agents
            .iter()
            .filter_map(|a| a.disturbance.as_ref().map(|d| d.gain_bound))
            .fold(0.0, f64::max)
    }

    /// `max_i |d_i(t)|_2` sampled on the given times.
    pub fn disturbance_sup(&self, times: impl IntoIterator<Item = f64>) -> f64 {
        let mut best: f64 = 0.0;
        for t in times {
            for a in &self.agents {
                if let Some(d) = &a.disturbance {
                    let v = (d.signal)(t);
                    best = best.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
                }
            }
        }
        best
    }

    pub(crate) fn scratch(&self) -> RhsScratch {
        let max_dim = self.agents.iter().map(|a| a.dim).max().unwrap_or(0);
        RhsScratch { coupling: vec![0.0; self.total_dim], agent: vec![0.0; max_dim] }
    }

    /// Right-hand side of the closed loop at time `t`.
    ///
    /// `delayed` holds the stacked state at `t - tau(t)`; leader states are
    /// given at `t` and `t - tau(t)`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn rhs(
        &self,
        t: f64,
        x: &[f64],
        delayed: &[f64],
        leaders_now: &[Vec<f64>],
        leaders_delayed: &[Vec<f64>],
        scratch: &mut RhsScratch,
        out: &mut [f64],
    ) {
        let u = &mut scratch.coupling;
        u.fill(0.0);
        if let Some((m, c)) = &self.linear.free {
            csr_apply(m, c, x, u);
        }
        if let Some((m, c)) = &self.linear.delayed {
            csr_apply(m, c, delayed, u);
        }
        for c in self.linear.generic.iter().map(|&k| &self.couplings[k]) {
            let ti = self.agent_range(c.target);
            if let Some(term) = &c.delay_free {
                let src: &[f64] = match c.source {
                    Source::Agent(j) => &x[self.agent_range(j)],
                    Source::Leader(l) => &leaders_now[l],
                };
                (term.eval)(&x[ti.clone()], src, t, &mut u[ti.clone()]);
            }
            if let Some(term) = &c.delayed {
                let src: &[f64] = match c.source {
                    Source::Agent(j) => &delayed[self.agent_range(j)],
                    Source::Leader(l) => &leaders_delayed[l],
                };
                (term.eval)(&delayed[ti.clone()], src, t, &mut u[ti.clone()]);
            }
        }
        for (i, agent) in self.agents.iter().enumerate() {
            let r = self.agent_range(i);
            let xi = &x[r.clone()];
            let oi = &mut out[r.clone()];
            (agent.intrinsic)(xi, t, oi);
            for (o, ui) in oi.iter_mut().zip(&u[r.clone()]) {
                *o += ui;
            }
            if let Some(d) = &agent.disturbance {
                let b = (d.gain)(xi, t);
                let dv = (d.signal)(t);
                let tmp = &mut scratch.agent[..agent.dim];
                for (row, slot) in tmp.iter_mut().enumerate() {
                    *slot = (0..dv.len()).map(|k| b[(row, k)] * dv[k]).sum();
                }
                for (o, v) in oi.iter_mut().zip(tmp.iter()) {
                    *o += v;
                }
            }
            if let Some(p) = &agent.amplification {
                let gain = p(xi);
                oi.iter_mut().for_each(|o| *o *= gain);
            }
        }
    }
}

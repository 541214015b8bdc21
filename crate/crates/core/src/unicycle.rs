//! Unicycle robots steered at their hand position: the nonlinear model, its
//! feedback linearisation, the delayed formation protocol, concentric-circle
//! scenarios and the closed-form certificate.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::certify::{AgentMargin, Certificate, CertificateMode, Condition, Violation};
use crate::error::{ensure_finite, Error, Result};
use crate::measures::{mu2, norm2, sigma_max, sigma_min};
use crate::netmodel::{
    Agent, Coupling, CouplingTerm, DelaySpec, DeviationSeries, Disturbance, Leader, NetworkSystem, OutputMap,
    Signal, Source,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub m: f64,
    pub inertia: f64,
    pub l: f64,
}

impl RobotParams {
    pub fn new(m: f64, inertia: f64, l: f64) -> Result<Self> {
        ensure_finite([m, inertia, l], "robot parameters")?;
        if m <= 0.0 || inertia <= 0.0 || l <= 0.0 {
            return Err(Error::InvalidInput(format!("robot parameters must be positive (m={m}, I={inertia}, l={l})")));
        }
        Ok(Self { m, inertia, l })
    }

    /// `max(1/m, l/I)`, the norm of the input matrix for every heading.
    pub fn b_max(&self) -> f64 {
        (1.0 / self.m).max(self.l / self.inertia)
    }
}

impl Default for RobotParams {
    fn default() -> Self {
        Self { m: 10.1, inertia: 0.13, l: 0.12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnicycleState {
    pub px: f64,
    pub py: f64,
    pub v: f64,
    pub theta: f64,
    pub omega: f64,
}

impl UnicycleState {
    pub fn to_array(&self) -> [f64; 5] {
        [self.px, self.py, self.v, self.theta, self.omega]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self { px: x[0], py: x[1], v: x[2], theta: x[3], omega: x[4] }
    }
}

/// Hand position and velocity, plus the heading needed to invert the map.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HandPointState {
    pub chi: [f64; 4],
    pub theta: f64,
}

pub fn unicycle_rhs(s: &UnicycleState, force: f64, torque: f64, df: f64, dq: f64, p: &RobotParams) -> UnicycleState {
    UnicycleState {
        px: s.v * s.theta.cos(),
        py: s.v * s.theta.sin(),
        v: (force + df) / p.m,
        theta: s.omega,
        omega: (torque + dq) / p.inertia,
    }
}

/// Maps `[F, Q]` (and `[d^f, d^q]`) into hand acceleration.
pub fn input_matrix(theta: f64, p: &RobotParams) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c / p.m, -p.l / p.inertia * s, s / p.m, p.l / p.inertia * c)
}

/// Hand acceleration at zero input.
pub fn hand_drift(s: &UnicycleState, p: &RobotParams) -> [f64; 2] {
    let (sn, cs) = s.theta.sin_cos();
    let w2 = s.omega * s.omega;
    [-s.v * s.omega * sn - p.l * w2 * cs, s.v * s.omega * cs - p.l * w2 * sn]
}

/// Force and torque making the hand acceleration equal `nu` (up to disturbances).
pub fn feedback_linearize(s: &UnicycleState, nu: [f64; 2], p: &RobotParams) -> (f64, f64) {
    let drift = hand_drift(s, p);
    let inv = input_matrix(s.theta, p).try_inverse().expect("input matrix has determinant l/(m I) > 0");
    let u = inv * nalgebra::Vector2::new(nu[0] - drift[0], nu[1] - drift[1]);
    (u[0], u[1])
}

pub fn hand_transform(s: &UnicycleState, p: &RobotParams) -> HandPointState {
    let (sn, cs) = s.theta.sin_cos();
    HandPointState {
        chi: [
            s.px + p.l * cs,
            s.py + p.l * sn,
            s.v * cs - p.l * s.omega * sn,
            s.v * sn + p.l * s.omega * cs,
        ],
        theta: s.theta,
    }
}

pub fn inverse_hand_transform(h: &HandPointState, p: &RobotParams) -> UnicycleState {
    let (sn, cs) = h.theta.sin_cos();
    let [c1, c2, c3, c4] = h.chi;
    UnicycleState {
        px: c1 - p.l * cs,
        py: c2 - p.l * sn,
        v: c3 * cs + c4 * sn,
        theta: h.theta,
        omega: (-c3 * sn + c4 * cs) / p.l,
    }
}

/// Heading rate in hand coordinates (the zero dynamics of the linearised loop).
pub fn zero_dynamics(h: &HandPointState, p: &RobotParams) -> f64 {
    let (sn, cs) = h.theta.sin_cos();
    (-h.chi[2] * sn + h.chi[3] * cs) / p.l
}

/// Diagonal gains of the protocol, one entry per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormationGains {
    pub kp: [f64; 2],
    pub kpl: [f64; 2],
    pub kvl: [f64; 2],
}

impl FormationGains {
    pub fn isotropic(kp: f64, kpl: f64, kvl: f64) -> Self {
        Self { kp: [kp; 2], kpl: [kpl; 2], kvl: [kvl; 2] }
    }

    /// The certified gains used for the concentric-circle experiments.
    pub fn scalable() -> Self {
        Self::isotropic(0.035, 0.7, 1.0)
    }

    /// Stable for the inward-only topology, but amplifying from circle to circle.
    pub fn stable_not_scalable() -> Self {
        Self::isotropic(0.3, 0.2, 0.3)
    }

    pub fn scale_kp(mut self, factor: f64) -> Self {
        self.kp = self.kp.map(|k| k * factor);
        self
    }

    fn check(&self) -> Result<()> {
        ensure_finite(self.kp.iter().chain(&self.kpl).chain(&self.kvl).copied(), "formation gains")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    /// Ahead and behind on the same circle, closest robot on the neighbouring circles.
    IntraInter,
    /// Ahead and behind on the same circle, closest robot on the inner circle.
    InwardOnly,
    AllToAll,
}

/// Robots on `K` concentric circles, `4k` on circle `k` at radius `k * spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleFormation {
    pub circles: usize,
    pub spacing: f64,
    pub mode: AdjacencyMode,
}

impl CircleFormation {
    pub fn new(circles: usize, spacing: f64, mode: AdjacencyMode) -> Result<Self> {
        if circles == 0 {
            return Err(Error::InvalidInput("formation needs at least one circle".into()));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidInput(format!("circle spacing {spacing} must be positive")));
        }
        Ok(Self { circles, spacing, mode })
    }

    pub fn num_robots(&self) -> usize {
        2 * self.circles * (self.circles + 1)
    }

    /// Index of the first robot on circle `k` (1-based circles).
    pub fn circle_start(&self, k: usize) -> usize {
        2 * (k - 1) * k
    }

    /// 1-based circle and position on it.
    pub fn locate(&self, robot: usize) -> (usize, usize) {
        let mut k = 1;
        while self.circle_start(k + 1) <= robot {
            k += 1;
        }
        (k, robot - self.circle_start(k))
    }

    pub fn circle_of(&self, robot: usize) -> usize {
        self.locate(robot).0
    }

    /// Desired hand offset from the leader.
    pub fn offset(&self, robot: usize) -> [f64; 2] {
        let (k, m) = self.locate(robot);
        let phi = 2.0 * PI * m as f64 / (4 * k) as f64;
        let r = k as f64 * self.spacing;
        [r * phi.cos(), r * phi.sin()]
    }

    fn closest_on(&self, k: usize, m: usize, other: usize) -> usize {
        let count = 4 * other;
        let idx = (m as f64 * other as f64 / k as f64).round() as usize % count;
        self.circle_start(other) + idx
    }

    /// Robots whose (delayed) hand positions robot `i` receives.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        if self.mode == AdjacencyMode::AllToAll {
            return (0..self.num_robots()).filter(|&j| j != i).collect();
        }
        let (k, m) = self.locate(i);
        let count = 4 * k;
        let start = self.circle_start(k);
        let mut out = vec![start + (m + 1) % count, start + (m + count - 1) % count];
        if k > 1 {
            out.push(self.closest_on(k, m, k - 1));
        }
        if self.mode == AdjacencyMode::IntraInter && k < self.circles {
            out.push(self.closest_on(k, m, k + 1));
        }
        out.dedup();
        out
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_robots()).map(|i| self.neighbors(i).len()).max().unwrap_or(0)
    }
}

/// Circular hand trajectory of the virtual leader, starting at the origin heading along +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderReference {
    pub radius: f64,
    pub speed: f64,
}

impl Default for LeaderReference {
    fn default() -> Self {
        Self { radius: 30.0, speed: 0.5 }
    }
}

impl LeaderReference {
    fn rate(&self) -> f64 {
        self.speed / self.radius
    }

    /// `[eta_l, v_l]`.
    pub fn state(&self, t: f64) -> [f64; 4] {
        let (r, w) = (self.radius, self.rate());
        let (s, c) = (w * t).sin_cos();
        [r * s, r * (1.0 - c), self.speed * c, self.speed * s]
    }

    pub fn accel(&self, t: f64) -> [f64; 2] {
        let w = self.rate();
        let (s, c) = (w * t).sin_cos();
        [-self.speed * w * s, self.speed * w * c]
    }

    pub fn heading(&self, t: f64) -> f64 {
        self.rate() * t
    }
}

/// `[d^f, d^q] = amplitude sin(t) e^{-decay t}` on both channels of one robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotDisturbance {
    pub target: usize,
    pub amplitude: f64,
    pub decay: f64,
}

impl Default for RobotDisturbance {
    fn default() -> Self {
        Self { target: 0, amplitude: 2.0, decay: 0.2 }
    }
}

impl RobotDisturbance {
    pub fn eval(&self, t: f64) -> [f64; 2] {
        let v = if t < 0.0 { 0.0 } else { self.amplitude * t.sin() * (-self.decay * t).exp() };
        [v, v]
    }
}

/// Acceleration command of robot `i`: leader feed-forward, delayed offset
/// consensus with neighbours and delay-free leader tracking.
///
/// `neighbors` holds `(chi_j(t - tau), delta_ji)` pairs.
pub fn formation_protocol(
    chi_i: &[f64; 4],
    chi_i_delayed: &[f64; 4],
    neighbors: &[([f64; 4], [f64; 2])],
    leader: &[f64; 4],
    leader_accel: [f64; 2],
    delta_li: [f64; 2],
    gains: &FormationGains,
) -> [f64; 2] {
    let mut nu = leader_accel;
    for a in 0..2 {
        for (chi_j, delta) in neighbors {
            nu[a] += gains.kp[a] * (chi_j[a] - chi_i_delayed[a] - delta[a]);
        }
        nu[a] += gains.kpl[a] * (leader[a] - chi_i[a] - delta_li[a]) + gains.kvl[a] * (leader[a + 2] - chi_i[a + 2]);
    }
    nu
}

/// Everything needed to build a concentric-circle formation network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleScenario {
    pub formation: CircleFormation,
    pub gains: FormationGains,
    pub params: RobotParams,
    pub tau: f64,
    pub leader: LeaderReference,
    pub disturbance: Option<RobotDisturbance>,
}

impl CircleScenario {
    pub fn new(circles: usize, mode: AdjacencyMode, gains: FormationGains, tau: f64) -> Result<Self> {
        Ok(Self {
            formation: CircleFormation::new(circles, 1.0, mode)?,
            gains,
            params: RobotParams::default(),
            tau,
            leader: LeaderReference::default(),
            disturbance: Some(RobotDisturbance::default()),
        })
    }

    /// Hand-point network: `chi' = A chi + [0; v_l'] + couplings + b(t) d(t)`.
    pub fn build(&self) -> Result<NetworkSystem> {
        self.gains.check()?;
        let f = &self.formation;
        let n = f.num_robots();
        if let Some(d) = &self.disturbance {
            if d.target >= n {
                return Err(Error::InvalidInput(format!("disturbed robot {} does not exist ({n} robots)", d.target)));
            }
        }
        let leader = self.leader;
        let params = self.params;
        let a = hand_a();
        let mut agents = Vec::with_capacity(n);
        for i in 0..n {
            let forcing: Signal = Arc::new(move |t| {
                let acc = leader.accel(t);
                vec![0.0, 0.0, acc[0], acc[1]]
            });
            let mut agent = Agent::affine(a.clone(), Some(forcing)).with_output(OutputMap {
                dim: 2,
                map: Arc::new(|x| vec![x[0], x[1]]),
                lipschitz: Some(1.0),
            });
            if let Some(d) = self.disturbance.filter(|d| d.target == i) {
                let gain = Arc::new(move |_x: &[f64], t: f64| {
                    let b = input_matrix(leader.heading(t), &params);
                    let mut m = DMatrix::zeros(4, 2);
                    m.view_mut((2, 0), (2, 2)).copy_from(&b);
                    m
                });
                let signal: Signal = Arc::new(move |t| d.eval(t).to_vec());
                agent = agent.with_disturbance(Disturbance::new(gain, signal, params.b_max()));
            }
            agents.push(agent);
        }
        let g = &self.gains;
        let mut couplings = Vec::new();
        for i in 0..n {
            let pi = f.offset(i);
            let (s, c) = leader_jacobians(g);
            couplings.push(Coupling::delay_free(
                i,
                Source::Leader(0),
                CouplingTerm::affine(s, c, DVector::from_vec(vec![0.0, 0.0, g.kpl[0] * pi[0], g.kpl[1] * pi[1]])),
            ));
            for j in f.neighbors(i) {
                let pj = f.offset(j);
                let delta = [pj[0] - pi[0], pj[1] - pi[1]];
                let (s, m) = neighbor_jacobians(g);
                let c = DVector::from_vec(vec![0.0, 0.0, -g.kp[0] * delta[0], -g.kp[1] * delta[1]]);
                couplings.push(Coupling::delayed(i, Source::Agent(j), CouplingTerm::affine(s, m, c)));
            }
        }
        let offsets: Vec<[f64; 2]> = (0..n).map(|i| f.offset(i)).collect();
        let desired: Signal = Arc::new(move |t| {
            let l = leader.state(t);
            offsets.iter().flat_map(|p| [l[0] + p[0], l[1] + p[1], l[2], l[3]]).collect()
        });
        let leaders = vec![Leader { dim: 4, trajectory: Arc::new(move |t| leader.state(t).to_vec()) }];
        NetworkSystem::new(agents, couplings, leaders, DelaySpec::constant(self.tau)?, desired)
    }

    /// Sup of `|d|_2` over `[0, t_end]` on a fine grid.
    pub fn disturbance_sup(&self, t_end: f64) -> f64 {
        let Some(d) = self.disturbance else { return 0.0 };
        let steps = (t_end / 1e-3).ceil().max(1.0) as usize;
        (0..=steps)
            .map(|k| {
                let v = d.eval(t_end * k as f64 / steps as f64);
                (v[0] * v[0] + v[1] * v[1]).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Per-circle maximum of the per-robot deviation peaks.
pub fn per_circle_max(dev: &DeviationSeries, formation: &CircleFormation) -> Vec<f64> {
    let mut out = vec![0.0_f64; formation.circles];
    for i in 0..formation.num_robots().min(dev.num_agents) {
        let k = formation.circle_of(i);
        out[k - 1] = out[k - 1].max(dev.agent_peak(i));
    }
    out
}

fn hand_a() -> DMatrix<f64> {
    let mut a = DMatrix::zeros(4, 4);
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    a
}

fn leader_jacobians(g: &FormationGains) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut s = DMatrix::zeros(4, 4);
    for a in 0..2 {
        s[(2 + a, a)] = -g.kpl[a];
        s[(2 + a, 2 + a)] = -g.kvl[a];
    }
    (s.clone(), -s)
}

fn neighbor_jacobians(g: &FormationGains) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut s = DMatrix::zeros(4, 4);
    for a in 0..2 {
        s[(2 + a, a)] = -g.kp[a];
    }
    (s.clone(), -s)
}

/// `[[I, alpha I], [0, I]]`.
pub fn hand_transform_matrix(alpha: f64) -> DMatrix<f64> {
    let mut t = DMatrix::identity(4, 4);
    t[(0, 2)] = alpha;
    t[(1, 3)] = alpha;
    t
}

/// 200 logarithmically spaced values on `[1e-2, 1e2]`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..200).map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / 199.0)).collect()
}

/// Constants of the transformed conditions for one common `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEvaluation {
    pub alpha: f64,
    pub sigma_bar: f64,
    pub sigma_under: f64,
}

pub fn evaluate_alpha(gains: &FormationGains, max_degree: usize, alpha: f64) -> Result<AlphaEvaluation> {
    let t = hand_transform_matrix(alpha);
    let ti = t.clone().try_inverse().expect("unit upper-triangular");
    let (ls, _) = leader_jacobians(gains);
    let own = &t * (hand_a() + ls) * &ti;
    let (d1, d2) = neighbor_jacobians(gains);
    let g = max_degree as f64;
    let delayed = norm2(&(&t * (d1 * g) * &ti))? + g * norm2(&(&t * d2 * &ti))?;
    Ok(AlphaEvaluation { alpha, sigma_bar: -mu2(&own)?, sigma_under: delayed })
}

/// Certificate of the formation protocol with the best common `alpha` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotCertificate {
    pub certificate: Certificate,
    pub alpha: f64,
}

pub fn prop3_certificate(
    gains: &FormationGains,
    params: &RobotParams,
    max_degree: usize,
    tau0: f64,
    alpha_grid: &[f64],
) -> Result<RobotCertificate, Violation> {
    let unsupported = |e: Error| Violation::new(Condition::Unsupported, e.to_string());
    gains.check().map_err(unsupported)?;
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !(*a >= 0.0)) {
        return Err(Violation::new(Condition::Unsupported, "alpha grid must be non-empty and non-negative"));
    }
    let mut best: Option<AlphaEvaluation> = None;
    let mut best_contraction: Option<AlphaEvaluation> = None;
    for &alpha in alpha_grid {
        let e = evaluate_alpha(gains, max_degree, alpha).map_err(unsupported)?;
        if best_contraction.is_none_or(|b| e.sigma_bar > b.sigma_bar) {
            best_contraction = Some(e);
        }
        if e.sigma_bar > 0.0 && best.is_none_or(|b| e.sigma_bar - e.sigma_under > b.sigma_bar - b.sigma_under) {
            best = Some(e);
        }
    }
    let Some(e) = best else {
        let c = best_contraction.expect("grid is non-empty");
        let mut v = Violation::new(
            Condition::Contraction,
            format!("no alpha gives a contracting self-loop (best sigma_bar = {:.6} at alpha = {:.4})", c.sigma_bar, c.alpha),
        );
        v.sigma_bar = Some(c.sigma_bar);
        v.sigma_under = Some(c.sigma_under);
        return Err(v);
    };
    let t = hand_transform_matrix(e.alpha);
    let k = sigma_max(&t).map_err(unsupported)? / sigma_min(&t).map_err(unsupported)?;
    let certificate =
        Certificate::new(e.sigma_bar, e.sigma_under, params.b_max(), tau0, k, CertificateMode::ClosedForm).map_err(|mut v| {
            v.message = format!("{} (best alpha = {:.4})", v.message, e.alpha);
            v
        })?;
    Ok(RobotCertificate { certificate, alpha: e.alpha })
}

/// Closed-form certificate for a concentric-circle scenario.
pub fn scenario_certificate(s: &CircleScenario) -> Result<RobotCertificate, Violation> {
    let mut rc = prop3_certificate(&s.gains, &s.params, s.formation.max_degree(), s.tau, &default_alpha_grid())?;
    let c = &mut rc.certificate;
    for i in 0..s.formation.num_robots() {
        let deg = s.formation.neighbors(i).len();
        let own = evaluate_alpha(&s.gains, deg, rc.alpha).map_err(|e| Violation::new(Condition::Unsupported, e.to_string()))?;
        c.margins.push(AgentMargin { agent: i, contraction: 0.0, delayed: c.sigma_under - own.sigma_under });
    }
    Ok(rc)
}

/// Full nonlinear robot `(p, v, theta, omega)` under feedback linearisation with
/// hand-acceleration command `nu(t)` and disturbance `d(t)`.
pub fn full_model_agent(params: RobotParams, nu: Signal, dist: Signal) -> Agent {
    Agent::new(
        5,
        Arc::new(move |x, t, out| {
            let s = UnicycleState::from_slice(x);
            let n = nu(t);
            let (force, torque) = feedback_linearize(&s, [n[0], n[1]], &params);
            let d = dist(t);
            let r = unicycle_rhs(&s, force, torque, d[0], d[1], &params);
            out.copy_from_slice(&r.to_array());
        }),
    )
}

/// Reduced hand-point model `(chi, theta)` with the heading zero dynamics.
pub fn reduced_model_agent(params: RobotParams, nu: Signal, dist: Signal) -> Agent {
    Agent::new(
        5,
        Arc::new(move |x, t, out| {
            let n = nu(t);
            let d = dist(t);
            let b = input_matrix(x[4], &params);
            let h = HandPointState { chi: [x[0], x[1], x[2], x[3]], theta: x[4] };
            out[0] = x[2];
            out[1] = x[3];
            out[2] = n[0] + b[(0, 0)] * d[0] + b[(0, 1)] * d[1];
            out[3] = n[1] + b[(1, 0)] * d[0] + b[(1, 1)] * d[1];
            out[4] = zero_dynamics(&h, &params);
        }),
    )
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::certify::{certify, check_condition_i, JacobianOracle, SampleDomain};

    #[test]
    fn rhs_examples() {
        let p = RobotParams::default();
        let zero = unicycle_rhs(&UnicycleState::default(), 0.0, 0.0, 0.0, 0.0, &p);
        assert_eq!(zero, UnicycleState::default());
        let s = UnicycleState { v: 1.0, ..Default::default() };
        let d = unicycle_rhs(&s, 0.0, 0.0, 0.0, 0.0, &p);
        assert_eq!((d.px, d.py), (1.0, 0.0));
        assert_abs_diff_eq!(unicycle_rhs(&s, p.m, 0.0, p.m, 0.0, &p).v, 2.0, epsilon = 1e-15);
        assert!(RobotParams::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn hand_transform_examples() {
        let p = RobotParams::default();
        let s = UnicycleState { px: 1.0, py: 2.0, v: 0.5, theta: 0.0, omega: 0.3 };
        let h = hand_transform(&s, &p);
        assert_abs_diff_eq!(h.chi[0], 1.0 + p.l, epsilon = 1e-15);
        assert_abs_diff_eq!(h.chi[2], 0.5, epsilon = 1e-15);
        let (f, q) = feedback_linearize(&UnicycleState::default(), [0.0, 0.0], &p);
        assert_eq!((f, q), (0.0, 0.0));
    }

    // hand acceleration from the chain rule along the unicycle flow
    fn hand_accel(s: &UnicycleState, force: f64, torque: f64, d: [f64; 2], p: &RobotParams) -> [f64; 2] {
        let h = 1e-6;
        let ds = unicycle_rhs(s, force, torque, d[0], d[1], p);
        let step = |k: f64| UnicycleState {
            px: s.px + k * ds.px,
            py: s.py + k * ds.py,
            v: s.v + k * ds.v,
            theta: s.theta + k * ds.theta,
            omega: s.omega + k * ds.omega,
        };
        let (a, b) = (hand_transform(&step(h), p), hand_transform(&step(-h), p));
        [(a.chi[2] - b.chi[2]) / (2.0 * h), (a.chi[3] - b.chi[3]) / (2.0 * h)]
    }

    proptest! {
        #[test]
        fn linearisation_is_exact(
            v in -2.0..2.0f64, th in -3.0..3.0f64, w in -2.0..2.0f64,
            n0 in -3.0..3.0f64, n1 in -3.0..3.0f64, d0 in -2.0..2.0f64, d1 in -2.0..2.0f64,
        ) {
            let p = RobotParams::default();
            let s = UnicycleState { px: 0.3, py: -0.2, v, theta: th, omega: w };
            let (f, q) = feedback_linearize(&s, [n0, n1], &p);
            let acc = hand_accel(&s, f, q, [0.0, 0.0], &p);
            prop_assert!((acc[0] - n0).abs() < 1e-6 && (acc[1] - n1).abs() < 1e-6);
            let acc = hand_accel(&s, f, q, [d0, d1], &p);
            let b = input_matrix(th, &p);
            let bd = b * nalgebra::Vector2::new(d0, d1);
            prop_assert!((acc[0] - n0 - bd[0]).abs() < 1e-5 && (acc[1] - n1 - bd[1]).abs() < 1e-5);
        }

        #[test]
        fn hand_transform_round_trip(px in -5.0..5.0f64, py in -5.0..5.0f64, v in -2.0..2.0f64, th in -3.0..3.0f64, w in -2.0..2.0f64) {
            let p = RobotParams::default();
            let s = UnicycleState { px, py, v, theta: th, omega: w };
            let back = inverse_hand_transform(&hand_transform(&s, &p), &p);
            for (a, b) in s.to_array().iter().zip(back.to_array()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((zero_dynamics(&hand_transform(&s, &p), &p) - w).abs() < 1e-12);
        }
    }

    #[test]
    fn input_matrix_norm_is_b_max() {
        let p = RobotParams::default();
        for k in 0..100 {
            let b = input_matrix(k as f64 * 0.0634, &p);
            let n = norm2(&DMatrix::from_column_slice(2, 2, b.as_slice())).unwrap();
            assert_abs_diff_eq!(n, p.b_max(), epsilon = 1e-12);
        }
    }

    #[test]
    fn formation_sizes_and_degrees() {
        let f = CircleFormation::new(3, 1.0, AdjacencyMode::IntraInter).unwrap();
        assert_eq!(f.num_robots(), 24);
        assert!(f.max_degree() <= 4);
        let f1 = CircleFormation::new(1, 1.0, AdjacencyMode::IntraInter).unwrap();
        assert_eq!(f1.num_robots(), 4);
        assert_eq!(f1.neighbors(0), vec![1, 3]);
        assert_eq!(f1.neighbors(2), vec![3, 1]);
        let f14 = CircleFormation::new(14, 1.0, AdjacencyMode::InwardOnly).unwrap();
        assert_eq!(f14.num_robots(), 420);
        assert_eq!(f14.max_degree(), 3);
        for i in 4..f14.num_robots() {
            let inner = f14.neighbors(i)[2];
            assert_eq!(f14.circle_of(inner), f14.circle_of(i) - 1);
        }
        assert_eq!(f14.locate(419), (14, 55));
    }

    #[test]
    fn protocol_on_formation_returns_feedforward() {
        let sc = CircleScenario::new(3, AdjacencyMode::IntraInter, FormationGains::scalable(), 0.1).unwrap();
        let f = &sc.formation;
        let t = 0.0;
        let l = sc.leader.state(t);
        let chi = |i: usize| {
            let p = f.offset(i);
            [l[0] + p[0], l[1] + p[1], l[2], l[3]]
        };
        for i in 0..f.num_robots() {
            let pi = f.offset(i);
            let nb: Vec<_> = f
                .neighbors(i)
                .into_iter()
                .map(|j| {
                    let pj = f.offset(j);
                    (chi(j), [pj[0] - pi[0], pj[1] - pi[1]])
                })
                .collect();
            let nu = formation_protocol(&chi(i), &chi(i), &nb, &l, sc.leader.accel(t), [-pi[0], -pi[1]], &sc.gains);
            let acc = sc.leader.accel(t);
            assert_abs_diff_eq!(nu[0], acc[0], epsilon = 1e-12);
            assert_abs_diff_eq!(nu[1], acc[1], epsilon = 1e-12);
        }
        let e = [0.5, -0.25];
        let nu = formation_protocol(
            &chi(0),
            &chi(0),
            &[([chi(0)[0] + e[0], chi(0)[1] + e[1], 0.0, 0.0], [0.0, 0.0])],
            &l,
            [0.0, 0.0],
            [l[0] - chi(0)[0], l[1] - chi(0)[1]],
            &FormationGains::isotropic(0.2, 0.0, 0.0),
        );
        assert_abs_diff_eq!(nu[0], 0.2 * e[0], epsilon = 1e-12);
        assert_abs_diff_eq!(nu[1], 0.2 * e[1], epsilon = 1e-12);
    }

    #[test]
    fn reference_gains_certify_and_scaled_gains_fail() {
        let p = RobotParams::default();
        let rc = prop3_certificate(&FormationGains::scalable(), &p, 4, 0.1, &default_alpha_grid()).unwrap();
        let c = &rc.certificate;
        assert!(c.sigma_bar > c.sigma_under);
        // closed form per axis: sigma = 2 g kp (1 + alpha^2)
        assert_abs_diff_eq!(c.sigma_under, 2.0 * 4.0 * 0.035 * (1.0 + rc.alpha * rc.alpha), epsilon = 1e-10);
        let v = prop3_certificate(&FormationGains::scalable().scale_kp(20.0), &p, 4, 0.1, &default_alpha_grid()).unwrap_err();
        assert_eq!(v.condition, Condition::DelayedGain);
        let v = prop3_certificate(&FormationGains::isotropic(0.035, 0.0, 0.0), &p, 4, 0.1, &default_alpha_grid()).unwrap_err();
        assert_eq!(v.condition, Condition::Contraction);
        assert!(prop3_certificate(&FormationGains::stable_not_scalable(), &p, 3, 0.1, &default_alpha_grid()).is_err());
    }

    #[test]
    fn generic_certifier_agrees_with_closed_form() {
        let sc = CircleScenario::new(2, AdjacencyMode::IntraInter, FormationGains::scalable(), 0.1).unwrap();
        let sys = sc.build().unwrap();
        let rc = scenario_certificate(&sc).unwrap();
        let t = vec![hand_transform_matrix(rc.alpha); sys.num_agents()];
        let oracle = JacobianOracle::new(&sys).with_transforms(t).unwrap();
        let dom = SampleDomain::uniform(&sys, -50.0, 50.0, (0.0, 20.0), 16, 0).unwrap();
        assert!(check_condition_i(&sys, &dom).passed);
        let c = certify(&oracle, &dom).unwrap();
        assert_abs_diff_eq!(c.sigma_bar, rc.certificate.sigma_bar, epsilon = 1e-10);
        // the closed form uses the worst declared degree, so it dominates
        assert!(c.sigma_under <= rc.certificate.sigma_under + 1e-12);
        assert_abs_diff_eq!(c.k_transform, rc.certificate.k_transform, epsilon = 1e-10);
        assert_abs_diff_eq!(c.b_bar, RobotParams::default().b_max(), epsilon = 1e-15);
    }
}

//! Linear networks with diffusive couplings around a shared moving
//! trajectory. Used for explicit `generic` scenarios and for randomly drawn
//! certified test networks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{certify, Certificate, JacobianOracle, SampleDomain, Violation};
use crate::error::{Error, Result};
use crate::measures::mu2;
use crate::netmodel::{Agent, Coupling, CouplingTerm, DelaySpec, Disturbance, NetworkSystem, Signal, Source};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayProfile {
    Constant,
    /// `tau0 (3 + sin t) / 4`.
    Sinusoidal,
    /// `tau0` on even seconds, `tau0 / 2` on odd ones.
    Switching,
}

impl DelayProfile {
    pub fn spec(self, tau0: f64) -> Result<DelaySpec> {
        match self {
            DelayProfile::Constant => DelaySpec::constant(tau0),
            DelayProfile::Sinusoidal => DelaySpec::varying(Arc::new(move |t| tau0 * (3.0 + t.sin()) / 4.0), tau0),
            DelayProfile::Switching => DelaySpec::varying(
                Arc::new(move |t| if t.floor().rem_euclid(2.0) == 0.0 { tau0 } else { 0.5 * tau0 }),
                tau0,
            ),
        }
    }
}

/// `B (amplitude sin(frequency t + phase) + pulse)`, the pulse being
/// `pulse_amplitude` on `[pulse_start, pulse_start + pulse_duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub gain: Vec<Vec<f64>>,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub pulse_amplitude: f64,
    #[serde(default)]
    pub pulse_start: f64,
    #[serde(default)]
    pub pulse_duration: f64,
}

fn one() -> f64 {
    1.0
}

impl DisturbanceSpec {
    pub fn signal(&self) -> Signal {
        let s = self.clone();
        let m = self.gain.first().map_or(0, Vec::len);
        Arc::new(move |t| {
            let pulse = if t >= s.pulse_start && t < s.pulse_start + s.pulse_duration { s.pulse_amplitude } else { 0.0 };
            (0..m).map(|k| s.amplitude * (s.frequency * t + s.phase + k as f64).sin() + pulse).collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearAgentSpec {
    /// Row-major state matrix.
    pub a: Vec<Vec<f64>>,
    /// Position of the agent relative to the shared trajectory.
    pub offset: Vec<f64>,
    #[serde(default)]
    pub initial_error: Option<Vec<f64>>,
    #[serde(default)]
    pub disturbance: Option<DisturbanceSpec>,
}

/// `h = W (x_source - x_target - (o_source - o_target))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearCouplingSpec {
    pub target: usize,
    pub source: usize,
    #[serde(default)]
    pub delayed: bool,
    pub weight: Vec<Vec<f64>>,
}

/// Agents with `x_i' = A_i x_i + r_i(t)`, where `r_i` keeps
/// `x_i^d(t) = o_i + q(t)` a solution and `q_k(t) = amplitude sin(frequency t + k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearNetworkSpec {
    pub tau0: f64,
    #[serde(default = "constant_profile")]
    pub delay: DelayProfile,
    #[serde(default)]
    pub trajectory_amplitude: f64,
    #[serde(default = "one")]
    pub trajectory_frequency: f64,
    pub agents: Vec<LinearAgentSpec>,
    #[serde(default)]
    pub couplings: Vec<LinearCouplingSpec>,
}

fn constant_profile() -> DelayProfile {
    DelayProfile::Constant
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl LinearNetworkSpec {
    fn dim(&self) -> usize {
        self.agents.first().map_or(0, |a| a.offset.len())
    }

    fn trajectory(&self, t: f64) -> Vec<f64> {
        let (a, w) = (self.trajectory_amplitude, self.trajectory_frequency);
        (0..self.dim()).map(|k| a * (w * t + k as f64).sin()).collect()
    }

    /// Desired state of every agent, also for negative times.
    pub fn desired(&self, t: f64) -> Vec<f64> {
        let q = self.trajectory(t);
        self.agents.iter().flat_map(|a| a.offset.iter().zip(&q).map(|(o, qk)| o + qk)).collect()
    }

    /// History `x^d(s) + e_i` with `e_i` the declared initial errors.
    pub fn history(&self) -> impl Fn(f64) -> Vec<f64> + Sync + '_ {
        let err: Vec<f64> =
            self.agents.iter().flat_map(|a| a.initial_error.clone().unwrap_or_else(|| vec![0.0; a.offset.len()])).collect();
        move |s| self.desired(s).iter().zip(&err).map(|(x, e)| x + e).collect()
    }

    /// `max_i |e_i|_2`, the exact sup of the history deviation.
    pub fn initial_sup(&self) -> f64 {
        self.agents
            .iter()
            .filter_map(|a| a.initial_error.as_ref())
            .map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn build(&self) -> Result<NetworkSystem> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::InvalidInput("generic network needs agents with non-empty offsets".into()));
        }
        let mut agents = Vec::with_capacity(self.agents.len());
        for (i, spec) in self.agents.iter().enumerate() {
            let a = to_matrix(&spec.a, &format!("agents[{i}].a"))?;
            if a.shape() != (n, n) || spec.offset.len() != n {
                return Err(Error::DimensionMismatch(format!("agent {i} must have state dimension {n}")));
            }
            if spec.initial_error.as_ref().is_some_and(|e| e.len() != n) {
                return Err(Error::DimensionMismatch(format!("agents[{i}].initial_error must have length {n}")));
            }
            let (amp, w, off) = (self.trajectory_amplitude, self.trajectory_frequency, DVector::from_vec(spec.offset.clone()));
            let am = a.clone();
            let forcing: Signal = Arc::new(move |t| {
                let q = DVector::from_fn(n, |k, _| amp * (w * t + k as f64).sin());
                let dq = DVector::from_fn(n, |k, _| amp * w * (w * t + k as f64).cos());
                (dq - &am * (&off + q)).as_slice().to_vec()
            });
            let mut agent = Agent::affine(a, Some(forcing));
            if let Some(d) = &spec.disturbance {
                let b = to_matrix(&d.gain, &format!("agents[{i}].disturbance.gain"))?;
                if b.nrows() != n {
                    return Err(Error::DimensionMismatch(format!("agents[{i}].disturbance.gain must have {n} rows")));
                }
                let bound = crate::measures::norm2(&b)?;
                agent = agent.with_disturbance(Disturbance::new(Arc::new(move |_, _| b.clone()), d.signal(), bound));
            }
            agents.push(agent);
        }
        let mut couplings = Vec::with_capacity(self.couplings.len());
        for (k, c) in self.couplings.iter().enumerate() {
            if c.target >= self.agents.len() || c.source >= self.agents.len() {
                return Err(Error::InvalidInput(format!("couplings[{k}] refers to a missing agent")));
            }
            let w = to_matrix(&c.weight, &format!("couplings[{k}].weight"))?;
            if w.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!("couplings[{k}].weight must be {n}x{n}")));
            }
            let rel = DVector::from_iterator(
                n,
                self.agents[c.source].offset.iter().zip(&self.agents[c.target].offset).map(|(s, t)| s - t),
            );
            let term = CouplingTerm::affine(-&w, w.clone(), -(&w * rel));
            couplings.push(if c.delayed {
                Coupling::delayed(c.target, Source::Agent(c.source), term)
            } else {
                Coupling::delay_free(c.target, Source::Agent(c.source), term)
            });
        }
        let me = self.clone();
        NetworkSystem::new(agents, couplings, vec![], self.delay.spec(self.tau0)?, Arc::new(move |t| me.desired(t)))
    }

    /// Closed-form certificate; every Jacobian is constant.
    pub fn certificate(&self) -> Result<std::result::Result<Certificate, Violation>> {
        let sys = self.build()?;
        let dom = SampleDomain::uniform(&sys, -1.0, 1.0, (0.0, 1.0), 1, 0)?;
        Ok(certify(&JacobianOracle::new(&sys), &dom))
    }
}

/// Random certified network: 1 to 8 agents of a common dimension 1 to 3,
/// random sparse couplings scaled down until certification succeeds, random
/// sine-plus-pulse disturbances and a random delay profile.
pub fn random_certified_spec(seed: u64) -> Result<(LinearNetworkSpec, Certificate)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents_n = rng.random_range(1..=8usize);
    let n = rng.random_range(1..=3usize);
    let entry = |rng: &mut ChaCha8Rng| rng.random_range(-1.0..1.0);
    let mut agents = Vec::with_capacity(agents_n);
    for _ in 0..agents_n {
        let mut a = DMatrix::from_fn(n, n, |_, _| 2.0 * entry(&mut rng));
        let shift = mu2(&a)? + rng.random_range(1.0..3.0);
        for k in 0..n {
            a[(k, k)] -= shift;
        }
        let disturbance = rng.random_bool(0.6).then(|| DisturbanceSpec {
            gain: from_matrix(&DMatrix::from_fn(n, rng.random_range(1..=n), |_, _| entry(&mut rng))),
            amplitude: rng.random_range(0.0..1.0),
            frequency: rng.random_range(0.2..3.0),
            phase: rng.random_range(0.0..6.0),
            pulse_amplitude: rng.random_range(-2.0..2.0),
            pulse_start: rng.random_range(0.0..10.0),
            pulse_duration: rng.random_range(0.2..3.0),
        });
        agents.push(LinearAgentSpec {
            a: from_matrix(&a),
            offset: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
            initial_error: Some((0..n).map(|_| rng.random_range(-2.0..2.0)).collect()),
            disturbance,
        });
    }
    let mut couplings = Vec::new();
    for i in 0..agents_n {
        for j in 0..agents_n {
            for delayed in [false, true] {
                if i != j && rng.random_bool(0.35) {
                    let w = DMatrix::from_fn(n, n, |_, _| entry(&mut rng));
                    couplings.push(LinearCouplingSpec { target: i, source: j, delayed, weight: from_matrix(&w) });
                }
            }
        }
    }
    let delay = [DelayProfile::Constant, DelayProfile::Sinusoidal, DelayProfile::Switching][rng.random_range(0..3)];
    let mut spec = LinearNetworkSpec {
        tau0: rng.random_range(0.1..1.0),
        delay,
        trajectory_amplitude: rng.random_range(0.0..2.0),
        trajectory_frequency: rng.random_range(0.1..1.5),
        agents,
        couplings,
    };
    for _ in 0..40 {
        match spec.certificate()? {
            Ok(cert) => return Ok((spec, cert)),
            Err(_) => {
                for c in &mut spec.couplings {
                    c.weight.iter_mut().flatten().for_each(|v| *v *= 0.7);
                }
            }
        }
    }
    Err(Error::NonConvergence { residual: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::check_condition_i;
    use crate::netmodel::{integrate, max_deviation};

    fn pair() -> LinearNetworkSpec {
        LinearNetworkSpec {
            tau0: 0.2,
            delay: DelayProfile::Constant,
            trajectory_amplitude: 1.0,
            trajectory_frequency: 0.5,
            agents: vec![
                LinearAgentSpec { a: vec![vec![-2.0]], offset: vec![1.0], initial_error: None, disturbance: None },
                LinearAgentSpec { a: vec![vec![-2.0]], offset: vec![-1.0], initial_error: Some(vec![0.5]), disturbance: None },
            ],
            couplings: vec![LinearCouplingSpec { target: 1, source: 0, delayed: true, weight: vec![vec![0.5]] }],
        }
    }

    #[test]
    fn desired_solution_is_invariant() {
        let mut spec = pair();
        spec.agents[1].initial_error = None;
        let sys = spec.build().unwrap();
        let dom = SampleDomain::uniform(&sys, -1.0, 1.0, (0.0, 5.0), 50, 0).unwrap();
        assert!(check_condition_i(&sys, &dom).passed);
        let tr = integrate(&sys, &spec.history(), 5.0, 0.01).unwrap();
        assert!(max_deviation(&tr, &sys).unwrap().peak() < 1e-9);
    }

    #[test]
    fn pair_certificate() {
        let cert = pair().certificate().unwrap().unwrap();
        // own block -2; delayed gain 0.5 (own delayed state) + 0.5 (source)
        assert!((cert.sigma_bar - 2.0).abs() < 1e-12);
        assert!((cert.sigma_under - 1.0).abs() < 1e-12);
        assert_eq!(pair().initial_sup(), 0.5);
    }

    #[test]
    fn delay_profiles_stay_below_bound() {
        for p in [DelayProfile::Constant, DelayProfile::Sinusoidal, DelayProfile::Switching] {
            let d = p.spec(0.4).unwrap();
            assert!((0..1000).map(|k| d.tau(k as f64 * 0.013)).all(|v| (0.2..=0.4).contains(&v)));
        }
    }

    #[test]
    fn random_specs_certify_and_round_trip() {
        for seed in 0..10 {
            let (spec, cert) = random_certified_spec(seed).unwrap();
            assert!(cert.sigma_under < cert.sigma_bar);
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<LinearNetworkSpec>(&json).unwrap(), spec);
        }
    }

    #[test]
    fn bad_shapes_rejected() {
        let mut spec = pair();
        spec.agents[0].a = vec![vec![1.0, 2.0]];
        assert!(spec.build().is_err());
        let mut spec = pair();
        spec.couplings[0].source = 7;
        assert!(spec.build().is_err());
    }
}

//! Fixed-step RK4 for the delayed closed loop.
//!
//! Delayed states at `s < 0` come straight from the history function; for
//! `s >= 0` they are cubic-Hermite interpolated from the accepted grid
//! points and the slopes stored with them.

use super::{NetworkSystem, Trace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct IntegrationOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Any state entry exceeding this magnitude counts as divergence.
    pub divergence_bound: f64,
    /// Return `Error::Divergence` instead of a truncated trace.
    pub stop_on_divergence: bool,
}

impl IntegrationOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self { dt, t_end, divergence_bound: f64::INFINITY, stop_on_divergence: true }
    }
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self::new(10.0, 1e-3)
    }
}

pub fn constant_history(x0: Vec<f64>) -> impl Fn(f64) -> Vec<f64> + Sync {
    move |_| x0.clone()
}

pub fn integrate(
    system: &NetworkSystem,
    history: &(dyn Fn(f64) -> Vec<f64> + Sync),
    t_end: f64,
    dt: f64,
) -> Result<Trace> {
    integrate_with(system, history, &IntegrationOptions::new(t_end, dt))
}

const GRID_EPS: f64 = 1e-9;

struct Store<'a> {
    dt: f64,
    dim: usize,
    tau0: f64,
    history: &'a (dyn Fn(f64) -> Vec<f64> + Sync),
    // grid points t = 0, dt, 2dt, ...
    states: Vec<f64>,
    slopes: Vec<f64>,
}

impl Store<'_> {
    fn accepted(&self) -> usize {
        self.states.len() / self.dim
    }

    fn point(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    fn slope(&self, k: usize) -> &[f64] {
        &self.slopes[k * self.dim..(k + 1) * self.dim]
    }

    fn lookup(&self, s: f64, out: &mut [f64]) -> Result<()> {
        if s < 0.0 {
            if s < -self.tau0 - 1e-12 * (1.0 + self.tau0) {
                return Err(Error::HistoryUnderflow { time: s, start: -self.tau0 });
            }
            out.copy_from_slice(&(self.history)(s));
            return Ok(());
        }
        let last = self.accepted() - 1;
        let u = s / self.dt;
        let mut k = u.floor() as usize;
        let mut theta = u - k as f64;
        if theta > 1.0 - GRID_EPS {
            k += 1;
            theta = 0.0;
        }
        if k >= last || theta < GRID_EPS {
            out.copy_from_slice(self.point(k.min(last)));
            return Ok(());
        }
        if self.slopes.len() < (k + 2) * self.dim {
            // slope of the newest point is not known yet: linear fallback
            let (a, b) = (self.point(k), self.point(k + 1));
            for i in 0..self.dim {
                out[i] = a[i] + theta * (b[i] - a[i]);
            }
            return Ok(());
        }
        let (t2, t3) = (theta * theta, theta * theta * theta);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let (xa, xb, fa, fb) = (self.point(k), self.point(k + 1), self.slope(k), self.slope(k + 1));
        for i in 0..self.dim {
            out[i] = h00 * xa[i] + h10 * self.dt * fa[i] + h01 * xb[i] + h11 * self.dt * fb[i];
        }
        Ok(())
    }
}

struct Stage<'a> {
    system: &'a NetworkSystem,
    delayed: Vec<f64>,
    scratch: super::RhsScratch,
    needs_delay: bool,
}

impl Stage<'_> {
    fn eval(&mut self, store: &Store, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let sys = self.system;
        let tau = sys.delay().tau(t);
        let leaders_now = sys.leader_states(t);
        let leaders_delayed = if tau == 0.0 { leaders_now.clone() } else { sys.leader_states(t - tau) };
        if self.needs_delay {
            if tau == 0.0 {
                self.delayed.copy_from_slice(x);
            } else {
                store.lookup(t - tau, &mut self.delayed)?;
            }
        }
        sys.rhs(t, x, &self.delayed, &leaders_now, &leaders_delayed, &mut self.scratch, out);
        Ok(())
    }
}

pub fn integrate_with(
    system: &NetworkSystem,
    history: &(dyn Fn(f64) -> Vec<f64> + Sync),
    opts: &IntegrationOptions,
) -> Result<Trace> {
    let dt = opts.dt;
    if !(dt > 0.0) || !dt.is_finite() || !(opts.t_end > 0.0) || !opts.t_end.is_finite() {
        return Err(Error::InvalidInput(format!("need dt > 0 and t_end > 0 (dt={dt}, t_end={})", opts.t_end)));
    }
    let dim = system.total_dim();
    let tau0 = system.delay().tau0();
    let steps = (opts.t_end / dt - GRID_EPS).ceil() as usize;
    let history_points = (tau0 / dt - GRID_EPS).ceil().max(0.0) as usize;
    let needs_delay = system.has_delayed_couplings();

    // delays must be zero or at least one step, and within the declared bound
    for k in 0..=2 * steps {
        let t = 0.5 * k as f64 * dt;
        let tau = system.delay().tau(t);
        if !(tau >= 0.0) || tau > tau0 + 1e-12 * (1.0 + tau0) {
            return Err(Error::InvalidInput(format!("delay {tau} at t = {t} is outside [0, {tau0}]")));
        }
        if needs_delay && tau > 0.0 && tau < dt * (1.0 - GRID_EPS) {
            return Err(Error::DelayShorterThanStep { time: t, tau, dt });
        }
    }

    let x0 = history(0.0);
    if x0.len() != dim {
        return Err(Error::DimensionMismatch(format!("history has length {}, state has {dim}", x0.len())));
    }
    let mut store = Store {
        dt,
        dim,
        tau0,
        history,
        states: Vec::with_capacity((steps + 1) * dim),
        slopes: Vec::with_capacity((steps + 1) * dim),
    };
    store.states.extend_from_slice(&x0);

    let mut stage = Stage { system, delayed: vec![0.0; dim], scratch: system.scratch(), needs_delay };
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut diverged_at = None;

    for n in 0..steps {
        let t = n as f64 * dt;
        let x: Vec<f64> = store.point(n).to_vec();
        stage.eval(&store, t, &x, &mut k1)?;
        store.slopes.extend_from_slice(&k1);

        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        stage.eval(&store, t + 0.5 * dt, &tmp, &mut k2)?;
        for i in 0..dim {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        stage.eval(&store, t + 0.5 * dt, &tmp, &mut k3)?;
        for i in 0..dim {
            tmp[i] = x[i] + dt * k3[i];
        }
        stage.eval(&store, t + dt, &tmp, &mut k4)?;
        for i in 0..dim {
            tmp[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = (n + 1) as f64 * dt;
        if tmp.iter().any(|v| !v.is_finite() || v.abs() > opts.divergence_bound) {
            if opts.stop_on_divergence {
                return Err(Error::Divergence { time: t_next });
            }
            diverged_at = Some(t_next);
            break;
        }
        store.states.extend_from_slice(&tmp);
    }
    // slope of the final point, for interpolation on the full range
    let last = store.accepted() - 1;
    if store.slopes.len() < store.states.len() {
        let x: Vec<f64> = store.point(last).to_vec();
        stage.eval(&store, last as f64 * dt, &x, &mut k1)?;
        store.slopes.extend_from_slice(&k1);
    }

    let mut states = Vec::with_capacity((history_points + store.accepted()) * dim);
    for k in (1..=history_points).rev() {
        let s = -(k as f64) * dt;
        // the grid may start slightly before -tau0; the history is clamped there
        states.extend_from_slice(&history(s.max(-tau0)));
    }
    states.extend_from_slice(&store.states);
    Ok(Trace::assemble(system, dt, history_points, states, store.slopes, diverged_at))
}

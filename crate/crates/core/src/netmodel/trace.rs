use std::io::Write;

use serde::{Deserialize, Serialize};

use super::NetworkSystem;
use crate::error::{Error, Result};

/// Dense record of one integration on a uniform grid that starts with the
/// history segment (`t < 0`).
#[derive(Debug, Clone)]
pub struct Trace {
    dt: f64,
    history_points: usize,
    dim: usize,
    block_dims: Vec<usize>,
    output_dims: Vec<usize>,
    states: Vec<f64>,
    // slopes exist for t >= 0 only
    slopes: Vec<f64>,
    outputs: Vec<f64>,
    diverged_at: Option<f64>,
}

impl Trace {
    pub(super) fn assemble(
        system: &NetworkSystem,
        dt: f64,
        history_points: usize,
        states: Vec<f64>,
        slopes: Vec<f64>,
        diverged_at: Option<f64>,
    ) -> Self {
        let dim = system.total_dim();
        let block_dims = system.block_dims();
        let output_dims: Vec<usize> = system.agents().iter().map(|a| a.output_dim()).collect();
        let npts = states.len() / dim;
        let mut outputs = Vec::with_capacity(npts * output_dims.iter().sum::<usize>());
        for k in 0..npts {
            let x = &states[k * dim..(k + 1) * dim];
            for (i, agent) in system.agents().iter().enumerate() {
                outputs.extend(agent.eval_output(&x[system.agent_range(i)]));
            }
        }
        Self { dt, history_points, dim, block_dims, output_dims, states, slopes, outputs, diverged_at }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Index of the grid point `t = 0`.
    pub fn zero_index(&self) -> usize {
        self.history_points
    }

    pub fn time(&self, k: usize) -> f64 {
        (k as f64 - self.history_points as f64) * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }

    pub fn final_time(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn state_dim(&self) -> usize {
        self.dim
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn num_agents(&self) -> usize {
        self.block_dims.len()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn output(&self, k: usize) -> &[f64] {
        let w: usize = self.output_dims.iter().sum();
        &self.outputs[k * w..(k + 1) * w]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn diverged_at(&self) -> Option<f64> {
        self.diverged_at
    }

    /// Hermite-interpolated state at `t` inside the integrated range `[0, final_time]`;
    /// grid points are returned exactly. Times before zero use linear interpolation
    /// of the stored history samples.
    pub fn lookup(&self, t: f64) -> Vec<f64> {
        let u = t / self.dt + self.history_points as f64;
        let last = self.len() - 1;
        let u = u.clamp(0.0, last as f64);
        let mut k = u.floor() as usize;
        let mut theta = u - k as f64;
        if theta > 1.0 - 1e-9 {
            k += 1;
            theta = 0.0;
        }
        if k >= last || theta < 1e-9 {
            return self.state(k.min(last)).to_vec();
        }
        let (xa, xb) = (self.state(k), self.state(k + 1));
        if k < self.history_points {
            return xa.iter().zip(xb).map(|(a, b)| a + theta * (b - a)).collect();
        }
        let j = k - self.history_points;
        let fa = &self.slopes[j * self.dim..(j + 1) * self.dim];
        let fb = &self.slopes[(j + 1) * self.dim..(j + 2) * self.dim];
        let (t2, t3) = (theta * theta, theta * theta * theta);
        let (h00, h10, h01, h11) = (2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + theta, -2.0 * t3 + 3.0 * t2, t3 - t2);
        (0..self.dim)
            .map(|i| h00 * xa[i] + h10 * self.dt * fa[i] + h01 * xb[i] + h11 * self.dt * fb[i])
            .collect()
    }
}

/// Per-agent Euclidean deviations on the grid points `t >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSeries {
    pub times: Vec<f64>,
    pub num_agents: usize,
    per_agent: Vec<f64>,
}

impl DeviationSeries {
    pub fn agent(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.per_agent.iter().skip(i).step_by(self.num_agents).copied()
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.per_agent[k * self.num_agents..(k + 1) * self.num_agents]
    }

    /// `max_i |.|` at every time.
    pub fn max_series(&self) -> Vec<f64> {
        (0..self.times.len()).map(|k| self.at(k).iter().copied().fold(0.0, f64::max)).collect()
    }

    pub fn peak(&self) -> f64 {
        self.per_agent.iter().copied().fold(0.0, f64::max)
    }

    pub fn agent_peak(&self, i: usize) -> f64 {
        self.agent(i).fold(0.0, f64::max)
    }
}

fn check_dims(trace: &Trace, system: &NetworkSystem) -> Result<()> {
    if trace.block_dims() != system.block_dims().as_slice() {
        return Err(Error::DimensionMismatch("trace and system have different agent dimensions".into()));
    }
    Ok(())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `|x_i(t) - x_i^d(t)|_2` for every agent and every `t >= 0`.
pub fn max_deviation(trace: &Trace, system: &NetworkSystem) -> Result<DeviationSeries> {
    check_dims(trace, system)?;
    let n = system.num_agents();
    let mut times = Vec::new();
    let mut per_agent = Vec::new();
    for k in trace.zero_index()..trace.len() {
        let t = trace.time(k);
        let xd = system.desired(t);
        let x = trace.state(k);
        times.push(t);
        for i in 0..n {
            let r = system.agent_range(i);
            per_agent.push(euclid(&x[r.clone()], &xd[r]));
        }
    }
    Ok(DeviationSeries { times, num_agents: n, per_agent })
}

/// `|g_i(x_i(t)) - g_i(x_i^d(t))|_2` for every agent and every `t >= 0`.
pub fn output_deviation(trace: &Trace, system: &NetworkSystem) -> Result<DeviationSeries> {
    check_dims(trace, system)?;
    let n = system.num_agents();
    let mut times = Vec::new();
    let mut per_agent = Vec::new();
    for k in trace.zero_index()..trace.len() {
        let t = trace.time(k);
        let xd = system.desired(t);
        let x = trace.state(k);
        times.push(t);
        for (i, agent) in system.agents().iter().enumerate() {
            let r = system.agent_range(i);
            per_agent.push(euclid(&agent.eval_output(&x[r.clone()]), &agent.eval_output(&xd[r])));
        }
    }
    Ok(DeviationSeries { times, num_agents: n, per_agent })
}

/// `max_i sup_{s in [-tau0, 0]} |x_i(s) - x_i^d(0)|_2` over the stored history grid.
pub fn initial_deviation_sup(trace: &Trace, system: &NetworkSystem) -> Result<f64> {
    check_dims(trace, system)?;
    let xd0 = system.desired(0.0);
    let dims = system.block_dims();
    let mut best: f64 = 0.0;
    for k in 0..=trace.zero_index() {
        let diff: Vec<f64> = trace.state(k).iter().zip(&xd0).map(|(a, b)| a - b).collect();
        best = best.max(crate::measures::max_separable_norm(&diff, &dims));
    }
    Ok(best)
}

/// Long-format CSV: `time,agent_id,x0..,y0..`; one row per agent and stored time.
/// Agents with fewer components than the widest one leave trailing cells empty.
pub fn write_trace_csv<W: Write>(trace: &Trace, writer: W, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let max_x = trace.block_dims.iter().copied().max().unwrap_or(0);
    let max_y = trace.output_dims.iter().copied().max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string(), "agent_id".to_string()];
    header.extend((0..max_x).map(|c| format!("x{c}")));
    header.extend((0..max_y).map(|c| format!("y{c}")));
    w.write_record(&header)?;
    let mut x_off = Vec::new();
    let mut y_off = Vec::new();
    let (mut xo, mut yo) = (0, 0);
    for (dx, dy) in trace.block_dims.iter().zip(&trace.output_dims) {
        x_off.push(xo);
        y_off.push(yo);
        xo += dx;
        yo += dy;
    }
    let zero = trace.zero_index();
    for k in (0..trace.len()).filter(|k| (*k as isize - zero as isize).rem_euclid(stride as isize) == 0) {
        let t = trace.time(k);
        let x = trace.state(k);
        let y = trace.output(k);
        for i in 0..trace.num_agents() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(format!("{t:.6}"));
            rec.push(i.to_string());
            let (dx, dy) = (trace.block_dims[i], trace.output_dims[i]);
            rec.extend((0..max_x).map(|c| if c < dx { format!("{:e}", x[x_off[i] + c]) } else { String::new() }));
            rec.extend((0..max_y).map(|c| if c < dy { format!("{:e}", y[y_off[i] + c]) } else { String::new() }));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// JSON sidecar written next to every exported trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub scenario_hash: String,
    pub dt: f64,
    pub tau0: f64,
    pub seed: u64,
    pub t_end: f64,
    pub num_agents: usize,
    pub diverged_at: Option<f64>,
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::dmatrix;

    use super::*;
    use crate::netmodel::{constant_history, integrate, Agent, DelaySpec, OutputMap};

    fn two_agents() -> NetworkSystem {
        let out = OutputMap { dim: 1, map: Arc::new(|x: &[f64]| vec![2.0 * x[0]]), lipschitz: Some(2.0) };
        NetworkSystem::new(
            vec![Agent::affine(dmatrix![-1.0], None), Agent::affine(dmatrix![-1.0], None).with_output(out)],
            vec![],
            vec![],
            DelaySpec::constant(0.5).unwrap(),
            Arc::new(|_| vec![0.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn max_over_agents() {
        let sys = two_agents();
        let tr = integrate(&sys, &constant_history(vec![1.0, 3.0]), 0.1, 0.01).unwrap();
        let dev = max_deviation(&tr, &sys).unwrap();
        assert_eq!(dev.at(0), &[1.0, 3.0]);
        assert_eq!(dev.max_series()[0], 3.0);
        let out = output_deviation(&tr, &sys).unwrap();
        assert_eq!(out.at(0), &[1.0, 6.0]);
        for k in 0..out.times.len() {
            assert!(out.at(k)[1] <= 2.0 * dev.at(k)[1] + 1e-15);
        }
        assert_eq!(initial_deviation_sup(&tr, &sys).unwrap(), 3.0);
        assert_eq!(tr.zero_index(), 50);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let sys = two_agents();
        let tr = integrate(&sys, &constant_history(vec![1.0, 3.0]), 0.05, 0.01).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&tr, &mut buf, 1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time,agent_id,x0,y0");
        assert_eq!(text.lines().count(), 1 + 2 * tr.len());
        assert!(text.contains("0.000000,1,3e0,6e0"));
    }
}

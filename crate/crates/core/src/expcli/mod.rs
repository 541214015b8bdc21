//! Experiment runner behind the `scalenet` binary: config parsing,
//! certification, simulation, sweeps and file export.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::*;

use crate::certify::{bound_envelope, Certificate, CertificateMode, Violation};
use crate::error::{Error, Result};
use crate::generic::{random_certified_spec, LinearNetworkSpec};
use crate::halanay::Envelope;
use crate::netmodel::{
    initial_deviation_sup, integrate_with, max_deviation, output_deviation, write_trace_csv, DeviationSeries,
    IntegrationOptions, NetworkSystem, RunMetadata, Trace,
};
use crate::neuralnet::{
    decaying_sine, hopfield_weight_sampler, prop4_certificate, read_weights_csv, ring_chords, solve_equilibrium,
    with_random_pulses, Activation, Amplification, CGNetwork, Decay, ScalarFn,
};
use crate::unicycle::{per_circle_max, scenario_certificate, CircleFormation, CircleScenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SCALENET_OUT";

/// Any state entry beyond this magnitude ends a simulation as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Slack allowed when checking a trace against its envelope.
pub const ENVELOPE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub max_deviation: f64,
    pub final_deviation: f64,
    pub max_output_deviation: f64,
    /// `circle`, `neuron` or `agent`.
    pub group_kind: String,
    /// Largest deviation within each group, in group order.
    pub group_max: Vec<f64>,
    pub initial_sup: f64,
    pub disturbance_sup: f64,
    /// `min_t envelope(t) - deviation(t)`; only for certified runs.
    pub envelope_margin_min: Option<f64>,
    pub envelope_dominated: Option<bool>,
    pub diverged_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub family: Family,
    pub scenario_hash: String,
    pub certified: bool,
    pub certificate: Option<Certificate>,
    pub violation: Option<Violation>,
    /// Set when the certificate rests on sampled rather than closed-form bounds.
    pub caveat: Option<String>,
    /// Common transform parameter of the robot certificate.
    pub alpha: Option<f64>,
    pub metrics: Option<Metrics>,
    pub files: Vec<String>,
}

impl RunReport {
    pub fn certify_exit_code(&self) -> i32 {
        if self.certified { EXIT_OK } else { EXIT_VIOLATION }
    }

    pub fn simulate_exit_code(&self) -> i32 {
        match &self.metrics {
            Some(m) if m.diverged_at.is_some() => EXIT_DIVERGED,
            _ => EXIT_OK,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// Points loaded from an earlier, interrupted sweep.
    pub resumed: usize,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for sweeps; rayon's default when absent.
    pub jobs: Option<usize>,
}

enum Groups {
    Circles(CircleFormation),
    Neurons,
    Agents,
}

/// Everything a run needs, built from a config.
struct Prepared {
    system: NetworkSystem,
    history: Box<dyn Fn(f64) -> Vec<f64> + Sync>,
    certificate: std::result::Result<Certificate, Violation>,
    alpha: Option<f64>,
    disturbance_sup: f64,
    /// Exact history deviation when the generic default would be wrong.
    initial_sup: Option<f64>,
    groups: Groups,
    perturbed: Vec<bool>,
}

fn activation(name: ActivationName) -> Activation {
    match name {
        ActivationName::Tanh => Activation::Tanh,
        ActivationName::Logistic => Activation::Logistic,
        ActivationName::Linear => Activation::Linear,
    }
}

fn read_weights(base: &Path, file: &Path, key: &str) -> Result<DMatrix<f64>> {
    let path = base.join(file);
    let f = File::open(&path).map_err(|e| Error::Config(format!("{key}: cannot open {}: {e}", path.display())))?;
    read_weights_csv(f).map_err(|e| Error::Config(format!("{key}: {e}")))
}

/// Builds the neural network of a `hopfield` or `cg` config.
pub fn build_neural(cfg: &ScenarioConfig, base: &Path) -> Result<CGNetwork> {
    let key = cfg.family.name();
    let n_cfg = cfg.neural().ok_or_else(|| Error::Config(format!("[{key}] table missing")))?;
    let b = if let Some(t) = n_cfg.topology {
        let TopologyConfig::RingChords { weight } = t;
        ring_chords(weight)
    } else if let Some(file) = &n_cfg.weights_file {
        read_weights(base, file, &format!("{key}.weights_file"))?
    } else {
        let s = n_cfg.sampler.expect("validated");
        let n = n_cfg.n_neurons.expect("validated");
        hopfield_weight_sampler(n, s.margin, s.seed.unwrap_or(cfg.seed))
            .map_err(|e| Error::Config(format!("{key}.sampler: {e}")))?
    };
    let n = b.nrows();
    if n_cfg.n_neurons.is_some_and(|m| m != n) {
        return Err(Error::Config(format!("{key}.n_neurons: weights have {n} neurons")));
    }
    let a = match &n_cfg.a_weights_file {
        Some(f) => read_weights(base, f, &format!("{key}.a_weights_file"))?,
        None => DMatrix::zeros(n, n),
    };
    let c = n_cfg.c.expand(n, &format!("{key}.c"))?;
    let inputs = match &n_cfg.inputs {
        None => vec![0.0; n],
        Some(InputsConfig::Values(v)) => v.expand(n, &format!("{key}.inputs"))?,
        Some(InputsConfig::Random { random_max, seed }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(cfg.seed));
            (0..n).map(|_| rng.random_range(0.0..=*random_max)).collect()
        }
    };
    let amplification = match n_cfg.amplification {
        None => Amplification::Unit,
        Some(AmplificationConfig { lower, upper }) => {
            let p: ScalarFn = Arc::new(move |x: f64| lower + (upper - lower) * 0.5 * (1.0 + x.tanh()));
            Amplification::Custom { p, lower, upper }
        }
    };
    let mut net = CGNetwork::new(
        vec![amplification; n],
        c.into_iter().map(Decay::Linear).collect(),
        a,
        b,
        vec![activation(n_cfg.activation); n],
        vec![activation(n_cfg.delayed_activation); n],
        inputs,
        n_cfg.tau0,
    )
    .map_err(|e| Error::Config(format!("[{key}]: {e}")))?;
    for (k, d) in n_cfg.disturbances.iter().enumerate() {
        match d {
            NeuronDisturbanceConfig::Pulses { count, starts, duration, max_amplitude, seed } => {
                net = with_random_pulses(net, *count, starts, *duration, *max_amplitude, seed.unwrap_or(cfg.seed));
            }
            NeuronDisturbanceConfig::Sine { neurons, amplitude, decay } => {
                for &i in neurons {
                    if i >= n {
                        return Err(Error::Config(format!("{key}.disturbances[{k}].neurons: neuron {i} does not exist")));
                    }
                    net = net.with_disturbance(i, decaying_sine(*amplitude, *decay));
                }
            }
        }
    }
    Ok(net)
}

/// Builds the robot scenario of a `unicycle` config.
pub fn build_unicycle(cfg: &ScenarioConfig) -> Result<CircleScenario> {
    let u = cfg.unicycle.as_ref().ok_or_else(|| Error::Config("[unicycle] table missing".into()))?;
    Ok(CircleScenario {
        formation: CircleFormation::new(u.circles, u.spacing, u.adjacency_mode)
            .map_err(|e| Error::Config(format!("unicycle: {e}")))?,
        gains: u.gains.to_gains(),
        params: u.robot().map_err(|e| Error::Config(format!("unicycle.robot: {e}")))?,
        tau: u.tau0,
        leader: u.leader(),
        disturbance: u.disturbance(),
    })
}

/// The explicit or randomly drawn network of a `generic` config.
pub fn build_generic(cfg: &ScenarioConfig) -> Result<LinearNetworkSpec> {
    let g = cfg.generic.as_ref().ok_or_else(|| Error::Config("[generic] table missing".into()))?;
    match (&g.network, g.random_seed) {
        (Some(n), _) => Ok(n.clone()),
        (None, Some(seed)) => Ok(random_certified_spec(seed)?.0),
        (None, None) => Err(Error::Config("generic: exactly one of random_seed, network is required".into())),
    }
}

fn grid(t_end: f64) -> impl Iterator<Item = f64> {
    let steps = (t_end / 1e-3).ceil().max(1.0) as usize;
    (0..=steps).map(move |k| t_end * k as f64 / steps as f64)
}

/// Certificate only, without building anything expensive.
fn certificate_of(cfg: &ScenarioConfig, base: &Path) -> Result<(std::result::Result<Certificate, Violation>, Option<f64>)> {
    Ok(match cfg.family {
        Family::Unicycle => match scenario_certificate(&build_unicycle(cfg)?) {
            Ok(rc) => (Ok(rc.certificate), Some(rc.alpha)),
            Err(v) => (Err(v), None),
        },
        Family::Hopfield | Family::Cg => (prop4_certificate(&build_neural(cfg, base)?), None),
        Family::Generic => (build_generic(cfg)?.certificate()?, None),
    })
}

fn prepare(cfg: &ScenarioConfig, base: &Path) -> Result<Prepared> {
    let t_end = cfg.t_end();
    match cfg.family {
        Family::Unicycle => {
            let sc = build_unicycle(cfg)?;
            let system = sc.build()?;
            let x0 = system.desired(0.0);
            let (certificate, alpha) = match scenario_certificate(&sc) {
                Ok(rc) => (Ok(rc.certificate), Some(rc.alpha)),
                Err(v) => (Err(v), None),
            };
            let mut perturbed = vec![false; sc.formation.num_robots()];
            if let Some(d) = sc.disturbance {
                perturbed[d.target] = true;
            }
            Ok(Prepared {
                history: Box::new(move |_| x0.clone()),
                system,
                certificate,
                alpha,
                disturbance_sup: sc.disturbance_sup(t_end),
                initial_sup: None,
                groups: Groups::Circles(sc.formation.clone()),
                perturbed,
            })
        }
        Family::Hopfield | Family::Cg => {
            let net = build_neural(cfg, base)?;
            let eq = solve_equilibrium(&net)?;
            let system = net.to_system(&eq.x_star)?;
            let offset = cfg.neural().map_or(0.0, |n| n.initial_offset);
            let x0: Vec<f64> = eq.x_star.iter().map(|v| v + offset).collect();
            Ok(Prepared {
                history: Box::new(move |_| x0.clone()),
                system,
                certificate: prop4_certificate(&net),
                alpha: None,
                disturbance_sup: net.disturbance_sup(grid(t_end)),
                initial_sup: None,
                groups: Groups::Neurons,
                perturbed: net.disturbances.iter().map(Option::is_some).collect(),
            })
        }
        Family::Generic => {
            let spec = build_generic(cfg)?;
            let system = spec.build()?;
            let certificate = spec.certificate()?;
            let disturbance_sup = system.disturbance_sup(grid(t_end));
            let perturbed = spec.agents.iter().map(|a| a.disturbance.is_some()).collect();
            let initial_sup = Some(spec.initial_sup());
            let spec = Arc::new(spec);
            Ok(Prepared {
                history: Box::new(move |s| spec.history()(s)),
                system,
                certificate,
                alpha: None,
                disturbance_sup,
                initial_sup,
                groups: Groups::Agents,
                perturbed,
            })
        }
    }
}

fn caveat(cert: &std::result::Result<Certificate, Violation>) -> Option<String> {
    match cert {
        Ok(c) if c.mode == CertificateMode::Sampled => {
            Some("sampled certificate: conditions checked on sampled points only".into())
        }
        _ => None,
    }
}

/// Writes through a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

#[derive(Serialize)]
struct CertificateFile<'a> {
    certified: bool,
    certificate: Option<&'a Certificate>,
    violation: Option<&'a Violation>,
    caveat: Option<&'a str>,
    alpha: Option<f64>,
}

fn write_certificate(dir: &Path, report: &RunReport) -> Result<()> {
    write_json(
        &dir.join("certificate.json"),
        &CertificateFile {
            certified: report.certified,
            certificate: report.certificate.as_ref(),
            violation: report.violation.as_ref(),
            caveat: report.caveat.as_deref(),
            alpha: report.alpha,
        },
    )
}

/// `certify <config>`: certificate.json only, no simulation.
pub fn cmd_certify(loaded: &LoadedConfig, opts: &RunOptions) -> Result<RunReport> {
    let cfg = &loaded.config;
    let (cert, alpha) = certificate_of(cfg, &loaded.base_dir)?;
    let report = RunReport {
        family: cfg.family,
        scenario_hash: cfg.hash(),
        certified: cert.is_ok(),
        caveat: caveat(&cert),
        certificate: cert.as_ref().ok().cloned(),
        violation: cert.err(),
        alpha,
        metrics: None,
        files: vec!["certificate.json".into()],
    };
    write_certificate(&opts.out_dir, &report)?;
    Ok(report)
}

fn group_max(groups: &Groups, dev: &DeviationSeries) -> (String, Vec<f64>) {
    match groups {
        Groups::Circles(f) => ("circle".into(), per_circle_max(dev, f)),
        Groups::Neurons => ("neuron".into(), (0..dev.num_agents).map(|i| dev.agent_peak(i)).collect()),
        Groups::Agents => ("agent".into(), (0..dev.num_agents).map(|i| dev.agent_peak(i)).collect()),
    }
}

fn group_of(groups: &Groups, agent: usize) -> usize {
    match groups {
        Groups::Circles(f) => f.circle_of(agent),
        Groups::Neurons | Groups::Agents => agent,
    }
}

fn default_stride(cfg: &ScenarioConfig) -> usize {
    cfg.trace_stride.unwrap_or_else(|| ((0.01 / cfg.dt()).round() as usize).max(1))
}

fn write_outputs(
    dir: &Path,
    cfg: &ScenarioConfig,
    p: &Prepared,
    trace: &Trace,
    dev: &DeviationSeries,
    envelope: Option<&Envelope>,
) -> Result<Vec<String>> {
    let stride = default_stride(cfg);
    let mut files = vec!["trace.csv".to_string(), "deviation.csv".to_string()];
    write_atomic(&dir.join("trace.csv"), |w| write_trace_csv(trace, w, stride))?;
    write_atomic(&dir.join("deviation.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time", "agent_id", "group", "perturbed", "deviation"])?;
        for k in (0..dev.times.len()).step_by(stride) {
            let t = format!("{:.6}", dev.times[k]);
            for (i, d) in dev.at(k).iter().enumerate() {
                let g = group_of(&p.groups, i).to_string();
                let pert = if p.perturbed.get(i).copied().unwrap_or(false) { "1" } else { "0" };
                out.write_record([t.as_str(), &i.to_string(), &g, pert, &format!("{d:e}")])?;
            }
        }
        out.flush()?;
        Ok(())
    })?;
    if let Some(env) = envelope {
        files.push("envelope.csv".into());
        let series = dev.max_series();
        write_atomic(&dir.join("envelope.csv"), |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["time", "max_deviation", "envelope"])?;
            for k in (0..dev.times.len()).step_by(stride) {
                let t = dev.times[k];
                out.write_record([format!("{t:.6}"), format!("{:e}", series[k]), format!("{:e}", env.eval(t))])?;
            }
            out.flush()?;
            Ok(())
        })?;
    }
    Ok(files)
}

/// Integrates the scenario and writes trace.csv, deviation.csv,
/// certificate.json, envelope.csv (certified runs), run.json and, last,
/// metrics.json.
pub fn cmd_simulate(loaded: &LoadedConfig, opts: &RunOptions) -> Result<RunReport> {
    let cfg = &loaded.config;
    let p = prepare(cfg, &loaded.base_dir)?;
    let io = IntegrationOptions {
        dt: cfg.dt(),
        t_end: cfg.t_end(),
        divergence_bound: DIVERGENCE_BOUND,
        stop_on_divergence: false,
    };
    let trace = integrate_with(&p.system, &*p.history, &io)?;
    let dev = max_deviation(&trace, &p.system)?;
    let out_dev = output_deviation(&trace, &p.system)?;
    let initial_sup = match p.initial_sup {
        Some(v) => v,
        None => initial_deviation_sup(&trace, &p.system)?,
    };
    let series = dev.max_series();
    let envelope = p.certificate.as_ref().ok().map(|c| bound_envelope(c, initial_sup, p.disturbance_sup));
    let margin = envelope.as_ref().map(|env| {
        dev.times.iter().zip(&series).map(|(t, d)| env.eval(*t) - d).fold(f64::INFINITY, f64::min)
    });
    let (group_kind, group_max) = group_max(&p.groups, &dev);
    let metrics = Metrics {
        max_deviation: dev.peak(),
        final_deviation: series.last().copied().unwrap_or(0.0),
        max_output_deviation: out_dev.peak(),
        group_kind,
        group_max,
        initial_sup,
        disturbance_sup: p.disturbance_sup,
        envelope_margin_min: margin,
        envelope_dominated: margin.map(|m| m >= -ENVELOPE_TOLERANCE),
        diverged_at: trace.diverged_at(),
    };
    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut files = write_outputs(dir, cfg, &p, &trace, &dev, envelope.as_ref())?;
    let mut report = RunReport {
        family: cfg.family,
        scenario_hash: cfg.hash(),
        certified: p.certificate.is_ok(),
        caveat: caveat(&p.certificate),
        certificate: p.certificate.as_ref().ok().cloned(),
        violation: p.certificate.as_ref().err().cloned(),
        alpha: p.alpha,
        metrics: Some(metrics),
        files: Vec::new(),
    };
    write_certificate(dir, &report)?;
    let meta = RunMetadata {
        scenario_hash: report.scenario_hash.clone(),
        dt: io.dt,
        tau0: p.system.delay().tau0(),
        seed: cfg.seed,
        t_end: io.t_end,
        num_agents: p.system.num_agents(),
        diverged_at: trace.diverged_at(),
    };
    write_json(&dir.join("run.json"), &meta)?;
    files.extend(["certificate.json".to_string(), "run.json".to_string(), "metrics.json".to_string()]);
    report.files = files;
    write_json(&dir.join("metrics.json"), &report)?;
    Ok(report)
}

fn point_dir(out: &Path, axis: SweepAxis, value: f64) -> PathBuf {
    out.join("points").join(format!("{}={value}", axis.name()))
}

fn load_finished(dir: &Path, hash: &str) -> Option<RunReport> {
    let text = std::fs::read_to_string(dir.join("metrics.json")).ok()?;
    let report: RunReport = serde_json::from_str(&text).ok()?;
    (report.scenario_hash == hash).then_some(report)
}

/// Runs every sweep point (in parallel, skipping points already finished
/// with the same config) and writes sweep.csv.
pub fn cmd_sweep(loaded: &LoadedConfig, opts: &RunOptions, progress: &(dyn Fn(&str) + Sync)) -> Result<SweepReport> {
    let cfg = &loaded.config;
    let sweep = cfg.sweep.as_ref().ok_or_else(|| Error::Config("sweep: table missing".into()))?;
    if sweep.values.is_empty() {
        return Err(Error::Config("sweep.values: must not be empty".into()));
    }
    let points = sweep
        .values
        .iter()
        .map(|&v| cfg.at_sweep_value(sweep.axis, v).map(|c| (v, c)))
        .collect::<Result<Vec<_>>>()?;
    let run_point = |(value, pcfg): &(f64, ScenarioConfig)| -> Result<(SweepRow, bool)> {
        let dir = point_dir(&opts.out_dir, sweep.axis, *value);
        if let Some(report) = load_finished(&dir, &pcfg.hash()) {
            progress(&format!("{}={value}: already done", sweep.axis.name()));
            return Ok((SweepRow { value: *value, report }, true));
        }
        let point = LoadedConfig { config: pcfg.clone(), base_dir: loaded.base_dir.clone() };
        let report = cmd_simulate(&point, &RunOptions { out_dir: dir, jobs: None })?;
        progress(&format!("{}={value}: max deviation {:.6e}", sweep.axis.name(), report.metrics.as_ref().map_or(f64::NAN, |m| m.max_deviation)));
        Ok((SweepRow { value: *value, report }, false))
    };
    let results: Vec<Result<(SweepRow, bool)>> = match opts.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .install(|| points.par_iter().map(run_point).collect()),
        None => points.par_iter().map(run_point).collect(),
    };
    let mut rows = Vec::with_capacity(results.len());
    let mut resumed = 0;
    for r in results {
        let (row, was_done) = r?;
        resumed += usize::from(was_done);
        rows.push(row);
    }
    let report = SweepReport { axis: sweep.axis, rows, resumed };
    write_atomic(&opts.out_dir.join("sweep.csv"), |w| write_sweep_csv(&report, w))?;
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// One row per sweep value; `group_k` columns hold per-group maxima.
pub fn write_sweep_csv(report: &SweepReport, w: &mut dyn Write) -> Result<()> {
    let groups = report.rows.iter().filter_map(|r| r.report.metrics.as_ref()).map(|m| m.group_max.len()).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "axis",
        "value",
        "certified",
        "violated_condition",
        "lambda_hat",
        "sigma_bar",
        "sigma_under",
        "max_deviation",
        "final_deviation",
        "envelope_margin_min",
        "diverged_at",
        "group_kind",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=groups).map(|k| format!("group_{k}")));
    out.write_record(&header)?;
    for row in &report.rows {
        let r = &row.report;
        let c = r.certificate.as_ref();
        let m = r.metrics.as_ref();
        let mut rec = vec![
            report.axis.name().to_string(),
            format!("{}", row.value),
            r.certified.to_string(),
            r.violation.as_ref().map(|v| v.condition.label().to_string()).unwrap_or_default(),
            opt(c.map(|c| c.lambda_hat)),
            opt(c.map(|c| c.sigma_bar)),
            opt(c.map(|c| c.sigma_under)),
            opt(m.map(|m| m.max_deviation)),
            opt(m.map(|m| m.final_deviation)),
            opt(m.and_then(|m| m.envelope_margin_min)),
            opt(m.and_then(|m| m.diverged_at)),
            m.map(|m| m.group_kind.clone()).unwrap_or_default(),
        ];
        let gm = m.map(|m| m.group_max.as_slice()).unwrap_or(&[]);
        rec.extend((0..groups).map(|k| gm.get(k).map(|v| format!("{v:e}")).unwrap_or_default()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// `--out`, then the config's `output_dir`, then the environment, then `scalenet-out`.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: &ScenarioConfig, env: Option<&str>) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("scalenet-out"))
}

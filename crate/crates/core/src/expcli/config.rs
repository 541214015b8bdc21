use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generic::LinearNetworkSpec;
use crate::unicycle::{AdjacencyMode, FormationGains, LeaderReference, RobotDisturbance, RobotParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Unicycle,
    Hopfield,
    Cg,
    Generic,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Unicycle => "unicycle",
            Family::Hopfield => "hopfield",
            Family::Cg => "cg",
            Family::Generic => "generic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Keep every n-th grid point in trace.csv.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unicycle: Option<UnicycleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hopfield: Option<NeuralConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cg: Option<NeuralConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generic: Option<GenericConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainValue {
    Scalar(f64),
    Diagonal([f64; 2]),
}

impl GainValue {
    fn diag(self) -> [f64; 2] {
        match self {
            GainValue::Scalar(v) => [v; 2],
            GainValue::Diagonal(d) => d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub kp: GainValue,
    pub kpl: GainValue,
    pub kvl: GainValue,
}

impl GainsConfig {
    pub fn to_gains(self) -> FormationGains {
        FormationGains { kp: self.kp.diag(), kpl: self.kpl.diag(), kvl: self.kvl.diag() }
    }
}

impl Default for GainsConfig {
    fn default() -> Self {
        let g = FormationGains::scalable();
        Self { kp: GainValue::Scalar(g.kp[0]), kpl: GainValue::Scalar(g.kpl[0]), kvl: GainValue::Scalar(g.kvl[0]) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    #[serde(default)]
    pub target: usize,
    pub amplitude: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderConfig {
    pub radius: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub m: f64,
    pub inertia: f64,
    pub l: f64,
}

fn default_spacing() -> f64 {
    1.0
}

fn default_adjacency() -> AdjacencyMode {
    AdjacencyMode::IntraInter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnicycleConfig {
    pub circles: usize,
    #[serde(default = "default_adjacency")]
    pub adjacency_mode: AdjacencyMode,
    #[serde(default)]
    pub gains: GainsConfig,
    pub tau0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<LeaderConfig>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<RobotConfig>,
}

impl UnicycleConfig {
    pub fn leader(&self) -> LeaderReference {
        self.leader.map_or_else(LeaderReference::default, |l| LeaderReference { radius: l.radius, speed: l.speed })
    }

    pub fn robot(&self) -> Result<RobotParams> {
        match self.robot {
            Some(r) => RobotParams::new(r.m, r.inertia, r.l),
            None => Ok(RobotParams::default()),
        }
    }

    pub fn disturbance(&self) -> Option<RobotDisturbance> {
        self.disturbance.map(|d| RobotDisturbance { target: d.target, amplitude: d.amplitude, decay: d.decay })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    pub fn expand(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrList::Scalar(v) => Ok(vec![*v; n]),
            ScalarOrList::List(v) if v.len() == n => Ok(v.clone()),
            ScalarOrList::List(v) => Err(Error::Config(format!("{what} has {} entries, expected {n}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    RingChords { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputsConfig {
    Values(ScalarOrList),
    Random { random_max: f64, #[serde(default)] seed: Option<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NeuronDisturbanceConfig {
    /// `count` random neurons receive pulses of amplitude `U[0, max_amplitude]`.
    Pulses {
        count: usize,
        starts: Vec<f64>,
        duration: f64,
        max_amplitude: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// `amplitude sin(t) e^{-decay t}` on the listed neurons.
    Sine { neurons: Vec<usize>, amplitude: f64, decay: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Tanh,
    Logistic,
    Linear,
}

fn tanh_name() -> ActivationName {
    ActivationName::Tanh
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplificationConfig {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuralConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_neurons: Option<usize>,
    pub c: ScalarOrList,
    /// Delayed weights, dense CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<PathBuf>,
    /// Delay-free weights, dense CSV; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_weights_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyConfig>,
    pub tau0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<InputsConfig>,
    #[serde(default)]
    pub disturbances: Vec<NeuronDisturbanceConfig>,
    #[serde(default = "tanh_name")]
    pub activation: ActivationName,
    #[serde(default = "tanh_name")]
    pub delayed_activation: ActivationName,
    /// `p(x) = lower + (upper - lower)(1 + tanh x) / 2`; family `cg` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplification: Option<AmplificationConfig>,
    /// History is `x* + initial_offset` on every neuron.
    #[serde(default)]
    pub initial_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericConfig {
    /// Draw a random certified network with this seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<LinearNetworkSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Circles,
    Tau0,
    GainScale,
    Neurons,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Circles => "circles",
            SweepAxis::Tau0 => "tau0",
            SweepAxis::GainScale => "gain_scale",
            SweepAxis::Neurons => "neurons",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// A parsed config together with the directory relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    /// JSON when the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = Self::parse(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir })
    }

    pub fn validate(&self) -> Result<()> {
        let present = [
            (Family::Unicycle, self.unicycle.is_some()),
            (Family::Hopfield, self.hopfield.is_some()),
            (Family::Cg, self.cg.is_some()),
            (Family::Generic, self.generic.is_some()),
        ];
        for (fam, has) in present {
            if fam == self.family && !has {
                return Err(Error::Config(format!("family = \"{0}\" needs a [{0}] table", fam.name())));
            }
            if fam != self.family && has {
                return Err(Error::Config(format!("[{}] is not allowed with family = \"{}\"", fam.name(), self.family.name())));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::Config(format!("dt: {dt} must be positive")));
            }
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Config(format!("t_end: {t} must be positive")));
            }
        }
        if self.trace_stride == Some(0) {
            return Err(Error::Config("trace_stride: must be at least 1".into()));
        }
        if let Some(u) = &self.unicycle {
            if u.circles == 0 {
                return Err(Error::Config("unicycle.circles: must be at least 1".into()));
            }
            if !(u.tau0 >= 0.0) {
                return Err(Error::Config("unicycle.tau0: must be non-negative".into()));
            }
        }
        for (key, n) in [("hopfield", &self.hopfield), ("cg", &self.cg)] {
            let Some(n) = n else { continue };
            let sources = [n.weights_file.is_some(), n.sampler.is_some(), n.topology.is_some()];
            if sources.iter().filter(|s| **s).count() != 1 {
                return Err(Error::Config(format!("{key}: exactly one of weights_file, sampler, topology is required")));
            }
            if n.sampler.is_some() && n.n_neurons.is_none() {
                return Err(Error::Config(format!("{key}.n_neurons: required with a sampler")));
            }
            if key == "hopfield" && n.amplification.is_some() {
                return Err(Error::Config("hopfield.amplification: not allowed, use family = \"cg\"".into()));
            }
            if !(n.tau0 >= 0.0) {
                return Err(Error::Config(format!("{key}.tau0: must be non-negative")));
            }
        }
        if let Some(g) = &self.generic {
            if g.random_seed.is_some() == g.network.is_some() {
                return Err(Error::Config("generic: exactly one of random_seed, network is required".into()));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep.values: must not be empty".into()));
            }
            let ok = match s.axis {
                SweepAxis::Circles => self.family == Family::Unicycle,
                SweepAxis::Tau0 => self.family != Family::Generic || self.generic.as_ref().is_some_and(|g| g.network.is_some()),
                SweepAxis::GainScale => true,
                SweepAxis::Neurons => {
                    matches!(self.family, Family::Hopfield | Family::Cg)
                        && self.neural().is_some_and(|n| n.sampler.is_some())
                }
            };
            if !ok {
                return Err(Error::Config(format!("sweep.axis: '{}' does not apply to this scenario", s.axis.name())));
            }
        }
        Ok(())
    }

    pub fn neural(&self) -> Option<&NeuralConfig> {
        self.hopfield.as_ref().or(self.cg.as_ref())
    }

    pub fn neural_mut(&mut self) -> Option<&mut NeuralConfig> {
        self.hopfield.as_mut().or(self.cg.as_mut())
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(1e-3)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end.unwrap_or(match self.family {
            Family::Unicycle => 40.0,
            Family::Hopfield | Family::Cg => 30.0,
            Family::Generic => 20.0,
        })
    }

    pub fn tau0(&self) -> Option<f64> {
        match self.family {
            Family::Unicycle => self.unicycle.as_ref().map(|u| u.tau0),
            Family::Hopfield | Family::Cg => self.neural().map(|n| n.tau0),
            Family::Generic => self.generic.as_ref().and_then(|g| g.network.as_ref()).map(|n| n.tau0),
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The config of one sweep point; the sweep table is dropped.
    pub fn at_sweep_value(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        c.sweep = None;
        let bad = |what: &str| Error::Config(format!("sweep.values: {value} is not a valid {what}"));
        match axis {
            SweepAxis::Circles => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(bad("circle count"));
                }
                c.unicycle.as_mut().expect("validated").circles = value as usize;
            }
            SweepAxis::Tau0 => {
                if !(value >= 0.0) {
                    return Err(bad("delay"));
                }
                match c.family {
                    Family::Unicycle => c.unicycle.as_mut().expect("validated").tau0 = value,
                    Family::Hopfield | Family::Cg => c.neural_mut().expect("validated").tau0 = value,
                    Family::Generic => c.generic.as_mut().and_then(|g| g.network.as_mut()).expect("validated").tau0 = value,
                }
            }
            SweepAxis::GainScale => {
                if !value.is_finite() {
                    return Err(bad("scale"));
                }
                match c.family {
                    Family::Unicycle => {
                        let g = &mut c.unicycle.as_mut().expect("validated").gains;
                        let s = g.to_gains().scale_kp(value);
                        g.kp = GainValue::Diagonal(s.kp);
                    }
                    Family::Hopfield | Family::Cg => {
                        let n = c.neural_mut().expect("validated");
                        match (&mut n.sampler, &mut n.topology) {
                            (Some(s), _) => s.margin *= value,
                            (_, Some(TopologyConfig::RingChords { weight })) => *weight *= value,
                            _ => return Err(Error::Config("sweep.axis: gain_scale needs sampled or topology weights".into())),
                        }
                    }
                    Family::Generic => {
                        let g = c.generic.as_mut().expect("validated");
                        let net = g.network.as_mut().ok_or_else(|| Error::Config("sweep.axis: gain_scale needs an explicit generic network".into()))?;
                        net.couplings.iter_mut().flat_map(|k| k.weight.iter_mut().flatten()).for_each(|w| *w *= value);
                    }
                }
            }
            SweepAxis::Neurons => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(bad("neuron count"));
                }
                c.neural_mut().expect("validated").n_neurons = Some(value as usize);
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROBOT: &str = r#"
family = "unicycle"
dt = 0.01
t_end = 5.0

[unicycle]
circles = 2
tau0 = 0.1
gains = { kp = 0.035, kpl = 0.7, kvl = [1.0, 1.0] }
disturbance = { target = 0, amplitude = 2.0, decay = 0.2 }
"#;

    #[test]
    fn toml_and_json_agree() {
        let a = ScenarioConfig::parse(ROBOT).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let b = ScenarioConfig::parse(&json).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.unicycle.as_ref().unwrap().gains.to_gains(), FormationGains::scalable());
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let err = ScenarioConfig::parse(&ROBOT.replace("circles = 2", "circles = 2\ncircels = 3")).unwrap_err();
        assert!(err.to_string().contains("circels"), "{err}");
        assert!(ScenarioConfig::parse(&ROBOT.replace("family = \"unicycle\"", "family = \"hopfield\"")).is_err());
        assert!(ScenarioConfig::parse("family = \"generic\"\n[generic]\n").is_err());
    }

    #[test]
    fn sweep_points() {
        let mut c = ScenarioConfig::parse(ROBOT).unwrap();
        c.sweep = Some(SweepConfig { axis: SweepAxis::Circles, values: vec![3.0] });
        c.validate().unwrap();
        let p = c.at_sweep_value(SweepAxis::Circles, 3.0).unwrap();
        assert_eq!(p.unicycle.unwrap().circles, 3);
        assert!(c.at_sweep_value(SweepAxis::Circles, 2.5).is_err());
        let p = c.at_sweep_value(SweepAxis::GainScale, 20.0).unwrap();
        assert!((p.unicycle.unwrap().gains.to_gains().kp[0] - 0.7).abs() < 1e-12);
        c.sweep = Some(SweepConfig { axis: SweepAxis::Neurons, values: vec![3.0] });
        assert!(c.validate().is_err());
        c.sweep = Some(SweepConfig { axis: SweepAxis::Tau0, values: vec![] });
        assert!(c.validate().is_err());
    }
}

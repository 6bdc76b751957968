//! Experiment configuration files (TOML).
//!
//! A file names an `experiment` and overrides any of the defaults that
//! experiment starts from; `docs/config.md` lists every key. Parsing merges
//! the file over the defaults, so the resolved configuration is always
//! complete and serializes back to an equivalent file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use sbs_core::ipf::{EarlyStop, IpfConfig, StopRule};
use sbs_core::kernels::{BackwardDrift, EmKernel, TwistMode};
use sbs_core::policy::{PolicyMode, DEFAULT_RIDGE};
use sbs_core::ssb::{BridgeSet, Resample, SsbConfig, WarmStart};
use sbs_core::targets::Schedule;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    LqgTwoMarginal,
    LqgSsb,
    LqgHighdim,
    OtBrownian,
    FlowTransport,
    PfCompare,
    Logistic,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::LqgTwoMarginal,
        ExperimentId::LqgSsb,
        ExperimentId::LqgHighdim,
        ExperimentId::OtBrownian,
        ExperimentId::FlowTransport,
        ExperimentId::PfCompare,
        ExperimentId::Logistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::LqgTwoMarginal => "lqg-two-marginal",
            ExperimentId::LqgSsb => "lqg-ssb",
            ExperimentId::LqgHighdim => "lqg-highdim",
            ExperimentId::OtBrownian => "ot-brownian",
            ExperimentId::FlowTransport => "flow-transport",
            ExperimentId::PfCompare => "pf-compare",
            ExperimentId::Logistic => "logistic",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::LqgTwoMarginal => "exact and particle IPF between the prior and posterior of a Gaussian model",
            ExperimentId::LqgSsb => "sequential bridge sampler against plain SMC on the Gaussian annealing path",
            ExperimentId::LqgHighdim => "Gaussian annealing in high dimension with diagonal policies and MALA rejuvenation",
            ExperimentId::OtBrownian => "W2 upper bound from the endpoint coupling of a Brownian-reference bridge",
            ExperimentId::FlowTransport => "kinetic energy of the exact Gaussian flow and of learned bridge policies",
            ExperimentId::PfCompare => "Kalman filter, bootstrap particle filter and bridge particle filter",
            ExperimentId::Logistic => "Bayesian logistic regression on the Cleveland heart data",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }
    };
}

string_enum!(ScheduleKind { Linear => "linear", Quadratic => "quadratic" });
string_enum!(ReferenceKind { Langevin => "langevin", Brownian => "brownian" });
string_enum!(BackwardKind { Target => "target", Zero => "zero" });
string_enum!(TwistKind { Exact => "exact", Taylor1 => "taylor1", Taylor2 => "taylor2" });
string_enum!(PolicyKind { Full => "full", Diagonal => "diagonal" });
string_enum!(WarmKind { None => "none", Copy => "copy", Extrapolate => "extrapolate" });
string_enum!(StopKind { Fixed => "fixed", Early => "early", Ess => "ess" });

impl TwistKind {
    pub fn mode(self) -> TwistMode {
        match self {
            TwistKind::Exact => TwistMode::Exact,
            TwistKind::Taylor1 => TwistMode::Taylor1,
            TwistKind::Taylor2 => TwistMode::Taylor2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TwistKind::Exact => "exact",
            TwistKind::Taylor1 => "taylor1",
            TwistKind::Taylor2 => "taylor2",
        }
    }
}

/// Values written as strings: `every`, `adaptive:0.5`, `0,10,40`.
macro_rules! via_string {
    ($name:ident) => {
        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }
        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// The bridge set `K`.
#[derive(Debug, Clone, PartialEq)]
pub enum BridgeSpec {
    Every,
    Adaptive(f64),
    Fixed(Vec<usize>),
}

impl fmt::Display for BridgeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BridgeSpec::Every => f.write_str("every"),
            BridgeSpec::Adaptive(x) => write!(f, "adaptive:{x}"),
            BridgeSpec::Fixed(k) => f.write_str(&k.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")),
        }
    }
}

impl FromStr for BridgeSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "every" {
            return Ok(BridgeSpec::Every);
        }
        if let Some(x) = s.strip_prefix("adaptive:") {
            return x.parse().map(BridgeSpec::Adaptive).map_err(|_| format!("bad adaptive threshold `{x}`"));
        }
        s.split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(BridgeSpec::Fixed)
            .map_err(|_| format!("expected `every`, `adaptive:<fraction>` or a comma-separated list of times, got `{s}`"))
    }
}
via_string!(BridgeSpec);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResampleSpec {
    Never,
    Every,
    Threshold(f64),
}

impl fmt::Display for ResampleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResampleSpec::Never => f.write_str("never"),
            ResampleSpec::Every => f.write_str("every"),
            ResampleSpec::Threshold(x) => write!(f, "threshold:{x}"),
        }
    }
}

impl FromStr for ResampleSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "never" => Ok(ResampleSpec::Never),
            "every" => Ok(ResampleSpec::Every),
            _ => s
                .strip_prefix("threshold:")
                .and_then(|x| x.parse().ok())
                .map(ResampleSpec::Threshold)
                .ok_or_else(|| format!("expected `never`, `every` or `threshold:<fraction>`, got `{s}`")),
        }
    }
}
via_string!(ResampleSpec);

/// Particle count of the baseline sampler or filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineSpec {
    /// Same `N` as the bridge sampler.
    MatchedN,
    /// `N` scaled so that run times match, from a timed pilot run.
    MatchedTime,
    Fixed(usize),
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineSpec::MatchedN => f.write_str("matched-n"),
            BaselineSpec::MatchedTime => f.write_str("matched-time"),
            BaselineSpec::Fixed(n) => write!(f, "fixed:{n}"),
        }
    }
}

impl FromStr for BaselineSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "matched-n" => Ok(BaselineSpec::MatchedN),
            "matched-time" => Ok(BaselineSpec::MatchedTime),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|x| x.parse().ok())
                .map(BaselineSpec::Fixed)
                .ok_or_else(|| format!("expected `matched-n`, `matched-time` or `fixed:<N>`, got `{s}`")),
        }
    }
}
via_string!(BaselineSpec);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub xi: f64,
    pub rho: f64,
    pub tau: f64,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub reference: ReferenceKind,
    /// Drift of the backward kernels.
    #[serde(default = "target_backward")]
    pub backward: BackwardKind,
    pub alpha: f64,
    pub sigma_obs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Observation CSV (`t,y_1,..,y_d`); simulated from the model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
}

fn target_backward() -> BackwardKind {
    BackwardKind::Target
}

impl ModelConfig {
    pub fn h(&self) -> f64 {
        self.tau / self.steps as f64
    }

    pub fn schedule(&self) -> Schedule {
        match self.schedule {
            ScheduleKind::Linear => Schedule::Linear,
            ScheduleKind::Quadratic => Schedule::Quadratic,
        }
    }

    pub fn kernel(&self) -> EmKernel {
        let k = match self.reference {
            ReferenceKind::Langevin => EmKernel::langevin(self.h()),
            ReferenceKind::Brownian => EmKernel::brownian(self.h()),
        };
        k.with_backward(match self.backward {
            BackwardKind::Target => BackwardDrift::Target,
            BackwardKind::Zero => BackwardDrift::Zero,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub particles: usize,
    pub csmc_iters: usize,
    pub csmc_particles: usize,
    pub max_iters: usize,
    pub min_iters: usize,
    pub bridges: BridgeSpec,
    pub twist: TwistKind,
    pub policy: PolicyKind,
    pub resample: ResampleSpec,
    /// MALA step `rejuvenation / d^(1/3)` before every IPF iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejuvenation: Option<f64>,
    pub warm_start: WarmKind,
    pub stop: StopKind,
    /// Twist orders compared by `lqg-highdim`.
    pub variants: Vec<TwistKind>,
    pub baseline: BaselineSpec,
    pub flow_particles: usize,
    /// Re-run with frozen policies for the normalizing constant.
    pub rerun: bool,
}

impl SamplerConfig {
    pub fn policy_mode(&self) -> PolicyMode {
        match self.policy {
            PolicyKind::Full => PolicyMode::Full,
            PolicyKind::Diagonal => PolicyMode::Diagonal,
        }
    }

    pub fn ipf(&self, d: usize) -> IpfConfig {
        IpfConfig {
            max_iters: self.max_iters,
            csmc_iters: self.csmc_iters,
            csmc_particles: self.csmc_particles,
            stop: match self.stop {
                StopKind::Fixed => StopRule::Fixed,
                StopKind::Early => StopRule::EarlyStop(EarlyStop { min_iters: self.min_iters, ..EarlyStop::default() }),
                StopKind::Ess => StopRule::ess_default(),
            },
            twist: self.twist.mode(),
            policy_mode: self.policy_mode(),
            ridge: DEFAULT_RIDGE,
            rejuvenation: self.rejuvenation.map(|s| s / (d as f64).cbrt()),
            keep_iterates: false,
        }
    }

    pub fn ssb(&self, d: usize) -> SsbConfig {
        SsbConfig {
            particles: self.particles,
            bridges: match &self.bridges {
                BridgeSpec::Every => BridgeSet::Every,
                BridgeSpec::Adaptive(x) => BridgeSet::Adaptive { threshold: *x },
                BridgeSpec::Fixed(k) => BridgeSet::Fixed(k.clone()),
            },
            ipf: self.ipf(d),
            resample: self.resample(),
            warm_start: match self.warm_start {
                WarmKind::None => WarmStart::None,
                WarmKind::Copy => WarmStart::Copy,
                WarmKind::Extrapolate => WarmStart::Extrapolate,
            },
            rerun: self.rerun,
            keep_states: false,
        }
    }

    pub fn resample(&self) -> Resample {
        match self.resample {
            ResampleSpec::Never => Resample::Never,
            ResampleSpec::Every => Resample::Every,
            ResampleSpec::Threshold(x) => Resample::Threshold(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub reps: usize,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
}

/// Defaults of an experiment before any file overrides.
pub fn defaults(id: ExperimentId) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        experiment: id,
        seed: 1,
        reps: 100,
        out: PathBuf::from("out").join(id.name()),
        model: ModelConfig {
            d: 2,
            xi: 8.0,
            rho: 0.8,
            tau: 2.0,
            steps: 40,
            schedule: ScheduleKind::Linear,
            reference: ReferenceKind::Langevin,
            backward: BackwardKind::Target,
            alpha: 0.1,
            sigma_obs: 0.1,
            dataset: None,
            observations: None,
        },
        sampler: SamplerConfig {
            particles: 1000,
            csmc_iters: 0,
            csmc_particles: 128,
            max_iters: 100,
            min_iters: 3,
            bridges: BridgeSpec::Every,
            twist: TwistKind::Exact,
            policy: PolicyKind::Full,
            resample: ResampleSpec::Every,
            rejuvenation: None,
            warm_start: WarmKind::Extrapolate,
            stop: StopKind::Early,
            variants: vec![TwistKind::Exact],
            baseline: BaselineSpec::MatchedN,
            flow_particles: 100_000,
            rerun: false,
        },
    };
    let s = &mut c.sampler;
    let m = &mut c.model;
    match id {
        ExperimentId::LqgTwoMarginal => {
            s.max_iters = 5;
            s.stop = StopKind::Fixed;
            s.warm_start = WarmKind::None;
        }
        ExperimentId::LqgSsb | ExperimentId::FlowTransport => {}
        ExperimentId::LqgHighdim => {
            m.d = 64;
            m.xi = 25.0;
            s.particles = 2000;
            s.policy = PolicyKind::Diagonal;
            s.rejuvenation = Some(3.0);
            s.variants = vec![TwistKind::Exact, TwistKind::Taylor1];
            s.baseline = BaselineSpec::MatchedTime;
        }
        ExperimentId::OtBrownian => {
            m.reference = ReferenceKind::Brownian;
            s.csmc_iters = 10;
            s.max_iters = 5;
            s.stop = StopKind::Fixed;
            s.warm_start = WarmKind::None;
        }
        ExperimentId::PfCompare => {
            m.steps = 80;
            s.particles = 200;
            s.warm_start = WarmKind::None;
            s.baseline = BaselineSpec::MatchedTime;
        }
        ExperimentId::Logistic => {
            m.d = crate::heart::HEART_DIM;
            m.schedule = ScheduleKind::Quadratic;
            s.particles = 2000;
            s.max_iters = 20;
            s.policy = PolicyKind::Diagonal;
            s.rejuvenation = Some(1.0);
            s.baseline = BaselineSpec::MatchedTime;
        }
    }
    c
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot @ toml::Value::Table(_)) if v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses and validates configuration text.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::schema("", e.message().to_string()))?;
    let id: ExperimentId = match user.get("experiment") {
        Some(toml::Value::String(s)) => s.parse()?,
        Some(_) => return Err(Error::schema("experiment", "must be a string")),
        None => return Err(Error::schema("experiment", "missing field")),
    };
    let mut merged = toml::Value::try_from(defaults(id)).expect("defaults serialize");
    merge(&mut merged, toml::Value::Table(user));
    let cfg: ExperimentConfig =
        serde_path_to_error::deserialize(merged).map_err(|e| Error::schema(e.path().to_string(), e.inner().to_string()))?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::FileNotFound(path.to_path_buf()))?;
    let mut cfg = parse_config_str(&text)?;
    // relative data paths are relative to the config file
    let dir = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.model.dataset, &mut cfg.model.observations].into_iter().flatten() {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("configuration serializes")
}

fn check(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::schema(path, message))
    }
}

pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let m = &cfg.model;
    let s = &cfg.sampler;
    check(cfg.reps >= 1, "reps", "must be at least 1")?;
    check(m.d >= 1, "model.d", "must be at least 1")?;
    check(m.steps >= 1, "model.steps", "must be at least 1")?;
    check(m.tau > 0.0 && m.tau.is_finite(), "model.tau", "must be positive")?;
    check(m.sigma_obs > 0.0, "model.sigma_obs", "must be positive")?;
    check(m.rho > -1.0 / (m.d.max(2) - 1) as f64 && m.rho < 1.0, "model.rho", "correlation matrix must be positive definite")?;
    check(s.particles >= 2, "sampler.particles", "must be at least 2")?;
    check(s.csmc_iters == 0 || s.csmc_particles >= 2, "sampler.csmc_particles", "must be at least 2 when csmc_iters > 0")?;
    check(!s.variants.is_empty(), "sampler.variants", "must not be empty")?;
    if let Some(r) = s.rejuvenation {
        check(r > 0.0 && r.is_finite(), "sampler.rejuvenation", "must be positive")?;
    }
    match &s.bridges {
        BridgeSpec::Adaptive(x) => check(*x > 0.0 && *x <= 1.0, "sampler.bridges", "adaptive threshold must be in (0, 1]")?,
        BridgeSpec::Fixed(k) => check(
            k.first() == Some(&0) && k.last() == Some(&m.steps) && k.windows(2).all(|w| w[0] < w[1]),
            "sampler.bridges",
            "times must increase strictly from 0 to model.steps",
        )?,
        BridgeSpec::Every => {}
    }
    if let ResampleSpec::Threshold(x) = s.resample {
        check(x > 0.0 && x <= 1.0, "sampler.resample", "threshold must be in (0, 1]")?;
    }
    if let BaselineSpec::Fixed(n) = s.baseline {
        check(n >= 1, "sampler.baseline", "particle count must be positive")?;
    }
    if cfg.experiment == ExperimentId::Logistic {
        match &m.dataset {
            None => return Err(Error::schema("model.dataset", "the logistic experiment needs the heart dataset path")),
            Some(p) => check(p.is_file(), "model.dataset", &format!("{} does not exist", p.display()))?,
        }
    }
    if let Some(p) = &m.observations {
        check(p.is_file(), "model.observations", &format!("{} does not exist", p.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_resolves_defaults() {
        let c = parse_config_str("experiment = \"lqg-ssb\"\n").unwrap();
        assert_eq!((c.model.d, c.model.steps, c.model.tau, c.sampler.particles), (2, 40, 2.0, 1000));
        assert_eq!(c.model.xi, 8.0);
        assert_eq!(c.model.rho, 0.8);
        assert_eq!(c.sampler.stop, StopKind::Early);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = parse_config_str("experiment = \"lqg-highdim\"\nreps = 20\n[model]\nd = 32\n[sampler]\nbridges = \"adaptive:0.3\"\n").unwrap();
        assert_eq!((c.reps, c.model.d, c.model.xi), (20, 32, 25.0));
        assert_eq!(c.sampler.bridges, BridgeSpec::Adaptive(0.3));
        assert_eq!(c.sampler.policy, PolicyKind::Diagonal);
    }

    #[test]
    fn logistic_needs_a_dataset() {
        match parse_config_str("experiment = \"logistic\"\n") {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "model.dataset"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_carry_the_field_path() {
        match parse_config_str("experiment = \"lqg-ssb\"\n[sampler]\nparticles = \"many\"\n") {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "sampler.particles"),
            other => panic!("{other:?}"),
        }
        match parse_config_str("experiment = \"lqg-ssb\"\n[model]\nxii = 3.0\n") {
            Err(Error::Schema { path, .. }) => assert!(path.starts_with("model"), "{path}"),
            other => panic!("{other:?}"),
        }
        match parse_config_str("experiment = \"lqg-ssb\"\n[sampler]\nresample = \"sometimes\"\n") {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "sampler.resample"),
            other => panic!("{other:?}"),
        }
        match parse_config_str("experiment = \"lqg-ssb\"\n[sampler]\nbridges = \"0,5,30\"\n") {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "sampler.bridges"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_experiment() {
        assert!(matches!(parse_config_str("experiment = \"sinkhorn\"\n"), Err(Error::UnknownExperiment(e)) if e == "sinkhorn"));
        assert!(matches!(parse_config_str("seed = 3\n"), Err(Error::Schema { .. })));
    }

    #[test]
    fn serialized_config_parses_to_itself() {
        for id in ExperimentId::ALL.into_iter().filter(|&e| e != ExperimentId::Logistic) {
            let mut c = defaults(id);
            c.sampler.bridges = BridgeSpec::Fixed(vec![0, 7, 40]);
            c.sampler.resample = ResampleSpec::Threshold(0.3);
            c.sampler.baseline = BaselineSpec::Fixed(1234);
            c.model.steps = 40;
            c.model.xi = 0.1 + 0.2;
            let text = to_toml(&c);
            assert_eq!(parse_config_str(&text).unwrap(), c, "{text}");
        }
    }

    #[test]
    fn spec_strings() {
        assert_eq!("every".parse::<BridgeSpec>().unwrap(), BridgeSpec::Every);
        assert_eq!("0, 20,40".parse::<BridgeSpec>().unwrap(), BridgeSpec::Fixed(vec![0, 20, 40]));
        assert!("adaptive:x".parse::<BridgeSpec>().is_err());
        assert_eq!("threshold:0.5".parse::<ResampleSpec>().unwrap(), ResampleSpec::Threshold(0.5));
        assert_eq!("fixed:150000".parse::<BaselineSpec>().unwrap(), BaselineSpec::Fixed(150_000));
        assert_eq!(BaselineSpec::MatchedTime.to_string(), "matched-time");
    }

    #[test]
    fn rejuvenation_step_scales_with_dimension() {
        let c = defaults(ExperimentId::LqgHighdim);
        let ipf = c.sampler.ipf(64);
        assert!((ipf.rejuvenation.unwrap() - 0.75).abs() < 1e-12);
    }
}

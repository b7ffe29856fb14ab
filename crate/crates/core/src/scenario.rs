//! Declarative scenario files: network, signals, environment, run settings and
//! evaluation, plus the replicate runner used by every command.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::CellSpec;
use crate::env::{
    replicate_rng, ArSourceSink, ClosedEnvironment, Environment, FrankCopula, GaussianRule,
    GaussianSourceSink, SimRng, StochasticEnvironment,
};
use crate::error::{Error, Result};
use crate::active::{AcquisitionKind, DesignBox, LoopConfig, Simulator};
use crate::evaluation::{calibrate_threshold, BenchmarkSpec, PerformanceAccumulator, PerformanceMeasure, UtilityFn};
use crate::gpr::{FitOptions, KernelKind};
use crate::network::{total_mass, DensityState, NetworkBuilder, NodeDef, TrafficNetwork, TurningRule};
use crate::sim::{SignalPlan, Stepper, Trajectory};
use crate::signal::SignalSchedule;
use crate::solvers::InteractionRule;

pub const SCHEMA_VERSION: u32 = 1;

const URBAN: &str = include_str!("../scenarios/urban.json");
const HIGHWAY: &str = include_str!("../scenarios/highway.json");

/// Names of the scenarios shipped with the library.
pub const BUNDLED: [&str; 2] = ["urban", "highway"];

/// Source text of a bundled scenario.
pub fn bundled_source(name: &str) -> Option<&'static str> {
    match name {
        "urban" => Some(URBAN),
        "highway" => Some(HIGHWAY),
        _ => None,
    }
}

/// A literal or a (scaled) design coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamRef {
    Value(f64),
    Param {
        param: String,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ParamRef {
    pub fn resolve(&self, design: &DesignSpace, k: &[f64]) -> Result<f64> {
        match self {
            ParamRef::Value(v) => Ok(*v),
            ParamRef::Param { param, scale } => Ok(scale * k[design.index_of(param)?]),
        }
    }

    fn param(&self) -> Option<&str> {
        match self {
            ParamRef::Value(_) => None,
            ParamRef::Param { param, .. } => Some(param),
        }
    }
}

/// Box-shaped design space with named coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpace {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Point used when no design is given.
    pub default: Vec<f64>,
}

impl DesignSpace {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown design parameter `{name}`")))
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn contains(&self, k: &[f64]) -> bool {
        k.len() == self.dim() && k.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, u))| l <= x && x <= u)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.lower.len() != d || self.upper.len() != d || self.default.len() != d {
            return Err(Error::Config("design names, lower, upper and default must have equal non-zero length".into()));
        }
        for (i, n) in self.names.iter().enumerate() {
            if self.names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate design parameter `{n}`")));
            }
            if !(self.lower[i] < self.upper[i]) || !self.lower[i].is_finite() || !self.upper[i].is_finite() {
                return Err(Error::Config(format!("design parameter `{n}` needs finite lower < upper")));
            }
        }
        if !self.contains(&self.default) {
            return Err(Error::Config("default design lies outside the bounds".into()));
        }
        Ok(())
    }

    /// Copy restricted to the given bounds.
    pub fn with_bounds(&self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let mut d = self.clone();
        d.default = d.default.iter().zip(lower.iter().zip(&upper)).map(|(x, (l, u))| x.clamp(*l, *u)).collect();
        d.lower = lower;
        d.upper = upper;
        d.validate()?;
        Ok(d)
    }
}

/// Nodes sharing one cell specification and length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellGroup {
    pub name: String,
    pub nodes: Vec<u32>,
    pub length: f64,
    pub cell: CellSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub cell_groups: Vec<CellGroup>,
    /// Two-way connections.
    #[serde(default)]
    pub links: Vec<[u32; 2]>,
    /// One-way connections.
    #[serde(default)]
    pub arcs: Vec<[u32; 2]>,
    /// Counterclockwise neighbour orders; ascending labels otherwise.
    #[serde(default)]
    pub orders: BTreeMap<u32, Vec<u32>>,
    #[serde(default)]
    pub uturn_nodes: Vec<u32>,
    pub turning: TurningRule,
}

/// Alternative configuration of the same network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    /// Replacement cell specifications by group name.
    #[serde(default)]
    pub groups: BTreeMap<String, CellSpec>,
    /// Switches all sources and sinks off.
    #[serde(default)]
    pub closed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub node: u32,
    pub green: ParamRef,
    pub shift: ParamRef,
    /// Neighbour labels of the two axes.
    pub axis_i: Vec<u32>,
    pub axis_j: Vec<u32>,
}

fn default_a_real() -> f64 {
    1.5
}

fn default_t_safe() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalTiming {
    pub v_real: f64,
    #[serde(default = "default_a_real")]
    pub a_real: f64,
    #[serde(default = "default_t_safe")]
    pub t_safe: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleConfig {
    Dpf,
    /// Capacity-proportional with equal weights.
    Cpf,
    /// Priority in upstream order.
    Priority,
    Cooperative,
}

impl RuleConfig {
    pub const ALL: [RuleConfig; 4] = [RuleConfig::Dpf, RuleConfig::Cpf, RuleConfig::Priority, RuleConfig::Cooperative];

    pub fn build(self, net: &TrafficNetwork) -> InteractionRule {
        match self {
            RuleConfig::Dpf => InteractionRule::Dpf,
            RuleConfig::Cooperative => InteractionRule::Cooperative,
            RuleConfig::Cpf => InteractionRule::Cpf(net.edges().iter().map(|e| vec![1.0 / e.upstream.len().max(1) as f64; e.upstream.len()]).collect()),
            RuleConfig::Priority => {
                InteractionRule::Priority(net.edges().iter().map(|e| (0..e.upstream.len()).collect()).collect())
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown interaction rule `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// Density of every route by cell group name.
    PerGroup(BTreeMap<String, f64>),
    /// Total density as a fraction of `Σ rho_max`, spread evenly over each node's routes.
    FillFraction(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: usize,
    /// Seconds per step.
    pub t_real: f64,
    pub initial: InitialConfig,
    pub rule: RuleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArConfig {
    pub route: [u32; 3],
    pub sigma: ParamRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaussianConfig {
    /// `N(mean, (cv mean)^2)`.
    Random { route: [u32; 3], mean: ParamRef, cv: f64 },
    SameAs { route: [u32; 3], source: [u32; 3] },
    Negate { route: [u32; 3], source: [u32; 3] },
    Constant { route: [u32; 3], value: ParamRef },
}

impl GaussianConfig {
    fn route(&self) -> [u32; 3] {
        match self {
            GaussianConfig::Random { route, .. }
            | GaussianConfig::SameAs { route, .. }
            | GaussianConfig::Negate { route, .. }
            | GaussianConfig::Constant { route, .. } => *route,
        }
    }
}

fn default_cap_fraction() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default = "zero_ref")]
    pub copula_r: ParamRef,
    /// Clamp cap as a fraction of `rho_max`.
    #[serde(default = "default_cap_fraction")]
    pub cap_fraction: f64,
    #[serde(default)]
    pub ar_sources: Vec<ArConfig>,
    #[serde(default)]
    pub gaussian_sources: Vec<GaussianConfig>,
}

fn zero_ref() -> ParamRef {
    ParamRef::Value(0.0)
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig {
            copula_r: zero_ref(),
            cap_fraction: 1.0,
            ar_sources: Vec::new(),
            gaussian_sources: Vec::new(),
        }
    }
}

/// A named performance statistic, optionally with its own design bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub name: String,
    pub measure: PerformanceMeasure,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub measures: Vec<MeasureConfig>,
    #[serde(default)]
    pub utilities: Vec<UtilityFn>,
    #[serde(default)]
    pub benchmarks: Vec<BenchmarkSpec>,
}

/// Level-set estimation settings. Noise targets are fractions of `tau_scale`,
/// which defaults to the spread between the first and last benchmark thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    #[serde(default)]
    pub measure: Option<String>,
    /// Index into `evaluation.utilities` (identity when that list is empty).
    #[serde(default)]
    pub utility: usize,
    /// Explicit threshold; otherwise calibrated from `evaluation.benchmarks[benchmark]`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub benchmark: usize,
    /// Design parameters that are learned; the rest stay at `fixed` or the default.
    pub active: Vec<String>,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub rule: Option<RuleConfig>,
    pub n_initial: usize,
    pub n_loop: usize,
    pub iterations: usize,
    pub tau_fractions: Vec<f64>,
    #[serde(default)]
    pub tau_scale: Option<f64>,
    pub n_min: u64,
    pub n_max: Vec<u64>,
    #[serde(default)]
    pub c1: Option<f64>,
    /// Defaults to `2 / tau_scale`.
    #[serde(default)]
    pub c2_0: Option<f64>,
    #[serde(default)]
    pub c3: Option<f64>,
    #[serde(default)]
    pub max_trials: Option<u64>,
    #[serde(default)]
    pub acquisition: AcquisitionKind,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub n_eval: Option<usize>,
    #[serde(default)]
    pub error_target: Option<f64>,
    pub kernel: KernelKind,
    #[serde(default)]
    pub fit: FitOptions,
    /// Resolution of exported rasters.
    #[serde(default = "default_grid")]
    pub grid: usize,
}

fn default_grid() -> usize {
    200
}

/// A learning block with every default and reference resolved.
#[derive(Clone, Debug)]
pub struct ResolvedLearning {
    pub loop_config: LoopConfig,
    pub measure: MeasureConfig,
    pub utility: UtilityFn,
    pub gamma: f64,
    pub rule: RuleConfig,
    /// Indices of the learned coordinates in the full design vector.
    pub active: Vec<usize>,
    pub base: Vec<f64>,
    pub space: DesignBox,
    pub grid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub design: DesignSpace,
    pub network: NetworkConfig,
    #[serde(default)]
    pub variants: BTreeMap<String, Variant>,
    #[serde(default)]
    pub signals: Vec<SignalConfig>,
    #[serde(default)]
    pub signal_timing: Option<SignalTiming>,
    pub run: RunConfig,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub learning: Option<LearningConfig>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let text = bundled_source(name).ok_or_else(|| Error::Config(format!("no bundled scenario `{name}`")))?;
        Self::from_json(text)
    }

    pub fn measure(&self, name: Option<&str>) -> Result<&MeasureConfig> {
        match name {
            None => self.evaluation.measures.first().ok_or_else(|| Error::Config("no performance measure defined".into())),
            Some(n) => self
                .evaluation
                .measures
                .iter()
                .find(|m| m.name == n)
                .ok_or_else(|| Error::Config(format!("unknown measure `{n}`"))),
        }
    }

    /// Design space of a measure, honouring its own bounds.
    pub fn design_for(&self, measure: &MeasureConfig) -> Result<DesignSpace> {
        match (&measure.lower, &measure.upper) {
            (None, None) => Ok(self.design.clone()),
            (l, u) => self.design.with_bounds(
                l.clone().unwrap_or_else(|| self.design.lower.clone()),
                u.clone().unwrap_or_else(|| self.design.upper.clone()),
            ),
        }
    }

    /// Thresholds of every benchmark under utility `u`.
    pub fn thresholds(&self, u: &UtilityFn) -> Result<Vec<f64>> {
        self.evaluation.benchmarks.iter().map(|b| calibrate_threshold(b, u)).collect()
    }

    pub fn resolve_learning(&self) -> Result<ResolvedLearning> {
        let lc = self.learning.as_ref().ok_or_else(|| Error::Config("scenario has no learning block".into()))?;
        let measure = self.measure(lc.measure.as_deref())?.clone();
        let design = self.design_for(&measure)?;
        let utility = match self.evaluation.utilities.get(lc.utility) {
            Some(u) => *u,
            None if self.evaluation.utilities.is_empty() && lc.utility == 0 => UtilityFn::Identity,
            None => return Err(Error::Config(format!("learning.utility {} out of range", lc.utility))),
        };
        utility.validate()?;
        let needs_thresholds = lc.gamma.is_none() || lc.tau_scale.is_none();
        let thresholds = if needs_thresholds { self.thresholds(&utility)? } else { Vec::new() };
        let gamma = match lc.gamma {
            Some(g) => g,
            None => *thresholds
                .get(lc.benchmark)
                .ok_or_else(|| Error::Config(format!("learning.benchmark {} out of range", lc.benchmark)))?,
        };
        let scale = match lc.tau_scale {
            Some(s) => s,
            None if thresholds.len() >= 2 => (thresholds[thresholds.len() - 1] - thresholds[0]).abs(),
            None => return Err(Error::Config("learning needs tau_scale or at least two benchmarks".into())),
        };
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!("learning tau scale must be positive, got {scale}")));
        }
        let mut active = Vec::with_capacity(lc.active.len());
        for name in &lc.active {
            active.push(design.index_of(name)?);
        }
        let mut seen = active.clone();
        seen.sort_unstable();
        seen.dedup();
        if active.is_empty() || seen.len() != active.len() {
            return Err(Error::Config("learning.active must list distinct design parameters".into()));
        }
        let mut base = design.default.clone();
        for (name, &v) in &lc.fixed {
            let i = design.index_of(name)?;
            if active.contains(&i) {
                return Err(Error::Config(format!("`{name}` is both active and fixed")));
            }
            base[i] = v;
        }
        let space = DesignBox::new(
            active.iter().map(|&i| design.lower[i]).collect(),
            active.iter().map(|&i| design.upper[i]).collect(),
        )?;
        let loop_config = LoopConfig {
            n_initial: lc.n_initial,
            n_loop: lc.n_loop,
            iterations: lc.iterations,
            tau: lc.tau_fractions.iter().map(|f| f * scale).collect(),
            n_min: lc.n_min,
            n_max: lc.n_max.clone(),
            c1: lc.c1.unwrap_or(5.0),
            c2_0: lc.c2_0.unwrap_or(2.0 / scale),
            c3: lc.c3.unwrap_or(2.0),
            max_trials: lc.max_trials.unwrap_or(2_000),
            acquisition: lc.acquisition,
            delta: lc.delta.unwrap_or(0.05),
            n_eval: lc.n_eval.unwrap_or(10_000),
            error_target: lc.error_target,
            kernel: lc.kernel,
            fit: lc.fit,
            fixed_kernel: None,
        };
        loop_config.validate()?;
        if lc.grid < 2 {
            return Err(Error::Config("learning.grid must be >= 2".into()));
        }
        Ok(ResolvedLearning {
            loop_config,
            measure,
            utility,
            gamma,
            rule: lc.rule.unwrap_or(self.run.rule),
            active,
            base,
            space,
            grid: lc.grid,
        })
    }

    fn params(&self) -> Vec<&ParamRef> {
        let mut out = Vec::new();
        for s in &self.signals {
            out.push(&s.green);
            out.push(&s.shift);
        }
        out.push(&self.environment.copula_r);
        for a in &self.environment.ar_sources {
            out.push(&a.sigma);
        }
        for g in &self.environment.gaussian_sources {
            match g {
                GaussianConfig::Random { mean, .. } => out.push(mean),
                GaussianConfig::Constant { value, .. } => out.push(value),
                _ => {}
            }
        }
        out
    }
}

/// Everything one replicate produces besides the optional trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    pub statistic: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// `Σ_t Σ_r q_net`: mass that entered minus mass that left.
    pub net_exchange: f64,
}

impl ReplicateOutcome {
    /// `final - initial - exchange`; zero up to rounding.
    pub fn conservation_residual(&self) -> f64 {
        self.final_mass - self.initial_mass - self.net_exchange
    }
}

/// A compiled scenario: the network is built once and shared by all replicates.
#[derive(Clone, Debug)]
pub struct Scenario {
    config: ScenarioConfig,
    variant: Option<String>,
    closed: bool,
    net: TrafficNetwork,
    initial: DensityState,
    /// Design coordinates that must be integers (signal timings).
    integer_params: Vec<usize>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig, variant: Option<&str>) -> Result<Self> {
        config.design.validate()?;
        let var = match variant {
            None => Variant::default(),
            Some(v) => config
                .variants
                .get(v)
                .cloned()
                .ok_or_else(|| Error::Config(format!("unknown variant `{v}`")))?,
        };
        for p in config.params() {
            if let Some(name) = p.param() {
                config.design.index_of(name)?;
            }
        }
        let nc = &config.network;
        for g in var.groups.keys() {
            if !nc.cell_groups.iter().any(|c| &c.name == g) {
                return Err(Error::Config(format!("variant overrides unknown cell group `{g}`")));
            }
        }
        let mut b = NetworkBuilder::new();
        for g in &nc.cell_groups {
            let cell = var.groups.get(&g.name).unwrap_or(&g.cell);
            for &label in &g.nodes {
                b = b.node(NodeDef {
                    label,
                    length: g.length,
                    cell: cell.clone(),
                    order: nc.orders.get(&label).cloned(),
                    allow_uturn: nc.uturn_nodes.contains(&label),
                });
            }
        }
        for &[a, c] in &nc.links {
            b = b.link(a, c);
        }
        for &[a, c] in &nc.arcs {
            b = b.arc(a, c);
        }
        let net = b.turning(nc.turning.clone()).build()?;
        let initial = initial_state(&net, &config, &var)?;

        let mut integer_params = Vec::new();
        for s in &config.signals {
            for r in [&s.green, &s.shift] {
                match r {
                    ParamRef::Value(v) if v.fract() != 0.0 || *v < 0.0 => {
                        return Err(Error::Config(format!("signal timing {v} at node {} must be a non-negative integer", s.node)))
                    }
                    ParamRef::Param { param, .. } => integer_params.push(config.design.index_of(param)?),
                    _ => {}
                }
            }
        }
        integer_params.sort_unstable();
        integer_params.dedup();
        if !config.signals.is_empty() && config.signal_timing.is_none() {
            return Err(Error::Config("signals need a signal_timing block".into()));
        }
        if config.run.horizon == 0 || !(config.run.t_real > 0.0) {
            return Err(Error::Config("run needs horizon >= 1 and t_real > 0".into()));
        }
        if !(config.environment.cap_fraction > 0.0) {
            return Err(Error::Config("cap_fraction must be positive".into()));
        }
        let s = Scenario {
            config,
            variant: variant.map(str::to_string),
            closed: var.closed,
            net,
            initial,
            integer_params,
        };
        // Surface signal and source errors at load time.
        let mut rng = replicate_rng(0, 0);
        s.instance(&s.config.design.default, &mut rng)?;
        for m in &s.config.evaluation.measures {
            PerformanceAccumulator::new(&m.measure, &s.net)?;
            s.config.design_for(m)?;
        }
        Ok(s)
    }

    pub fn from_json(text: &str, variant: Option<&str>) -> Result<Self> {
        Self::new(ScenarioConfig::from_json(text)?, variant)
    }

    pub fn bundled(name: &str, variant: Option<&str>) -> Result<Self> {
        Self::new(ScenarioConfig::bundled(name)?, variant)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn variant(&self) -> Option<&str> {
        self.variant.as_deref()
    }

    pub fn network(&self) -> &TrafficNetwork {
        &self.net
    }

    pub fn design(&self) -> &DesignSpace {
        &self.config.design
    }

    pub fn initial_state(&self) -> &DensityState {
        &self.initial
    }

    /// Same scenario with every source and sink removed.
    pub fn closed(&self) -> Self {
        Scenario { closed: true, ..self.clone() }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Rounds the integer coordinates of `k` randomly to a neighbouring integer
    /// with matching expectation. Always draws one uniform per coordinate.
    pub fn integerize(&self, k: &[f64], rng: &mut SimRng) -> Vec<f64> {
        let mut out = k.to_vec();
        for &i in &self.integer_params {
            let u: f64 = rng.random();
            let x = k[i];
            let lo = x.floor();
            out[i] = if u < x - lo { lo + 1.0 } else { lo };
        }
        out
    }

    fn check_design(&self, k: &[f64]) -> Result<()> {
        if k.len() != self.config.design.dim() {
            return Err(Error::Config(format!(
                "design has {} coordinates, scenario expects {} ({})",
                k.len(),
                self.config.design.dim(),
                self.config.design.names.join(", ")
            )));
        }
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("design point"));
        }
        Ok(())
    }

    /// Signals and environment of one replicate.
    fn instance(&self, k: &[f64], rng: &mut SimRng) -> Result<(SignalPlan, Box<dyn Environment>)> {
        self.check_design(k)?;
        let d = &self.config.design;
        let k = self.integerize(k, rng);
        let mut plan = SignalPlan::new(&self.net);
        for s in &self.config.signals {
            let timing = self.config.signal_timing.as_ref().expect("checked at load");
            let v = self.net.node(s.node)?;
            let green = s.green.resolve(d, &k)?.round().max(1.0);
            let shift = s.shift.resolve(d, &k)?.round();
            if shift < 0.0 {
                return Err(Error::InvalidParameter(format!("negative signal shift at node {}", s.node)));
            }
            let arm = |label: &u32| -> Result<usize> {
                let u = self.net.node(*label)?;
                self.net
                    .local_order(v)
                    .iter()
                    .position(|&w| w == u)
                    .ok_or_else(|| Error::Config(format!("signal axis node {label} is not adjacent to {}", s.node)))
            };
            let schedule = SignalSchedule {
                green: green as u64,
                shift: shift as u64,
                axis_i: s.axis_i.iter().map(arm).collect::<Result<_>>()?,
                axis_j: s.axis_j.iter().map(arm).collect::<Result<_>>()?,
                a_real: timing.a_real,
                t_safe: timing.t_safe,
                t_real: self.config.run.t_real,
                v_real: timing.v_real,
            };
            plan.set(&self.net, v, schedule)?;
        }
        let ec = &self.config.environment;
        if self.closed || (ec.ar_sources.is_empty() && ec.gaussian_sources.is_empty()) {
            return Ok((plan, Box::new(ClosedEnvironment)));
        }
        let route = |r: &[u32; 3]| self.net.route_by_labels(r[0], r[1], r[2]);
        let ar = ec
            .ar_sources
            .iter()
            .map(|a| Ok(ArSourceSink::new(route(&a.route)?, a.sigma.resolve(d, &k)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut gaussian: Vec<GaussianSourceSink> = Vec::new();
        for g in &ec.gaussian_sources {
            let earlier = |src: &[u32; 3]| -> Result<usize> {
                let r = route(src)?;
                gaussian
                    .iter()
                    .position(|x| x.route == r)
                    .ok_or_else(|| Error::Config(format!("gaussian source {src:?} must be listed before its copies")))
            };
            let rule = match g {
                GaussianConfig::Random { mean, cv, .. } => GaussianRule::Random { mean: mean.resolve(d, &k)?, cv: *cv },
                GaussianConfig::SameAs { source, .. } => GaussianRule::SameAs(earlier(source)?),
                GaussianConfig::Negate { source, .. } => GaussianRule::Negate(earlier(source)?),
                GaussianConfig::Constant { value, .. } => GaussianRule::Constant(value.resolve(d, &k)?),
            };
            gaussian.push(GaussianSourceSink { route: route(&g.route())?, rule });
        }
        let copula = FrankCopula::new(ec.copula_r.resolve(d, &k)?);
        let env = StochasticEnvironment::new(&self.net, copula, ar, gaussian, ec.cap_fraction)?;
        Ok((plan, Box::new(env)))
    }

    /// Runs replicate `rep` of design `k`. The trajectory is kept when `record` is set.
    pub fn run(
        &self,
        k: &[f64],
        rule: &InteractionRule,
        measure: &PerformanceMeasure,
        seed: u64,
        rep: u64,
        record: bool,
    ) -> Result<(ReplicateOutcome, Option<Trajectory>)> {
        let mut rng = replicate_rng(seed, rep);
        let (plan, mut env) = self.instance(k, &mut rng)?;
        let mut acc = PerformanceAccumulator::new(measure, &self.net)?;
        let mut state = self.initial.clone();
        let initial_mass = total_mass(&state, &self.net);
        let mut stepper = Stepper::new(&self.net);
        let mut traj = record.then(|| Trajectory { states: vec![state.clone()], flows: Vec::new() });
        let mut before = state.clone();
        let mut net_exchange = 0.0;
        for _ in 0..self.config.run.horizon {
            before.rho.copy_from_slice(&state.rho);
            before.t = state.t;
            let flows = stepper.advance(&self.net, &mut state, rule, &plan, env.as_mut(), &mut rng)?;
            acc.push(&before, flows);
            net_exchange += flows.q_net.iter().sum::<f64>();
            if let Some(t) = traj.as_mut() {
                t.flows.push(flows.clone());
                t.states.push(state.clone());
            }
        }
        let outcome = ReplicateOutcome {
            replicate: rep,
            statistic: acc.finish()?,
            initial_mass,
            final_mass: total_mass(&state, &self.net),
            net_exchange,
        };
        Ok((outcome, traj))
    }

    /// Statistic of replicate `rep`.
    pub fn statistic(&self, k: &[f64], rule: &InteractionRule, measure: &PerformanceMeasure, seed: u64, rep: u64) -> Result<f64> {
        Ok(self.run(k, rule, measure, seed, rep, false)?.0.statistic)
    }

    /// Replicates `0..reps` in parallel, returned in replicate order.
    pub fn replicates(
        &self,
        k: &[f64],
        rule: &InteractionRule,
        measure: &PerformanceMeasure,
        seed: u64,
        reps: u64,
    ) -> Result<Vec<ReplicateOutcome>> {
        crate::parallel::map_range(0..reps, |r| self.run(k, rule, measure, seed, r, false).map(|o| o.0))
            .into_iter()
            .collect()
    }
}

fn initial_state(net: &TrafficNetwork, cfg: &ScenarioConfig, var: &Variant) -> Result<DensityState> {
    let mut state = DensityState::zeros(net);
    match &cfg.run.initial {
        InitialConfig::PerGroup(values) => {
            for (name, &value) in values {
                let g = cfg
                    .network
                    .cell_groups
                    .iter()
                    .find(|g| &g.name == name)
                    .ok_or_else(|| Error::Config(format!("initial density for unknown group `{name}`")))?;
                if !(value >= 0.0) {
                    return Err(Error::Config(format!("initial density of `{name}` must be >= 0")));
                }
                for &label in &g.nodes {
                    for r in net.routes_through(net.node(label)?) {
                        state.rho[r] = value;
                    }
                }
            }
        }
        InitialConfig::FillFraction(f) => {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::Config("fill_fraction must lie in [0, 1]".into()));
            }
            for g in &cfg.network.cell_groups {
                let rho_max = var.groups.get(&g.name).unwrap_or(&g.cell).rho_max;
                for &label in &g.nodes {
                    let routes = net.routes_through(net.node(label)?);
                    let n = routes.len() as f64;
                    for r in routes {
                        state.rho[r] = rho_max / n * f;
                    }
                }
            }
        }
    }
    Ok(state)
}

/// Adapts a scenario to the learning loop: learned coordinates are written into
/// a base design and replicate `rep` of point `p` uses stream `(p << 32) | rep`.
pub struct ScenarioSimulator<'a> {
    scenario: &'a Scenario,
    rule: InteractionRule,
    measure: PerformanceMeasure,
    active: Vec<usize>,
    base: Vec<f64>,
    seed: u64,
}

impl<'a> ScenarioSimulator<'a> {
    pub fn new(scenario: &'a Scenario, learning: &ResolvedLearning, seed: u64) -> Self {
        ScenarioSimulator {
            scenario,
            rule: learning.rule.build(scenario.network()),
            measure: learning.measure.measure.clone(),
            active: learning.active.clone(),
            base: learning.base.clone(),
            seed,
        }
    }

    pub fn full_design(&self, k: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        for (&i, &v) in self.active.iter().zip(k) {
            full[i] = v;
        }
        full
    }
}

impl Simulator for ScenarioSimulator<'_> {
    fn sample(&self, k: &[f64], point: u64, rep: u64) -> Result<f64> {
        if k.len() != self.active.len() || rep >= 1 << 32 {
            return Err(Error::InvalidParameter("design or replicate index out of range".into()));
        }
        self.scenario.statistic(&self.full_design(k), &self.rule, &self.measure, self.seed, (point << 32) | rep)
    }
}

/// Mean and standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let mut w = crate::evaluation::Welford::default();
    xs.iter().for_each(|&x| w.push(x));
    (w.mean(), (w.variance() / xs.len().max(1) as f64).sqrt())
}

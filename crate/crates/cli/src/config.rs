//! Experiment configuration files.
//!
//! A config is TOML with six sections. Every section except `[sim]` is
//! required, and every key outside `[sim]` must be given; `[sim]` keys fall
//! back to the defaults listed on [`SimSection`]. Unknown keys are rejected.
//! Node numbers in config files are 1-based.
//!
//! ```toml
//! [network]
//! beta = [[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]]
//! gamma = [0.3, 0.3, 0.3]
//! x0 = [0.04, 0.01, 0.02]
//!
//! [safety]
//! xbar = [0.1, 0.12, 0.18]
//! eta = 10.0            # scalar or one value per node
//! kappa = 1.0
//!
//! [control]
//! lo = 0.0              # scalar or one value per node
//! hi = 0.75
//! events = [
//!   { kind = "box", time = 10.0, nodes = [1, 2, 3], lo = 0.0, hi = 0.6 },
//!   { kind = "compliance", time = 5.0, nodes = [2], rho = 0.5 },
//! ]
//!
//! [sim]
//! t_end = 20.0
//!
//! [experiment]
//! kind = "simulate"     # or nu-star-sweep, epsilon-surface
//!
//! [output]
//! directory = "out"
//! formats = ["csv", "svg"]
//! ```

use std::fmt;

use ccbfnet_core::negotiation::NegotiationConfig;
use ccbfnet_core::resilience::ComplianceSign;
use ccbfnet_core::sim::{EventChange, ResilienceSettings, SafetyFilter};
use ccbfnet_core::{ClassKParams, ControlBox, DerivativePolicy, Event, Scenario, SisModel, SisParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum PerNode {
    Scalar(f64),
    Each(Vec<f64>),
}

impl PerNode {
    fn expand(&self, n: usize, key: &str, errors: &mut Vec<String>) -> Vec<f64> {
        match self {
            PerNode::Scalar(v) => vec![*v; n],
            PerNode::Each(v) if v.len() == n => v.clone(),
            PerNode::Each(v) => {
                errors.push(format!("{key} has {} entries but network.beta is {n}x{n}", v.len()));
                vec![f64::NAN; n]
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SafetySection {
    pub xbar: Vec<f64>,
    pub eta: PerNode,
    pub kappa: PerNode,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventSpec {
    Box { time: f64, nodes: Vec<usize>, lo: f64, hi: f64 },
    Compliance { time: f64, nodes: Vec<usize>, rho: f64 },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub lo: PerNode,
    pub hi: PerNode,
    pub events: Vec<EventSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySpec {
    Zero,
    BackwardDifference,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum FilterSpec {
    Collaborative,
    Disabled,
}

/// Simulation knobs. Defaults: `t_end = 20`, `dt = 0.01`,
/// `control_period = 0.05`, `derivative_policy = "zero"`,
/// `filter = "collaborative"`, `max_rounds = 50`, `margin = 0`,
/// `resilience = true`, `delta_nu = 0.01`, `nu_max = 20`,
/// `compliance_sign = "paper"`, `trace = false`, `seed = 0`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub t_end: f64,
    pub dt: f64,
    pub control_period: f64,
    pub derivative_policy: PolicySpec,
    pub filter: FilterSpec,
    pub max_rounds: usize,
    pub margin: f64,
    pub resilience: bool,
    pub delta_nu: f64,
    pub nu_max: f64,
    pub compliance_sign: ComplianceSign,
    /// Also write the negotiation message trace as JSON lines.
    pub trace: bool,
    /// Recorded in the manifest; no command draws random numbers.
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            t_end: 20.0,
            dt: 0.01,
            control_period: 0.05,
            derivative_policy: PolicySpec::Zero,
            filter: FilterSpec::Collaborative,
            max_rounds: 50,
            margin: 0.0,
            resilience: true,
            delta_nu: 0.01,
            nu_max: 20.0,
            compliance_sign: ComplianceSign::RequestedMinusDelivered,
            trace: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Simulate,
    /// `ν*` of `node` while its state sweeps `points` values over
    /// `[x_min, x_max]`; other nodes sit at `base_state`.
    NuStarSweep { node: usize, base_state: Vec<f64>, x_min: f64, x_max: f64, points: usize, delta_nu: f64, nu_max: f64 },
    /// `ε` of `node` over an `x_points × nu_points` grid.
    EpsilonSurface {
        node: usize,
        base_state: Vec<f64>,
        x_min: f64,
        x_max: f64,
        x_points: usize,
        nu_min: f64,
        nu_max: f64,
        nu_points: usize,
        delta_nu: f64,
        nu_star_max: f64,
    },
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    network: NetworkSection,
    safety: SafetySection,
    control: ControlSection,
    #[serde(default)]
    sim: SimSection,
    experiment: ExperimentSpec,
    output: OutputSection,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub params: SisParams<f64>,
    pub x0: Vec<f64>,
    pub gains: Vec<ClassKParams<f64>>,
    pub boxes: Vec<ControlBox<f64>>,
    pub scenario: Scenario<f64>,
    pub experiment: ExperimentSpec,
    pub output: OutputSection,
    pub sim: SimSection,
}

impl ExperimentConfig {
    pub fn model(&self) -> SisModel<f64> {
        SisModel::new(self.params.clone()).expect("validated parameters")
    }

    pub fn node_count(&self) -> usize {
        self.params.node_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]`, if present.
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut inside = false;
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            inside = t.trim_start_matches('[').trim_end_matches(']').trim() == section;
            continue;
        }
        if inside && t.split('=').next().map(str::trim) == Some(key) {
            return Some(k + 1);
        }
    }
    None
}

struct Collector<'a> {
    text: &'a str,
    errors: Vec<ConfigError>,
}

impl Collector<'_> {
    fn push(&mut self, section: &str, key: &str, message: String) {
        self.errors.push(ConfigError { line: key_line(self.text, section, key), message });
    }
}

fn node_index(label: usize, n: usize, key: &str, c: &mut Collector<'_>, section: &str) -> Option<usize> {
    if label == 0 || label > n {
        c.push(section, key, format!("{section}.{key}: node {label} is outside 1..={n}"));
        None
    } else {
        Some(label - 1)
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_at(text, s.start));
        ConfigErrors(vec![ConfigError { line, message: e.message().trim().to_string() }])
    })?;
    let mut c = Collector { text, errors: Vec::new() };
    let n = raw.network.beta.len();

    let mut dims = Vec::new();
    for (key, len) in [("gamma", raw.network.gamma.len()), ("x0", raw.network.x0.len())] {
        if len != n {
            c.push("network", key, format!("network.{key} has {len} entries but network.beta is {n}x{n}"));
        }
    }
    if raw.safety.xbar.len() != n {
        let len = raw.safety.xbar.len();
        c.push("safety", "xbar", format!("safety.xbar has {len} entries but network.beta is {n}x{n}"));
    }
    let eta = raw.safety.eta.expand(n, "safety.eta", &mut dims);
    let kappa = raw.safety.kappa.expand(n, "safety.kappa", &mut dims);
    let lo = raw.control.lo.expand(n, "control.lo", &mut dims);
    let hi = raw.control.hi.expand(n, "control.hi", &mut dims);
    for msg in dims {
        let (section, key) = msg.split_once(' ').and_then(|(k, _)| k.split_once('.')).unwrap_or(("", ""));
        let (section, key) = (section.to_string(), key.to_string());
        c.push(&section, &key, msg);
    }
    if !c.errors.is_empty() {
        return Err(ConfigErrors(c.errors));
    }

    let params = match SisParams::new(raw.network.beta.clone(), raw.network.gamma.clone(), raw.safety.xbar.clone(), hi.clone()) {
        Ok(p) => Some(p),
        Err(e) => {
            c.push("network", "beta", format!("network/safety: {e}"));
            None
        }
    };
    if raw.network.x0.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        c.push("network", "x0", "network.x0 entries must lie in [0, 1]".into());
    }

    let mut gains = Vec::with_capacity(n);
    for i in 0..n {
        match ClassKParams::new(eta[i], kappa[i]) {
            Ok(g) => gains.push(g),
            Err(e) => {
                c.push("safety", "eta", format!("safety.eta/kappa for node {}: {e}", i + 1));
                break;
            }
        }
    }
    let mut boxes = Vec::with_capacity(n);
    for i in 0..n {
        match ControlBox::scalar(lo[i], hi[i]) {
            Ok(b) => boxes.push(b),
            Err(e) => {
                c.push("control", "lo", format!("control.lo/hi for node {}: {e}", i + 1));
                break;
            }
        }
    }

    let mut events = Vec::new();
    for event in &raw.control.events {
        match event {
            EventSpec::Box { time, nodes, lo, hi } => match ControlBox::scalar(*lo, *hi) {
                Ok(b) => {
                    for &label in nodes {
                        if let Some(node) = node_index(label, n, "events", &mut c, "control") {
                            events.push(Event { time: *time, change: EventChange::ControlBox { node, bounds: b.clone() } });
                        }
                    }
                }
                Err(e) => c.push("control", "events", format!("control.events box at t = {time}: {e}")),
            },
            EventSpec::Compliance { time, nodes, rho } => {
                for &label in nodes {
                    if let Some(node) = node_index(label, n, "events", &mut c, "control") {
                        events.push(Event { time: *time, change: EventChange::Compliance { node, rho: *rho } });
                    }
                }
            }
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));

    match &raw.experiment {
        ExperimentSpec::Simulate => {}
        ExperimentSpec::NuStarSweep { node, base_state, x_min, x_max, points, delta_nu, nu_max } => {
            check_sweep(&mut c, n, *node, base_state, *x_min, *x_max, *points, "points");
            if !(*delta_nu > 0.0) || !(*nu_max >= 0.0) {
                c.push("experiment", "delta_nu", "experiment.delta_nu must be > 0 and nu_max >= 0".into());
            }
        }
        ExperimentSpec::EpsilonSurface {
            node,
            base_state,
            x_min,
            x_max,
            x_points,
            nu_min,
            nu_max,
            nu_points,
            delta_nu,
            nu_star_max,
        } => {
            check_sweep(&mut c, n, *node, base_state, *x_min, *x_max, *x_points, "x_points");
            if !(*nu_min >= 0.0 && nu_max >= nu_min) || *nu_points < 2 {
                c.push("experiment", "nu_min", "experiment needs 0 <= nu_min <= nu_max and nu_points >= 2".into());
            }
            if !(*delta_nu > 0.0) || !(*nu_star_max >= 0.0) {
                c.push("experiment", "delta_nu", "experiment.delta_nu must be > 0 and nu_star_max >= 0".into());
            }
        }
    }
    if raw.output.formats.is_empty() {
        c.push("output", "formats", "output.formats must name at least one of csv, svg".into());
    }

    let (Some(params), true, true) = (params, gains.len() == n, boxes.len() == n) else {
        return Err(ConfigErrors(c.errors));
    };
    let sim = raw.sim.clone();
    let mut scenario = Scenario::new(sim.t_end, sim.dt, sim.control_period, gains.clone(), boxes.clone());
    scenario.events = events;
    scenario.derivative_policy = match sim.derivative_policy {
        PolicySpec::Zero => DerivativePolicy::Zero,
        PolicySpec::BackwardDifference => DerivativePolicy::BackwardDifference,
    };
    scenario.filter = match sim.filter {
        FilterSpec::Collaborative => SafetyFilter::Collaborative,
        FilterSpec::Disabled => SafetyFilter::Disabled,
    };
    scenario.negotiation =
        NegotiationConfig { max_rounds: sim.max_rounds, margin: sim.margin, record_trace: sim.trace, ..NegotiationConfig::default() };
    scenario.resilience =
        ResilienceSettings { enabled: sim.resilience, delta_nu: sim.delta_nu, nu_max: sim.nu_max, sign: sim.compliance_sign };
    if let Err(e) = scenario.validate(n) {
        c.push("sim", "dt", format!("sim/control: {e}"));
    }
    if !c.errors.is_empty() {
        return Err(ConfigErrors(c.errors));
    }
    Ok(ExperimentConfig {
        params,
        x0: raw.network.x0,
        gains,
        boxes,
        scenario,
        experiment: raw.experiment,
        output: raw.output,
        sim,
    })
}

#[allow(clippy::too_many_arguments)]
fn check_sweep(c: &mut Collector<'_>, n: usize, node: usize, base: &[f64], lo: f64, hi: f64, points: usize, key: &str) {
    node_index(node, n, "node", c, "experiment");
    if base.len() != n {
        c.push("experiment", "base_state", format!("experiment.base_state has {} entries but network.beta is {n}x{n}", base.len()));
    }
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
        c.push("experiment", "x_min", "experiment needs 0 <= x_min <= x_max <= 1".into());
    }
    if points < 2 {
        c.push("experiment", key, format!("experiment.{key} must be >= 2"));
    }
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let last = (points - 1) as f64;
    (0..points).map(|k| if k + 1 == points { hi } else { lo + (hi - lo) * k as f64 / last }).collect()
}

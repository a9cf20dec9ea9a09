//! Experiment configuration files.
//!
//! Configurations are TOML. Keys under `[system]` are named after the model
//! symbols (`delta`, `q_t_max`, `w_rho`, ...). Unknown keys anywhere are
//! rejected, and every violation in a file is reported together.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::metrics::Mode;
use crate::ddqn::AgentConfig;
use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::sysmodel::{
    scaled_gain_levels, EnergyArrival, InterferenceMode, SystemParams, GAIN_LEVEL_COUNT,
};

/// Settings of the `oracle` verb: the frozen knapsack scenario and how hard
/// to train on it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// CPU cycles of each queued task.
    pub cycles: Vec<f64>,
    /// Energy units available.
    pub budget: usize,
    pub epochs: u64,
    pub seeds: u64,
    pub agent: AgentConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            cycles: vec![8.375e6, 4.0e6, 4.5e6],
            budget: 2,
            epochs: 50_000,
            seeds: 10,
            agent: AgentConfig {
                hidden: 32,
                epsilon: 0.1,
                ..AgentConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub devices: usize,
    /// Environment epochs of greedy and centralized runs; federated runs
    /// last `rounds * local_epochs`.
    pub epochs: u64,
    pub out_dir: PathBuf,
    /// Metric rows buffered between flushes of the CSV file.
    pub flush_interval: usize,
    pub system: SystemParams,
    pub agent: AgentConfig,
    pub federation: FederationConfig,
    /// Rounds between aggregated-model checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub oracle: OracleConfig,
}

impl ExperimentConfig {
    /// Epochs the configured mode simulates.
    pub fn horizon(&self) -> u64 {
        match self.mode {
            Mode::Fl => self.federation.rounds * self.federation.local_epochs,
            Mode::Centralized | Mode::Greedy => self.epochs,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<String>,
    seed: Option<i64>,
    devices: Option<i64>,
    epochs: Option<i64>,
    out_dir: Option<String>,
    flush_interval: Option<i64>,
    system: Option<RawSystem>,
    agent: Option<RawAgent>,
    federation: Option<RawFederation>,
    oracle: Option<RawOracle>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n: Option<i64>,
    delta: Option<f64>,
    w: Option<f64>,
    mu: Option<f64>,
    nu: Option<f64>,
    tau: Option<f64>,
    zeta: Option<f64>,
    f_max: Option<f64>,
    p_max: Option<f64>,
    sigma: Option<f64>,
    d_s: Option<f64>,
    pi: Option<f64>,
    q_t_max: Option<i64>,
    q_e_max: Option<i64>,
    energy_unit: Option<f64>,
    p_t: Option<f64>,
    energy_arrival: Option<String>,
    p_e: Option<f64>,
    lambda_e: Option<f64>,
    gain_scale: Option<Vec<f64>>,
    gain_levels: Option<Vec<Vec<f64>>>,
    interference: Option<f64>,
    interference_mode: Option<String>,
    w_d: Option<f64>,
    w_rho: Option<f64>,
    w_eta: Option<f64>,
    w_phi: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    epsilon: Option<f64>,
    gamma: Option<f64>,
    batch_size: Option<i64>,
    buffer_capacity: Option<i64>,
    target_sync_interval: Option<i64>,
    learning_rate: Option<f64>,
    warmup: Option<i64>,
    hidden: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFederation {
    rounds: Option<i64>,
    m: Option<i64>,
    local_epochs: Option<i64>,
    per_node_aggregation: Option<bool>,
    checkpoint_every: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    cycles: Option<Vec<f64>>,
    budget: Option<i64>,
    epochs: Option<i64>,
    seeds: Option<i64>,
    hidden: Option<i64>,
    epsilon: Option<f64>,
}

/// Collects violations while converting raw values.
struct Checker(Vec<String>);

impl Checker {
    fn count(&mut self, key: &str, v: Option<i64>, min: i64, default: usize) -> usize {
        match v {
            None => default,
            Some(x) if x < min => {
                self.0.push(format!("{key} must be >= {min} (got {x})"));
                default
            }
            Some(x) => x as usize,
        }
    }

    fn count64(&mut self, key: &str, v: Option<i64>, min: i64, default: u64) -> u64 {
        self.count(key, v, min, default as usize) as u64
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Parses configuration text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: toml::Value = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    config_from_value(value)
}

/// Validates an already-parsed TOML document.
pub fn config_from_value(value: toml::Value) -> Result<ExperimentConfig> {
    let raw: RawConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| Error::Validation(vec![e.message().to_owned()]))?;
    let mut c = Checker(Vec::new());

    let mode = match raw.mode.as_deref() {
        None => {
            c.0.push("mode is required (fl, centralized, or greedy)".into());
            Mode::Fl
        }
        Some(s) => s.parse().unwrap_or_else(|e: Error| {
            c.0.push(e.to_string());
            Mode::Fl
        }),
    };
    let seed = match raw.seed {
        None => {
            c.0.push("seed is required".into());
            0
        }
        Some(s) => c.count64("seed", Some(s), 0, 0),
    };
    let devices = c.count("devices", raw.devices, 1, 10);
    let flush_interval = c.count("flush_interval", raw.flush_interval, 1, 1000);

    let needs_agent = mode != Mode::Greedy;
    if raw.system.is_none() {
        c.0.push("[system] block is required".into());
    }
    if needs_agent && raw.agent.is_none() {
        c.0.push(format!("[agent] block is required for mode {mode}"));
    }
    if mode == Mode::Fl && raw.federation.is_none() {
        c.0.push("[federation] block is required for mode fl".into());
    }

    let system = system_params(raw.system.unwrap_or_default(), &mut c);
    let agent = agent_config(raw.agent.unwrap_or_default(), AgentConfig::default(), &mut c);
    let (federation, checkpoint_every) = federation_config(raw.federation.unwrap_or_default(), &mut c);
    let fed_default_epochs = federation.rounds * federation.local_epochs;
    let epochs = c.count64("epochs", raw.epochs, 0, fed_default_epochs);
    let oracle = oracle_config(raw.oracle.unwrap_or_default(), &mut c);

    c.0.extend(system.violations());
    if needs_agent {
        c.0.extend(agent.violations().into_iter().map(|v| format!("agent.{v}")));
    }
    if mode == Mode::Fl {
        c.0.extend(federation.violations(devices).into_iter().map(|v| format!("federation.{v}")));
    }
    c.0.extend(oracle.agent.violations().into_iter().map(|v| format!("oracle.{v}")));

    if !c.0.is_empty() {
        return Err(Error::Validation(c.0));
    }
    Ok(ExperimentConfig {
        mode,
        seed,
        devices,
        epochs,
        out_dir: PathBuf::from(raw.out_dir.unwrap_or_else(|| "out".into())),
        flush_interval,
        system,
        agent,
        federation,
        checkpoint_every,
        oracle,
    })
}

/// Parses the keys of a `[system]` block given as a standalone document.
pub fn parse_system(text: &str) -> Result<SystemParams> {
    let raw: RawSystem = toml::from_str(text).map_err(|e| Error::Validation(vec![e.message().to_owned()]))?;
    let mut c = Checker(Vec::new());
    let params = system_params(raw, &mut c);
    c.0.extend(params.violations());
    if c.0.is_empty() {
        Ok(params)
    } else {
        Err(Error::Validation(c.0))
    }
}

fn system_params(r: RawSystem, c: &mut Checker) -> SystemParams {
    let d = SystemParams::default();
    let f = |v: Option<f64>, def: f64| v.unwrap_or(def);

    let energy_arrival = match r.energy_arrival.as_deref().unwrap_or("bernoulli") {
        "bernoulli" => {
            if r.lambda_e.is_some() {
                c.0.push("system.lambda_e applies only to energy_arrival = \"poisson\"".into());
            }
            EnergyArrival::Bernoulli {
                p: r.p_e.unwrap_or(0.5),
            }
        }
        "poisson" => {
            if r.p_e.is_some() {
                c.0.push("system.p_e applies only to energy_arrival = \"bernoulli\"".into());
            }
            EnergyArrival::Poisson {
                lambda: r.lambda_e.unwrap_or(0.5),
            }
        }
        other => {
            c.0.push(format!(
                "system.energy_arrival must be \"bernoulli\" or \"poisson\" (got \"{other}\")"
            ));
            d.energy_arrival
        }
    };
    let interference_mode = match r.interference_mode.as_deref().unwrap_or("constant") {
        "constant" => InterferenceMode::Constant,
        "previous_epoch" => InterferenceMode::PreviousEpoch,
        other => {
            c.0.push(format!(
                "system.interference_mode must be \"constant\" or \"previous_epoch\" (got \"{other}\")"
            ));
            InterferenceMode::Constant
        }
    };

    let n = c.count("system.n", r.n, 1, d.num_edge_nodes);
    let gain_levels = match (r.gain_scale, r.gain_levels) {
        (Some(_), Some(_)) => {
            c.0.push("system.gain_scale and system.gain_levels are mutually exclusive".into());
            d.gain_levels.clone()
        }
        (Some(scales), None) => scaled_gain_levels(&scales),
        (None, Some(ladders)) => ladders
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                <[f64; GAIN_LEVEL_COUNT]>::try_from(l.as_slice()).unwrap_or_else(|_| {
                    c.0.push(format!(
                        "system.gain_levels[{i}] must have {GAIN_LEVEL_COUNT} entries (got {})",
                        l.len()
                    ));
                    [1.0; GAIN_LEVEL_COUNT]
                })
            })
            .collect(),
        (None, None) if n == d.num_edge_nodes => d.gain_levels.clone(),
        (None, None) => {
            c.0.push(format!(
                "system.n = {n} needs gain_scale or gain_levels for every edge node"
            ));
            d.gain_levels.clone()
        }
    };

    SystemParams {
        num_edge_nodes: n,
        epoch_seconds: f(r.delta, d.epoch_seconds),
        bandwidth_hz: f(r.w, d.bandwidth_hz),
        task_bits: f(r.mu, d.task_bits),
        task_cycles: f(r.nu, d.task_cycles),
        switched_cap: f(r.tau, d.switched_cap),
        activity_factor: f(r.zeta, d.activity_factor),
        max_cpu_hz: f(r.f_max, d.max_cpu_hz),
        max_tx_power: f(r.p_max, d.max_tx_power),
        handover_seconds: f(r.sigma, d.handover_seconds),
        server_exec_seconds: f(r.d_s, d.server_exec_seconds),
        price_per_second: f(r.pi, d.price_per_second),
        task_queue_cap: c.count("system.q_t_max", r.q_t_max, 0, d.task_queue_cap),
        energy_queue_cap: c.count("system.q_e_max", r.q_e_max, 0, d.energy_queue_cap),
        energy_unit_joules: f(r.energy_unit, d.energy_unit_joules),
        task_arrival_prob: f(r.p_t, d.task_arrival_prob),
        energy_arrival,
        gain_levels,
        interference_watts: f(r.interference, d.interference_watts),
        interference_mode,
        weights: crate::sysmodel::UtilityWeights {
            delay: f(r.w_d, d.weights.delay),
            queuing: f(r.w_rho, d.weights.queuing),
            drops: f(r.w_eta, d.weights.drops),
            payment: f(r.w_phi, d.weights.payment),
        },
    }
}

fn agent_config(r: RawAgent, d: AgentConfig, c: &mut Checker) -> AgentConfig {
    AgentConfig {
        epsilon: r.epsilon.unwrap_or(d.epsilon),
        gamma: r.gamma.unwrap_or(d.gamma),
        batch_size: c.count("agent.batch_size", r.batch_size, 1, d.batch_size),
        buffer_capacity: c.count("agent.buffer_capacity", r.buffer_capacity, 1, d.buffer_capacity),
        target_sync_interval: c.count64("agent.target_sync_interval", r.target_sync_interval, 1, d.target_sync_interval),
        learning_rate: r.learning_rate.unwrap_or(d.learning_rate),
        warmup: c.count("agent.warmup", r.warmup, 0, d.warmup),
        hidden: c.count("agent.hidden", r.hidden, 1, d.hidden),
    }
}

fn federation_config(r: RawFederation, c: &mut Checker) -> (FederationConfig, u64) {
    let d = FederationConfig::default();
    (
        FederationConfig {
            rounds: c.count64("federation.rounds", r.rounds, 1, d.rounds),
            devices_per_round: c.count("federation.m", r.m, 1, d.devices_per_round),
            local_epochs: c.count64("federation.local_epochs", r.local_epochs, 0, d.local_epochs),
            per_node_aggregation: r.per_node_aggregation.unwrap_or(d.per_node_aggregation),
        },
        c.count64("federation.checkpoint_every", r.checkpoint_every, 0, 0),
    )
}

fn oracle_config(r: RawOracle, c: &mut Checker) -> OracleConfig {
    let d = OracleConfig::default();
    let agent = AgentConfig {
        hidden: c.count("oracle.hidden", r.hidden, 1, d.agent.hidden),
        epsilon: r.epsilon.unwrap_or(d.agent.epsilon),
        ..d.agent.clone()
    };
    OracleConfig {
        cycles: r.cycles.unwrap_or(d.cycles),
        budget: c.count("oracle.budget", r.budget, 0, d.budget),
        epochs: c.count64("oracle.epochs", r.epochs, 0, d.epochs),
        seeds: c.count64("oracle.seeds", r.seeds, 1, d.seeds),
        agent,
    }
}

/// Sets `path` (dot-separated, e.g. `agent.epsilon`) in a parsed document,
/// creating intermediate tables. `literal` is read as a TOML value, falling
/// back to a plain string.
pub fn override_value(doc: &mut toml::Value, path: &str, literal: &str) -> Result<()> {
    let value = parse_literal(literal);
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::invalid(format!("malformed parameter path `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = doc
        .as_table_mut()
        .ok_or_else(|| Error::invalid("configuration root is not a table"))?;
    for k in parents {
        table = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("`{k}` in `{path}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(literal: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {literal}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(literal.to_owned()))
}

/// Checks that `path` names a key this schema accepts.
pub fn check_param_path(doc: &toml::Value, path: &str) -> Result<()> {
    let mut probe = doc.clone();
    let current = path
        .split('.')
        .try_fold(doc, |v, k| v.get(k))
        .cloned()
        .unwrap_or(toml::Value::Integer(1));
    override_value(&mut probe, path, &current.to_string())?;
    let raw: std::result::Result<RawConfig, _> = probe.try_into();
    raw.map(|_| ()).map_err(|e| {
        Error::Validation(vec![format!("parameter `{path}` does not resolve: {}", e.message())])
    })
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Fl,
            seed: 0,
            devices: 10,
            epochs: 10_000,
            out_dir: PathBuf::from("out"),
            flush_interval: 1000,
            system: SystemParams::default(),
            agent: AgentConfig::default(),
            federation: FederationConfig::default(),
            checkpoint_every: 0,
            oracle: OracleConfig::default(),
        }
    }
}

use crate::error::{Error, Result};

/// Number of discrete channel-gain levels per edge node.
pub const GAIN_LEVEL_COUNT: usize = 6;

/// Relative spacing of the default gain ladder; multiplied by a per-node scale.
pub const BASE_GAIN_LEVELS: [f64; GAIN_LEVEL_COUNT] = [0.3, 0.42, 0.6, 0.85, 1.2, 1.7];

/// Default per-node gain scales for the three default edge nodes.
pub const DEFAULT_GAIN_SCALES: [f64; 3] = [250.0, 400.0, 600.0];

/// How energy units arrive at the device each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyArrival {
    /// At most one unit per epoch, with the given probability.
    Bernoulli { p: f64 },
    /// Poisson-distributed unit count with the given mean.
    Poisson { lambda: f64 },
}

/// Interference-plus-noise model at the edge-node receivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterferenceMode {
    /// A fixed `interference_watts` per node.
    Constant,
    /// `interference_watts` as a noise floor plus the received power of every
    /// other device that transmitted to the same node in the previous epoch.
    PreviousEpoch,
}

/// Weights of the per-epoch cost terms; utility is their negated sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityWeights {
    pub delay: f64,
    pub queuing: f64,
    pub drops: f64,
    pub payment: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            delay: 1.0,
            queuing: 1.0,
            drops: 1.0,
            payment: 1.0,
        }
    }
}

/// Physical and stochastic parameters of one device and its edge nodes.
///
/// Defaults reproduce the reference parameter table; values the table leaves
/// open (energy unit size, gains, interference, price, arrival rates) carry
/// the simulator's documented defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub num_edge_nodes: usize,
    pub epoch_seconds: f64,
    pub bandwidth_hz: f64,
    pub task_bits: f64,
    pub task_cycles: f64,
    pub switched_cap: f64,
    pub activity_factor: f64,
    pub max_cpu_hz: f64,
    pub max_tx_power: f64,
    pub handover_seconds: f64,
    pub server_exec_seconds: f64,
    pub price_per_second: f64,
    pub task_queue_cap: usize,
    pub energy_queue_cap: usize,
    pub energy_unit_joules: f64,
    pub task_arrival_prob: f64,
    pub energy_arrival: EnergyArrival,
    /// One strictly increasing ladder of gains per edge node.
    pub gain_levels: Vec<[f64; GAIN_LEVEL_COUNT]>,
    pub interference_watts: f64,
    pub interference_mode: InterferenceMode,
    pub weights: UtilityWeights,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            num_edge_nodes: DEFAULT_GAIN_SCALES.len(),
            epoch_seconds: 5.0e-3,
            bandwidth_hz: 6.0e5,
            task_bits: 3.0e4,
            task_cycles: 8.375e6,
            switched_cap: 1.0e-28,
            activity_factor: 3.0,
            max_cpu_hz: 2.0e9,
            max_tx_power: 2.0,
            handover_seconds: 2.0e-3,
            server_exec_seconds: 1.0e-6,
            price_per_second: 1.0,
            task_queue_cap: 4,
            energy_queue_cap: 4,
            energy_unit_joules: 2.0e-3,
            task_arrival_prob: 0.5,
            energy_arrival: EnergyArrival::Bernoulli { p: 0.5 },
            gain_levels: scaled_gain_levels(&DEFAULT_GAIN_SCALES),
            interference_watts: 1.0e-1,
            interference_mode: InterferenceMode::Constant,
            weights: UtilityWeights::default(),
        }
    }
}

/// The default ladder multiplied by each node's scale.
pub fn scaled_gain_levels(scales: &[f64]) -> Vec<[f64; GAIN_LEVEL_COUNT]> {
    scales
        .iter()
        .map(|&s| BASE_GAIN_LEVELS.map(|g| g * s))
        .collect()
}

impl SystemParams {
    /// Number of joint actions `(c, e)`: `(N + 1) * (q_e_max + 1)`.
    pub fn action_count(&self) -> usize {
        (self.num_edge_nodes + 1) * (self.energy_queue_cap + 1)
    }

    /// Energy needed to run one task locally at the maximum CPU frequency,
    /// `tau * nu * f_max^(zeta - 1)`.
    pub fn max_frequency_energy(&self) -> f64 {
        max_frequency_energy(self, self.task_cycles)
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut positive = |name: &str, x: f64| {
            if !(x.is_finite() && x > 0.0) {
                v.push(format!("{name} must be finite and > 0 (got {x})"));
            }
        };
        positive("delta", self.epoch_seconds);
        positive("w", self.bandwidth_hz);
        positive("mu", self.task_bits);
        positive("nu", self.task_cycles);
        positive("tau", self.switched_cap);
        positive("f_max", self.max_cpu_hz);
        positive("p_max", self.max_tx_power);
        positive("sigma", self.handover_seconds);
        positive("d_s", self.server_exec_seconds);
        positive("pi", self.price_per_second);
        positive("energy_unit", self.energy_unit_joules);
        positive("interference", self.interference_watts);

        if !(self.activity_factor.is_finite() && self.activity_factor > 1.0) {
            v.push(format!("zeta must be > 1 (got {})", self.activity_factor));
        }
        if self.num_edge_nodes == 0 {
            v.push("n must be >= 1".into());
        }
        if self.task_queue_cap == 0 {
            v.push("q_t_max must be >= 1".into());
        }
        if self.energy_queue_cap == 0 {
            v.push("q_e_max must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.task_arrival_prob) {
            v.push(format!("p_t must lie in [0, 1] (got {})", self.task_arrival_prob));
        }
        match self.energy_arrival {
            EnergyArrival::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                v.push(format!("p_e must lie in [0, 1] (got {p})"));
            }
            EnergyArrival::Poisson { lambda } if !(lambda.is_finite() && lambda >= 0.0) => {
                v.push(format!("lambda_e must be finite and >= 0 (got {lambda})"));
            }
            _ => {}
        }
        if self.handover_seconds >= self.epoch_seconds {
            v.push("sigma must be shorter than delta".into());
        }
        if self.gain_levels.len() != self.num_edge_nodes {
            v.push(format!(
                "gain_levels has {} ladders but n = {}",
                self.gain_levels.len(),
                self.num_edge_nodes
            ));
        }
        for (n, ladder) in self.gain_levels.iter().enumerate() {
            if ladder.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                v.push(format!("gain_levels[{n}] must be finite and > 0"));
            }
            if ladder.windows(2).any(|w| w[0] >= w[1]) {
                v.push(format!("gain_levels[{n}] must be strictly increasing"));
            }
        }
        let w = &self.weights;
        for (name, x) in [
            ("w_d", w.delay),
            ("w_rho", w.queuing),
            ("w_eta", w.drops),
            ("w_phi", w.payment),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(format!("{name} must be finite and >= 0 (got {x})"));
            }
        }
        v
    }
}

/// Local execution energy of a task of `cycles` at the maximum frequency.
pub fn max_frequency_energy(params: &SystemParams, cycles: f64) -> f64 {
    params.switched_cap * cycles * params.max_cpu_hz.powf(params.activity_factor - 1.0)
}

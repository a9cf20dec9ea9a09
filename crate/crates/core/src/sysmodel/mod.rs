//! Discrete-time physics of one IoT device and its edge nodes.
//!
//! Every epoch the device picks a [`JointAction`]: where to run the task at
//! the head of its queue (locally or on edge node `c`) and how many energy
//! units to spend on it. [`step`] turns that choice plus the epoch's random
//! arrivals into an [`EpochOutcome`] and the successor [`NetworkState`].

mod dynamics;
mod env;
mod params;
mod physics;

pub use dynamics::{
    epoch_outcome, sample_arrivals, sample_gains, step, step_with_interference, utility,
    validate_action,
};
pub use env::DeviceEnv;
pub use params::{
    max_frequency_energy, scaled_gain_levels, EnergyArrival, InterferenceMode, SystemParams,
    UtilityWeights, BASE_GAIN_LEVELS, DEFAULT_GAIN_SCALES, GAIN_LEVEL_COUNT,
};
pub use physics::{
    achievable_rate, deliverable_bits, execution_delay, handover_delay, local_exec_delay,
    local_exec_delay_for, payment, solve_transmission_time, transmission_root,
    TRANSMISSION_REL_TOL,
};

/// Observable environment of one device at the start of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    /// Tasks waiting in the queue, `0..=q_t_max`.
    pub q_t: usize,
    /// Stored energy units, `0..=q_e_max`.
    pub q_e: usize,
    /// Associated edge node, 1-based.
    pub assoc: usize,
    /// Current channel gain towards each edge node.
    pub gains: Vec<f64>,
}

impl NetworkState {
    /// Empty queues, associated with node 1, every link at its lowest level.
    pub fn initial(params: &SystemParams) -> Self {
        Self {
            q_t: 0,
            q_e: 0,
            assoc: 1,
            gains: params.gain_levels.iter().map(|l| l[0]).collect(),
        }
    }

    pub fn is_valid(&self, params: &SystemParams) -> bool {
        self.q_t <= params.task_queue_cap
            && self.q_e <= params.energy_queue_cap
            && (1..=params.num_edge_nodes).contains(&self.assoc)
            && self.gains.len() == params.num_edge_nodes
            && self
                .gains
                .iter()
                .zip(&params.gain_levels)
                .all(|(g, ladder)| ladder.contains(g))
    }
}

/// Offloading decision and energy allocation for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointAction {
    /// 0 runs locally, `n >= 1` offloads to edge node `n`.
    pub offload: usize,
    /// Energy units spent; 0 leaves the task queued.
    pub energy: usize,
}

impl JointAction {
    pub const IDLE: JointAction = JointAction { offload: 0, energy: 0 };
}

/// Random arrivals during one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ArrivalSample {
    pub tasks: usize,
    pub energy: usize,
}

/// Everything one epoch produced.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochOutcome {
    /// Execution delay of the head task; 0 when nothing ran.
    pub delay: f64,
    pub handover: f64,
    /// Transmission time; 0 for local or idle epochs.
    pub transmission: f64,
    /// Queuing count `q_t - 1{d > 0}`.
    pub queuing: usize,
    pub drops: usize,
    pub payment: f64,
    /// The head task finished inside the epoch (`0 < d <= delta`).
    pub completed: bool,
    pub energy_units_spent: usize,
    pub utility: f64,
}

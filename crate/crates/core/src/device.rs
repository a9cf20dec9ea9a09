//! A simulated device and the per-epoch act/step/learn loop that every
//! trainer shares.

use rand_chacha::ChaCha12Rng;

use crate::ddqn::{action_mask, decode_action, encode_state, feature_len, Agent, AgentConfig, Transition};
use crate::error::Result;
use crate::simctl::streams::derive_stream;
use crate::sysmodel::{DeviceEnv, EpochOutcome, InterferenceMode, JointAction, SystemParams};

/// One device: its environment and the stream used for exploration.
#[derive(Debug, Clone)]
pub struct Device {
    pub id: usize,
    pub env: DeviceEnv,
    pub policy_rng: ChaCha12Rng,
}

/// What one device-epoch produced.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub action: JointAction,
    pub outcome: EpochOutcome,
    pub transition: Transition,
}

impl Device {
    pub fn new(id: usize, params: SystemParams, seed: u64) -> Result<Self> {
        let key = id as u64;
        let env = DeviceEnv::new(
            params,
            derive_stream(seed, key, "arrivals"),
            derive_stream(seed, key, "gains"),
        )?;
        Ok(Self {
            id,
            env,
            policy_rng: derive_stream(seed, key, "policy"),
        })
    }

    /// Chooses with `agent` and advances the environment. The returned
    /// transition is not stored anywhere.
    pub fn act(&mut self, agent: &Agent, interference: &[f64]) -> Result<EpochRecord> {
        let params = self.env.params();
        let features = encode_state(self.env.state(), params);
        let mask = action_mask(self.env.state(), params);
        let index = agent.select_action(&features, &mask, &mut self.policy_rng)?;
        let action = decode_action(index, params)?;
        self.apply(action, index, features, interference)
    }

    /// Takes a fixed action; `index` is its flat action id.
    pub fn apply(
        &mut self,
        action: JointAction,
        index: usize,
        features: Vec<f64>,
        interference: &[f64],
    ) -> Result<EpochRecord> {
        let outcome = self.env.step_with_interference(action, interference)?;
        let params = self.env.params();
        let transition = Transition {
            state: features,
            action: index,
            reward: outcome.utility,
            next_state: encode_state(self.env.state(), params),
            next_mask: action_mask(self.env.state(), params),
        };
        Ok(EpochRecord {
            action,
            outcome,
            transition,
        })
    }
}

/// An agent plus the stream it samples minibatches from.
#[derive(Debug, Clone)]
pub struct Learner {
    pub agent: Agent,
    pub replay_rng: ChaCha12Rng,
}

impl Learner {
    /// Agent keyed on `learner_id`, shaped for `params`.
    pub fn new(learner_id: usize, config: AgentConfig, params: &SystemParams, seed: u64) -> Result<Self> {
        let key = learner_id as u64;
        let agent = Agent::new(
            config,
            feature_len(params),
            params.action_count(),
            &mut derive_stream(seed, key, "init"),
        )?;
        Ok(Self {
            agent,
            replay_rng: derive_stream(seed, key, "replay"),
        })
    }

    /// Stores the transition and runs at most one train step.
    pub fn observe(&mut self, transition: Transition) -> Result<Option<f64>> {
        self.agent.remember(transition)?;
        self.agent.sample_and_train(&mut self.replay_rng)
    }
}

/// Interference-plus-noise seen by each device in `devices` for the coming
/// epoch. Under the previous-epoch model every device hears the other
/// listed devices' last transmissions on top of the noise floor.
pub fn interference_for(devices: &[&Device], params: &SystemParams) -> Vec<Vec<f64>> {
    let n = params.num_edge_nodes;
    let floor = params.interference_watts;
    match params.interference_mode {
        InterferenceMode::Constant => vec![vec![floor; n]; devices.len()],
        InterferenceMode::PreviousEpoch => {
            let totals: Vec<f64> = (1..=n)
                .map(|node| devices.iter().map(|d| d.env.received_power_at(node)).sum())
                .collect();
            devices
                .iter()
                .map(|d| {
                    (1..=n)
                        .map(|node| floor + (totals[node - 1] - d.env.received_power_at(node)).max(0.0))
                        .collect()
                })
                .collect()
        }
    }
}

/// Runs `epochs` of independent (non-federated) DDQN on one device.
pub fn run_standalone(
    device: &mut Device,
    learner: &mut Learner,
    epochs: u64,
    mut on_epoch: impl FnMut(u64, &EpochRecord, Option<f64>) -> Result<()>,
) -> Result<()> {
    for epoch in 0..epochs {
        let interference = interference_for(&[&*device], device.env.params()).remove(0);
        let record = device.act(&learner.agent, &interference)?;
        let loss = learner.observe(record.transition.clone())?;
        on_epoch(epoch, &record, loss)?;
    }
    Ok(())
}

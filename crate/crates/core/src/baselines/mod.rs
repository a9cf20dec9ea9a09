//! Reference policies and oracles: the myopic greedy policy, centralized
//! training on pooled experience, and the exact knapsack special case.

pub mod knapsack;
pub mod special;

pub use knapsack::{knapsack_brute_force, knapsack_optimal, KnapsackInstance};
pub use special::{
    agent_policy, oracle_policy, special_case_env_check, train_special_case, SpecialCaseObservation,
    SpecialCaseScenario,
};

use crate::ddqn::{action_index, action_mask, decode_action, encode_state, AgentConfig};
use crate::device::{interference_for, Device, EpochRecord, Learner};
use crate::error::{Error, Result};
use crate::simctl::metrics::{MetricsRow, MetricsSink, Mode};
use crate::sysmodel::{epoch_outcome, ArrivalSample, JointAction, NetworkState, SystemParams};

/// The valid action with the best utility for this epoch alone.
///
/// Every action allowed by the agent's mask is scored under the current
/// gains and the configured interference level, with no arrivals. Ties go
/// to the lowest action index.
pub fn greedy_action(state: &NetworkState, params: &SystemParams) -> Result<JointAction> {
    let mut best: Option<(f64, JointAction)> = None;
    for (index, ok) in action_mask(state, params).into_iter().enumerate() {
        if !ok {
            continue;
        }
        let action = decode_action(index, params)?;
        let u = epoch_outcome(state, action, ArrivalSample::default(), params)?.utility;
        if best.is_none_or(|(b, _)| u > b) {
            best = Some((u, action));
        }
    }
    Ok(best.map_or(JointAction::IDLE, |(_, a)| a))
}

fn build_devices(params: &SystemParams, count: usize, seed: u64) -> Result<Vec<Device>> {
    if count == 0 {
        return Err(Error::invalid("at least one device is required"));
    }
    params.validate()?;
    (0..count).map(|id| Device::new(id, params.clone(), seed)).collect()
}

fn step_all(
    devices: &mut [Device],
    params: &SystemParams,
    mut choose: impl FnMut(&mut Device, &[f64]) -> Result<EpochRecord>,
    mut emit: impl FnMut(usize, EpochRecord) -> Result<()>,
) -> Result<()> {
    let interference = {
        let refs: Vec<&Device> = devices.iter().collect();
        interference_for(&refs, params)
    };
    for (d, noise) in devices.iter_mut().zip(&interference) {
        let record = choose(d, noise)?;
        emit(d.id, record)?;
    }
    Ok(())
}

/// Runs `device_count` devices under the greedy policy for `epochs`.
pub fn run_greedy(
    params: &SystemParams,
    device_count: usize,
    epochs: u64,
    seed: u64,
    sink: &mut dyn MetricsSink,
) -> Result<()> {
    let mut devices = build_devices(params, device_count, seed)?;
    for epoch in 0..epochs {
        step_all(
            &mut devices,
            params,
            |d, noise| {
                let state = d.env.state().clone();
                let action = greedy_action(&state, params)?;
                let index = action_index(action, params)?;
                d.apply(action, index, encode_state(&state, params), noise)
            },
            |id, record| sink.record(MetricsRow::from_record(0, epoch, id, Mode::Greedy, 0.0, &record, None)),
        )?;
    }
    Ok(())
}

/// Centralized training: one agent acts for every device and learns from
/// the pooled transitions, as if uploads to the edge were free and lossless.
///
/// Within an epoch devices act in id order and each adds one transition to
/// the pool; the agent then runs at most one train step. The shared learner
/// uses the
/// streams of device 0, so a single-device run matches standalone training.
pub fn centralized_train(
    params: &SystemParams,
    config: &AgentConfig,
    device_count: usize,
    epochs: u64,
    seed: u64,
    sink: &mut dyn MetricsSink,
) -> Result<Learner> {
    let mut devices = build_devices(params, device_count, seed)?;
    let mut learner = Learner::new(0, config.clone(), params, seed)?;
    let epsilon = config.epsilon;
    for epoch in 0..epochs {
        let mut records = Vec::with_capacity(device_count);
        step_all(
            &mut devices,
            params,
            |d, noise| {
                let record = d.act(&learner.agent, noise)?;
                learner.agent.remember(record.transition.clone())?;
                Ok(record)
            },
            |id, record| {
                records.push((id, record));
                Ok(())
            },
        )?;
        // The shared agent trains once per epoch; the loss is attributed to
        // the last transition pooled before the step.
        let loss = learner.agent.sample_and_train(&mut learner.replay_rng)?;
        let last = records.len().saturating_sub(1);
        for (k, (id, record)) in records.into_iter().enumerate() {
            let loss = if k == last { loss } else { None };
            sink.record(MetricsRow::from_record(0, epoch, id, Mode::Centralized, epsilon, &record, loss))?;
        }
    }
    Ok(learner)
}

//! The frozen no-arrival scenario in which offloading reduces to a 0/1
//! knapsack.
//!
//! A device holds `N'` queued tasks and `M'` energy units, nothing new
//! arrives, and every task runs locally at the maximum CPU frequency. Task
//! `k` completes exactly when it is given at least `e'_k` units and is then
//! worth `u'_k`. The scenario is played as a sequential decision problem:
//! one decision per task, in queue order, choosing how many units to spend.
//! When the last task has been decided the scenario starts over, so a
//! learning agent sees an unbroken stream of transitions.

use ndarray::ArrayView1;

use super::knapsack::{knapsack_optimal, KnapsackInstance};
use crate::ddqn::{Agent, AgentConfig, Transition};
use crate::error::{Error, Result};
use crate::qnet::masked_argmax;
use crate::simctl::streams::derive_stream;
use crate::sysmodel::{max_frequency_energy, SystemParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SpecialCaseScenario {
    pub instance: KnapsackInstance,
    /// Largest energy allocation an action may request.
    pub max_allocation: usize,
    /// Number of task slots in the position encoding.
    pub slots: usize,
}

/// What a policy sees before each decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecialCaseObservation {
    /// Index of the task being decided.
    pub position: usize,
    pub remaining_energy: usize,
    pub features: Vec<f64>,
    /// `mask[e]` is true when `e` units are affordable.
    pub mask: Vec<bool>,
}

impl SpecialCaseScenario {
    /// Wraps an instance, sized by the queue capacities of `params`.
    pub fn new(instance: KnapsackInstance, params: &SystemParams) -> Result<Self> {
        instance.validate()?;
        let mut v = Vec::new();
        if instance.is_empty() || instance.len() > params.task_queue_cap {
            v.push(format!(
                "task count must lie in 1..={} (got {})",
                params.task_queue_cap,
                instance.len()
            ));
        }
        if instance.budget > params.energy_queue_cap {
            v.push(format!(
                "budget must be <= {} (got {})",
                params.energy_queue_cap, instance.budget
            ));
        }
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        Ok(Self {
            instance,
            max_allocation: params.energy_queue_cap,
            slots: params.task_queue_cap,
        })
    }

    /// Builds the instance from per-task CPU cycles.
    ///
    /// `e'_k` is the energy of `cycles[k]` at the maximum frequency rounded up
    /// to whole units. `u'_k = w_eta - w_d * cycles[k] / f_max`: completing the
    /// task spares it from being dropped and costs its execution delay.
    pub fn from_cycles(cycles: &[f64], budget: usize, params: &SystemParams) -> Result<Self> {
        let mut utilities = Vec::with_capacity(cycles.len());
        let mut costs = Vec::with_capacity(cycles.len());
        for &nu in cycles {
            if !(nu.is_finite() && nu > 0.0) {
                return Err(Error::invalid(format!("task cycles must be > 0 (got {nu})")));
            }
            let joules = max_frequency_energy(params, nu);
            costs.push(((joules / params.energy_unit_joules) * (1.0 - 1e-12)).ceil().max(1.0) as usize);
            utilities.push(params.weights.drops - params.weights.delay * nu / params.max_cpu_hz);
        }
        Self::new(KnapsackInstance::new(utilities, costs, budget)?, params)
    }

    pub fn feature_len(&self) -> usize {
        3 + self.slots
    }

    pub fn action_count(&self) -> usize {
        self.max_allocation + 1
    }

    /// `[remaining / cap, one_hot(position), e'_k / cap, u'_k / max u']`.
    pub fn observe(&self, position: usize, remaining: usize) -> SpecialCaseObservation {
        let cap = self.max_allocation as f64;
        let u_max = self.instance.utilities.iter().cloned().fold(0.0, f64::max);
        let mut features = vec![0.0; self.feature_len()];
        features[0] = remaining as f64 / cap;
        features[1 + position] = 1.0;
        features[1 + self.slots] = self.instance.costs[position] as f64 / cap;
        features[2 + self.slots] = if u_max > 0.0 {
            self.instance.utilities[position] / u_max
        } else {
            0.0
        };
        SpecialCaseObservation {
            position,
            remaining_energy: remaining,
            features,
            mask: (0..=self.max_allocation).map(|e| e <= remaining).collect(),
        }
    }

    /// Reward and remaining energy after spending `energy` on task `position`.
    pub fn decide(&self, position: usize, remaining: usize, energy: usize) -> Result<(f64, usize)> {
        if energy > remaining {
            return Err(Error::InvalidAction(format!(
                "allocates {energy} units with {remaining} left"
            )));
        }
        let reward = if energy >= self.instance.costs[position] {
            self.instance.utilities[position]
        } else {
            0.0
        };
        Ok((reward, remaining - energy))
    }

    /// Total utility collected by `policy` over one pass through the tasks.
    pub fn play(&self, mut policy: impl FnMut(&SpecialCaseObservation) -> Result<usize>) -> Result<f64> {
        let mut remaining = self.instance.budget;
        let mut total = 0.0;
        for k in 0..self.instance.len() {
            let obs = self.observe(k, remaining);
            let (r, left) = self.decide(k, remaining, policy(&obs)?)?;
            total += r;
            remaining = left;
        }
        Ok(total)
    }
}

/// Share of the knapsack optimum that `policy` collects, in `[0, 1]`. An
/// instance whose optimum is 0 scores 1.
pub fn special_case_env_check(
    policy: impl FnMut(&SpecialCaseObservation) -> Result<usize>,
    scenario: &SpecialCaseScenario,
) -> Result<f64> {
    let (optimum, _) = knapsack_optimal(&scenario.instance)?;
    let achieved = scenario.play(policy)?;
    if optimum <= 0.0 {
        return Ok(if achieved <= 0.0 { 1.0 } else { 0.0 });
    }
    Ok(achieved / optimum)
}

/// Spends exactly `e'_k` on the tasks of the optimal set and nothing otherwise.
pub fn oracle_policy(scenario: &SpecialCaseScenario) -> Result<impl FnMut(&SpecialCaseObservation) -> Result<usize>> {
    let (_, chosen) = knapsack_optimal(&scenario.instance)?;
    let costs = scenario.instance.costs.clone();
    Ok(move |obs: &SpecialCaseObservation| {
        Ok(if chosen.contains(&obs.position) {
            costs[obs.position]
        } else {
            0
        })
    })
}

/// Greedy action of a trained agent, for use with [`special_case_env_check`].
pub fn agent_policy(agent: &Agent) -> impl FnMut(&SpecialCaseObservation) -> Result<usize> + '_ {
    move |obs: &SpecialCaseObservation| {
        let q = agent.q_values(&obs.features)?;
        masked_argmax(ArrayView1::from(&q), &obs.mask)
            .ok_or_else(|| Error::invalid("no affordable allocation"))
    }
}

/// Trains a fresh DDQN agent on the repeating scenario for `epochs` decisions.
pub fn train_special_case(
    scenario: &SpecialCaseScenario,
    config: AgentConfig,
    epochs: u64,
    seed: u64,
) -> Result<Agent> {
    let mut agent = Agent::new(
        config,
        scenario.feature_len(),
        scenario.action_count(),
        &mut derive_stream(seed, 0, "special-init"),
    )?;
    let mut policy_rng = derive_stream(seed, 0, "special-policy");
    let mut replay_rng = derive_stream(seed, 0, "special-replay");
    let n = scenario.instance.len();
    let (mut k, mut remaining) = (0, scenario.instance.budget);
    for _ in 0..epochs {
        let obs = scenario.observe(k, remaining);
        let action = agent.select_action(&obs.features, &obs.mask, &mut policy_rng)?;
        let (reward, left) = scenario.decide(k, remaining, action)?;
        (k, remaining) = if k + 1 == n {
            (0, scenario.instance.budget)
        } else {
            (k + 1, left)
        };
        let next = scenario.observe(k, remaining);
        agent.remember(Transition {
            state: obs.features,
            action,
            reward,
            next_state: next.features,
            next_mask: next.mask,
        })?;
        agent.sample_and_train(&mut replay_rng)?;
    }
    Ok(agent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> SpecialCaseScenario {
        SpecialCaseScenario::from_cycles(&[8.375e6, 4.0e6, 4.5e6], 2, &SystemParams::default()).unwrap()
    }

    #[test]
    fn derived_costs_and_utilities() {
        let s = scenario();
        // 1e-28 * nu * (2e9)^2 joules in units of 2e-3 J.
        assert_eq!(s.instance.costs, vec![2, 1, 1]);
        let u = &s.instance.utilities;
        assert!((u[0] - (1.0 - 8.375e6 / 2e9)).abs() < 1e-15);
        assert!((u[1] - 0.998).abs() < 1e-15);
        assert!((u[2] - 0.99775).abs() < 1e-15);
    }

    #[test]
    fn oracle_replay_scores_one() {
        let s = scenario();
        assert_eq!(special_case_env_check(oracle_policy(&s).unwrap(), &s).unwrap(), 1.0);
    }

    #[test]
    fn never_executing_scores_zero() {
        let s = scenario();
        assert_eq!(special_case_env_check(|_| Ok(0), &s).unwrap(), 0.0);
    }

    #[test]
    fn zero_optimum_guard() {
        let p = SystemParams::default();
        let s = SpecialCaseScenario::new(KnapsackInstance::new(vec![0.0, 0.0], vec![1, 1], 2).unwrap(), &p).unwrap();
        assert_eq!(special_case_env_check(|o| Ok(o.remaining_energy.min(1)), &s).unwrap(), 1.0);
    }

    #[test]
    fn first_come_policy_is_suboptimal() {
        let s = scenario();
        let ratio = special_case_env_check(
            |o| Ok(if o.remaining_energy >= 2 && o.position == 0 { 2 } else { o.remaining_energy.min(1) }),
            &s,
        )
        .unwrap();
        assert!(ratio > 0.49 && ratio < 0.51);
    }

    #[test]
    fn over_budget_allocation_is_rejected() {
        let s = scenario();
        assert!(s.play(|_| Ok(3)).is_err());
    }

    #[test]
    fn scenario_respects_queue_caps() {
        let p = SystemParams::default();
        assert!(SpecialCaseScenario::from_cycles(&[1e6; 5], 2, &p).is_err());
        assert!(SpecialCaseScenario::from_cycles(&[1e6], 5, &p).is_err());
    }
}

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::params::{EnergyArrival, SystemParams, UtilityWeights};
use super::physics::{handover_delay, local_exec_delay, payment, solve_transmission_time};
use super::{ArrivalSample, EpochOutcome, JointAction, NetworkState};
use crate::error::{Error, Result};

/// Rejects actions the state cannot support.
pub fn validate_action(state: &NetworkState, action: JointAction, params: &SystemParams) -> Result<()> {
    if action.offload > params.num_edge_nodes {
        return Err(Error::InvalidAction(format!(
            "offload target {} exceeds the {} edge nodes",
            action.offload, params.num_edge_nodes
        )));
    }
    if action.energy > state.q_e {
        return Err(Error::InvalidAction(format!(
            "allocates {} energy units but only {} are stored",
            action.energy, state.q_e
        )));
    }
    if state.q_t == 0 && action.energy > 0 {
        return Err(Error::InvalidAction(
            "allocates energy with an empty task queue".into(),
        ));
    }
    Ok(())
}

/// Negated weighted cost; the queuing count is scaled by `delta` so every
/// delay-like term is in seconds.
pub fn utility(outcome: &EpochOutcome, weights: &UtilityWeights, epoch_seconds: f64) -> f64 {
    -(weights.delay * outcome.delay
        + weights.queuing * outcome.queuing as f64 * epoch_seconds
        + weights.drops * outcome.drops as f64
        + weights.payment * outcome.payment)
}

/// Outcome of one epoch under constant interference, without advancing state.
pub fn epoch_outcome(
    state: &NetworkState,
    action: JointAction,
    arrivals: ArrivalSample,
    params: &SystemParams,
) -> Result<EpochOutcome> {
    let interference = vec![params.interference_watts; params.num_edge_nodes];
    outcome_with(state, action, arrivals, params, &interference)
}

fn outcome_with(
    state: &NetworkState,
    action: JointAction,
    arrivals: ArrivalSample,
    params: &SystemParams,
    interference: &[f64],
) -> Result<EpochOutcome> {
    validate_action(state, action, params)?;
    let delta = params.epoch_seconds;
    let energy_joules = action.energy as f64 * params.energy_unit_joules;

    let (delay, handover, transmission, pay) = if action.energy == 0 {
        (0.0, 0.0, 0.0, 0.0)
    } else if action.offload == 0 {
        (local_exec_delay(energy_joules, params)?, 0.0, 0.0, 0.0)
    } else {
        let n = action.offload;
        let h = handover_delay(n, state.assoc, params)?;
        let gain = state.gains[n - 1];
        let tr = match solve_transmission_time(energy_joules, gain, interference[n - 1], h, params) {
            Ok(tr) => tr,
            // The link transmits until the epoch ends without finishing.
            Err(Error::Transmission(_)) => delta - h,
            Err(e) => return Err(e),
        };
        let d = h + tr + params.server_exec_seconds;
        (d, h, tr, payment(h, tr, params))
    };

    let completed = delay > 0.0 && delay <= delta;
    let started = usize::from(delay > 0.0);
    let done = usize::from(completed);
    let queuing = state.q_t - started;
    let backlog = state.q_t - done + arrivals.tasks;
    let drops = backlog.saturating_sub(params.task_queue_cap);

    let mut outcome = EpochOutcome {
        delay,
        handover,
        transmission,
        queuing,
        drops,
        payment: pay,
        completed,
        energy_units_spent: action.energy,
        utility: 0.0,
    };
    outcome.utility = utility(&outcome, &params.weights, delta);
    Ok(outcome)
}

/// One epoch under the constant-interference model.
pub fn step<R: Rng + ?Sized>(
    state: &NetworkState,
    action: JointAction,
    arrivals: ArrivalSample,
    params: &SystemParams,
    gain_rng: &mut R,
) -> Result<(NetworkState, EpochOutcome)> {
    let interference = vec![params.interference_watts; params.num_edge_nodes];
    step_with_interference(state, action, arrivals, params, &interference, gain_rng)
}

/// One epoch with an explicit interference-plus-noise power per edge node.
pub fn step_with_interference<R: Rng + ?Sized>(
    state: &NetworkState,
    action: JointAction,
    arrivals: ArrivalSample,
    params: &SystemParams,
    interference: &[f64],
    gain_rng: &mut R,
) -> Result<(NetworkState, EpochOutcome)> {
    if interference.len() != params.num_edge_nodes {
        return Err(Error::invalid(format!(
            "interference vector has {} entries for {} edge nodes",
            interference.len(),
            params.num_edge_nodes
        )));
    }
    let outcome = outcome_with(state, action, arrivals, params, interference)?;
    let done = usize::from(outcome.completed);
    let next = NetworkState {
        q_t: (state.q_t - done + arrivals.tasks).min(params.task_queue_cap),
        q_e: (state.q_e - action.energy + arrivals.energy).min(params.energy_queue_cap),
        assoc: if action.offload == 0 {
            state.assoc
        } else {
            action.offload
        },
        gains: sample_gains(params, gain_rng),
    };
    Ok((next, outcome))
}

/// Draws one gain level per edge node, uniformly and independently.
pub fn sample_gains<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> Vec<f64> {
    params
        .gain_levels
        .iter()
        .map(|ladder| ladder[rng.random_range(0..ladder.len())])
        .collect()
}

/// Task and energy arrivals for one epoch.
pub fn sample_arrivals<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> ArrivalSample {
    let tasks = usize::from(rng.random::<f64>() < params.task_arrival_prob);
    let energy = match params.energy_arrival {
        EnergyArrival::Bernoulli { p } => usize::from(rng.random::<f64>() < p),
        EnergyArrival::Poisson { lambda } if lambda > 0.0 => {
            // Validated lambda is finite and positive here.
            let draw: f64 = Poisson::new(lambda).expect("validated lambda").sample(rng);
            draw as usize
        }
        EnergyArrival::Poisson { .. } => 0,
    };
    ArrivalSample { tasks, energy }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(q_t: usize, q_e: usize, assoc: usize, params: &SystemParams) -> NetworkState {
        NetworkState {
            q_t,
            q_e,
            assoc,
            gains: params.gain_levels.iter().map(|l| l[5]).collect(),
        }
    }

    #[test]
    fn energy_queue_update() {
        let params = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state(1, 3, 1, &params);
        let (next, _) = step(
            &s,
            JointAction { offload: 0, energy: 2 },
            ArrivalSample { tasks: 0, energy: 1 },
            &params,
            &mut rng,
        )
        .unwrap();
        assert_eq!(next.q_e, 2);
    }

    #[test]
    fn full_queue_with_completion_has_no_drop() {
        let params = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state(4, 4, 1, &params);
        let (next, out) = step(
            &s,
            JointAction { offload: 0, energy: 2 },
            ArrivalSample { tasks: 1, energy: 0 },
            &params,
            &mut rng,
        )
        .unwrap();
        assert!(out.completed);
        assert_eq!(next.q_t, 4);
        assert_eq!(out.drops, 0);
        assert_eq!(out.queuing, 3);
    }

    #[test]
    fn full_queue_without_completion_drops_one() {
        let params = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state(4, 4, 1, &params);
        let (next, out) = step(&s, JointAction::IDLE, ArrivalSample { tasks: 1, energy: 0 }, &params, &mut rng)
            .unwrap();
        assert!(!out.completed);
        assert_eq!(next.q_t, 4);
        assert_eq!(out.drops, 1);
        assert_eq!(out.queuing, 4);
    }

    #[test]
    fn local_execution_with_one_unit_misses_the_deadline() {
        let params = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state(2, 1, 1, &params);
        let (next, out) = step(
            &s,
            JointAction { offload: 0, energy: 1 },
            ArrivalSample::default(),
            &params,
            &mut rng,
        )
        .unwrap();
        assert!(out.delay > params.epoch_seconds);
        assert!(!out.completed);
        assert_eq!(out.queuing, 1);
        assert_eq!(next.q_t, 2);
        assert_eq!(next.q_e, 0);
    }

    #[test]
    fn handover_offload_runs_out_of_time_and_switches_association() {
        let params = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state(1, 4, 1, &params);
        let (next, out) = step(
            &s,
            JointAction { offload: 2, energy: 1 },
            ArrivalSample::default(),
            &params,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.handover, params.handover_seconds);
        assert!(!out.completed);
        assert!((out.transmission - (params.epoch_seconds - params.handover_seconds)).abs() < 1e-18);
        assert!((out.payment - params.price_per_second * 3.0e-3).abs() < 1e-15);
        assert_eq!(next.assoc, 2);
    }

    #[test]
    fn good_channel_offload_completes() {
        let params = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state(1, 4, 3, &params);
        let (next, out) = step(
            &s,
            JointAction { offload: 3, energy: 1 },
            ArrivalSample::default(),
            &params,
            &mut rng,
        )
        .unwrap();
        assert!(out.completed, "{out:?}");
        assert_eq!(out.handover, 0.0);
        assert!(out.payment > 0.0);
        assert_eq!(next.q_t, 0);
        assert_eq!(next.assoc, 3);
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let params = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = state(0, 2, 1, &params);
        let err = step(&s, JointAction { offload: 0, energy: 1 }, ArrivalSample::default(), &params, &mut rng);
        assert!(matches!(err, Err(Error::InvalidAction(_))));
        let s = state(1, 2, 1, &params);
        let err = step(&s, JointAction { offload: 0, energy: 3 }, ArrivalSample::default(), &params, &mut rng);
        assert!(matches!(err, Err(Error::InvalidAction(_))));
        let err = step(&s, JointAction { offload: 4, energy: 1 }, ArrivalSample::default(), &params, &mut rng);
        assert!(matches!(err, Err(Error::InvalidAction(_))));
    }

    #[test]
    fn utility_examples() {
        let w = UtilityWeights::default();
        assert_eq!(utility(&EpochOutcome::default(), &w, 5e-3), 0.0);
        let out = EpochOutcome {
            delay: 4e-3,
            queuing: 1,
            drops: 0,
            payment: 3e-3,
            ..EpochOutcome::default()
        };
        assert!((utility(&out, &w, 5e-3) + 1.2e-2).abs() < 1e-15);
        let doubled = UtilityWeights {
            delay: 2.0,
            queuing: 2.0,
            drops: 2.0,
            payment: 2.0,
        };
        assert!((utility(&out, &doubled, 5e-3) - 2.0 * utility(&out, &w, 5e-3)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_task_arrivals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let never = SystemParams {
            task_arrival_prob: 0.0,
            ..SystemParams::default()
        };
        let always = SystemParams {
            task_arrival_prob: 1.0,
            ..SystemParams::default()
        };
        for _ in 0..1000 {
            assert_eq!(sample_arrivals(&never, &mut rng).tasks, 0);
            assert_eq!(sample_arrivals(&always, &mut rng).tasks, 1);
        }
    }

    #[test]
    fn poisson_energy_mean() {
        let params = SystemParams {
            energy_arrival: EnergyArrival::Poisson { lambda: 0.7 },
            ..SystemParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let total: usize = (0..n).map(|_| sample_arrivals(&params, &mut rng).energy).sum();
        let mean = total as f64 / n as f64;
        // 3 sigma of the sample mean: 3 * sqrt(0.7 / 1e5) ~ 0.008.
        assert!((mean - 0.7).abs() < 0.008, "{mean}");
    }

    #[test]
    fn sampled_gains_come_from_the_ladders() {
        let params = SystemParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let g = sample_gains(&params, &mut rng);
            for (x, ladder) in g.iter().zip(&params.gain_levels) {
                assert!(ladder.contains(x));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn queues_stay_in_bounds(seed in 0u64..1000, p_t in 0.0f64..=1.0, p_e in 0.0f64..=1.0) {
            let params = SystemParams {
                task_arrival_prob: p_t,
                energy_arrival: EnergyArrival::Bernoulli { p: p_e },
                ..SystemParams::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = NetworkState::initial(&params);
            for _ in 0..500 {
                let e = if s.q_t == 0 { 0 } else { rng.random_range(0..=s.q_e) };
                let action = JointAction { offload: rng.random_range(0..=params.num_edge_nodes), energy: e };
                let arrivals = sample_arrivals(&params, &mut rng);
                let (next, out) = step(&s, action, arrivals, &params, &mut rng).unwrap();
                proptest::prop_assert!(next.is_valid(&params));
                let backlog = s.q_t - usize::from(out.completed) + arrivals.tasks;
                proptest::prop_assert_eq!(out.drops > 0, backlog > params.task_queue_cap);
                if out.drops > 0 {
                    proptest::prop_assert_eq!(next.q_t, params.task_queue_cap);
                }
                let stored = s.q_e - e + arrivals.energy;
                if stored <= params.energy_queue_cap {
                    proptest::prop_assert_eq!(next.q_e, stored);
                }
                s = next;
            }
        }
    }
}

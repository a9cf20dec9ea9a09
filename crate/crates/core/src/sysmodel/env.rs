use rand_chacha::ChaCha12Rng;

use super::dynamics::{sample_arrivals, sample_gains, step_with_interference};
use super::params::SystemParams;
use super::{EpochOutcome, JointAction, NetworkState};
use crate::error::Result;

/// A single device's environment: its state plus the two random streams
/// driving arrivals and channel gains.
#[derive(Debug, Clone)]
pub struct DeviceEnv {
    params: SystemParams,
    state: NetworkState,
    arrivals_rng: ChaCha12Rng,
    gains_rng: ChaCha12Rng,
    /// Target node and received power of last epoch's transmission, for the
    /// previous-epoch interference model.
    last_tx: Option<(usize, f64)>,
}

impl DeviceEnv {
    pub fn new(params: SystemParams, arrivals_rng: ChaCha12Rng, mut gains_rng: ChaCha12Rng) -> Result<Self> {
        params.validate()?;
        let mut state = NetworkState::initial(&params);
        state.gains = sample_gains(&params, &mut gains_rng);
        Ok(Self {
            params,
            state,
            arrivals_rng,
            gains_rng,
            last_tx: None,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    /// Replaces the current state. The caller vouches for its validity.
    pub fn set_state(&mut self, state: NetworkState) {
        self.state = state;
    }

    /// Received power this device put on edge node `n` (1-based) last epoch.
    pub fn received_power_at(&self, node: usize) -> f64 {
        match self.last_tx {
            Some((n, p)) if n == node => p,
            _ => 0.0,
        }
    }

    pub fn step(&mut self, action: JointAction) -> Result<EpochOutcome> {
        let interference = vec![self.params.interference_watts; self.params.num_edge_nodes];
        self.step_with_interference(action, &interference)
    }

    pub fn step_with_interference(&mut self, action: JointAction, interference: &[f64]) -> Result<EpochOutcome> {
        let arrivals = sample_arrivals(&self.params, &mut self.arrivals_rng);
        let (next, outcome) = step_with_interference(
            &self.state,
            action,
            arrivals,
            &self.params,
            interference,
            &mut self.gains_rng,
        )?;
        self.last_tx = (action.offload > 0 && outcome.transmission > 0.0).then(|| {
            let power = action.energy as f64 * self.params.energy_unit_joules / outcome.transmission;
            (action.offload, power * self.state.gains[action.offload - 1])
        });
        self.state = next;
        Ok(outcome)
    }
}

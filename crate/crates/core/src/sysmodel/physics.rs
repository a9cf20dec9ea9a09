//! Closed-form and root-finding pieces of the per-epoch physics.
//!
//! The only iterative piece is the minimum transmission time, found by
//! bisection; everything else is a direct formula.

use std::f64::consts::LN_2;

use super::params::SystemParams;
use super::{JointAction, NetworkState};
use crate::error::{Error, Result, TransmissionError};

/// Relative bracket width at which the transmission-time bisection stops.
pub const TRANSMISSION_REL_TOL: f64 = 1e-10;

/// Local execution time when `energy_joules` are spent on one task of
/// `params.task_cycles` cycles.
///
/// Solves `E = tau * f^zeta * d` with `d = nu / f`, giving
/// `d = (nu^zeta * tau / E)^(1 / (zeta - 1))`, then clamps the implied CPU
/// frequency to `f_max`. Surplus energy above the clamp is still consumed.
pub fn local_exec_delay(energy_joules: f64, params: &SystemParams) -> Result<f64> {
    local_exec_delay_for(energy_joules, params.task_cycles, params)
}

/// [`local_exec_delay`] for a task of an explicit cycle count.
pub fn local_exec_delay_for(energy_joules: f64, cycles: f64, params: &SystemParams) -> Result<f64> {
    if !(energy_joules.is_finite() && energy_joules > 0.0) {
        return Err(Error::invalid(format!(
            "local execution energy must be > 0 (got {energy_joules})"
        )));
    }
    let zeta = params.activity_factor;
    let unclamped = (cycles.powf(zeta) * params.switched_cap / energy_joules).powf(1.0 / (zeta - 1.0));
    let floor = cycles / params.max_cpu_hz;
    let mut d = unclamped.max(floor);
    // Rounding in nu / f_max can leave the implied frequency one ulp high.
    while cycles / d > params.max_cpu_hz {
        d = d.next_up();
    }
    Ok(d)
}

/// Handover delay: zero when offloading to the node the device is already
/// associated with, `sigma` otherwise. Both indices are 1-based node ids.
pub fn handover_delay(offload_to: usize, assoc: usize, params: &SystemParams) -> Result<f64> {
    let n = params.num_edge_nodes;
    if offload_to == 0 {
        return Err(Error::invalid("handover is undefined for local execution"));
    }
    if offload_to > n || assoc == 0 || assoc > n {
        return Err(Error::invalid(format!(
            "edge node ids must lie in 1..={n} (got c={offload_to}, s={assoc})"
        )));
    }
    Ok(if offload_to == assoc {
        0.0
    } else {
        params.handover_seconds
    })
}

/// Shannon rate `W * log2(1 + g * p / I)` in bits per second.
pub fn achievable_rate(gain: f64, tx_power: f64, interference: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * (gain * tx_power / interference).ln_1p() / LN_2
}

/// Bits delivered when `energy_joules` are spread evenly over `seconds`.
pub fn deliverable_bits(seconds: f64, energy_joules: f64, gain: f64, interference: f64, bandwidth_hz: f64) -> f64 {
    seconds * achievable_rate(gain, energy_joules / seconds, interference, bandwidth_hz)
}

/// Minimum time to push `task_bits` over the link with constant power.
///
/// Finds the unique `d > 0` with `W * d * log2(1 + g*E / (d*I)) = mu` by
/// bisection; the left side increases strictly in `d` towards the supremum
/// `W*g*E / (I ln 2)`. The transmit power `E / d` is then held under
/// `p_max` by stretching `d` to `E / p_max` where needed, and the result
/// must fit into the `delta - handover` budget left in the epoch.
pub fn solve_transmission_time(
    energy_joules: f64,
    gain: f64,
    interference: f64,
    handover: f64,
    params: &SystemParams,
) -> Result<f64> {
    if !(energy_joules.is_finite() && energy_joules > 0.0) {
        return Err(Error::invalid(format!(
            "transmission energy must be > 0 (got {energy_joules})"
        )));
    }
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::invalid(format!("channel gain must be > 0 (got {gain})")));
    }
    if !(interference.is_finite() && interference > 0.0) {
        return Err(Error::invalid(format!(
            "interference must be > 0 (got {interference})"
        )));
    }
    let root = transmission_root(energy_joules, gain, interference, params)?;
    let required = root.max(energy_joules / params.max_tx_power);
    let budget = params.epoch_seconds - handover;
    if required > budget {
        return Err(TransmissionError::DeadlineExceeded {
            required_seconds: required,
            budget_seconds: budget,
        }
        .into());
    }
    Ok(required)
}

/// The unconstrained root of the constant-rate transmission equation.
pub fn transmission_root(
    energy_joules: f64,
    gain: f64,
    interference: f64,
    params: &SystemParams,
) -> Result<f64, TransmissionError> {
    let w = params.bandwidth_hz;
    let mu = params.task_bits;
    let supremum_bits = w * gain * energy_joules / (interference * LN_2);
    if supremum_bits <= mu {
        return Err(TransmissionError::Infeasible { supremum_bits });
    }
    let bits = |d: f64| deliverable_bits(d, energy_joules, gain, interference, w);

    let mut hi = params.epoch_seconds;
    while bits(hi) < mu {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(TransmissionError::Infeasible { supremum_bits });
        }
    }
    let mut lo = hi;
    while bits(lo) >= mu {
        lo *= 0.5;
        if lo == 0.0 {
            return Ok(hi);
        }
    }
    // Invariant: bits(lo) < mu <= bits(hi).
    while hi - lo > TRANSMISSION_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if bits(mid) < mu {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Payment for occupying the edge node: `pi * (min(h + d_tr + d_s, delta) - h)`.
pub fn payment(handover: f64, transmission: f64, params: &SystemParams) -> f64 {
    let busy = (handover + transmission + params.server_exec_seconds).min(params.epoch_seconds);
    params.price_per_second * (busy - handover).max(0.0)
}

/// Execution delay of the epoch's head-of-line task.
///
/// `transmission` is the solved transmission time and is only read on the
/// offload branch.
pub fn execution_delay(
    action: JointAction,
    state: &NetworkState,
    energy_joules: f64,
    transmission: f64,
    params: &SystemParams,
) -> Result<f64> {
    if action.energy == 0 {
        return Ok(0.0);
    }
    if action.offload == 0 {
        local_exec_delay(energy_joules, params)
    } else {
        let h = handover_delay(action.offload, state.assoc, params)?;
        Ok(h + transmission + params.server_exec_seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn local_delay_at_f_max_boundary() {
        let params = p();
        let d = local_exec_delay(3.35e-3, &params).unwrap();
        let closed = (params.switched_cap * params.task_cycles.powi(3) / 3.35e-3).sqrt();
        assert!((closed - 4.1875e-3).abs() < 1e-12);
        assert!((d - 4.1875e-3).abs() < 1e-12);
        assert!(params.task_cycles / d <= params.max_cpu_hz);
    }

    #[test]
    fn local_delay_clamps_for_large_energy() {
        let params = p();
        let d = local_exec_delay(1.0, &params).unwrap();
        assert!((d - params.task_cycles / params.max_cpu_hz).abs() < 1e-15);
        assert!((d - 4.1875e-3).abs() < 1e-15);
    }

    #[test]
    fn local_delay_halves_when_energy_quadruples() {
        let params = p();
        let d1 = local_exec_delay(1.0e-4, &params).unwrap();
        let d4 = local_exec_delay(4.0e-4, &params).unwrap();
        assert!((d4 / d1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn local_delay_rejects_non_positive_energy() {
        assert!(matches!(local_exec_delay(0.0, &p()), Err(Error::InvalidArgument(_))));
        assert!(matches!(local_exec_delay(-1.0, &p()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn handover_cases() {
        let params = p();
        assert_eq!(handover_delay(2, 2, &params).unwrap(), 0.0);
        assert_eq!(handover_delay(1, 2, &params).unwrap(), 2.0e-3);
        assert_eq!(handover_delay(3, 1, &params).unwrap(), 2.0e-3);
        assert!(handover_delay(0, 1, &params).is_err());
        assert!(handover_delay(4, 1, &params).is_err());
    }

    #[test]
    fn rate_examples() {
        assert!((achievable_rate(1.0, 1.0, 1.0, 6.0e5) - 6.0e5).abs() < 1e-9);
        assert!((achievable_rate(3.0, 1.0, 1.0, 6.0e5) - 1.2e6).abs() < 1e-9);
        assert!(achievable_rate(1e-300, 1.0, 1.0, 6.0e5) < 1e-290);
    }

    #[test]
    fn transmission_constructed_root() {
        // g*E/I = 0.31: log2(1 + 0.31/0.01) = 5 and mu / (W * 0.01) = 5.
        let params = SystemParams {
            max_tx_power: 1e9,
            epoch_seconds: 1.0,
            ..p()
        };
        let d = transmission_root(0.31, 1.0, 1.0, &params).unwrap();
        assert!((d - 1.0e-2).abs() < 1e-11, "{d}");
        let bits = deliverable_bits(d, 0.31, 1.0, 1.0, params.bandwidth_hz);
        assert!(((bits - params.task_bits) / params.task_bits).abs() < 1e-10);
        assert_eq!(solve_transmission_time(0.31, 1.0, 1.0, 0.0, &params).unwrap(), d);
    }

    #[test]
    fn more_bits_take_longer() {
        let params = SystemParams {
            max_tx_power: 1e9,
            epoch_seconds: 1.0,
            ..p()
        };
        let d1 = transmission_root(0.31, 1.0, 1.0, &params).unwrap();
        let doubled = SystemParams {
            task_bits: 2.0 * params.task_bits,
            ..params.clone()
        };
        let d2 = transmission_root(0.31, 1.0, 1.0, &doubled).unwrap();
        assert!(d2 > d1);
    }

    #[test]
    fn transmission_infeasible_below_supremum() {
        let params = p();
        // W*g*E/(I ln 2) = 6e5 * 0.02 / ln 2 ~ 17312 < 3e4.
        let sup = params.bandwidth_hz * 0.02 / LN_2;
        assert!(sup < params.task_bits);
        match solve_transmission_time(2.0e-3, 1.0, 0.1, 0.0, &params) {
            Err(Error::Transmission(TransmissionError::Infeasible { supremum_bits })) => {
                assert!((supremum_bits - sup).abs() < 1e-6);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn power_cap_stretches_transmission() {
        let params = p();
        // Strong channel: the unconstrained root is far below E / p_max.
        let e = 8.0e-3;
        let root = transmission_root(e, 1.0e6, 0.1, &params).unwrap();
        assert!(root < e / params.max_tx_power);
        let d = solve_transmission_time(e, 1.0e6, 0.1, 0.0, &params).unwrap();
        assert_eq!(d, e / params.max_tx_power);
        assert!(e / d <= params.max_tx_power);
    }

    #[test]
    fn deadline_exceeded_after_handover() {
        let params = p();
        match solve_transmission_time(4.0e-3, 400.0, 0.1, params.handover_seconds, &params) {
            Err(Error::Transmission(TransmissionError::DeadlineExceeded { budget_seconds, .. })) => {
                assert!((budget_seconds - 3.0e-3).abs() < 1e-15);
            }
            other => panic!("expected deadline exceeded, got {other:?}"),
        }
    }

    #[test]
    fn payment_examples() {
        let params = SystemParams {
            price_per_second: 1.0,
            ..p()
        };
        assert!((payment(0.0, 3.0e-3, &params) - 3.001e-3).abs() < 1e-15);
        assert!((payment(2.0e-3, 4.0e-3, &params) - 3.0e-3).abs() < 1e-15);
        let free = SystemParams {
            server_exec_seconds: 0.0,
            ..params
        };
        assert_eq!(payment(0.0, 0.0, &free), 0.0);
    }

    #[test]
    fn execution_delay_branches() {
        let params = p();
        let state = NetworkState {
            q_t: 2,
            q_e: 3,
            assoc: 2,
            gains: params.gain_levels.iter().map(|l| l[0]).collect(),
        };
        let idle = JointAction { offload: 0, energy: 0 };
        assert_eq!(execution_delay(idle, &state, 0.0, 0.0, &params).unwrap(), 0.0);
        let local = JointAction { offload: 0, energy: 2 };
        let d = execution_delay(local, &state, 3.35e-3, 0.0, &params).unwrap();
        assert!((d - 4.1875e-3).abs() < 1e-12);
        let same = JointAction { offload: 2, energy: 1 };
        let d = execution_delay(same, &state, 2.0e-3, 1.0e-3, &params).unwrap();
        assert!((d - (1.0e-3 + 1.0e-6)).abs() < 1e-18);
    }

    proptest::proptest! {
        #[test]
        fn transmission_root_residual(
            energy in 1.0e-4f64..1.0e-1,
            gain in 1.0e-2f64..1.0e4,
            interference in 1.0e-3f64..10.0,
        ) {
            let params = p();
            let supremum = params.bandwidth_hz * gain * energy / (interference * LN_2);
            proptest::prop_assume!(supremum > params.task_bits * 1.001);
            let d = transmission_root(energy, gain, interference, &params).unwrap();
            let bits = deliverable_bits(d, energy, gain, interference, params.bandwidth_hz);
            proptest::prop_assert!(((bits - params.task_bits) / params.task_bits).abs() < 1e-9);
            let slower = deliverable_bits(0.9 * d, energy, gain, interference, params.bandwidth_hz);
            proptest::prop_assert!(slower < bits);
        }

        #[test]
        fn local_delay_never_exceeds_f_max(energy in 1.0e-6f64..10.0) {
            let params = p();
            let d = local_exec_delay(energy, &params).unwrap();
            proptest::prop_assert!(params.task_cycles / d <= params.max_cpu_hz * (1.0 + 1e-12));
        }

        #[test]
        fn payment_is_bounded(h in proptest::bool::ANY, tr in 0.0f64..1.0e-2) {
            let params = p();
            let h = if h { params.handover_seconds } else { 0.0 };
            let phi = payment(h, tr, &params);
            proptest::prop_assert!((0.0..=params.price_per_second * params.epoch_seconds).contains(&phi));
        }
    }
}

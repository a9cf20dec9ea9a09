//! Federated training of per-device agents.
//!
//! Each round a random subset of devices downloads its edge node's model,
//! runs a number of environment epochs with local training, and uploads the
//! resulting parameters together with how many train steps it took. The edge
//! node replaces its model with the train-count-weighted average of those
//! uploads. Only parameters and counts leave a device.

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::ddqn::AgentConfig;
use crate::device::{interference_for, Device, Learner};
use crate::error::{Error, Result};
use crate::qnet::QNetParams;
use crate::simctl::metrics::{MetricsRow, MetricsSink, Mode};
use crate::simctl::streams::{derive_stream, GLOBAL_STREAM};
use crate::sysmodel::SystemParams;

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub rounds: u64,
    pub devices_per_round: usize,
    /// Environment epochs each selected device runs between download and upload.
    pub local_epochs: u64,
    /// Keep one model per edge node instead of a single shared aggregator.
    pub per_node_aggregation: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            devices_per_round: 5,
            local_epochs: 50,
            per_node_aggregation: false,
        }
    }
}

impl FederationConfig {
    pub fn violations(&self, devices: usize) -> Vec<String> {
        let mut v = Vec::new();
        if self.devices_per_round == 0 || self.devices_per_round > devices {
            v.push(format!(
                "m must lie in 1..={devices} (got {})",
                self.devices_per_round
            ));
        }
        v
    }
}

/// What one round did.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub selected: Vec<usize>,
    /// `(device, train steps this round)` for every accepted upload.
    pub uploads: Vec<(usize, u64)>,
    /// Aggregation weight of each accepted upload, same order as `uploads`.
    pub weights: Vec<f64>,
    /// Devices whose uploads were dropped for non-finite parameters.
    pub excluded: Vec<usize>,
    /// SHA-256 of each edge-node model after aggregation.
    pub model_digests: Vec<String>,
    /// `(device, mean utility over its epochs this round)`.
    pub mean_utility: Vec<(usize, f64)>,
}

/// `m` distinct device ids drawn uniformly, returned in ascending order.
pub fn select_devices<R: Rng + ?Sized>(device_count: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m > device_count {
        return Err(Error::invalid(format!(
            "cannot select {m} of {device_count} devices"
        )));
    }
    let mut picked = rand::seq::index::sample(rng, device_count, m).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Train-count-weighted average `sum_d (C_d / sum C) * theta_d`.
///
/// Uploads are combined in the order given. The result is computed as the
/// first upload plus weighted offsets from it, so identical uploads
/// aggregate to themselves bit-for-bit, and each entry is kept within the
/// range spanned by the uploads at that position.
pub fn aggregate(uploads: &[(&QNetParams, u64)]) -> Result<(QNetParams, Vec<f64>)> {
    let (first, _) = uploads
        .first()
        .ok_or_else(|| Error::invalid("aggregation needs at least one upload"))?;
    if let Some((p, _)) = uploads.iter().find(|(p, _)| p.shape() != first.shape()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", first.shape()),
            actual: format!("{:?}", p.shape()),
        });
    }
    if uploads.iter().any(|(_, c)| *c == 0) {
        return Err(Error::invalid("every upload needs a positive train count"));
    }
    let total: u64 = uploads.iter().map(|(_, c)| c).sum();
    let weights: Vec<f64> = uploads.iter().map(|(_, c)| *c as f64 / total as f64).collect();

    let mut out = (*first).clone();
    let sources: Vec<[&[f64]; 6]> = uploads.iter().map(|(p, _)| p.tensors()).collect();
    for (t, dst) in out.tensors_mut().into_iter().enumerate() {
        for (i, x) in dst.iter_mut().enumerate() {
            let anchor = sources[0][t][i];
            let (mut lo, mut hi, mut offset) = (anchor, anchor, 0.0);
            for (src, w) in sources.iter().zip(&weights).skip(1) {
                let v = src[t][i];
                offset += w * (v - anchor);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if offset != 0.0 {
                *x = (anchor + offset).clamp(lo, hi);
            }
        }
    }
    Ok((out, weights))
}

/// Hex SHA-256 over the little-endian bytes of every parameter.
pub fn params_digest(p: &QNetParams) -> String {
    let mut h = Sha256::new();
    for t in p.tensors() {
        for x in t {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A device together with its private learner.
#[derive(Debug, Clone)]
pub struct FlDevice {
    pub device: Device,
    pub learner: Learner,
}

/// Edge-node models together with the device fleet.
#[derive(Debug, Clone)]
pub struct Federation {
    pub config: FederationConfig,
    pub devices: Vec<FlDevice>,
    /// One model, or one per edge node with `per_node_aggregation`.
    pub models: Vec<QNetParams>,
    selection_rng: ChaCha12Rng,
    round: u64,
}

impl Federation {
    pub fn new(
        config: FederationConfig,
        params: &SystemParams,
        agent: &AgentConfig,
        device_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut v = config.violations(device_count);
        v.extend(params.violations());
        v.extend(agent.violations());
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        let devices = (0..device_count)
            .map(|id| {
                Ok(FlDevice {
                    device: Device::new(id, params.clone(), seed)?,
                    learner: Learner::new(id, agent.clone(), params, seed)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model_count = if config.per_node_aggregation {
            params.num_edge_nodes
        } else {
            1
        };
        let mut init_rng = derive_stream(seed, GLOBAL_STREAM, "model-init");
        let shape = devices[0].learner.agent.current.shape();
        let models = (0..model_count)
            .map(|_| QNetParams::init(shape.0, shape.1, shape.2, &mut init_rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            devices,
            models,
            selection_rng: derive_stream(seed, GLOBAL_STREAM, "selection"),
            round: 0,
        })
    }

    pub fn rounds_done(&self) -> u64 {
        self.round
    }

    fn model_slot(&self, device: &Device) -> usize {
        if self.config.per_node_aggregation {
            device.env.state().assoc - 1
        } else {
            0
        }
    }

    /// One round: select, download, train locally, upload, aggregate.
    pub fn run_round(&mut self, sink: &mut dyn MetricsSink) -> Result<RoundReport> {
        self.round += 1;
        let t = self.round;
        let local = self.config.local_epochs;
        let selected = select_devices(self.devices.len(), self.config.devices_per_round, &mut self.selection_rng)?;

        let mut slots = Vec::with_capacity(selected.len());
        let mut start_counts = Vec::with_capacity(selected.len());
        for &id in &selected {
            let slot = self.model_slot(&self.devices[id].device);
            let d = &mut self.devices[id];
            d.learner.agent.load_params(&self.models[slot]);
            slots.push(slot);
            start_counts.push(d.learner.agent.train_count);
        }

        let mut failed = vec![false; selected.len()];
        let mut utility_sum = vec![0.0; selected.len()];
        let mut epochs_run = vec![0u64; selected.len()];
        let params = self.devices[0].device.env.params().clone();
        for k in 0..local {
            let epoch = (t - 1) * local + k;
            let active: Vec<usize> = (0..selected.len()).filter(|&j| !failed[j]).collect();
            let interference = {
                let refs: Vec<&Device> = active.iter().map(|&j| &self.devices[selected[j]].device).collect();
                interference_for(&refs, &params)
            };
            for (&j, noise) in active.iter().zip(&interference) {
                let d = &mut self.devices[selected[j]];
                let record = d.device.act(&d.learner.agent, noise)?;
                let loss = match d.learner.observe(record.transition.clone()) {
                    Ok(loss) => loss,
                    Err(Error::NonFinite(what)) => {
                        warn!("round {t}: device {} diverged ({what}); upload excluded", d.device.id);
                        failed[j] = true;
                        None
                    }
                    Err(e) => return Err(e),
                };
                utility_sum[j] += record.outcome.utility;
                epochs_run[j] += 1;
                sink.record(MetricsRow::from_record(
                    t,
                    epoch,
                    d.device.id,
                    Mode::Fl,
                    d.learner.agent.config.epsilon,
                    &record,
                    loss,
                ))?;
            }
        }

        if !selected.is_empty() && failed.iter().all(|&f| f) {
            return Err(Error::NonFinite(format!("every device selected in round {t} diverged")));
        }
        let mut excluded = Vec::new();
        let mut uploads = Vec::new();
        let mut weights = Vec::new();
        for slot in 0..self.models.len() {
            let mut batch: Vec<(&QNetParams, u64)> = Vec::new();
            let mut ids = Vec::new();
            for (j, &id) in selected.iter().enumerate() {
                if slots[j] != slot {
                    continue;
                }
                let agent = &self.devices[id].learner.agent;
                if failed[j] || !agent.current.is_finite() {
                    if !excluded.contains(&id) {
                        excluded.push(id);
                    }
                    continue;
                }
                let count = agent.train_count - start_counts[j];
                // A device that never trained uploads the model it downloaded,
                // which carries zero weight.
                if count > 0 {
                    batch.push((&agent.current, count));
                    ids.push((id, count));
                }
            }
            if batch.is_empty() {
                continue;
            }
            let (model, w) = aggregate(&batch)?;
            self.models[slot] = model;
            uploads.extend(ids);
            weights.extend(w);
        }

        Ok(RoundReport {
            round: t,
            mean_utility: selected
                .iter()
                .enumerate()
                .filter(|(j, _)| epochs_run[*j] > 0)
                .map(|(j, &id)| (id, utility_sum[j] / epochs_run[j] as f64))
                .collect(),
            selected,
            uploads,
            weights,
            excluded,
            model_digests: self.models.iter().map(params_digest).collect(),
        })
    }

    /// Runs every configured round.
    pub fn run_training(&mut self, sink: &mut dyn MetricsSink) -> Result<Vec<RoundReport>> {
        (0..self.config.rounds).map(|_| self.run_round(sink)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> QNetParams {
        QNetParams::init(3, 4, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn select_all_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_devices(5, 5, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
        let a = select_devices(10, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = select_devices(10, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(select_devices(3, 4, &mut rng).is_err());
    }

    #[test]
    fn single_upload_is_identity() {
        let p = net(1);
        let (agg, w) = aggregate(&[(&p, 7)]).unwrap();
        assert_eq!(agg, p);
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn weights_follow_counts() {
        let a = net(1);
        let b = net(2);
        let (agg, w) = aggregate(&[(&a, 1), (&b, 3)]).unwrap();
        assert_eq!(w, vec![0.25, 0.75]);
        for ((x, y), z) in a.w2.iter().zip(b.w2.iter()).zip(agg.w2.iter()) {
            assert!((0.25 * x + 0.75 * y - z).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregation_rejects_bad_uploads() {
        let a = net(1);
        let other = QNetParams::init(3, 5, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(aggregate(&[]).is_err());
        assert!(matches!(aggregate(&[(&a, 1), (&other, 1)]), Err(Error::ShapeMismatch { .. })));
        assert!(aggregate(&[(&a, 0)]).is_err());
    }

    #[test]
    fn identical_uploads_aggregate_bit_exactly() {
        let a = net(3);
        let (agg, _) = aggregate(&[(&a, 1), (&a, 2), (&a, 4)]).unwrap();
        assert_eq!(agg, a);
    }

    fn small_fed(m: usize, local: u64, devices: usize) -> Federation {
        let agent = AgentConfig {
            hidden: 8,
            warmup: 4,
            batch_size: 4,
            ..AgentConfig::default()
        };
        let cfg = FederationConfig {
            rounds: 3,
            devices_per_round: m,
            local_epochs: local,
            per_node_aggregation: false,
        };
        Federation::new(cfg, &SystemParams::default(), &agent, devices, 11).unwrap()
    }

    #[test]
    fn zero_local_epochs_keep_the_model() {
        let mut fed = small_fed(2, 0, 3);
        let before = fed.models.clone();
        let report = fed.run_round(&mut Vec::new()).unwrap();
        assert_eq!(fed.models, before);
        assert!(report.uploads.is_empty());
    }

    #[test]
    fn single_device_round_adopts_its_params() {
        let mut fed = small_fed(1, 20, 3);
        let report = fed.run_round(&mut Vec::new()).unwrap();
        let id = report.selected[0];
        assert_eq!(fed.models[0], fed.devices[id].learner.agent.current);
        assert_eq!(report.uploads, vec![(id, 20 - 3)]);
    }

    #[test]
    fn train_counts_match_steps_taken() {
        let mut fed = small_fed(3, 30, 3);
        let mut rows = Vec::new();
        fed.run_round(&mut rows).unwrap();
        let report = fed.run_round(&mut rows).unwrap();
        for (id, count) in &report.uploads {
            let trained = rows
                .iter()
                .filter(|r| r.round == 2 && r.device_id == *id && r.train_loss.is_some())
                .count() as u64;
            assert_eq!(*count, trained);
        }
        assert!((report.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn aggregate_is_convex(seeds in proptest::collection::vec(0u64..1000, 1..6), counts in proptest::collection::vec(1u64..500, 6)) {
            let nets: Vec<QNetParams> = seeds.iter().map(|&s| net(s)).collect();
            let uploads: Vec<(&QNetParams, u64)> = nets.iter().zip(&counts).map(|(n, &c)| (n, c)).collect();
            let (agg, w) = aggregate(&uploads).unwrap();
            proptest::prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for t in 0..6 {
                for (i, v) in agg.tensors()[t].iter().enumerate() {
                    let lo = nets.iter().map(|n| n.tensors()[t][i]).fold(f64::INFINITY, f64::min);
                    let hi = nets.iter().map(|n| n.tensors()[t][i]).fold(f64::NEG_INFINITY, f64::max);
                    proptest::prop_assert!(lo <= *v && *v <= hi);
                }
            }
        }

        #[test]
        fn equal_counts_give_the_mean(seeds in proptest::collection::vec(0u64..1000, 1..6), count in 1u64..100) {
            let nets: Vec<QNetParams> = seeds.iter().map(|&s| net(s)).collect();
            let uploads: Vec<(&QNetParams, u64)> = nets.iter().map(|n| (n, count)).collect();
            let (agg, _) = aggregate(&uploads).unwrap();
            for t in 0..6 {
                for (i, v) in agg.tensors()[t].iter().enumerate() {
                    let mean = nets.iter().map(|n| n.tensors()[t][i]).sum::<f64>() / nets.len() as f64;
                    proptest::prop_assert!((v - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_draws_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hits = [0u32; 10];
        for _ in 0..100_000 {
            hits[select_devices(10, 1, &mut rng).unwrap()[0]] += 1;
        }
        // 10^4 expected per device; 5 sigma is about 475.
        assert!(hits.iter().all(|&h| (9_525..=10_475).contains(&h)), "{hits:?}");
    }
}

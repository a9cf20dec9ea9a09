//! Double deep Q-learning agent for one device.
//!
//! Actions are selected epsilon-greedily from the current network, restricted
//! to the actions valid in the present state. Bootstrap targets pick the next
//! action with the current network and evaluate it with a lagged target
//! network that is refreshed every `target_sync_interval` train steps.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qnet::{masked_argmax, QNetParams, DEFAULT_HIDDEN};
use crate::sysmodel::{JointAction, NetworkState, SystemParams};

/// Hyperparameters of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_interval: u64,
    pub learning_rate: f64,
    /// Transitions the buffer must hold before training starts.
    pub warmup: usize,
    pub hidden: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            gamma: 0.9,
            batch_size: 32,
            buffer_capacity: 5000,
            target_sync_interval: 250,
            learning_rate: 0.005,
            warmup: 500,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl AgentConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.epsilon) {
            v.push(format!("epsilon must lie in [0, 1] (got {})", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            v.push(format!("gamma must lie in [0, 1) (got {})", self.gamma));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be >= 1".into());
        }
        if self.buffer_capacity < self.batch_size {
            v.push("buffer_capacity must be >= batch_size".into());
        }
        if self.target_sync_interval == 0 {
            v.push("target_sync_interval must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            v.push(format!("learning_rate must be > 0 (got {})", self.learning_rate));
        }
        if self.hidden == 0 {
            v.push("hidden must be >= 1".into());
        }
        v
    }
}

/// Feature vector of a network state:
/// `[q_t / q_t_max, q_e / q_e_max, one_hot(assoc), g_n / max level_n]`.
pub fn encode_state(state: &NetworkState, params: &SystemParams) -> Vec<f64> {
    let n = params.num_edge_nodes;
    let mut f = Vec::with_capacity(feature_len(params));
    f.push(state.q_t as f64 / params.task_queue_cap as f64);
    f.push(state.q_e as f64 / params.energy_queue_cap as f64);
    f.extend((1..=n).map(|k| if k == state.assoc { 1.0 } else { 0.0 }));
    f.extend(
        state
            .gains
            .iter()
            .zip(&params.gain_levels)
            .map(|(g, ladder)| g / ladder[ladder.len() - 1]),
    );
    f
}

pub fn feature_len(params: &SystemParams) -> usize {
    2 + 2 * params.num_edge_nodes
}

/// Flat index of `(c, e)`: `c * (q_e_max + 1) + e`.
pub fn action_index(action: JointAction, params: &SystemParams) -> Result<usize> {
    if action.offload > params.num_edge_nodes || action.energy > params.energy_queue_cap {
        return Err(Error::invalid(format!("action {action:?} is out of range")));
    }
    Ok(action.offload * (params.energy_queue_cap + 1) + action.energy)
}

pub fn decode_action(index: usize, params: &SystemParams) -> Result<JointAction> {
    if index >= params.action_count() {
        return Err(Error::invalid(format!(
            "action index {index} >= action count {}",
            params.action_count()
        )));
    }
    let width = params.energy_queue_cap + 1;
    Ok(JointAction {
        offload: index / width,
        energy: index % width,
    })
}

/// Which flat actions the agent may take in `state`.
///
/// An action must not spend more energy than stored, must not spend energy
/// on an empty queue, and must not name an edge node without spending
/// energy on it, so idling is always the single `(0, 0)` action.
pub fn action_mask(state: &NetworkState, params: &SystemParams) -> Vec<bool> {
    (0..params.action_count())
        .map(|i| {
            let width = params.energy_queue_cap + 1;
            let (c, e) = (i / width, i % width);
            let spends = e > 0;
            e <= state.q_e && (state.q_t > 0 || !spends) && (c == 0 || spends)
        })
        .collect()
}

/// One replay record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_mask: Vec<bool>,
}

/// Fixed-capacity ring buffer that overwrites its oldest entry when full.
///
/// Entries live in flat arrays sized on the first push, so storing a
/// transition never allocates. The first transition fixes the state and
/// mask widths.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    len: usize,
    cursor: usize,
    state_dim: usize,
    mask_len: usize,
    states: Vec<f64>,
    next_states: Vec<f64>,
    masks: Vec<bool>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            len: 0,
            cursor: 0,
            state_dim: 0,
            mask_len: 0,
            states: Vec::new(),
            next_states: Vec::new(),
            masks: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if self.len == 0 && self.cursor == 0 {
            self.state_dim = t.state.len();
            self.mask_len = t.next_mask.len();
            self.states = vec![0.0; self.capacity * self.state_dim];
            self.next_states = vec![0.0; self.capacity * self.state_dim];
            self.masks = vec![false; self.capacity * self.mask_len];
            self.actions = vec![0; self.capacity];
            self.rewards = vec![0.0; self.capacity];
        }
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim || t.next_mask.len() != self.mask_len {
            return Err(Error::ShapeMismatch {
                expected: format!("{} features and {} mask entries", self.state_dim, self.mask_len),
                actual: format!(
                    "{}/{} features and {} mask entries",
                    t.state.len(),
                    t.next_state.len(),
                    t.next_mask.len()
                ),
            });
        }
        let i = self.cursor;
        let (d, m) = (self.state_dim, self.mask_len);
        self.states[i * d..(i + 1) * d].copy_from_slice(&t.state);
        self.next_states[i * d..(i + 1) * d].copy_from_slice(&t.next_state);
        self.masks[i * m..(i + 1) * m].copy_from_slice(&t.next_mask);
        self.actions[i] = t.action;
        self.rewards[i] = t.reward;
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Copy of the entry in storage slot `i`.
    fn get(&self, i: usize) -> Transition {
        let (d, m) = (self.state_dim, self.mask_len);
        Transition {
            state: self.states[i * d..(i + 1) * d].to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_state: self.next_states[i * d..(i + 1) * d].to_vec(),
            next_mask: self.masks[i * m..(i + 1) * m].to_vec(),
        }
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.cursor };
        (0..self.len).map(move |k| self.get((start + k) % self.capacity))
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<Transition> {
        (0..batch).map(|_| self.get(rng.random_range(0..self.len))).collect()
    }
}

/// Snapshot of training progress, written ahead of the network in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub step_counter: u64,
    pub train_count: u64,
    pub epsilon: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub current: QNetParams,
    pub target: QNetParams,
    pub buffer: ReplayBuffer,
    /// Train steps since creation; drives target synchronization.
    pub steps: u64,
    /// Cumulative train-step count reported to federation.
    pub train_count: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, input_dim: usize, action_count: usize, rng: &mut R) -> Result<Self> {
        let v = config.violations();
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        let current = QNetParams::init(input_dim, config.hidden, action_count, rng)?;
        Ok(Self {
            target: current.clone(),
            current,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            steps: 0,
            train_count: 0,
            config,
        })
    }

    /// Loads `params` into both networks.
    pub fn load_params(&mut self, params: &QNetParams) {
        self.current = params.clone();
        self.target = params.clone();
    }

    pub fn q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.current.forward(features)
    }

    /// Epsilon-greedy choice over valid actions; greedy ties go to the
    /// lowest index.
    pub fn select_action<R: Rng + ?Sized>(&self, features: &[f64], mask: &[bool], rng: &mut R) -> Result<usize> {
        let valid: Vec<usize> = mask.iter().enumerate().filter(|(_, &ok)| ok).map(|(i, _)| i).collect();
        if valid.is_empty() {
            return Err(Error::invalid("no valid action in mask"));
        }
        if self.config.epsilon > 0.0 && rng.random::<f64>() < self.config.epsilon {
            return Ok(valid[rng.random_range(0..valid.len())]);
        }
        let q = self.q_values(features)?;
        Ok(masked_argmax(ArrayView1::from(&q), mask).expect("mask has a valid action"))
    }

    /// Bootstrap target `r + gamma * Q_target(s', argmax_valid Q_current(s'))`.
    pub fn double_q_target(&self, t: &Transition) -> Result<f64> {
        let q_cur = self.current.forward(&t.next_state)?;
        let q_tgt = self.target.forward(&t.next_state)?;
        let best = masked_argmax(ArrayView1::from(&q_cur), &t.next_mask)
            .ok_or_else(|| Error::invalid("next state has no valid action"))?;
        Ok(t.reward + self.config.gamma * q_tgt[best])
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        self.buffer.push(t)
    }

    /// Samples a minibatch and trains on it once the buffer is past warmup.
    /// Returns `None` when training is deferred.
    pub fn sample_and_train<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let need = self.config.batch_size.max(self.config.warmup);
        if self.buffer.len() < need {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.config.batch_size, rng);
        self.train_step(&batch).map(Some)
    }

    /// One gradient step of mean squared TD error over `batch`. Returns the
    /// batch loss measured before the update.
    pub fn train_step(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let b = batch.len();
        let dim = self.current.input_dim();
        let a = self.current.action_count();
        let mut s = Array2::zeros((b, dim));
        let mut s_next = Array2::zeros((b, dim));
        for (i, t) in batch.iter().enumerate() {
            if t.state.len() != dim || t.next_state.len() != dim || t.action >= a {
                return Err(Error::ShapeMismatch {
                    expected: format!("{dim} features and action < {a}"),
                    actual: format!("{} features, action {}", t.state.len(), t.action),
                });
            }
            s.row_mut(i).assign(&ArrayView1::from(&t.state));
            s_next.row_mut(i).assign(&ArrayView1::from(&t.next_state));
        }

        let cache = self.current.forward_batch(s.view())?;
        let next_cur = self.current.forward_batch(s_next.view())?.q;
        let next_tgt = self.target.forward_batch(s_next.view())?.q;

        let mut upstream = Array2::zeros((b, a));
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let best = masked_argmax(next_cur.row(i), &t.next_mask)
                .ok_or_else(|| Error::invalid("next state has no valid action"))?;
            let y = t.reward + self.config.gamma * next_tgt[[i, best]];
            let err = cache.q[[i, t.action]] - y;
            loss += err * err;
            upstream[[i, t.action]] = 2.0 * err / b as f64;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }

        let grads = self.current.backward_batch(s.view(), &cache, upstream.view())?;
        self.current.apply_gradients(&grads, self.config.learning_rate)?;
        self.steps += 1;
        self.train_count += 1;
        if self.steps.is_multiple_of(self.config.target_sync_interval) {
            self.target = self.current.clone();
        }
        Ok(loss)
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            step_counter: self.steps,
            train_count: self.train_count,
            epsilon: self.config.epsilon,
            gamma: self.config.gamma,
        }
    }

    /// `{"header": {...}, "network": <qnet json>}`.
    pub fn checkpoint_json(&self) -> Result<String> {
        let net: serde_json::Value = serde_json::from_str(&self.current.to_json()?)?;
        let doc = serde_json::json!({ "header": self.header(), "network": net });
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn parse_checkpoint(s: &str) -> Result<(CheckpointHeader, QNetParams)> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            header: CheckpointHeader,
            network: serde_json::Value,
        }
        let doc: Doc = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let net = QNetParams::from_json(&doc.network.to_string())?;
        Ok((doc.header, net))
    }
}

/// `sum_k gamma^k r_k`, accumulated back to front.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

//! Fully connected Q-value network: `input -> H -> H -> actions`, tanh on the
//! two hidden layers and a linear output head, trained by plain gradient
//! descent with hand-written backpropagation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden width used unless configured otherwise.
pub const DEFAULT_HIDDEN: usize = 200;

/// Weights and biases. Weight matrices are stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Gradients of a scalar loss, one tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Activations kept from a batched forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub q: Array2<f64>,
}

impl QNetParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, action_count: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || action_count == 0 {
            return Err(Error::invalid(format!(
                "network dimensions must be >= 1 (got {input_dim}, {hidden}, {action_count})"
            )));
        }
        let mut layer = |fan_out: usize, fan_in: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..=limit))
        };
        let w1 = layer(hidden, input_dim);
        let w2 = layer(hidden, hidden);
        let w3 = layer(action_count, hidden);
        Ok(Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(hidden),
            w3,
            b3: Array1::zeros(action_count),
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(input_dim: usize, hidden: usize, action_count: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, input_dim)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, hidden)),
            b2: Array1::zeros(hidden),
            w3: Array2::zeros((action_count, hidden)),
            b3: Array1::zeros(action_count),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn action_count(&self) -> usize {
        self.w3.nrows()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.input_dim(), self.hidden(), self.action_count())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors as flat slices, in serialization order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w3.as_slice().expect("standard layout"),
            self.b3.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.w3.as_slice_mut().expect("standard layout"),
            self.b3.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Q-values for a single feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Ok(self.forward_batch(batch)?.q.row(0).to_vec())
    }

    /// Batched forward pass; each row of `x` is one sample.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input features", self.input_dim()),
                actual: format!("{}", x.ncols()),
            });
        }
        let mut h1 = x.dot(&self.w1.t());
        h1 += &self.b1;
        h1.mapv_inplace(f64::tanh);
        let mut h2 = h1.dot(&self.w2.t());
        h2 += &self.b2;
        h2.mapv_inplace(f64::tanh);
        let mut q = h2.dot(&self.w3.t());
        q += &self.b3;
        Ok(ForwardCache { h1, h2, q })
    }

    /// Gradients for a single sample given `dLoss/dq`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradientSet> {
        let xb = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::invalid(e.to_string()))?;
        let ub = ArrayView2::from_shape((1, upstream.len()), upstream)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let cache = self.forward_batch(xb)?;
        self.backward_batch(xb, &cache, ub)
    }

    /// Batched backpropagation. `upstream[i, a]` is `dLoss/dq[i, a]`; any
    /// batch reduction (e.g. the mean) must already be folded in.
    pub fn backward_batch(
        &self,
        x: ArrayView2<f64>,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<GradientSet> {
        if upstream.dim() != cache.q.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", cache.q.dim()),
                actual: format!("{:?}", upstream.dim()),
            });
        }
        let w3 = upstream.t().dot(&cache.h2);
        let b3 = upstream.sum_axis(Axis(0));

        let mut dz2 = upstream.dot(&self.w3);
        dz2.zip_mut_with(&cache.h2, |g, &h| *g *= 1.0 - h * h);
        let w2 = dz2.t().dot(&cache.h1);
        let b2 = dz2.sum_axis(Axis(0));

        let mut dz1 = dz2.dot(&self.w2);
        dz1.zip_mut_with(&cache.h1, |g, &h| *g *= 1.0 - h * h);
        let w1 = dz1.t().dot(&x);
        let b1 = dz1.sum_axis(Axis(0));

        Ok(GradientSet { w1, b1, w2, b2, w3, b3 })
    }

    /// `w <- w - lr * g`. Rejects the whole update if any gradient or any
    /// resulting parameter would be non-finite.
    pub fn apply_gradients(&mut self, grads: &GradientSet, learning_rate: f64) -> Result<()> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be > 0 (got {learning_rate})")));
        }
        if grads.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape()),
                actual: format!("{:?}", grads.shape()),
            });
        }
        for (p, g) in self.tensors().iter().zip(grads.tensors()) {
            if p.iter().zip(g).any(|(w, d)| !(w - learning_rate * d).is_finite()) {
                return Err(Error::NonFinite("gradient update".into()));
            }
        }
        for (p, g) in self.tensors_mut().into_iter().zip(grads.tensors()) {
            for (w, d) in p.iter_mut().zip(g) {
                *w -= learning_rate * d;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&SerializedQNet::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: SerializedQNet = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        raw.try_into()
    }
}

impl GradientSet {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.w1.ncols(), self.w1.nrows(), self.w3.nrows())
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w3.as_slice().expect("standard layout"),
            self.b3.as_slice().expect("standard layout"),
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| *x == 0.0))
    }
}

/// On-disk form: one nested array per tensor, in a fixed key order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SerializedQNet {
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    w3: Vec<Vec<f64>>,
    b3: Vec<f64>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn matrix(name: &str, rows: Vec<Vec<f64>>, shape: (usize, usize)) -> Result<Array2<f64>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Parse(format!("{name} is not a {}x{} matrix", shape.0, shape.1)));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec(shape, flat).map_err(|e| Error::Parse(e.to_string()))
}

fn vector(name: &str, v: Vec<f64>, len: usize) -> Result<Array1<f64>> {
    if v.len() != len {
        return Err(Error::Parse(format!("{name} has {} entries, expected {len}", v.len())));
    }
    Ok(Array1::from(v))
}

impl From<&QNetParams> for SerializedQNet {
    fn from(p: &QNetParams) -> Self {
        Self {
            w1: rows(&p.w1),
            b1: p.b1.to_vec(),
            w2: rows(&p.w2),
            b2: p.b2.to_vec(),
            w3: rows(&p.w3),
            b3: p.b3.to_vec(),
        }
    }
}

impl TryFrom<SerializedQNet> for QNetParams {
    type Error = Error;

    fn try_from(raw: SerializedQNet) -> Result<Self> {
        let hidden = raw.b1.len();
        let input = raw.w1.first().map_or(0, Vec::len);
        let actions = raw.b3.len();
        if hidden == 0 || input == 0 || actions == 0 {
            return Err(Error::Parse("empty network tensors".into()));
        }
        let p = QNetParams {
            w1: matrix("w1", raw.w1, (hidden, input))?,
            b1: vector("b1", raw.b1, hidden)?,
            w2: matrix("w2", raw.w2, (hidden, hidden))?,
            b2: vector("b2", raw.b2, hidden)?,
            w3: matrix("w3", raw.w3, (actions, hidden))?,
            b3: vector("b3", raw.b3, actions)?,
        };
        if !p.is_finite() {
            return Err(Error::Parse("non-finite parameter".into()));
        }
        Ok(p)
    }
}

/// Index of the largest entry among those allowed by `mask`; ties go to the
/// lowest index. `None` when the mask allows nothing.
pub fn masked_argmax(values: ArrayView1<f64>, mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = QNetParams::init(8, 200, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = QNetParams::init(8, 200, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.b1.iter().chain(&a.b2).chain(&a.b3).all(|&x| x == 0.0));
    }

    #[test]
    fn init_respects_glorot_bound() {
        let p = QNetParams::init(200, 200, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let limit = (6.0f64 / 400.0).sqrt();
        assert!((limit - 0.1225).abs() < 1e-4);
        let max = p.w2.iter().take(10_000).fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(max <= limit);
        assert!(max > 0.9 * limit);
    }

    #[test]
    fn init_rejects_zero_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(QNetParams::init(0, 200, 20, &mut rng).is_err());
        assert!(QNetParams::init(8, 200, 0, &mut rng).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = QNetParams::zeros(4, 16, 3);
        assert_eq!(p.forward(&[0.3, -1.0, 2.0, 5.0]).unwrap(), vec![0.0; 3]);
        let q = QNetParams::init(4, 16, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(q.forward(&[0.0; 4]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn scalar_toy_network() {
        let p = QNetParams {
            w1: array![[1.0]],
            b1: array![0.0],
            w2: array![[1.0]],
            b2: array![0.0],
            w3: array![[1.0]],
            b3: array![0.0],
        };
        let q = p.forward(&[0.5]).unwrap();
        let expected = 0.5f64.tanh().tanh();
        assert!((expected - 0.4319).abs() < 1e-4);
        assert_eq!(q[0], expected);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = QNetParams::zeros(4, 8, 3);
        assert!(matches!(p.forward(&[1.0; 5]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = QNetParams::init(5, 12, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let g = p.backward(&[0.1, 0.2, 0.3, 0.4, 0.5], &[0.0; 4]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn duplicated_sample_under_mean_matches_single() {
        let p = QNetParams::init(3, 10, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = [0.2, -0.4, 0.9];
        let up = [0.7, -0.3];
        let single = p.backward(&x, &up).unwrap();
        let xb = array![[0.2, -0.4, 0.9], [0.2, -0.4, 0.9]];
        let ub = array![[0.35, -0.15], [0.35, -0.15]];
        let cache = p.forward_batch(xb.view()).unwrap();
        let pair = p.backward_batch(xb.view(), &cache, ub.view()).unwrap();
        for (a, b) in single.tensors().iter().zip(pair.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = QNetParams::init(3, 6, 2, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let before = p.clone();
        let g = p.backward(&[1.0, 2.0, 3.0], &[0.0, 0.0]).unwrap();
        p.apply_gradients(&g, 0.005).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn unit_gradient_moves_entry_by_learning_rate() {
        let mut p = QNetParams::zeros(2, 3, 2);
        let mut g = p.backward(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        g.b3[1] = 1.0;
        p.apply_gradients(&g, 0.005).unwrap();
        assert_eq!(p.b3[1], -0.005);
        assert_eq!(p.b3[0], 0.0);
    }

    #[test]
    fn sequential_steps_equal_summed_step_on_frozen_gradients() {
        let p = QNetParams::init(3, 5, 2, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let g1 = p.backward(&[0.1, 0.2, 0.3], &[1.0, 0.0]).unwrap();
        let g2 = p.backward(&[0.3, 0.1, -0.2], &[0.0, -0.5]).unwrap();
        let mut seq = p.clone();
        seq.apply_gradients(&g1, 0.01).unwrap();
        seq.apply_gradients(&g2, 0.01).unwrap();
        let summed = GradientSet {
            w1: &g1.w1 + &g2.w1,
            b1: &g1.b1 + &g2.b1,
            w2: &g1.w2 + &g2.w2,
            b2: &g1.b2 + &g2.b2,
            w3: &g1.w3 + &g2.w3,
            b3: &g1.b3 + &g2.b3,
        };
        let mut once = p.clone();
        once.apply_gradients(&summed, 0.01).unwrap();
        for (a, b) in seq.tensors().iter().zip(once.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        // Recomputing g2 after the first step gives a different update.
        let mut chained = p.clone();
        chained.apply_gradients(&g1, 0.01).unwrap();
        let g2_moved = chained.backward(&[0.3, 0.1, -0.2], &[0.0, -0.5]).unwrap();
        assert_ne!(g2_moved, g2);
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut p = QNetParams::init(2, 3, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let before = p.clone();
        let mut g = p.backward(&[0.5, 0.5], &[1.0, 1.0]).unwrap();
        g.w2[[0, 0]] = f64::NAN;
        assert!(matches!(p.apply_gradients(&g, 0.005), Err(Error::NonFinite(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn json_round_trip_and_value_semantics() {
        let p = QNetParams::init(6, 7, 4, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let json = p.to_json().unwrap();
        let keys: Vec<usize> = ["\"w1\"", "\"b1\"", "\"w2\"", "\"b2\"", "\"w3\"", "\"b3\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let back = QNetParams::from_json(&json).unwrap();
        assert_eq!(back, p);

        let mut copy = p.clone();
        copy.w1[[0, 0]] += 1.0;
        assert_ne!(copy, p);
        assert_eq!(p.clone(), p);
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(QNetParams::from_json("{"), Err(Error::Parse(_))));
        let bad = r#"{"w1":[[1.0]],"b1":[0.0,1.0],"w2":[[1.0]],"b2":[0.0],"w3":[[1.0]],"b3":[0.0]}"#;
        assert!(matches!(QNetParams::from_json(bad), Err(Error::Parse(_))));
    }

    #[test]
    fn masked_argmax_prefers_lowest_tied_index() {
        let v = array![1.0, 3.0, 3.0, 5.0];
        assert_eq!(masked_argmax(v.view(), &[true, true, true, false]), Some(1));
        assert_eq!(masked_argmax(v.view(), &[true, true, true, true]), Some(3));
        assert_eq!(masked_argmax(v.view(), &[false; 4]), None);
    }

    /// Loss `0.5 * sum((q - y)^2)` for one sample, its analytic gradient
    /// compared entrywise with central differences.
    fn max_fd_error(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = QNetParams::init(4, 6, 3, &mut rng).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |n: &QNetParams| -> f64 {
            n.forward(&x).unwrap().iter().zip(&y).map(|(q, t)| 0.5 * (q - t).powi(2)).sum()
        };
        let q = net.forward(&x).unwrap();
        let upstream: Vec<f64> = q.iter().zip(&y).map(|(q, t)| q - t).collect();
        let grads = net.backward(&x, &upstream).unwrap();
        let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut k = 0;
        for t in 0..6 {
            let len = net.tensors()[t].len();
            for i in 0..len {
                let mut plus = net.clone();
                plus.tensors_mut()[t][i] += h;
                let mut minus = net.clone();
                minus.tensors_mut()[t][i] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let err = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-7);
                worst = worst.max(err);
                k += 1;
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let e = max_fd_error(seed);
            assert!(e < 1e-4, "seed {seed}: {e}");
        }
    }

    #[test]
    fn small_step_never_increases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..100 {
            let mut net = QNetParams::init(4, 8, 3, &mut rng).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |n: &QNetParams| -> f64 {
                n.forward(&x).unwrap().iter().zip(&y).map(|(q, t)| 0.5 * (q - t).powi(2)).sum()
            };
            let before = loss(&net);
            let q = net.forward(&x).unwrap();
            let upstream: Vec<f64> = q.iter().zip(&y).map(|(q, t)| q - t).collect();
            let g = net.backward(&x, &upstream).unwrap();
            net.apply_gradients(&g, 1e-3).unwrap();
            assert!(loss(&net) <= before, "trial {trial}");
        }
    }
}

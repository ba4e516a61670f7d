use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;

pub const QACT_CLASSES: usize = 4;
pub const DEPTH_CLASSES: usize = 6;

/// Affine layer `x W + b`; weights are `in x out`, bias `1 x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Dense {
    fn init(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Dense {
            weight: uniform(rng, inputs, outputs, bound),
            bias: uniform(rng, 1, outputs, bound),
        }
    }
}

/// One LSTM direction. Gate columns are laid out `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub bias: Array2<f64>,
}

impl LstmCell {
    fn init(rng: &mut ChaCha8Rng, inputs: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        LstmCell {
            w_input: uniform(rng, inputs, 4 * hidden, bound),
            w_hidden: uniform(rng, hidden, 4 * hidden, bound),
            bias: uniform(rng, 1, 4 * hidden, bound),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmLayer {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// `f(x1, x2) = x1^T U x2 + W (x1 ++ x2) + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiaffineParams {
    pub u: Array2<f64>,
    /// `1 x 2P`: source half first, target half second.
    pub w: Array2<f64>,
    /// `1 x 1`.
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dense1: Dense,
    pub lstm: Vec<BiLstmLayer>,
    pub source: Dense,
    pub target: Dense,
    pub biaffine: BiaffineParams,
    pub qact_head: Option<Dense>,
    pub nd_head: Option<Dense>,
    /// `1 x T` log standard deviations, one per task in the multi-task sum
    /// (link, then QACT, then depth). Empty when only the link task is on.
    pub log_sigma: Array2<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-bound, bound);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

impl ModelParams {
    /// Seeded uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`;
    /// the biaffine bias starts at 0 and every sigma at 1.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dense1 = Dense::init(&mut rng, config.dense_input_dim(), config.dense1_units);
        let mut lstm = Vec::with_capacity(config.lstm_stacks);
        for layer in 0..config.lstm_stacks {
            let inputs = if layer == 0 {
                config.dense1_units
            } else {
                2 * config.lstm_units
            };
            lstm.push(BiLstmLayer {
                forward: LstmCell::init(&mut rng, inputs, config.lstm_units),
                backward: LstmCell::init(&mut rng, inputs, config.lstm_units),
            });
        }
        let ctx = config.context_dim();
        let source = Dense::init(&mut rng, ctx, config.proj_units);
        let target = Dense::init(&mut rng, ctx, config.proj_units);
        let p = config.proj_units;
        let bound = 1.0 / (p as f64).sqrt();
        let biaffine = BiaffineParams {
            u: uniform(&mut rng, p, p, bound),
            w: uniform(&mut rng, 1, 2 * p, 1.0 / (2.0 * p as f64).sqrt()),
            b: Array2::zeros((1, 1)),
        };
        let qact_head = config
            .use_qact_head
            .then(|| Dense::init(&mut rng, ctx, QACT_CLASSES));
        let nd_head = config
            .use_nd_head
            .then(|| Dense::init(&mut rng, ctx, DEPTH_CLASSES));
        ModelParams {
            dense1,
            lstm,
            source,
            target,
            biaffine,
            qact_head,
            nd_head,
            log_sigma: Array2::zeros((1, config.task_count_weighted())),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![
            ("dense1.weight".to_owned(), &self.dense1.weight),
            ("dense1.bias".to_owned(), &self.dense1.bias),
        ];
        for (l, layer) in self.lstm.iter().enumerate() {
            for (dir, cell) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                out.push((format!("lstm.{l}.{dir}.w_input"), &cell.w_input));
                out.push((format!("lstm.{l}.{dir}.w_hidden"), &cell.w_hidden));
                out.push((format!("lstm.{l}.{dir}.bias"), &cell.bias));
            }
        }
        out.push(("source.weight".into(), &self.source.weight));
        out.push(("source.bias".into(), &self.source.bias));
        out.push(("target.weight".into(), &self.target.weight));
        out.push(("target.bias".into(), &self.target.bias));
        out.push(("biaffine.u".into(), &self.biaffine.u));
        out.push(("biaffine.w".into(), &self.biaffine.w));
        out.push(("biaffine.b".into(), &self.biaffine.b));
        if let Some(h) = &self.qact_head {
            out.push(("qact.weight".into(), &h.weight));
            out.push(("qact.bias".into(), &h.bias));
        }
        if let Some(h) = &self.nd_head {
            out.push(("nd.weight".into(), &h.weight));
            out.push(("nd.bias".into(), &h.bias));
        }
        out.push(("log_sigma".into(), &self.log_sigma));
        out
    }

    /// Mutable view in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = vec![
            ("dense1.weight".to_owned(), &mut self.dense1.weight),
            ("dense1.bias".to_owned(), &mut self.dense1.bias),
        ];
        for (l, layer) in self.lstm.iter_mut().enumerate() {
            for (dir, cell) in [("fwd", &mut layer.forward), ("bwd", &mut layer.backward)] {
                out.push((format!("lstm.{l}.{dir}.w_input"), &mut cell.w_input));
                out.push((format!("lstm.{l}.{dir}.w_hidden"), &mut cell.w_hidden));
                out.push((format!("lstm.{l}.{dir}.bias"), &mut cell.bias));
            }
        }
        out.push(("source.weight".into(), &mut self.source.weight));
        out.push(("source.bias".into(), &mut self.source.bias));
        out.push(("target.weight".into(), &mut self.target.weight));
        out.push(("target.bias".into(), &mut self.target.bias));
        out.push(("biaffine.u".into(), &mut self.biaffine.u));
        out.push(("biaffine.w".into(), &mut self.biaffine.w));
        out.push(("biaffine.b".into(), &mut self.biaffine.b));
        if let Some(h) = &mut self.qact_head {
            out.push(("qact.weight".into(), &mut h.weight));
            out.push(("qact.bias".into(), &mut h.bias));
        }
        if let Some(h) = &mut self.nd_head {
            out.push(("nd.weight".into(), &mut h.weight));
            out.push(("nd.bias".into(), &mut h.bias));
        }
        out.push(("log_sigma".into(), &mut self.log_sigma));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|s| s.exp()).collect()
    }

    /// Adds `scale * other` to every tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, b);
        }
    }
}

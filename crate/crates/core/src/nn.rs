//! Policy/value network with hand-written forward and backward passes.
//!
//! A multilayer perceptron over the flattened observation, with a shared
//! trunk and two heads: action logits and a scalar state value. Parameters
//! live in a single flat f64 vector with an explicit layout, which keeps
//! checkpointing, Fisher diagonals and anchor arithmetic trivial. All math
//! is f64 so finite-difference and Fisher checks can be tight.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;

pub const N_ACTIONS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// (channels, window, window)
    pub input_shape: (usize, usize, usize),
    pub hidden_sizes: Vec<usize>,
    pub n_actions: usize,
}

impl NetworkConfig {
    pub fn new(input_shape: (usize, usize, usize), hidden_sizes: Vec<usize>) -> Self {
        NetworkConfig {
            input_shape,
            hidden_sizes,
            n_actions: N_ACTIONS,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.0 * self.input_shape.1 * self.input_shape.2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_actions != N_ACTIONS {
            return Err(Error::Config(format!(
                "n_actions must be {N_ACTIONS} (turn-left, turn-right, move-forward)"
            )));
        }
        if self.input_len() == 0 {
            return Err(Error::Config("empty input shape".into()));
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Index ranges of one dense layer inside the flat parameter vector.
/// Weights are row-major (fan_out, fan_in), followed by the bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRange {
    pub weights: Range<usize>,
    pub bias: Range<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub trunk: Vec<LayerRange>,
    pub policy: LayerRange,
    pub value: LayerRange,
    pub total: usize,
}

impl ParamLayout {
    pub fn from_config(config: &NetworkConfig) -> ParamLayout {
        let mut offset = 0usize;
        let mut dense = |fan_in: usize, fan_out: usize| {
            let weights = offset..offset + fan_in * fan_out;
            offset = weights.end;
            let bias = offset..offset + fan_out;
            offset = bias.end;
            LayerRange {
                weights,
                bias,
                fan_in,
                fan_out,
            }
        };
        let mut trunk = Vec::new();
        let mut width = config.input_len();
        for &h in &config.hidden_sizes {
            trunk.push(dense(width, h));
            width = h;
        }
        let policy = dense(width, config.n_actions);
        let value = dense(width, 1);
        ParamLayout {
            trunk,
            policy,
            value,
            total: offset,
        }
    }
}

/// Flat parameter vector plus its layout.
#[derive(Clone, Debug)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.data == other.data
    }
}

impl ParamVector {
    pub fn zeros(config: &NetworkConfig) -> ParamVector {
        let layout = Arc::new(ParamLayout::from_config(config));
        ParamVector {
            data: vec![0.0; layout.total],
            layout,
        }
    }

    pub fn from_data(config: &NetworkConfig, data: Vec<f64>) -> Result<ParamVector> {
        let layout = Arc::new(ParamLayout::from_config(config));
        if data.len() != layout.total {
            return Err(Error::Contract(format!(
                "parameter vector length {} does not match layout total {}",
                data.len(),
                layout.total
            )));
        }
        Ok(ParamVector { data, layout })
    }

    pub fn zeros_like(&self) -> ParamVector {
        ParamVector {
            data: vec![0.0; self.data.len()],
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn weights(&self, layer: &LayerRange) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((layer.fan_out, layer.fan_in), &self.data[layer.weights.clone()])
            .expect("layout ranges are consistent")
    }

    pub fn bias(&self, layer: &LayerRange) -> ArrayView1<'_, f64> {
        ArrayView1::from_shape(layer.fan_out, &self.data[layer.bias.clone()])
            .expect("layout ranges are consistent")
    }

    /// self += factor * other
    pub fn add_scaled(&mut self, other: &ParamVector, factor: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn hash(&self) -> u64 {
        rng::hash_f64s(&self.data)
    }
}

/// Fan-in-scaled uniform weights, zero biases.
pub fn init_params(config: &NetworkConfig, seed: u64) -> ParamVector {
    let mut params = ParamVector::zeros(config);
    let mut stream = rng::stream_rng(seed, rng::stream::PARAM_INIT);
    let layout = Arc::clone(&params.layout);
    let fill = |layer: &LayerRange, rng: &mut ChaCha8Rng, data: &mut [f64]| {
        let bound = 1.0 / (layer.fan_in as f64).sqrt();
        for w in &mut data[layer.weights.clone()] {
            *w = (rng::next_f64(rng) * 2.0 - 1.0) * bound;
        }
        // biases stay zero
    };
    for layer in &layout.trunk {
        fill(layer, &mut stream, &mut params.data);
    }
    fill(&layout.policy, &mut stream, &mut params.data);
    fill(&layout.value, &mut stream, &mut params.data);
    params
}

/// Activations retained from one forward call, borrowed against the exact
/// parameters that produced them.
pub struct ForwardPass<'a> {
    params: &'a ParamVector,
    input: Array2<f64>,
    /// post-ReLU activations per trunk layer
    trunk_acts: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub values: Array1<f64>,
}

impl ForwardPass<'_> {
    pub fn batch_len(&self) -> usize {
        self.input.nrows()
    }

    pub fn input_row(&self, i: usize) -> Vec<f64> {
        self.input.row(i).to_vec()
    }
}

fn dense(x: &Array2<f64>, w: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    let mut out = x.dot(&w.t());
    out += b;
    out
}

/// Batched forward: flatten -> ReLU hidden layers -> (logits, value) heads.
pub fn forward<'a>(params: &'a ParamVector, input: Array2<f64>) -> Result<ForwardPass<'a>> {
    let layout = params.layout();
    let expect = layout
        .trunk
        .first()
        .map(|l| l.fan_in)
        .unwrap_or(layout.policy.fan_in);
    if input.ncols() != expect {
        return Err(Error::Contract(format!(
            "observation width {} does not match network input {}",
            input.ncols(),
            expect
        )));
    }
    let mut acts = Vec::with_capacity(layout.trunk.len());
    let mut current = input.clone();
    for layer in &layout.trunk {
        let mut a = dense(&current, &params.weights(layer), &params.bias(layer));
        a.mapv_inplace(|v| v.max(0.0));
        current = a.clone();
        acts.push(a);
    }
    let logits = dense(&current, &params.weights(&layout.policy), &params.bias(&layout.policy));
    let values = dense(&current, &params.weights(&layout.value), &params.bias(&layout.value))
        .index_axis(Axis(1), 0)
        .to_owned();
    Ok(ForwardPass {
        params,
        input,
        trunk_acts: acts,
        logits,
        values,
    })
}

/// Exact reverse-mode gradient of the forward map contracted with
/// (dlogits, dvalues). Additive over batch rows.
pub fn backward(
    pass: &ForwardPass<'_>,
    dlogits: ArrayView2<f64>,
    dvalues: ArrayView1<f64>,
) -> Result<ParamVector> {
    let params = pass.params;
    let layout = params.layout();
    let batch = pass.input.nrows();
    if dlogits.nrows() != batch || dvalues.len() != batch {
        return Err(Error::Contract(
            "gradient seed shape does not match the forward batch".into(),
        ));
    }
    let mut grad = params.zeros_like();

    let top = pass.trunk_acts.last().unwrap_or(&pass.input);

    // policy head
    let d_wp = dlogits.t().dot(top);
    let d_bp = dlogits.sum_axis(Axis(0));
    write_mat(&mut grad, &layout.policy.clone(), &d_wp, &d_bp);

    // value head (fan_out 1)
    let dv_row = dvalues.insert_axis(Axis(0));
    let d_wv = dv_row.dot(top);
    let d_bv = dv_row.sum_axis(Axis(1));
    write_mat(&mut grad, &layout.value.clone(), &d_wv, &d_bv);

    // into the trunk
    let mut d_act = dlogits.dot(&params.weights(&layout.policy));
    let wv = params.weights(&layout.value);
    d_act += &dvalues.insert_axis(Axis(1)).dot(&wv);

    for (idx, layer) in layout.trunk.iter().enumerate().rev() {
        let act = &pass.trunk_acts[idx];
        // ReLU mask on the post-activation
        let mut d_pre = d_act;
        d_pre.zip_mut_with(act, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let below: &Array2<f64> = if idx == 0 {
            &pass.input
        } else {
            &pass.trunk_acts[idx - 1]
        };
        let d_w = d_pre.t().dot(below);
        let d_b = d_pre.sum_axis(Axis(0));
        write_mat(&mut grad, &layer.clone(), &d_w, &d_b);
        d_act = d_pre.dot(&params.weights(layer));
    }
    Ok(grad)
}

fn write_mat(grad: &mut ParamVector, layer: &LayerRange, d_w: &Array2<f64>, d_b: &Array1<f64>) {
    let data = grad.data_mut();
    // dot() may hand back an f-order array; iterate in logical (row-major)
    // order instead of assuming a contiguous slice
    for (dst, src) in data[layer.weights.clone()].iter_mut().zip(d_w.iter()) {
        *dst = *src;
    }
    for (dst, src) in data[layer.bias.clone()].iter_mut().zip(d_b.iter()) {
        *dst = *src;
    }
}

/// Numerically stable log-softmax of one logits row.
pub fn log_softmax(logits: ArrayView1<f64>) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - max - log_sum).collect()
}

pub fn softmax(logits: ArrayView1<f64>) -> Vec<f64> {
    log_softmax(logits).iter().map(|lp| lp.exp()).collect()
}

/// Sample an action from softmax(logits); returns (action, log-probability).
pub fn sample_action(logits: ArrayView1<f64>, rng: &mut ChaCha8Rng) -> (usize, f64) {
    let logp = log_softmax(logits);
    let u = rng::next_f64(rng);
    let mut cum = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        cum += lp.exp();
        if u < cum {
            return (i, *lp);
        }
    }
    let last = logp.len() - 1;
    (last, logp[last])
}

/// Greedy argmax action (ties resolve to the lowest index).
pub fn greedy_action(logits: ArrayView1<f64>) -> (usize, f64) {
    let mut best = 0;
    for (i, l) in logits.iter().enumerate() {
        if *l > logits[best] {
            best = i;
        }
    }
    let logp = log_softmax(logits);
    (best, logp[best])
}

/// Central finite-difference gradient of an arbitrary scalar function of the
/// parameters. The independent oracle for every analytic gradient in the
/// crate.
pub fn finite_difference_grad<F>(f: F, params: &ParamVector, step: f64) -> Vec<f64>
where
    F: Fn(&ParamVector) -> f64,
{
    let mut probe = params.clone();
    let mut grad = vec![0.0; params.len()];
    for k in 0..params.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[k] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[k] = orig;
        grad[k] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// max_k |a_k - b_k| / max(|a_k|, |b_k|, 1e-6)
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

//! The fusion head: a small MLP over the concatenated probability rows of the
//! selected models, trained with a weighted squared error on a softmax
//! output.

use std::fmt as stdfmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, ModelPool};
use crate::error::{Error, Result};
use crate::metrics::Predictions;
use crate::proxy::ProxySample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Sigmoid];

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl stdfmt::Display for Activation {
    fn fmt(&self, f: &mut stdfmt::Formatter<'_>) -> stdfmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(Error::Invalid(format!("unknown activation '{s}'"))),
        }
    }
}

/// Hidden layer widths and activations; the output layer (width
/// `output_width`, softmax) is implicit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub activations: Vec<Activation>,
    pub input_width: usize,
    pub output_width: usize,
}

impl MlpSpec {
    pub fn new(
        hidden: Vec<usize>,
        activations: Vec<Activation>,
        input_width: usize,
        output_width: usize,
    ) -> Result<Self> {
        let spec = MlpSpec {
            hidden,
            activations,
            input_width,
            output_width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() != self.activations.len() {
            return Err(Error::Invalid(format!(
                "{} hidden widths but {} activations",
                self.hidden.len(),
                self.activations.len()
            )));
        }
        if self.input_width == 0 || self.output_width == 0 || self.hidden.contains(&0) {
            return Err(Error::Invalid("every layer width must be at least 1".into()));
        }
        Ok(())
    }

    /// `(out, in)` shape of every layer, output layer last.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_width;
        for &w in self.hidden.iter().chain(std::iter::once(&self.output_width)) {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Dense layer; `weights` is row-major `rows x cols` (out x in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        MlpParams {
            layers: spec.shapes().into_iter().map(|(o, i)| Layer::zeros(o, i)).collect(),
        }
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        let shapes = spec.shapes();
        self.layers.len() == shapes.len()
            && self.layers.iter().zip(&shapes).all(|(l, &(o, i))| {
                l.rows == o && l.cols == i && l.weights.len() == o * i && l.bias.len() == o
            })
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Every parameter, layer by layer: weights then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp(spec: &MlpSpec, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::zeros(spec);
    for layer in &mut params.layers {
        let limit = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.gen_range(-limit..=limit);
        }
    }
    params
}

/// Per-layer activations from one forward pass; `outputs[0]` is the input.
struct Trace {
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    fn new(spec: &MlpSpec) -> Self {
        let shapes = spec.shapes();
        Trace {
            pre: shapes.iter().map(|&(o, _)| vec![0.0; o]).collect(),
            outputs: std::iter::once(vec![0.0; spec.input_width])
                .chain(shapes.iter().map(|&(o, _)| vec![0.0; o]))
                .collect(),
        }
    }

    fn output(&self) -> &[f64] {
        self.outputs.last().expect("at least one layer")
    }
}

fn softmax(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

fn forward_into(params: &MlpParams, spec: &MlpSpec, input: &[f64], trace: &mut Trace) {
    trace.outputs[0].copy_from_slice(input);
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let (prev, rest) = trace.outputs.split_at_mut(l + 1);
        let x = &prev[l];
        let z = &mut trace.pre[l];
        for r in 0..layer.rows {
            let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
            z[r] = layer.bias[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let out = &mut rest[0];
        if l == last {
            softmax(z, out);
        } else {
            let act = spec.activations[l];
            for (o, &v) in out.iter_mut().zip(z.iter()) {
                *o = act.apply(v);
            }
        }
    }
}

fn check_input(spec: &MlpSpec, params: &MlpParams, input: &[f64]) -> Result<()> {
    if input.len() != spec.input_width {
        return Err(Error::Invalid(format!(
            "input has length {}, expected {}",
            input.len(),
            spec.input_width
        )));
    }
    if !params.matches(spec) {
        return Err(Error::Invalid("parameters do not match the MLP spec".into()));
    }
    Ok(())
}

/// Probability vector of length `spec.output_width`.
pub fn forward(params: &MlpParams, spec: &MlpSpec, input: &[f64]) -> Result<Vec<f64>> {
    check_input(spec, params, input)?;
    let mut trace = Trace::new(spec);
    forward_into(params, spec, input, &mut trace);
    Ok(trace.output().to_vec())
}

fn sample_error(output: &[f64], target: &[f64]) -> f64 {
    let m = output.len() as f64;
    output
        .iter()
        .zip(target)
        .map(|(o, y)| (o - y) * (o - y))
        .sum::<f64>()
        / m
}

/// Mean over samples of `weight * sum_c (out_c - y_c)^2 / M`.
pub fn loss(params: &MlpParams, spec: &MlpSpec, proxy: &[ProxySample]) -> Result<f64> {
    if proxy.is_empty() {
        return Ok(0.0);
    }
    let mut trace = Trace::new(spec);
    let mut total = 0.0;
    for s in proxy {
        check_input(spec, params, &s.input)?;
        forward_into(params, spec, &s.input, &mut trace);
        total += s.weight * sample_error(trace.output(), &s.target);
    }
    Ok(total / proxy.len() as f64)
}

/// Scratch buffers for backpropagation.
struct Backprop {
    trace: Trace,
    delta: Vec<Vec<f64>>,
}

impl Backprop {
    fn new(spec: &MlpSpec) -> Self {
        Backprop {
            trace: Trace::new(spec),
            delta: spec.shapes().iter().map(|&(o, _)| vec![0.0; o]).collect(),
        }
    }

    /// Adds `scale * d(weight * err)/d(params)` for one sample into `grad`
    /// and returns the sample's weighted error.
    fn accumulate(
        &mut self,
        params: &MlpParams,
        spec: &MlpSpec,
        sample: &ProxySample,
        scale: f64,
        grad: &mut MlpParams,
    ) -> f64 {
        forward_into(params, spec, &sample.input, &mut self.trace);
        let out = self.trace.output();
        let m = out.len() as f64;
        let err = sample.weight * sample_error(out, &sample.target);
        if sample.weight == 0.0 {
            return err;
        }

        // dL/d(out) then through the softmax Jacobian
        let last = params.layers.len() - 1;
        let coef = 2.0 * sample.weight * scale / m;
        let g: Vec<f64> = out
            .iter()
            .zip(&sample.target)
            .map(|(o, y)| coef * (o - y))
            .collect();
        let dot: f64 = out.iter().zip(&g).map(|(o, gi)| o * gi).sum();
        for (d, (o, gi)) in self.delta[last].iter_mut().zip(out.iter().zip(&g)) {
            *d = o * (gi - dot);
        }

        for l in (0..=last).rev() {
            let layer = &params.layers[l];
            let x = &self.trace.outputs[l];
            let gl = &mut grad.layers[l];
            {
                let delta = &self.delta[l];
                for r in 0..layer.rows {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    gl.bias[r] += d;
                    let row = &mut gl.weights[r * layer.cols..(r + 1) * layer.cols];
                    for (gw, &xv) in row.iter_mut().zip(x) {
                        *gw += d * xv;
                    }
                }
            }
            if l > 0 {
                let (lower, upper) = self.delta.split_at_mut(l);
                let delta = &upper[0];
                let below = &mut lower[l - 1];
                below.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..layer.rows {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                    for (b, &w) in below.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                let act = spec.activations[l - 1];
                let z = &self.trace.pre[l - 1];
                let a = &self.trace.outputs[l];
                for ((b, &zv), &av) in below.iter_mut().zip(z).zip(a) {
                    *b *= act.derivative(zv, av);
                }
            }
        }
        err
    }
}

/// Exact gradient of [`loss`] over `batch`.
pub fn gradient(params: &MlpParams, spec: &MlpSpec, batch: &[ProxySample]) -> Result<MlpParams> {
    let mut grad = MlpParams::zeros(spec);
    if batch.is_empty() {
        return Ok(grad);
    }
    let mut bp = Backprop::new(spec);
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        check_input(spec, params, &s.input)?;
        bp.accumulate(params, spec, s, scale, &mut grad);
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Invalid(
                "learning rate, epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mini-batch gradient descent from [`init_mlp`] with the config seed.
pub fn train(spec: &MlpSpec, proxy: &[ProxySample], config: &TrainConfig) -> Result<MlpParams> {
    train_from(init_mlp(spec, config.seed), spec, proxy, config)
}

/// Mini-batch gradient descent from the given starting point. Sample order
/// is reshuffled every epoch from a generator seeded with `config.seed`.
pub fn train_from(
    mut params: MlpParams,
    spec: &MlpSpec,
    proxy: &[ProxySample],
    config: &TrainConfig,
) -> Result<MlpParams> {
    config.validate()?;
    spec.validate()?;
    if proxy.is_empty() {
        return Err(Error::Invalid("cannot train on an empty proxy dataset".into()));
    }
    for s in proxy {
        check_input(spec, &params, &s.input)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7ead);
    let mut order: Vec<usize> = (0..proxy.len()).collect();
    let mut grad = MlpParams::zeros(spec);
    let mut bp = Backprop::new(spec);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.values_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                epoch_loss += bp.accumulate(&params, spec, &proxy[i], scale, &mut grad);
            }
            params.add_scaled(&grad, -config.learning_rate);
        }
        if !epoch_loss.is_finite() || !params.is_finite() {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(params)
}

/// A trained head with the spec it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

/// Consensus-routed prediction: when every selected model has the same
/// argmax that class is returned and the head is bypassed.
pub fn fused_predict(
    pool: &ModelPool,
    selected: &[usize],
    params: &MlpParams,
    spec: &MlpSpec,
    sample: usize,
) -> Result<usize> {
    if selected.is_empty() {
        return Err(Error::Invalid("no models selected".into()));
    }
    let first = pool.entries[selected[0]].predict(sample);
    if selected[1..]
        .iter()
        .all(|&j| pool.entries[j].predict(sample) == first)
    {
        return Ok(first);
    }
    let mut input = Vec::with_capacity(spec.input_width);
    for &j in selected {
        input.extend_from_slice(pool.entries[j].row(sample));
    }
    Ok(argmax(&forward(params, spec, &input)?))
}

/// [`fused_predict`] over every sample in `split`.
pub fn fused_predictions(
    pool: &ModelPool,
    selected: &[usize],
    head: &FusionHead,
    split: &[usize],
) -> Result<Predictions> {
    split
        .iter()
        .map(|&i| fused_predict(pool, selected, &head.params, &head.spec, i))
        .collect::<Result<Vec<_>>>()
        .map(Predictions)
}

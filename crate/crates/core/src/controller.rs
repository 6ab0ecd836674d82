//! Recurrent policy that emits fusion structures one decision at a time and
//! learns from episode rewards with a Monte Carlo policy gradient.
//!
//! Each decision step feeds the embedding of the previous action (a start
//! token first) through a tanh recurrent cell and samples from the softmax
//! of a step-specific affine decoder. The gradient of
//! `1/m sum_k sum_t gamma^(T_k - t) log pi(a_t | a_<t) (R_k - b)` is obtained
//! by backpropagation through time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Activation, MlpSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden_size: usize,
    pub gamma: f64,
    pub baseline_decay: f64,
    /// Episodes per update (m).
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden_size: 64,
            gamma: 0.99,
            baseline_decay: 0.9,
            batch_size: 5,
            learning_rate: 0.01,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("hidden size and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..=1.0).contains(&self.gamma)
            || !(0.0..=1.0).contains(&self.baseline_decay)
        {
            return Err(Error::Invalid(
                "learning rate must be positive; gamma and baseline decay in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Affine map from the hidden state to one step's action logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub choices: usize,
    /// Row-major `choices x hidden`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Trainable tensors of the policy. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeights {
    pub hidden_size: usize,
    /// Row-major `hidden x hidden`, applied to the input embedding.
    pub input_weights: Vec<f64>,
    /// Row-major `hidden x hidden`, applied to the previous hidden state.
    pub recurrent_weights: Vec<f64>,
    pub cell_bias: Vec<f64>,
    pub decoders: Vec<Decoder>,
    /// Row-major `tokens x hidden`; token 0 is the start token.
    pub embeddings: Vec<f64>,
}

impl PolicyWeights {
    fn zeros(hidden: usize, decoder_sizes: &[usize], num_tokens: usize) -> Self {
        PolicyWeights {
            hidden_size: hidden,
            input_weights: vec![0.0; hidden * hidden],
            recurrent_weights: vec![0.0; hidden * hidden],
            cell_bias: vec![0.0; hidden],
            decoders: decoder_sizes
                .iter()
                .map(|&c| Decoder {
                    choices: c,
                    weights: vec![0.0; c * hidden],
                    bias: vec![0.0; c],
                })
                .collect(),
            embeddings: vec![0.0; num_tokens * hidden],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let sizes: Vec<usize> = self.decoders.iter().map(|d| d.choices).collect();
        Self::zeros(self.hidden_size, &sizes, self.num_tokens())
    }

    pub fn num_tokens(&self) -> usize {
        self.embeddings.len() / self.hidden_size
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.input_weights
            .iter()
            .chain(&self.recurrent_weights)
            .chain(&self.cell_bias)
            .chain(self.decoders.iter().flat_map(|d| d.weights.iter().chain(&d.bias)))
            .chain(&self.embeddings)
            .copied()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.input_weights
            .iter_mut()
            .chain(self.recurrent_weights.iter_mut())
            .chain(self.cell_bias.iter_mut())
            .chain(
                self.decoders
                    .iter_mut()
                    .flat_map(|d| d.weights.iter_mut().chain(d.bias.iter_mut())),
            )
            .chain(self.embeddings.iter_mut())
    }

    pub fn add_scaled(&mut self, other: &PolicyWeights, scale: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Policy weights plus the reward baseline and update bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub weights: PolicyWeights,
    /// Exponential moving average of batch-mean rewards; unset until the
    /// first update.
    pub baseline: Option<f64>,
    pub updates: u64,
    pub config: PolicyConfig,
}

impl ControllerParams {
    /// Uniform initialization in `[-1/sqrt(H), 1/sqrt(H)]`.
    pub fn new(
        decoder_sizes: &[usize],
        num_tokens: usize,
        config: PolicyConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if decoder_sizes.iter().any(|&c| c == 0) || num_tokens == 0 {
            return Err(Error::Invalid("every decision needs at least one choice".into()));
        }
        let mut weights = PolicyWeights::zeros(config.hidden_size, decoder_sizes, num_tokens);
        let limit = 1.0 / (config.hidden_size as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in weights.values_mut() {
            *w = rng.gen_range(-limit..=limit);
        }
        for d in &mut weights.decoders {
            d.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        weights.cell_bias.iter_mut().for_each(|b| *b = 0.0);
        Ok(ControllerParams {
            weights,
            baseline: None,
            updates: 0,
            config,
        })
    }

    /// Parameters for a fusion search space.
    pub fn for_space(space: &SearchSpace, config: PolicyConfig, seed: u64) -> Result<Self> {
        space.validate()?;
        ControllerParams::new(&space.decoder_sizes(), space.num_tokens(), config, seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One decision to make: which decoder to use, where its actions start in
/// the embedding table, and which actions are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub decoder: usize,
    pub token_offset: usize,
    /// `None` allows every action.
    pub allowed: Option<Vec<bool>>,
}

/// Sequencing of decisions; the next step may depend on earlier actions.
pub trait DecisionPlan {
    fn next_step(&self, actions: &[usize]) -> Option<Step>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub decoder: usize,
    /// Embedding row of the chosen action.
    pub token: usize,
    pub action: usize,
    pub allowed: Option<Vec<bool>>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub reward: Option<f64>,
}

impl EpisodeTrace {
    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn log_prob(&self) -> f64 {
        self.steps.iter().map(|s| s.log_prob).sum()
    }
}

/// Recurrent cell state across one episode.
struct Cell<'a> {
    w: &'a PolicyWeights,
    h: Vec<f64>,
}

impl<'a> Cell<'a> {
    fn new(w: &'a PolicyWeights) -> Self {
        Cell {
            w,
            h: vec![0.0; w.hidden_size],
        }
    }

    /// Advances the cell with the embedding of `token`.
    fn advance(&mut self, token: usize) {
        let hsz = self.w.hidden_size;
        let e = &self.w.embeddings[token * hsz..(token + 1) * hsz];
        let mut next = self.w.cell_bias.clone();
        for (r, n) in next.iter_mut().enumerate() {
            let wi = &self.w.input_weights[r * hsz..(r + 1) * hsz];
            let wh = &self.w.recurrent_weights[r * hsz..(r + 1) * hsz];
            *n += wi.iter().zip(e).map(|(a, b)| a * b).sum::<f64>()
                + wh.iter().zip(&self.h).map(|(a, b)| a * b).sum::<f64>();
            *n = n.tanh();
        }
        self.h = next;
    }

    /// Masked softmax of a decoder's logits; disallowed actions get exactly 0.
    fn distribution(&self, decoder: usize, allowed: Option<&[bool]>) -> Result<Vec<f64>> {
        let d = &self.w.decoders[decoder];
        let hsz = self.w.hidden_size;
        let logits: Vec<f64> = (0..d.choices)
            .map(|c| {
                d.bias[c]
                    + d.weights[c * hsz..(c + 1) * hsz]
                        .iter()
                        .zip(&self.h)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        masked_softmax(&logits, allowed)
    }
}

/// Softmax over the allowed entries; disallowed entries are exactly 0.
pub fn masked_softmax(logits: &[f64], allowed: Option<&[bool]>) -> Result<Vec<f64>> {
    let ok = |i: usize| allowed.is_none_or(|a| a[i]);
    let max = (0..logits.len())
        .filter(|&i| ok(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Invalid("every action is masked".into()));
    }
    let mut probs: Vec<f64> = (0..logits.len())
        .map(|i| if ok(i) { (logits[i] - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(probs)
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples an episode from `plan`.
pub fn sample_plan(
    params: &ControllerParams,
    plan: &dyn DecisionPlan,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeTrace> {
    let mut cell = Cell::new(&params.weights);
    let mut token = 0;
    let mut actions = Vec::new();
    let mut steps = Vec::new();
    while let Some(step) = plan.next_step(&actions) {
        cell.advance(token);
        let probs = cell.distribution(step.decoder, step.allowed.as_deref())?;
        let action = sample_index(&probs, rng);
        token = step.token_offset + action;
        steps.push(TraceStep {
            decoder: step.decoder,
            token,
            action,
            allowed: step.allowed,
            log_prob: probs[action].ln(),
        });
        actions.push(action);
    }
    Ok(EpisodeTrace {
        steps,
        reward: None,
    })
}

/// Replays a fixed action sequence under the current policy.
pub fn replay_plan(
    params: &ControllerParams,
    plan: &dyn DecisionPlan,
    actions: &[usize],
) -> Result<EpisodeTrace> {
    let mut cell = Cell::new(&params.weights);
    let mut token = 0;
    let mut steps = Vec::with_capacity(actions.len());
    for (t, &action) in actions.iter().enumerate() {
        let step = plan.next_step(&actions[..t]).ok_or_else(|| {
            Error::Invalid(format!("action sequence longer than the plan ({} steps)", t))
        })?;
        cell.advance(token);
        let probs = cell.distribution(step.decoder, step.allowed.as_deref())?;
        if action >= probs.len() || probs[action] == 0.0 {
            return Err(Error::Invalid(format!(
                "action {action} is not available at step {t}"
            )));
        }
        token = step.token_offset + action;
        steps.push(TraceStep {
            decoder: step.decoder,
            token,
            action,
            allowed: step.allowed,
            log_prob: probs[action].ln(),
        });
    }
    if plan.next_step(actions).is_some() {
        return Err(Error::Invalid("action sequence ends before the plan".into()));
    }
    Ok(EpisodeTrace {
        steps,
        reward: None,
    })
}

/// Gradient of `sum_t coefs[t] * log pi(a_t | a_<t)` for one trace.
pub fn log_prob_gradient(
    weights: &PolicyWeights,
    steps: &[TraceStep],
    coefs: &[f64],
) -> Result<PolicyWeights> {
    let mut grad = weights.zeros_like();
    accumulate_gradient(weights, steps, coefs, &mut grad)?;
    Ok(grad)
}

fn accumulate_gradient(
    w: &PolicyWeights,
    steps: &[TraceStep],
    coefs: &[f64],
    grad: &mut PolicyWeights,
) -> Result<()> {
    let hsz = w.hidden_size;
    let n = steps.len();
    // forward pass, keeping every hidden state; hs[0] is the zero state
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let mut cell = Cell::new(w);
    hs.push(cell.h.clone());
    let mut token = 0;
    for s in steps {
        inputs.push(token);
        cell.advance(token);
        hs.push(cell.h.clone());
        probs.push(cell.distribution(s.decoder, s.allowed.as_deref())?);
        token = s.token;
    }

    let mut carry = vec![0.0; hsz];
    for t in (0..n).rev() {
        let s = &steps[t];
        let h = &hs[t + 1];
        let h_prev = &hs[t];
        let dec = &w.decoders[s.decoder];
        let gdec = &mut grad.decoders[s.decoder];
        let mut dh = carry.clone();
        for c in 0..dec.choices {
            let onehot = if c == s.action { 1.0 } else { 0.0 };
            let dl = coefs[t] * (onehot - probs[t][c]);
            if dl == 0.0 {
                continue;
            }
            gdec.bias[c] += dl;
            let row = &dec.weights[c * hsz..(c + 1) * hsz];
            let grow = &mut gdec.weights[c * hsz..(c + 1) * hsz];
            for j in 0..hsz {
                grow[j] += dl * h[j];
                dh[j] += dl * row[j];
            }
        }
        let dpre: Vec<f64> = dh.iter().zip(h).map(|(d, hv)| d * (1.0 - hv * hv)).collect();
        let e_off = inputs[t] * hsz;
        carry.iter_mut().for_each(|c| *c = 0.0);
        for (r, &dp) in dpre.iter().enumerate() {
            if dp == 0.0 {
                continue;
            }
            grad.cell_bias[r] += dp;
            let wi = &w.input_weights[r * hsz..(r + 1) * hsz];
            let wh = &w.recurrent_weights[r * hsz..(r + 1) * hsz];
            for j in 0..hsz {
                grad.input_weights[r * hsz + j] += dp * w.embeddings[e_off + j];
                grad.recurrent_weights[r * hsz + j] += dp * h_prev[j];
                grad.embeddings[e_off + j] += dp * wi[j];
                carry[j] += dp * wh[j];
            }
        }
    }
    Ok(())
}

/// Per-step coefficients `gamma^(T - t) * advantage / m` (t from 1 to T).
pub fn step_coefficients(len: usize, gamma: f64, advantage: f64, batch: usize) -> Vec<f64> {
    (0..len)
        .map(|t| gamma.powi((len - 1 - t) as i32) * advantage / batch as f64)
        .collect()
}

/// The policy-gradient estimate for a batch against baseline `b`.
pub fn batch_gradient(
    params: &ControllerParams,
    batch: &[EpisodeTrace],
    baseline: f64,
) -> Result<PolicyWeights> {
    let mut grad = params.weights.zeros_like();
    for trace in batch {
        let reward = trace
            .reward
            .ok_or_else(|| Error::Invalid("episode has no reward".into()))?;
        let coefs = step_coefficients(
            trace.steps.len(),
            params.config.gamma,
            reward - baseline,
            batch.len(),
        );
        accumulate_gradient(&params.weights, &trace.steps, &coefs, &mut grad)?;
    }
    Ok(grad)
}

/// One gradient-ascent step on a batch of rewarded episodes, followed by the
/// baseline update. The first batch initializes the baseline to its mean
/// reward before computing advantages.
pub fn reinforce_update(params: &mut ControllerParams, batch: &[EpisodeTrace]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty episode batch".into()));
    }
    let mut total = 0.0;
    for t in batch {
        total += t
            .reward
            .ok_or_else(|| Error::Invalid("episode has no reward".into()))?;
    }
    let mean = total / batch.len() as f64;
    let baseline = *params.baseline.get_or_insert(mean);
    let grad = batch_gradient(params, batch, baseline)?;
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    params.weights.add_scaled(&grad, params.config.learning_rate);
    let beta = params.config.baseline_decay;
    params.baseline = Some(beta * baseline + (1.0 - beta) * mean);
    params.updates += 1;
    Ok(())
}

/// Hyperparameter grid the controller chooses from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_select: usize,
    pub pool_size: usize,
    pub depth_choices: Vec<usize>,
    pub width_choices: Vec<usize>,
    pub activation_choices: Vec<Activation>,
    /// Model forced into every structure, chosen at the first step.
    #[serde(default)]
    pub pinned: Option<usize>,
}

impl SearchSpace {
    pub fn new(pool_size: usize) -> Self {
        SearchSpace {
            n_select: 2,
            pool_size,
            depth_choices: vec![1, 2, 3],
            width_choices: vec![8, 10, 12, 16, 18],
            activation_choices: Activation::ALL.to_vec(),
            pinned: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_select == 0 || self.n_select > self.pool_size {
            return Err(Error::Invalid(format!(
                "cannot select {} models from a pool of {}",
                self.n_select, self.pool_size
            )));
        }
        if self.depth_choices.is_empty()
            || self.width_choices.is_empty()
            || self.activation_choices.is_empty()
        {
            return Err(Error::Invalid("every choice list must be non-empty".into()));
        }
        if self.width_choices.contains(&0) {
            return Err(Error::Invalid("widths must be positive".into()));
        }
        if let Some(p) = self.pinned {
            if p >= self.pool_size {
                return Err(Error::Invalid(format!("pinned model {p} out of range")));
            }
        }
        Ok(())
    }

    pub fn max_depth(&self) -> usize {
        self.depth_choices.iter().copied().max().unwrap_or(0)
    }

    /// Decision steps of the longest episode.
    pub fn max_steps(&self) -> usize {
        self.n_select + 1 + 2 * self.max_depth()
    }

    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.pool_size; self.n_select];
        sizes.push(self.depth_choices.len());
        for _ in 0..self.max_depth() {
            sizes.push(self.width_choices.len());
            sizes.push(self.activation_choices.len());
        }
        sizes
    }

    fn depth_offset(&self) -> usize {
        1 + self.pool_size
    }

    fn width_offset(&self) -> usize {
        self.depth_offset() + self.depth_choices.len()
    }

    fn activation_offset(&self) -> usize {
        self.width_offset() + self.width_choices.len()
    }

    /// Start token plus one embedding per action value.
    pub fn num_tokens(&self) -> usize {
        self.activation_offset() + self.activation_choices.len()
    }

    /// Number of distinct structures (model subsets are unordered).
    pub fn count(&self) -> u128 {
        let (pool, pick) = match self.pinned {
            Some(_) => (self.pool_size - 1, self.n_select - 1),
            None => (self.pool_size, self.n_select),
        };
        let subsets = binomial(pool as u128, pick as u128);
        let per_layer = (self.width_choices.len() * self.activation_choices.len()) as u128;
        let heads: u128 = self
            .depth_choices
            .iter()
            .map(|&d| per_layer.saturating_pow(d as u32))
            .fold(0u128, u128::saturating_add);
        subsets.saturating_mul(heads)
    }

    /// Every structure, model subsets in ascending index order.
    pub fn enumerate(&self) -> Vec<FusionSpec> {
        let mut subsets = Vec::new();
        combinations(self.pool_size, self.n_select, &mut Vec::new(), 0, &mut subsets);
        if let Some(p) = self.pinned {
            subsets.retain(|s| s.contains(&p));
        }
        let mut heads: Vec<(Vec<usize>, Vec<Activation>)> = Vec::new();
        for &depth in &self.depth_choices {
            let mut layers: Vec<(Vec<usize>, Vec<Activation>)> = vec![(Vec::new(), Vec::new())];
            for _ in 0..depth {
                let mut next = Vec::new();
                for (ws, acts) in &layers {
                    for &w in &self.width_choices {
                        for &a in &self.activation_choices {
                            let mut ws = ws.clone();
                            let mut acts = acts.clone();
                            ws.push(w);
                            acts.push(a);
                            next.push((ws, acts));
                        }
                    }
                }
                layers = next;
            }
            heads.extend(layers);
        }
        let mut out = Vec::with_capacity(subsets.len() * heads.len());
        for s in &subsets {
            for (widths, activations) in &heads {
                out.push(FusionSpec {
                    selected_models: s.clone(),
                    depth: widths.len(),
                    widths: widths.clone(),
                    activations: activations.clone(),
                });
            }
        }
        out
    }

    /// Action indices that produce `spec`.
    pub fn actions_for(&self, spec: &FusionSpec) -> Result<Vec<usize>> {
        spec.validate()?;
        if spec.selected_models.len() != self.n_select {
            return Err(Error::Invalid(format!(
                "structure selects {} models, space selects {}",
                spec.selected_models.len(),
                self.n_select
            )));
        }
        if let Some(p) = self.pinned {
            if spec.selected_models[0] != p {
                return Err(Error::Invalid("structure does not start with the pinned model".into()));
            }
        }
        let mut actions = Vec::with_capacity(self.max_steps());
        for &m in &spec.selected_models {
            if m >= self.pool_size {
                return Err(Error::Invalid(format!("model {m} out of range")));
            }
            actions.push(m);
        }
        let position = |xs: &[usize], v: usize, what: &str| {
            xs.iter()
                .position(|&x| x == v)
                .ok_or_else(|| Error::Invalid(format!("{what} {v} is not in the search space")))
        };
        actions.push(position(&self.depth_choices, spec.depth, "depth")?);
        for (&w, &a) in spec.widths.iter().zip(&spec.activations) {
            actions.push(position(&self.width_choices, w, "width")?);
            actions.push(
                self.activation_choices
                    .iter()
                    .position(|&x| x == a)
                    .ok_or_else(|| Error::Invalid(format!("activation {a} is not in the search space")))?,
            );
        }
        Ok(actions)
    }

    /// Decodes a complete action sequence.
    pub fn decode(&self, actions: &[usize]) -> Result<FusionSpec> {
        let n = self.n_select;
        if actions.len() < n + 1 {
            return Err(Error::Invalid("incomplete action sequence".into()));
        }
        let depth = *self
            .depth_choices
            .get(actions[n])
            .ok_or_else(|| Error::Invalid("depth action out of range".into()))?;
        if actions.len() != n + 1 + 2 * depth {
            return Err(Error::Invalid("action sequence length does not match depth".into()));
        }
        let mut widths = Vec::with_capacity(depth);
        let mut activations = Vec::with_capacity(depth);
        for l in 0..depth {
            widths.push(self.width_choices[actions[n + 1 + 2 * l]]);
            activations.push(self.activation_choices[actions[n + 2 + 2 * l]]);
        }
        let spec = FusionSpec {
            selected_models: actions[..n].to_vec(),
            depth,
            widths,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl DecisionPlan for SearchSpace {
    fn next_step(&self, actions: &[usize]) -> Option<Step> {
        let t = actions.len();
        let n = self.n_select;
        if t < n {
            let allowed = match (t, self.pinned) {
                (0, Some(p)) => (0..self.pool_size).map(|m| m == p).collect(),
                _ => (0..self.pool_size).map(|m| !actions.contains(&m)).collect(),
            };
            return Some(Step {
                decoder: t,
                token_offset: 1,
                allowed: Some(allowed),
            });
        }
        if t == n {
            return Some(Step {
                decoder: n,
                token_offset: self.depth_offset(),
                allowed: None,
            });
        }
        let depth = self.depth_choices[actions[n]];
        let k = t - n - 1;
        if k >= 2 * depth {
            return None;
        }
        Some(if k % 2 == 0 {
            Step {
                decoder: n + 1 + k,
                token_offset: self.width_offset(),
                allowed: None,
            }
        } else {
            Step {
                decoder: n + 1 + k,
                token_offset: self.activation_offset(),
                allowed: None,
            }
        })
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

fn combinations(n: usize, k: usize, cur: &mut Vec<usize>, start: usize, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..n {
        cur.push(i);
        combinations(n, k, cur, i + 1, out);
        cur.pop();
    }
}

/// One point of the search space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionSpec {
    /// Pool indices in the order they were chosen.
    pub selected_models: Vec<usize>,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl FusionSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = self.selected_models.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.selected_models.len() || seen.is_empty() {
            return Err(Error::Invalid("selected models must be distinct and non-empty".into()));
        }
        if self.widths.len() != self.depth || self.activations.len() != self.depth {
            return Err(Error::Invalid("widths and activations must match the depth".into()));
        }
        Ok(())
    }

    /// Same structure with the model subset in ascending order; structures
    /// are evaluated and compared in this form.
    pub fn canonical(&self) -> FusionSpec {
        let mut c = self.clone();
        c.selected_models.sort_unstable();
        c
    }

    pub fn head_spec(&self, num_classes: usize) -> Result<MlpSpec> {
        MlpSpec::new(
            self.widths.clone(),
            self.activations.clone(),
            self.selected_models.len() * num_classes,
            num_classes,
        )
    }
}

/// A sampled structure with the trace that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEpisode {
    pub spec: FusionSpec,
    pub trace: EpisodeTrace,
}

/// Samples one structure; deterministic in `seed`.
pub fn sample_episode(
    params: &ControllerParams,
    space: &SearchSpace,
    seed: u64,
) -> Result<SampledEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trace = sample_plan(params, space, &mut rng)?;
    let spec = space.decode(&trace.actions())?;
    Ok(SampledEpisode { spec, trace })
}

/// Log-probability of producing `spec` (in its stated model order).
pub fn episode_logprob(
    params: &ControllerParams,
    space: &SearchSpace,
    spec: &FusionSpec,
) -> Result<f64> {
    let actions = space.actions_for(spec)?;
    Ok(replay_plan(params, space, &actions)?.log_prob())
}

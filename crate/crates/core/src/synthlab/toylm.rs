//! A small next-token model: mean-pooled embeddings, a stack of
//! feed-forward blocks, softmax unembedding.
//!
//! Block `l` maps `h_l` to `h_{l+1} = down_l · tanh(up_l · h_l + a_l) + b_l`.
//! The editable weight is `down_l` (`embed_dim x hidden_dim`); its input
//! `tanh(up_l · h_l + a_l)` is the block's key.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::corpus::TrainingSequence;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    /// `hidden_dim x embed_dim`.
    pub up: Matrix,
    pub up_bias: DVector<f64>,
    /// `embed_dim x hidden_dim`.
    pub down: Matrix,
    pub down_bias: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyLM {
    /// `embed_dim x vocab_size`, one column per token.
    pub embed: Matrix,
    pub layers: Vec<FeedForward>,
    /// `vocab_size x embed_dim`.
    pub unembed: Matrix,
    pub unembed_bias: DVector<f64>,
    /// Add each block's output to its input instead of replacing it.
    pub residual: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub residual: bool,
}

/// Activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `h_0 ..= h_L`.
    pub hidden: Vec<DVector<f64>>,
    /// Key of each block.
    pub keys: Vec<DVector<f64>>,
    pub probs: DVector<f64>,
}

fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let e = logits.map(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

impl ToyLM {
    pub fn new(config: ToyConfig, seed: u64) -> Result<Self> {
        let ToyConfig {
            vocab_size: v,
            embed_dim: n,
            hidden_dim: m,
            num_layers,
            residual,
        } = config;
        if v == 0 || n == 0 || m == 0 || num_layers == 0 {
            return Err(Error::invalid("toy model dimensions must be positive"));
        }
        let mut rng = stream_rng(seed, 4);
        let mut gauss = |r: usize, c: usize, scale: f64| {
            Matrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
        };
        let embed = gauss(n, v, 1.0);
        let layers = (0..num_layers)
            .map(|_| FeedForward {
                up: gauss(m, n, (1.0 / n as f64).sqrt()),
                up_bias: DVector::zeros(m),
                down: gauss(n, m, (1.0 / m as f64).sqrt()),
                down_bias: DVector::zeros(n),
            })
            .collect();
        let unembed = gauss(v, n, (1.0 / n as f64).sqrt());
        Ok(Self {
            embed,
            layers,
            unembed,
            unembed_bias: DVector::zeros(v),
            residual,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].up.nrows()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.num_layers() {
            return Err(Error::invalid(format!(
                "layer {layer} out of range for a {}-layer model",
                self.num_layers()
            )));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::invalid("empty context"));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.vocab_size()) {
            return Err(Error::invalid(format!(
                "token id {t} outside vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    fn pool(&self, tokens: &[usize]) -> DVector<f64> {
        let mut h = DVector::zeros(self.embed_dim());
        for &t in tokens {
            h += self.embed.column(t);
        }
        h / tokens.len() as f64
    }

    fn head(&self, h: &DVector<f64>) -> DVector<f64> {
        softmax(&(&self.unembed * h + &self.unembed_bias))
    }

    /// Run blocks `from..L` starting at `h = h_from`.
    fn run_from(&self, from: usize, h: DVector<f64>) -> Trace {
        let mut hidden = vec![h];
        let mut keys = Vec::with_capacity(self.num_layers() - from);
        for block in &self.layers[from..] {
            let h = hidden.last().expect("nonempty");
            let k = (&block.up * h + &block.up_bias).map(f64::tanh);
            let mut next = &block.down * &k + &block.down_bias;
            if self.residual {
                next += h;
            }
            hidden.push(next);
            keys.push(k);
        }
        let probs = self.head(hidden.last().expect("nonempty"));
        Trace {
            hidden,
            keys,
            probs,
        }
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<Trace> {
        self.check_tokens(tokens)?;
        Ok(self.run_from(0, self.pool(tokens)))
    }

    /// Next-token distribution after `tokens`.
    pub fn probs(&self, tokens: &[usize]) -> Result<DVector<f64>> {
        Ok(self.forward(tokens)?.probs)
    }

    /// Distribution obtained when block `layer` outputs `output`.
    pub fn probs_from_output(&self, layer: usize, output: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_layer(layer)?;
        Ok(self.run_from(layer + 1, output.clone()).probs)
    }

    /// `log p(target)` and its gradient with respect to the output of block
    /// `layer`, all parameters held fixed.
    pub fn output_log_prob_grad(
        &self,
        layer: usize,
        output: &DVector<f64>,
        target: usize,
    ) -> Result<(f64, DVector<f64>)> {
        self.check_layer(layer)?;
        if target >= self.vocab_size() {
            return Err(Error::invalid(format!(
                "target token {target} outside vocabulary"
            )));
        }
        let trace = self.run_from(layer + 1, output.clone());
        let mut d_logits = -trace.probs.clone();
        d_logits[target] += 1.0;
        let mut dh = self.unembed.transpose() * d_logits;
        for (block, k) in self.layers[layer + 1..].iter().zip(&trace.keys).rev() {
            let dk = block.down.transpose() * &dh;
            let da = dk.component_mul(&k.map(|v| 1.0 - v * v));
            let back = block.up.transpose() * da;
            dh = if self.residual { dh + back } else { back };
        }
        Ok((trace.probs[target].ln(), dh))
    }

    /// Replace block `layer`'s editable weight and output bias.
    pub fn set_layer_output(
        &mut self,
        layer: usize,
        down: Matrix,
        down_bias: DVector<f64>,
    ) -> Result<()> {
        self.check_layer(layer)?;
        let block = &mut self.layers[layer];
        if down.shape() != block.down.shape() || down_bias.len() != block.down_bias.len() {
            return Err(Error::invalid("replacement weight has the wrong shape"));
        }
        block.down = down;
        block.down_bias = down_bias;
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.nrows(), m.ncols());
        let zv = |v: &DVector<f64>| DVector::zeros(v.len());
        Self {
            embed: z(&self.embed),
            layers: self
                .layers
                .iter()
                .map(|b| FeedForward {
                    up: z(&b.up),
                    up_bias: zv(&b.up_bias),
                    down: z(&b.down),
                    down_bias: zv(&b.down_bias),
                })
                .collect(),
            unembed: z(&self.unembed),
            unembed_bias: zv(&self.unembed_bias),
            residual: self.residual,
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embed.as_slice()];
        for b in &self.layers {
            out.extend([
                b.up.as_slice(),
                b.up_bias.as_slice(),
                b.down.as_slice(),
                b.down_bias.as_slice(),
            ]);
        }
        out.extend([self.unembed.as_slice(), self.unembed_bias.as_slice()]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embed.as_mut_slice()];
        for b in &mut self.layers {
            out.push(b.up.as_mut_slice());
            out.push(b.up_bias.as_mut_slice());
            out.push(b.down.as_mut_slice());
            out.push(b.down_bias.as_mut_slice());
        }
        out.push(self.unembed.as_mut_slice());
        out.push(self.unembed_bias.as_mut_slice());
        out
    }

    /// Cross-entropy of `target` under the model; accumulates
    /// `weight · ∂CE/∂θ` into `grad`.
    fn backprop(&self, example: &Example, grad: &mut ToyLM) -> f64 {
        let trace = self.run_from(0, self.pool(&example.context));
        let mut loss = 0.0;
        let mut d_logits = trace.probs.clone();
        for &(t, q) in &example.target {
            loss -= q * trace.probs[t].max(f64::MIN_POSITIVE).ln();
            d_logits[t] -= q;
        }
        let w = example.weight;
        let h_last = trace.hidden.last().expect("nonempty");
        grad.unembed.ger(w, &d_logits, h_last, 1.0);
        grad.unembed_bias.axpy(w, &d_logits, 1.0);
        let mut dh = self.unembed.transpose() * &d_logits;
        for l in (0..self.num_layers()).rev() {
            let block = &self.layers[l];
            let g = &mut grad.layers[l];
            let k = &trace.keys[l];
            g.down.ger(w, &dh, k, 1.0);
            g.down_bias.axpy(w, &dh, 1.0);
            let dk = block.down.transpose() * &dh;
            let da = dk.component_mul(&k.map(|v| 1.0 - v * v));
            g.up.ger(w, &da, &trace.hidden[l], 1.0);
            g.up_bias.axpy(w, &da, 1.0);
            let back = block.up.transpose() * da;
            dh = if self.residual { dh + back } else { back };
        }
        let scale = w / example.context.len() as f64;
        for &t in &example.context {
            grad.embed.column_mut(t).axpy(scale, &dh, 1.0);
        }
        loss
    }
}

/// One deduplicated next-token prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub context: Vec<usize>,
    /// Target distribution, summing to 1.
    pub target: Vec<(usize, f64)>,
    /// Share of all predictions, summing to 1 over the set.
    pub weight: f64,
}

/// Every prefix of every sequence paired with its next token. Identical
/// contexts are merged into one example with the averaged target.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub examples: Vec<Example>,
    pub predictions: usize,
}

impl PredictionSet {
    pub fn from_sequences(seqs: &[TrainingSequence]) -> Result<Self> {
        let mut merged: BTreeMap<Vec<usize>, BTreeMap<usize, f64>> = BTreeMap::new();
        let mut predictions = 0usize;
        for s in seqs {
            if s.tokens.is_empty() {
                return Err(Error::invalid("training sequence is empty"));
            }
            for j in 1..s.tokens.len() {
                *merged
                    .entry(s.tokens[..j].to_vec())
                    .or_default()
                    .entry(s.tokens[j])
                    .or_default() += 1.0;
                predictions += 1;
            }
            let total: f64 = s.continuation.iter().map(|c| c.1).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "continuation probabilities sum to {total}"
                )));
            }
            let slot = merged.entry(s.tokens.clone()).or_default();
            for &(t, q) in &s.continuation {
                *slot.entry(t).or_default() += q;
            }
            predictions += 1;
        }
        if predictions == 0 {
            return Err(Error::invalid("no predictions in corpus"));
        }
        let examples = merged
            .into_iter()
            .map(|(context, counts)| {
                let mass: f64 = counts.values().sum();
                Example {
                    context,
                    target: counts.into_iter().map(|(t, c)| (t, c / mass)).collect(),
                    weight: mass / predictions as f64,
                }
            })
            .collect();
        Ok(Self {
            examples,
            predictions,
        })
    }

    /// Lowest achievable mean cross-entropy (the target entropy).
    pub fn entropy_floor(&self) -> f64 {
        self.examples
            .iter()
            .map(|e| -e.weight * e.target.iter().map(|&(_, q)| q * q.ln()).sum::<f64>())
            .sum()
    }

    fn max_token(&self) -> usize {
        self.examples
            .iter()
            .flat_map(|e| e.context.iter().chain(e.target.iter().map(|t| &t.0)))
            .copied()
            .max()
            .unwrap_or(0)
    }
}

impl ToyLM {
    /// Mean per-token cross-entropy (nats).
    pub fn loss(&self, set: &PredictionSet) -> Result<f64> {
        if set.max_token() >= self.vocab_size() {
            return Err(Error::invalid(
                "prediction set uses tokens outside the vocabulary",
            ));
        }
        let mut total = 0.0;
        for e in &set.examples {
            let p = self.probs(&e.context)?;
            total -= e.weight
                * e.target
                    .iter()
                    .map(|&(t, q)| q * p[t].max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>();
        }
        Ok(total)
    }

    pub fn perplexity(&self, set: &PredictionSet) -> Result<f64> {
        Ok(self.loss(set)?.exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub residual: bool,
    pub learning_rate: f64,
    /// Decoupled weight decay applied with each update.
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Stop once mean loss minus the entropy floor is at most this.
    pub target_excess: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            hidden_dim: 32,
            num_layers: 4,
            residual: false,
            learning_rate: 0.01,
            weight_decay: 0.0,
            max_epochs: 3000,
            target_excess: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub entropy_floor: f64,
    /// Loss before each epoch's update.
    pub loss_trace: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Full-batch Adam on mean next-token cross-entropy. Examples are visited
/// in a fixed order, so the result depends only on the inputs and `seed`.
pub fn train_toy_lm(
    set: &PredictionSet,
    vocab_size: usize,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ToyLM, TrainReport)> {
    if set.examples.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if config.num_layers < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 layers, got {}",
            config.num_layers
        )));
    }
    if !(config.learning_rate > 0.0) || !(config.target_excess >= 0.0) {
        return Err(Error::invalid(
            "learning_rate must be > 0 and target_excess >= 0",
        ));
    }
    if set.max_token() >= vocab_size {
        return Err(Error::invalid("corpus uses tokens outside the vocabulary"));
    }
    let mut model = ToyLM::new(
        ToyConfig {
            vocab_size,
            embed_dim: config.embed_dim,
            hidden_dim: config.hidden_dim,
            num_layers: config.num_layers,
            residual: config.residual,
        },
        seed,
    )?;
    let floor = set.entropy_floor();
    let mut first = model.zeros_like();
    let mut second = model.zeros_like();
    let mut trace = Vec::new();
    for epoch in 1..=config.max_epochs {
        let mut grad = model.zeros_like();
        let mut loss = 0.0;
        for e in &set.examples {
            loss += e.weight * model.backprop(e, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::TrainingFailure {
                epochs: epoch,
                final_loss: loss,
                target: floor + config.target_excess,
                loss_trace: trace,
            });
        }
        trace.push(loss);
        if loss - floor <= config.target_excess {
            return Ok((
                model,
                TrainReport {
                    epochs: epoch - 1,
                    final_loss: loss,
                    entropy_floor: floor,
                    loss_trace: trace,
                },
            ));
        }
        let c1 = 1.0 - BETA1.powi(epoch as i32);
        let c2 = 1.0 - BETA2.powi(epoch as i32);
        let lr = config.learning_rate;
        for (((p, g), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(first.tensors_mut())
            .zip(second.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] -= lr
                    * ((m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS) + config.weight_decay * p[i]);
            }
        }
    }
    let final_loss = model.loss(set)?;
    if final_loss - floor <= config.target_excess {
        trace.push(final_loss);
        return Ok((
            model,
            TrainReport {
                epochs: config.max_epochs,
                final_loss,
                entropy_floor: floor,
                loss_trace: trace,
            },
        ));
    }
    Err(Error::TrainingFailure {
        epochs: config.max_epochs,
        final_loss,
        target: floor + config.target_excess,
        loss_trace: trace,
    })
}

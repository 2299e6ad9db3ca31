//! Policy and value networks: MLP, DeepSets and the DeepSets + GRU network
//! for delayed feedback.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::nn::{Embedding, Gru, Linear};
use crate::autograd::{check, Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::physics::{featurize_into, DelayedEnv, RatchetParams, Switch};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_HEADER};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMBED: usize = 16;

/// Particle rows per chunk on the graph-free route; keeps activations in cache.
const DIRECT_ROWS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchKind {
    Mlp,
    DeepSets,
    Rnn,
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Mlp => "mlp",
            ArchKind::DeepSets => "deepsets",
            ArchKind::Rnn => "rnn",
        })
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ArchKind::Mlp),
            "deepsets" => Ok(ArchKind::DeepSets),
            "rnn" => Ok(ArchKind::Rnn),
            other => {
                Err(Error::invalid(format!("unknown architecture {other:?} (expected mlp, deepsets or rnn)")))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub kind: ArchKind,
    /// Particle count; only the MLP depends on it.
    pub n: usize,
    pub hidden: usize,
    pub embed: usize,
    pub out_dim: usize,
}

impl ArchConfig {
    pub fn policy(kind: ArchKind, n: usize) -> Self {
        Self { kind, n, hidden: DEFAULT_HIDDEN, embed: DEFAULT_EMBED, out_dim: 2 }
    }

    /// Same architecture with a single output.
    pub fn value_head(self) -> Self {
        Self { out_dim: 1, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("network needs n >= 1"));
        }
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::invalid("hidden and embedding widths must be >= 1"));
        }
        if !matches!(self.out_dim, 1 | 2) {
            return Err(Error::invalid(format!("out_dim must be 1 or 2, got {}", self.out_dim)));
        }
        Ok(())
    }
}

/// Network inputs for a batch of states: features `len x N x 2` and on-off
/// histories `len x depth`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch {
    n: usize,
    depth: usize,
    len: usize,
    features: Vec<f64>,
    history: Vec<usize>,
}

impl ObsBatch {
    pub fn new(n: usize, depth: usize) -> Self {
        Self { n, depth, len: 0, features: Vec::new(), history: Vec::new() }
    }

    pub fn with_capacity(n: usize, depth: usize, capacity: usize) -> Self {
        Self {
            features: Vec::with_capacity(capacity * n * 2),
            history: Vec::with_capacity(capacity * depth),
            ..Self::new(n, depth)
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn history(&self) -> &[usize] {
        &self.history
    }

    pub fn push(
        &mut self,
        positions: &[f64],
        history: impl IntoIterator<Item = Switch>,
        params: &RatchetParams,
    ) -> Result<()> {
        if positions.len() != self.n {
            return Err(Error::Incompatible(format!(
                "state has {} particles, batch expects {}",
                positions.len(),
                self.n
            )));
        }
        let before = self.history.len();
        self.history.extend(history.into_iter().map(|a| a as usize));
        if self.history.len() - before != self.depth {
            self.history.truncate(before);
            return Err(Error::Incompatible(format!("history length differs from {}", self.depth)));
        }
        featurize_into(positions, params, &mut self.features);
        self.len += 1;
        Ok(())
    }

    pub fn push_env(&mut self, env: &DelayedEnv) -> Result<()> {
        self.push(&env.state.positions, env.history(), &env.params)
    }

    /// Appends raw feature rows (`N x 2`) and history symbols.
    pub fn push_features(&mut self, features: &[f64], history: &[usize]) {
        assert_eq!(features.len(), self.n * 2);
        assert_eq!(history.len(), self.depth);
        self.features.extend_from_slice(features);
        self.history.extend_from_slice(history);
        self.len += 1;
    }

    pub fn sample(&self, i: usize) -> (&[f64], &[usize]) {
        let f = 2 * self.n;
        (&self.features[i * f..(i + 1) * f], &self.history[i * self.depth..(i + 1) * self.depth])
    }

    /// New batch holding the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ObsBatch {
        let mut out = ObsBatch::with_capacity(self.n, self.depth, indices.len());
        for &i in indices {
            let (f, h) = self.sample(i);
            out.push_features(f, h);
        }
        out
    }

    /// Contiguous sub-batch `start..end`.
    pub fn range(&self, start: usize, end: usize) -> ObsBatch {
        let f = 2 * self.n;
        ObsBatch {
            n: self.n,
            depth: self.depth,
            len: end - start,
            features: self.features[start * f..end * f].to_vec(),
            history: self.history[start * self.depth..end * self.depth].to_vec(),
        }
    }

    pub fn extend(&mut self, other: &ObsBatch) {
        assert_eq!((self.n, self.depth), (other.n, other.depth));
        self.features.extend_from_slice(&other.features);
        self.history.extend_from_slice(&other.history);
        self.len += other.len;
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Layers {
    Mlp { fc1: Linear, fc2: Linear, out: Linear },
    DeepSets { phi1: Linear, phi2: Linear, rho: Linear, out: Linear },
    Rnn { phi1: Linear, phi2: Linear, embed: Embedding, gru: Gru, rho: Linear, out: Linear },
}

/// A policy (two logits) or value (one output) network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: ArchConfig,
    params: ParamSet,
    layers: Layers,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(config: ArchConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ArchConfig { n, hidden: h, embed: e, out_dim, .. } = config;
        let mut params = ParamSet::new();
        let p = &mut params;
        let layers = match config.kind {
            ArchKind::Mlp => Layers::Mlp {
                fc1: Linear::new(p, "fc1", 2 * n, h, rng)?,
                fc2: Linear::new(p, "fc2", h, h, rng)?,
                out: Linear::new(p, "out", h, out_dim, rng)?,
            },
            ArchKind::DeepSets => Layers::DeepSets {
                phi1: Linear::new(p, "phi1", 2, h, rng)?,
                phi2: Linear::new(p, "phi2", h, h, rng)?,
                rho: Linear::new(p, "rho", h, h, rng)?,
                out: Linear::new(p, "out", h, out_dim, rng)?,
            },
            ArchKind::Rnn => Layers::Rnn {
                phi1: Linear::new(p, "phi1", 2, h, rng)?,
                phi2: Linear::new(p, "phi2", h, h, rng)?,
                embed: Embedding::new(p, "embed", 2, e, rng),
                gru: Gru::new(p, "gru", e, 2 * e, rng),
                rho: Linear::new(p, "rho", h + 2 * e, h, rng)?,
                out: Linear::new(p, "out", h, out_dim, rng)?,
            },
        };
        Ok(Self { config, params, layers })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Whether this network can act on `n` particles with a history of
    /// `depth` symbols.
    pub fn check_input(&self, n: usize, depth: usize) -> Result<()> {
        match self.config.kind {
            ArchKind::Mlp if n != self.config.n => {
                Err(Error::Incompatible(format!("mlp built for n = {}, got n = {n}", self.config.n)))
            }
            _ if n == 0 => Err(Error::invalid("deepsets input needs at least one particle")),
            ArchKind::Rnn if depth == 0 => {
                Err(Error::Incompatible("rnn policy needs a non-empty on-off history (tau > 0)".into()))
            }
            _ => Ok(()),
        }
    }

    /// Outputs (`len x out_dim`) for `batch`, recorded on `g`.
    pub fn forward(&self, g: &mut Graph, batch: &ObsBatch) -> Result<Var> {
        self.forward_with(g, &self.params, batch)
    }

    /// [`Network::forward`] with substitute parameters of identical layout,
    /// e.g. perturbed copies for finite differences.
    pub fn forward_with(&self, g: &mut Graph, ps: &ParamSet, batch: &ObsBatch) -> Result<Var> {
        self.check_input(batch.n(), batch.depth())?;
        if ps.len() != self.params.len() {
            return Err(Error::Incompatible(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                ps.len()
            )));
        }
        let (b, n) = (batch.len(), batch.n());
        match &self.layers {
            Layers::Mlp { fc1, fc2, out } => {
                let x = g.input(Tensor::matrix(b, 2 * n, batch.features().to_vec())?);
                let x = fc1.forward(g, ps, x)?;
                let x = g.relu(x);
                let x = fc2.forward(g, ps, x)?;
                let x = g.relu(x);
                out.forward(g, ps, x)
            }
            Layers::DeepSets { phi1, phi2, rho, out } => {
                let pooled = self.set_encoder(g, ps, batch, *phi1, *phi2)?;
                let x = rho.forward(g, ps, pooled)?;
                let x = g.relu(x);
                out.forward(g, ps, x)
            }
            Layers::Rnn { phi1, phi2, embed, gru, rho, out } => {
                let pooled = self.set_encoder(g, ps, batch, *phi1, *phi2)?;
                let d = batch.depth();
                let cell = gru.bind(g, ps);
                let table = g.param(ps, embed.table);
                let mut h = g.input(Tensor::zeros(&[b, gru.hidden]));
                let mut step_idx = vec![0usize; b];
                for j in 0..d {
                    for (s, idx) in step_idx.iter_mut().enumerate() {
                        *idx = batch.history()[s * d + j];
                    }
                    let x = g.embedding(table, &step_idx)?;
                    h = cell.cell(g, x, h)?;
                }
                let joined = g.concat(&[pooled, h], 1)?;
                let x = rho.forward(g, ps, joined)?;
                let x = g.relu(x);
                out.forward(g, ps, x)
            }
        }
    }

    /// Per-particle MLP followed by the mean over particles: `len x H`.
    fn set_encoder(
        &self,
        g: &mut Graph,
        ps: &ParamSet,
        batch: &ObsBatch,
        phi1: Linear,
        phi2: Linear,
    ) -> Result<Var> {
        let (b, n, h) = (batch.len(), batch.n(), self.config.hidden);
        let x = g.input(Tensor::matrix(b * n, 2, batch.features().to_vec())?);
        let x = phi1.forward(g, ps, x)?;
        let x = g.relu(x);
        let x = phi2.forward(g, ps, x)?;
        let x = g.reshape(x, &[b, n, h])?;
        g.mean(x, 1)
    }

    /// Forward pass without keeping the graph.
    pub fn outputs(&self, batch: &ObsBatch) -> Result<Tensor> {
        let out = match &self.layers {
            Layers::Rnn { .. } => self.outputs_graph(batch)?,
            _ => self.outputs_direct(batch)?,
        };
        if !out.all_finite() {
            return Err(Error::NonFinite("network produced a non-finite output".into()));
        }
        Ok(out)
    }

    /// Reference route through the autograd graph.
    pub(crate) fn outputs_graph(&self, batch: &ObsBatch) -> Result<Tensor> {
        let mut g = Graph::new();
        let y = self.forward(&mut g, batch)?;
        Ok(g.value(y).clone())
    }

    /// Feed-forward architectures evaluated chunk by chunk with reused
    /// buffers; large batches otherwise spend most of their time allocating.
    fn outputs_direct(&self, batch: &ObsBatch) -> Result<Tensor> {
        self.check_input(batch.n(), batch.depth())?;
        let (len, n, h) = (batch.len(), batch.n(), self.config.hidden);
        let out_dim = self.config.out_dim;
        let ps = &self.params;
        let chunk = (DIRECT_ROWS / n).max(1);
        let mut out = Vec::with_capacity(len * out_dim);
        let (mut a, mut b, mut pooled) = (Vec::new(), Vec::new(), Vec::new());
        let feats = batch.features();
        let mut start = 0;
        while start < len {
            let rows = chunk.min(len - start);
            let x = &feats[start * 2 * n..(start + rows) * 2 * n];
            match &self.layers {
                Layers::Mlp { fc1, fc2, out: head } => {
                    fc1.apply(ps, x, rows, true, &mut a);
                    fc2.apply(ps, &a, rows, true, &mut b);
                    head.apply(ps, &b, rows, false, &mut a);
                }
                Layers::DeepSets { phi1, phi2, rho, out: head } => {
                    phi1.apply(ps, x, rows * n, true, &mut a);
                    phi2.apply(ps, &a, rows * n, false, &mut b);
                    // same summation order as the graph mean
                    pooled.clear();
                    pooled.resize(rows * h, 0.0);
                    for (dst, src) in pooled.chunks_exact_mut(h).zip(b.chunks_exact(n * h)) {
                        for particle in src.chunks_exact(h) {
                            dst.iter_mut().zip(particle).for_each(|(d, s)| *d += s);
                        }
                        dst.iter_mut().for_each(|d| *d /= n as f64);
                    }
                    rho.apply(ps, &pooled, rows, true, &mut b);
                    head.apply(ps, &b, rows, false, &mut a);
                }
                Layers::Rnn { .. } => unreachable!("recurrent networks use the graph route"),
            }
            out.extend_from_slice(&a);
            start += rows;
        }
        Tensor::matrix(len, out_dim, out)
    }

    pub fn policy_outputs(&self, batch: &ObsBatch) -> Result<Vec<PolicyOutput>> {
        if self.config.out_dim != 2 {
            return Err(Error::Incompatible("value network used as a policy".into()));
        }
        let logits = self.outputs(batch)?;
        Ok(logits.data().chunks_exact(2).map(|l| PolicyOutput::from_logits([l[0], l[1]])).collect())
    }

    /// Scalar outputs of a value network.
    pub fn values(&self, batch: &ObsBatch) -> Result<Vec<f64>> {
        if self.config.out_dim != 1 {
            return Err(Error::Incompatible("policy network used as a value function".into()));
        }
        Ok(self.outputs(batch)?.into_data())
    }

    /// Worst relative error between tape and finite-difference gradients of
    /// `sum(weights ∘ log_softmax(forward))`, over every parameter.
    /// `weights` has the output shape; a value head skips the softmax.
    pub fn grad_error(&self, batch: &ObsBatch, weights: &Tensor) -> Result<f64> {
        let policy = self.config.out_dim == 2;
        check::param_grad_error(&self.params, &|g, ps| {
            let y = self.forward_with(g, ps, batch)?;
            let y = if policy { g.log_softmax(y, 1)? } else { y };
            let w = g.input(weights.clone());
            let y = g.mul(y, w)?;
            let m = g.mean_all(y)?;
            Ok(g.scale(m, weights.len() as f64))
        })
    }
}

/// Logit column of each action: column 0 is "on", column 1 is "off".
pub fn action_column(a: Switch) -> usize {
    match a {
        Switch::On => 0,
        Switch::Off => 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyOutput {
    pub p_on: f64,
    pub p_off: f64,
    pub logits: [f64; 2],
}

impl PolicyOutput {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let [p_on, p_off] = softmax2(logits, false);
        Self { p_on, p_off, logits }
    }

    pub fn log_prob(&self, a: Switch) -> f64 {
        softmax2(self.logits, true)[action_column(a)]
    }
}

/// Two-way softmax with the operation order of the graph's softmax, so both
/// routes agree bit for bit.
fn softmax2(l: [f64; 2], log: bool) -> [f64; 2] {
    let max = f64::NEG_INFINITY.max(l[0]).max(l[1]);
    let z = [l[0] - max, l[1] - max];
    let sum = z[0].exp() + z[1].exp();
    if log {
        [z[0] - sum.ln(), z[1] - sum.ln()]
    } else {
        [z[0].exp() / sum, z[1].exp() / sum]
    }
}

/// Draws an action from the policy; returns it with its log-probability.
pub fn sample_action<R: Rng + ?Sized>(out: &PolicyOutput, rng: &mut R) -> (Switch, f64) {
    let u: f64 = rng.random();
    let a = Switch::from_bool(u < out.p_on);
    (a, out.log_prob(a))
}

/// Test-time rule: on iff `p_on > 0.5`; an exact tie switches off.
pub fn deterministic_action(out: &PolicyOutput) -> Switch {
    Switch::from_bool(out.p_on > 0.5)
}

#[cfg(test)]
mod tests;

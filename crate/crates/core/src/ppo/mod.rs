//! Proximal policy optimization with a clipped surrogate, truncated GAE,
//! KL-based early stopping and a separately trained value network.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autograd::{Adam, Graph, Tensor, Var};
use crate::bench::member_env;
use crate::error::{Error, Result};
use crate::physics::{delay_depth, RatchetParams, Switch};
use crate::policy::{
    action_column, sample_action, ArchConfig, Checkpoint, CheckpointMeta, Network, ObsBatch, PolicyOutput,
};
use crate::rng::{stream_id, stream_rng, StreamRng};

/// Particle count above which environment steps are spread over threads.
const PARALLEL_STEP_WORK: usize = 4096;
/// Rows per forward pass when evaluating a whole dataset.
const EVAL_CHUNK: usize = 8192;
/// Stream block reserved for network initialization.
const INIT_BLOCK: u64 = 0xffff_ffff;
/// Member index, within an epoch's block, of the mini-batch shuffling stream.
const SHUFFLE_MEMBER: u64 = 0xffff_ffff;

/// Trajectory count `M` and mini-batch size `B` by particle count. Counts
/// between tabulated values use the entry of the next smaller count.
pub fn table_batch(n: usize) -> (usize, usize) {
    const TABLE: [(usize, usize, usize); 8] = [
        (1, 1024, 4096),
        (2, 512, 4096),
        (4, 256, 4096),
        (8, 128, 4096),
        (16, 64, 2048),
        (32, 32, 1024),
        (64, 16, 512),
        (128, 8, 256),
    ];
    let mut pick = (TABLE[0].1, TABLE[0].2);
    for &(k, m, b) in &TABLE {
        if n >= k {
            pick = (m, b);
        }
    }
    pick
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoConfig {
    /// Trajectory length in steps.
    pub t: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub d_targ: f64,
    pub iters_pi: usize,
    pub iters_v: usize,
    pub lr_pi: f64,
    pub lr_v: f64,
    /// Trajectories per epoch.
    pub m: usize,
    /// Mini-batch size.
    pub b: usize,
}

impl PpoConfig {
    pub fn for_n(n: usize) -> Self {
        let (m, b) = table_batch(n);
        Self {
            t: 2000,
            epochs: 400,
            gamma: 0.999,
            lambda: 0.95,
            clip_eps: 0.2,
            d_targ: 0.01,
            iters_pi: 625,
            iters_v: 625,
            lr_pi: 3e-4,
            lr_v: 1e-3,
            m,
            b,
        }
    }

    /// Policy updates stop once the KL estimate exceeds this.
    pub fn kl_limit(&self) -> f64 {
        1.5 * self.d_targ
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("T", self.t),
            ("epochs", self.epochs),
            ("iters_pi", self.iters_pi),
            ("iters_v", self.iters_v),
            ("M", self.m),
            ("B", self.b),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::config(key, "must be >= 1"));
            }
        }
        for (key, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(key, format!("must lie in (0, 1], got {v}")));
            }
        }
        let positive = [
            ("clip_eps", self.clip_eps),
            ("d_targ", self.d_targ),
            ("lr_pi", self.lr_pi),
            ("lr_v", self.lr_v),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One trajectory: `T` actions, rewards and log-probabilities; `T + 1` states
/// and value predictions (the last is the bootstrap state).
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: ObsBatch,
    pub actions: Vec<Switch>,
    pub rewards: Vec<f64>,
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Simulates `cfg.m` trajectories of `cfg.t` steps under stochastic sampling
/// of `policy`. Trajectory `i` of epoch `epoch` uses stream
/// `(seed, stream_id(epoch, i))` for its initial state, noise and actions.
pub fn collect(
    n: usize,
    tau: f64,
    params: &RatchetParams,
    policy: &Network,
    value: &Network,
    cfg: &PpoConfig,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Rollout>> {
    let depth = delay_depth(tau, params.dt)?;
    policy.check_input(n, depth)?;
    value.check_input(n, depth)?;

    let mut envs = Vec::with_capacity(cfg.m);
    let mut rngs: Vec<StreamRng> = Vec::with_capacity(cfg.m);
    for i in 0..cfg.m {
        let (env, rng) = member_env(n, tau, params, seed, stream_id(epoch, i as u64))?;
        envs.push(env);
        rngs.push(rng);
    }
    let mut rollouts: Vec<Rollout> = (0..cfg.m)
        .map(|_| Rollout {
            states: ObsBatch::with_capacity(n, depth, cfg.t + 1),
            actions: Vec::with_capacity(cfg.t),
            rewards: Vec::with_capacity(cfg.t),
            logp: Vec::with_capacity(cfg.t),
            values: Vec::with_capacity(cfg.t + 1),
        })
        .collect();
    let mut actions = vec![Switch::Off; cfg.m];
    let diagnose = |step: usize, e: Error| match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, step {step}: {msg}")),
        other => other,
    };

    for step in 0..=cfg.t {
        let mut batch = ObsBatch::with_capacity(n, depth, cfg.m);
        for (env, r) in envs.iter().zip(&mut rollouts) {
            batch.push_env(env)?;
            r.states.push_env(env)?;
        }
        let values = value.values(&batch).map_err(|e| diagnose(step, e))?;
        for (r, v) in rollouts.iter_mut().zip(values) {
            r.values.push(v);
        }
        if step == cfg.t {
            break;
        }
        let outs = policy.policy_outputs(&batch).map_err(|e| diagnose(step, e))?;
        for (((out, rng), r), a) in outs.iter().zip(&mut rngs).zip(&mut rollouts).zip(&mut actions) {
            let (act, lp) = sample_action(out, rng);
            *a = act;
            r.actions.push(act);
            r.logp.push(lp);
        }
        let advance =
            |((env, rng), &a): ((&mut crate::physics::DelayedEnv, &mut StreamRng), &Switch)| env.step(a, rng);
        let rewards: Vec<f64> = if n * cfg.m >= PARALLEL_STEP_WORK {
            envs.par_iter_mut()
                .zip(rngs.par_iter_mut())
                .zip(actions.par_iter())
                .map(advance)
                .collect::<Result<_>>()?
        } else {
            envs.iter_mut().zip(rngs.iter_mut()).zip(actions.iter()).map(advance).collect::<Result<_>>()?
        };
        for (r, rew) in rollouts.iter_mut().zip(rewards) {
            r.rewards.push(rew);
        }
    }
    Ok(rollouts)
}

/// `Ĝ_t = r_t + γ Ĝ_{t+1}` with `Ĝ_T = V(s_T)` the bootstrap; `values` has
/// `T + 1` entries and only the last is read.
pub fn estimated_return(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1, "values must include the bootstrap state");
    let mut out = vec![0.0; rewards.len()];
    let mut acc = values[rewards.len()];
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `δ_t = r_t + γ V(s_{t+1}) - V(s_t)`.
pub fn td_residuals(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1, "values must include the bootstrap state");
    rewards.iter().enumerate().map(|(t, &r)| r + gamma * values[t + 1] - values[t]).collect()
}

/// Truncated GAE: `Â_t = δ_t + γλ Â_{t+1}`, `Â` past the end is zero.
pub fn gae(deltas: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let k = gamma * lambda;
    let mut out = vec![0.0; deltas.len()];
    let mut acc = 0.0;
    for t in (0..deltas.len()).rev() {
        acc = deltas[t] + k * acc;
        out[t] = acc;
    }
    out
}

/// Clipping bound: `(1 + ε) A` for `A >= 0`, else `(1 - ε) A`.
pub fn clip_bound(eps: f64, a: f64) -> f64 {
    if a >= 0.0 {
        (1.0 + eps) * a
    } else {
        (1.0 - eps) * a
    }
}

/// Surrogate objective `mean(min(ratio · Â, g(ε, Â)))`, to be maximized.
pub fn clipped_objective(log_ratio: &[f64], advantages: &[f64], eps: f64) -> f64 {
    assert_eq!(log_ratio.len(), advantages.len());
    let total: f64 =
        log_ratio.iter().zip(advantages).map(|(&lr, &a)| (lr.exp() * a).min(clip_bound(eps, a))).sum();
    total / advantages.len() as f64
}

/// Sample estimate of `KL(π_old ‖ π_new)` from actions drawn under `π_old`.
pub fn kld_estimate(old_logp: &[f64], new_logp: &[f64]) -> f64 {
    assert_eq!(old_logp.len(), new_logp.len());
    old_logp.iter().zip(new_logp).map(|(o, n)| o - n).sum::<f64>() / old_logp.len() as f64
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
/// A constant input becomes all zeros.
pub fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x = if std > 0.0 { (*x - mean) / std } else { 0.0 };
    }
}

/// Flattened training set for one epoch (bootstrap states excluded).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub obs: ObsBatch,
    pub actions: Vec<Switch>,
    pub logp_old: Vec<f64>,
    /// Normalized GAE advantages.
    pub advantages: Vec<f64>,
    /// Value targets `Ĝ_t`.
    pub returns: Vec<f64>,
}

impl Dataset {
    pub fn from_rollouts(rollouts: &[Rollout], cfg: &PpoConfig) -> Result<Self> {
        let first = rollouts.first().ok_or_else(|| Error::invalid("no trajectories collected"))?;
        let size: usize = rollouts.iter().map(Rollout::len).sum();
        let mut ds = Dataset {
            obs: ObsBatch::with_capacity(first.states.n(), first.states.depth(), size),
            actions: Vec::with_capacity(size),
            logp_old: Vec::with_capacity(size),
            advantages: Vec::with_capacity(size),
            returns: Vec::with_capacity(size),
        };
        for r in rollouts {
            ds.obs.extend(&r.states.range(0, r.len()));
            ds.actions.extend_from_slice(&r.actions);
            ds.logp_old.extend_from_slice(&r.logp);
            let deltas = td_residuals(&r.rewards, &r.values, cfg.gamma);
            ds.advantages.extend(gae(&deltas, cfg.gamma, cfg.lambda));
            ds.returns.extend(estimated_return(&r.rewards, &r.values, cfg.gamma));
        }
        normalize(&mut ds.advantages);
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Log-probabilities of `actions` under `policy`, evaluated in chunks.
pub fn log_probs(policy: &Network, obs: &ObsBatch, actions: &[Switch]) -> Result<Vec<f64>> {
    if policy.config().out_dim != 2 {
        return Err(Error::Incompatible("value network used as a policy".into()));
    }
    let mut out = Vec::with_capacity(actions.len());
    let mut start = 0;
    while start < obs.len() {
        let end = (start + EVAL_CHUNK).min(obs.len());
        let logits = policy.outputs(&obs.range(start, end))?;
        out.extend(
            logits
                .data()
                .chunks_exact(2)
                .zip(&actions[start..end])
                .map(|(l, &a)| PolicyOutput::from_logits([l[0], l[1]]).log_prob(a)),
        );
        start = end;
    }
    Ok(out)
}

/// Value predictions for every row of `obs`, evaluated in chunks.
pub fn predict_values(value: &Network, obs: &ObsBatch) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(obs.len());
    let mut start = 0;
    while start < obs.len() {
        let end = (start + EVAL_CHUNK).min(obs.len());
        out.extend(value.values(&obs.range(start, end))?);
        start = end;
    }
    Ok(out)
}

/// Negated surrogate on a mini-batch, recorded on `g`.
pub fn policy_loss(
    g: &mut Graph,
    policy: &Network,
    obs: &ObsBatch,
    actions: &[Switch],
    logp_old: &[f64],
    advantages: &[f64],
    eps: f64,
) -> Result<Var> {
    let logits = policy.forward(g, obs)?;
    let logp_all = g.log_softmax(logits, 1)?;
    let cols: Vec<usize> = actions.iter().map(|&a| action_column(a)).collect();
    let logp = g.gather(logp_all, &cols)?;
    let old = g.input(Tensor::vector(logp_old.to_vec()));
    let log_ratio = g.sub(logp, old)?;
    let ratio = g.exp(log_ratio);
    let adv = g.input(Tensor::vector(advantages.to_vec()));
    let surr = g.mul(ratio, adv)?;
    let bound = g.input(Tensor::vector(advantages.iter().map(|&a| clip_bound(eps, a)).collect()));
    let obj = g.minimum(surr, bound)?;
    let obj = g.mean_all(obj)?;
    Ok(g.scale(obj, -1.0))
}

/// Mean squared error of `value` against `targets`, recorded on `g`.
pub fn value_loss(g: &mut Graph, value: &Network, obs: &ObsBatch, targets: &[f64]) -> Result<Var> {
    let v = value.forward(g, obs)?;
    let v = g.reshape(v, &[obs.len()])?;
    let t = g.input(Tensor::vector(targets.to_vec()));
    let diff = g.sub(v, t)?;
    let sq = g.square(diff);
    g.mean_all(sq)
}

/// Mini-batch indices: consecutive chunks of a permutation, reshuffled each
/// time a pass is exhausted. Leftover indices at the end of a pass are
/// skipped.
struct Batches<'a> {
    order: Vec<usize>,
    cursor: usize,
    size: usize,
    rng: &'a mut StreamRng,
}

impl<'a> Batches<'a> {
    fn new(len: usize, size: usize, rng: &'a mut StreamRng) -> Self {
        Self { order: (0..len).collect(), cursor: len, size: size.min(len), rng }
    }

    fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.size > self.order.len() {
            self.order.shuffle(self.rng);
            self.cursor = 0;
        }
        let s = &self.order[self.cursor..self.cursor + self.size];
        self.cursor += self.size;
        s
    }
}

fn pick<T: Copy>(xs: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| xs[i]).collect()
}

fn finite_loss(g: &Graph, loss: Var, what: &str) -> Result<f64> {
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{what} loss is {v}")));
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyUpdate {
    /// Gradient steps taken.
    pub steps: usize,
    /// KL estimate on the full dataset after the last step.
    pub kl: f64,
}

/// Up to `iters_pi` Adam steps on the clipped surrogate; stops as soon as the
/// full-dataset KL estimate exceeds `1.5 · d_targ`.
pub fn update_policy(
    policy: &mut Network,
    opt: &mut Adam,
    data: &Dataset,
    cfg: &PpoConfig,
    rng: &mut StreamRng,
) -> Result<PolicyUpdate> {
    let mut batches = Batches::new(data.len(), cfg.b, rng);
    let mut kl = 0.0;
    let mut steps = 0;
    for _ in 0..cfg.iters_pi {
        let idx = batches.next_batch();
        let mb = data.obs.select(idx);
        let mut g = Graph::new();
        let loss = policy_loss(
            &mut g,
            policy,
            &mb,
            &pick(&data.actions, idx),
            &pick(&data.logp_old, idx),
            &pick(&data.advantages, idx),
            cfg.clip_eps,
        )?;
        finite_loss(&g, loss, "policy")?;
        policy.params_mut().zero_grad();
        g.backward_into(loss, policy.params_mut())?;
        opt.step(policy.params_mut());
        steps += 1;
        kl = kld_estimate(&data.logp_old, &log_probs(policy, &data.obs, &data.actions)?);
        if !kl.is_finite() {
            return Err(Error::NonFinite(format!("KL estimate is {kl}")));
        }
        if kl > cfg.kl_limit() {
            break;
        }
    }
    Ok(PolicyUpdate { steps, kl })
}

/// `iters_v` Adam steps on the squared error to `Ĝ`; returns the MSE over the
/// full dataset afterwards.
pub fn update_value(
    value: &mut Network,
    opt: &mut Adam,
    data: &Dataset,
    cfg: &PpoConfig,
    rng: &mut StreamRng,
) -> Result<f64> {
    let mut batches = Batches::new(data.len(), cfg.b, rng);
    for _ in 0..cfg.iters_v {
        let idx = batches.next_batch();
        let mb = data.obs.select(idx);
        let mut g = Graph::new();
        let loss = value_loss(&mut g, value, &mb, &pick(&data.returns, idx))?;
        finite_loss(&g, loss, "value")?;
        value.params_mut().zero_grad();
        g.backward_into(loss, value.params_mut())?;
        opt.step(value.params_mut());
    }
    value_mse(value, data)
}

pub fn value_mse(value: &Network, data: &Dataset) -> Result<f64> {
    let v = predict_values(value, &data.obs)?;
    Ok(v.iter().zip(&data.returns).map(|(v, g)| (v - g).powi(2)).sum::<f64>() / v.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSpec {
    /// Policy architecture; the value network mirrors it with one output.
    pub arch: ArchConfig,
    pub tau: f64,
    pub params: RatchetParams,
    pub cfg: PpoConfig,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-step reward (mean displacement) over the epoch's samples.
    pub mean_reward: f64,
    /// `mean_reward / dt`.
    pub mean_current_estimate: f64,
    pub policy_steps: usize,
    pub kld_at_stop: f64,
    pub value_mse: f64,
    pub wall_time_s: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,mean_reward,mean_current_estimate,policy_steps,kld_at_stop,value_mse,wall_time_s";

impl EpochMetrics {
    pub fn write_csv_row(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.mean_reward,
            self.mean_current_estimate,
            self.policy_steps,
            self.kld_at_stop,
            self.value_mse,
            self.wall_time_s
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Networks after the last update.
    pub last: Checkpoint,
    /// Networks that collected the epoch with the highest mean reward.
    pub best: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// Fresh policy and value networks for `spec`.
pub fn init_networks(spec: &TrainSpec) -> Result<(Network, Network)> {
    let mut rng = stream_rng(spec.seed, stream_id(INIT_BLOCK, 0));
    let policy = Network::new(spec.arch, &mut rng)?;
    let value = Network::new(spec.arch.value_head(), &mut rng)?;
    Ok((policy, value))
}

/// Runs the full training loop. `on_epoch` sees each epoch's metrics as soon
/// as they are known.
pub fn train(
    spec: &TrainSpec,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    spec.cfg.validate()?;
    spec.params.validate()?;
    let (policy, value) = init_networks(spec)?;
    train_from(spec, policy, value, &mut on_epoch)
}

fn train_from(
    spec: &TrainSpec,
    mut policy: Network,
    mut value: Network,
    on_epoch: &mut dyn FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    let cfg = &spec.cfg;
    let n = spec.arch.n;
    let start = Instant::now();
    let mut opt_pi = Adam::new(cfg.lr_pi, policy.params());
    let mut opt_v = Adam::new(cfg.lr_v, value.params());
    let meta = |epoch| CheckpointMeta { n, tau: spec.tau, seed: spec.seed, epoch };
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let rollouts = collect(n, spec.tau, &spec.params, &policy, &value, cfg, spec.seed, epoch as u64)?;
        let data = Dataset::from_rollouts(&rollouts, cfg)?;
        let reward_sum: f64 = rollouts.iter().flat_map(|r| &r.rewards).sum();
        let mean_reward = reward_sum / data.len() as f64;
        if best.as_ref().is_none_or(|(b, _)| mean_reward > *b) {
            let ck = Checkpoint { meta: meta(epoch), policy: policy.clone(), value: Some(value.clone()) };
            best = Some((mean_reward, ck));
        }

        let mut shuffle = stream_rng(spec.seed, stream_id(epoch as u64, SHUFFLE_MEMBER));
        let pu = update_policy(&mut policy, &mut opt_pi, &data, cfg, &mut shuffle)?;
        let mse = update_value(&mut value, &mut opt_v, &data, cfg, &mut shuffle)?;

        let m = EpochMetrics {
            epoch,
            mean_reward,
            mean_current_estimate: mean_reward / spec.params.dt,
            policy_steps: pu.steps,
            kld_at_stop: pu.kl,
            value_mse: mse,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&m)?;
        metrics.push(m);
    }

    let last = Checkpoint { meta: meta(cfg.epochs), policy, value: Some(value) };
    let best = best.map(|(_, ck)| ck).unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { last, best, metrics })
}

#[cfg(test)]
mod tests;

//! Deterministic policy evaluation: ensemble currents, sweeps, best-of
//! selection, decision boundaries and time traces.
//!
//! Ensemble member `m` owns the random stream `(seed, m)` for both its initial
//! positions and its noise, and members are processed in fixed-size chunks,
//! so results do not depend on the number of worker threads.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::baselines::{greedy_policy, mean_force, mnd_policy, periodic_policy, MndParams, ThresholdState};
use crate::error::{Error, Result};
use crate::physics::{delay_depth, DelayedEnv, RatchetParams, Switch, SystemState};
use crate::policy::{deterministic_action, ArchKind, Checkpoint, Network, ObsBatch};
use crate::rng::{derive_seeds, stream_rng, StreamRng};

pub const DEFAULT_DURATION: f64 = 50.0;
pub const DEFAULT_ENSEMBLE: usize = 32;

/// Ensemble members simulated in lockstep by one worker.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalBudget {
    pub duration: f64,
    pub ensemble: usize,
    pub seed: u64,
}

impl Default for EvalBudget {
    fn default() -> Self {
        Self { duration: DEFAULT_DURATION, ensemble: DEFAULT_ENSEMBLE, seed: 0 }
    }
}

impl EvalBudget {
    pub fn validate(&self, params: &RatchetParams) -> Result<usize> {
        if self.ensemble < 2 {
            return Err(Error::invalid(format!(
                "ensemble must have at least 2 members for a std, got {}",
                self.ensemble
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid(format!("duration must be > 0, got {}", self.duration)));
        }
        let steps = params.steps_for(self.duration);
        if steps == 0 {
            return Err(Error::invalid("duration is shorter than one time step"));
        }
        Ok(steps)
    }
}

/// A policy that can be evaluated: a baseline or a network.
#[derive(Clone, Debug)]
pub enum PolicySpec {
    Off,
    On,
    Periodic { t_on: f64, t_off: f64 },
    Greedy,
    Threshold { u_on: f64, u_off: f64 },
    Mnd { x0: f64 },
    Network(Arc<Network>),
}

impl PolicySpec {
    pub fn network(net: Network) -> Self {
        PolicySpec::Network(Arc::new(net))
    }

    /// Short label used in CSV output.
    pub fn name(&self) -> String {
        match self {
            PolicySpec::Off => "off".into(),
            PolicySpec::On => "on".into(),
            PolicySpec::Periodic { .. } => "periodic".into(),
            PolicySpec::Greedy => "greedy".into(),
            PolicySpec::Threshold { .. } => "threshold".into(),
            PolicySpec::Mnd { .. } => "mnd".into(),
            PolicySpec::Network(net) => net.config().kind.to_string(),
        }
    }

    /// Builds a controller for a group of environments with `n` particles and
    /// delay depth `depth`.
    pub fn controller(
        &self,
        n: usize,
        depth: usize,
        params: &RatchetParams,
    ) -> Result<Box<dyn Controller + '_>> {
        Ok(match self {
            PolicySpec::Off => Box::new(Constant(Switch::Off)),
            PolicySpec::On => Box::new(Constant(Switch::On)),
            &PolicySpec::Periodic { t_on, t_off } => {
                periodic_policy(0.0, t_on, t_off)?;
                Box::new(Periodic { t_on, t_off })
            }
            PolicySpec::Greedy => Box::new(Greedy),
            &PolicySpec::Threshold { u_on, u_off } => {
                ThresholdState::new(u_on, u_off, 0.0)?;
                Box::new(Threshold { u_on, u_off, states: Vec::new() })
            }
            &PolicySpec::Mnd { x0 } => Box::new(Mnd(MndParams::new(x0, params)?)),
            PolicySpec::Network(net) => {
                net.check_input(n, depth)?;
                if net.config().out_dim != 2 {
                    return Err(Error::Incompatible("value network used as a policy".into()));
                }
                Box::new(NetworkController { net, batch: ObsBatch::new(n, depth) })
            }
        })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Periodic { t_on, t_off } => write!(f, "periodic(t_on={t_on}, t_off={t_off})"),
            PolicySpec::Threshold { u_on, u_off } => write!(f, "threshold(u_on={u_on}, u_off={u_off})"),
            PolicySpec::Mnd { x0 } => write!(f, "mnd(x0={x0})"),
            other => f.write_str(&other.name()),
        }
    }
}

/// Chooses the next switching decision for every environment of a group.
/// Decisions enter each environment's delay queue.
pub trait Controller: Send {
    fn decide(&mut self, envs: &[DelayedEnv], actions: &mut [Switch]) -> Result<()>;
}

struct Constant(Switch);

impl Controller for Constant {
    fn decide(&mut self, _: &[DelayedEnv], actions: &mut [Switch]) -> Result<()> {
        actions.fill(self.0);
        Ok(())
    }
}

struct Periodic {
    t_on: f64,
    t_off: f64,
}

impl Controller for Periodic {
    fn decide(&mut self, envs: &[DelayedEnv], actions: &mut [Switch]) -> Result<()> {
        for (env, a) in envs.iter().zip(actions) {
            *a = periodic_policy(env.state.time(), self.t_on, self.t_off)?;
        }
        Ok(())
    }
}

struct Greedy;

impl Controller for Greedy {
    fn decide(&mut self, envs: &[DelayedEnv], actions: &mut [Switch]) -> Result<()> {
        for (env, a) in envs.iter().zip(actions) {
            *a = greedy_policy(&env.state.positions, &env.params);
        }
        Ok(())
    }
}

struct Threshold {
    u_on: f64,
    u_off: f64,
    states: Vec<ThresholdState>,
}

impl Controller for Threshold {
    fn decide(&mut self, envs: &[DelayedEnv], actions: &mut [Switch]) -> Result<()> {
        if self.states.is_empty() {
            for env in envs {
                let f0 = mean_force(&env.state.positions, &env.params);
                self.states.push(ThresholdState::new(self.u_on, self.u_off, f0)?);
            }
        }
        for ((env, ts), a) in envs.iter().zip(&mut self.states).zip(actions) {
            *a = ts.decide(mean_force(&env.state.positions, &env.params));
        }
        Ok(())
    }
}

struct Mnd(MndParams);

impl Controller for Mnd {
    fn decide(&mut self, envs: &[DelayedEnv], actions: &mut [Switch]) -> Result<()> {
        for (env, a) in envs.iter().zip(actions) {
            *a = mnd_policy(&env.state.positions, &self.0);
        }
        Ok(())
    }
}

struct NetworkController<'a> {
    net: &'a Network,
    batch: ObsBatch,
}

impl Controller for NetworkController<'_> {
    fn decide(&mut self, envs: &[DelayedEnv], actions: &mut [Switch]) -> Result<()> {
        let mut batch = ObsBatch::with_capacity(self.batch.n(), self.batch.depth(), envs.len());
        for env in envs {
            batch.push_env(env)?;
        }
        let outs = self.net.policy_outputs(&batch)?;
        for (o, a) in outs.iter().zip(actions) {
            *a = deterministic_action(o);
        }
        Ok(())
    }
}

/// Environment and generator of ensemble member `member`.
pub fn member_env(
    n: usize,
    tau: f64,
    params: &RatchetParams,
    seed: u64,
    member: u64,
) -> Result<(DelayedEnv, StreamRng)> {
    let mut rng = stream_rng(seed, member);
    let state = SystemState::uniform(n, params, &mut rng)?;
    Ok((DelayedEnv::new(state, *params, tau)?, rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub policy: String,
    pub n: usize,
    pub tau: f64,
    pub current_mean: f64,
    pub current_std: f64,
    pub ensemble: usize,
    pub duration: f64,
    pub seed: u64,
    /// Per-member currents, in member order.
    pub currents: Vec<f64>,
}

impl EvalReport {
    pub fn std_error(&self) -> f64 {
        self.current_std / (self.ensemble as f64).sqrt()
    }
}

/// Per-member currents: mean displacement over `duration`, divided by it.
pub fn ensemble_currents(
    spec: &PolicySpec,
    n: usize,
    tau: f64,
    params: &RatchetParams,
    budget: &EvalBudget,
) -> Result<Vec<f64>> {
    params.validate()?;
    let steps = budget.validate(params)?;
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let depth = delay_depth(tau, params.dt)?;
    // fail before spawning workers
    spec.controller(n, depth, params)?;

    let starts: Vec<usize> = (0..budget.ensemble).step_by(CHUNK).collect();
    let chunks: Vec<Vec<f64>> = starts
        .into_par_iter()
        .map(|start| {
            let end = (start + CHUNK).min(budget.ensemble);
            let mut envs = Vec::with_capacity(end - start);
            let mut rngs = Vec::with_capacity(end - start);
            for m in start..end {
                let (env, rng) = member_env(n, tau, params, budget.seed, m as u64)?;
                envs.push(env);
                rngs.push(rng);
            }
            let mut controller = spec.controller(n, depth, params)?;
            let mut actions = vec![Switch::Off; envs.len()];
            let mut displacement = vec![0.0; envs.len()];
            for _ in 0..steps {
                controller.decide(&envs, &mut actions)?;
                for (((env, rng), &a), d) in
                    envs.iter_mut().zip(&mut rngs).zip(&actions).zip(&mut displacement)
                {
                    *d += env.step(a, rng)?;
                }
            }
            let duration = steps as f64 * params.dt;
            Ok(displacement.into_iter().map(|d| d / duration).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Evaluates `spec` on an ensemble of independent systems.
pub fn evaluate(
    spec: &PolicySpec,
    n: usize,
    tau: f64,
    params: &RatchetParams,
    budget: &EvalBudget,
) -> Result<EvalReport> {
    let currents = ensemble_currents(spec, n, tau, params, budget)?;
    let (mean, std) = mean_std(&currents);
    Ok(EvalReport {
        policy: spec.name(),
        n,
        tau,
        current_mean: mean,
        current_std: std,
        ensemble: currents.len(),
        duration: params.steps_for(budget.duration) as f64 * params.dt,
        seed: budget.seed,
        currents,
    })
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One sweep point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub n: usize,
    pub tau: f64,
}

/// Evaluates `spec` at every point; point `i` uses the `i`-th seed derived
/// from `budget.seed`.
pub fn sweep(
    spec: &PolicySpec,
    points: &[SweepPoint],
    params: &RatchetParams,
    budget: &EvalBudget,
) -> Result<Vec<EvalReport>> {
    sweep_with(points, budget, |point, b| evaluate(spec, point.n, point.tau, params, b))
}

/// Sweep driver with a caller-supplied evaluation per point.
pub fn sweep_with(
    points: &[SweepPoint],
    budget: &EvalBudget,
    mut eval: impl FnMut(SweepPoint, &EvalBudget) -> Result<EvalReport>,
) -> Result<Vec<EvalReport>> {
    if points.is_empty() {
        return Err(Error::invalid("sweep needs at least one point"));
    }
    let seeds = derive_seeds(budget.seed, points.len());
    points.iter().zip(seeds).map(|(&p, seed)| eval(p, &EvalBudget { seed, ..*budget })).collect()
}

pub const SWEEP_HEADER: &str = "policy,N,tau,current,current_std,ensemble,duration,seed";

pub fn write_sweep_csv(reports: &[EvalReport], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.policy, r.n, r.tau, r.current_mean, r.current_std, r.ensemble, r.duration, r.seed
        )?;
    }
    Ok(())
}

/// Index of the checkpoint with the highest current under a common budget;
/// ties go to the lowest index. Returns the index and every report.
pub fn best_of_seeds(
    checkpoints: &[Checkpoint],
    n: usize,
    tau: f64,
    params: &RatchetParams,
    budget: &EvalBudget,
) -> Result<(usize, Vec<EvalReport>)> {
    if checkpoints.is_empty() {
        return Err(Error::invalid("best-of needs at least one run"));
    }
    let mut reports = Vec::with_capacity(checkpoints.len());
    for ck in checkpoints {
        ck.check_compatible(n, tau, params)?;
        let spec = PolicySpec::network(ck.policy.clone());
        reports.push(evaluate(&spec, n, tau, params, budget)?);
    }
    let mut best = 0;
    for (i, r) in reports.iter().enumerate() {
        if r.current_mean > reports[best].current_mean {
            best = i;
        }
    }
    Ok((best, reports))
}

/// `p_on` on a uniform grid over `[0, L)` per axis, for one or two particles.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryGrid {
    pub n: usize,
    pub axis: Vec<f64>,
    /// Row-major over `(x1, x2)`; length `res` for one particle, `res²` for two.
    pub p_on: Vec<f64>,
}

impl BoundaryGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.p_on[i * self.axis.len() + j]
    }

    /// Largest `|p(x1, x2) - p(x2, x1)|`; zero for one particle.
    pub fn transpose_asymmetry(&self) -> f64 {
        if self.n != 2 {
            return 0.0;
        }
        let r = self.axis.len();
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        if self.n == 1 {
            writeln!(w, "x1,p_on")?;
            for (x, p) in self.axis.iter().zip(&self.p_on) {
                writeln!(w, "{x},{p}")?;
            }
        } else {
            writeln!(w, "x1,x2,p_on")?;
            for (i, x1) in self.axis.iter().enumerate() {
                for (j, x2) in self.axis.iter().enumerate() {
                    writeln!(w, "{x1},{x2},{}", self.at(i, j))?;
                }
            }
        }
        Ok(())
    }
}

/// Probability of switching on across configurations of one or two particles.
/// Baselines give 0 or 1; only state-feedback policies without memory are
/// accepted.
pub fn boundary_grid(
    spec: &PolicySpec,
    n: usize,
    resolution: usize,
    params: &RatchetParams,
) -> Result<BoundaryGrid> {
    if !matches!(n, 1 | 2) {
        return Err(Error::invalid(format!("boundary grids need n = 1 or 2, got {n}")));
    }
    if resolution == 0 {
        return Err(Error::invalid("boundary resolution must be >= 1"));
    }
    let axis: Vec<f64> = (0..resolution).map(|i| i as f64 * params.length / resolution as f64).collect();
    let configs: Vec<Vec<f64>> = if n == 1 {
        axis.iter().map(|&x| vec![x]).collect()
    } else {
        axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect()
    };
    let p_on = match spec {
        PolicySpec::Greedy => configs.iter().map(|x| greedy_policy(x, params).as_f64()).collect(),
        &PolicySpec::Mnd { x0 } => {
            let mp = MndParams::new(x0, params)?;
            configs.iter().map(|x| mnd_policy(x, &mp).as_f64()).collect()
        }
        PolicySpec::Off => vec![0.0; configs.len()],
        PolicySpec::On => vec![1.0; configs.len()],
        PolicySpec::Network(net) => {
            if net.config().kind == ArchKind::Rnn {
                return Err(Error::Incompatible(
                    "recurrent policies depend on the action history; no static boundary".into(),
                ));
            }
            let mut batch = ObsBatch::with_capacity(n, 0, configs.len());
            for x in &configs {
                batch.push(x, std::iter::empty(), params)?;
            }
            net.policy_outputs(&batch)?.iter().map(|o| o.p_on).collect()
        }
        other => {
            return Err(Error::invalid(format!("{} is not a function of positions alone", other.name())))
        }
    };
    Ok(BoundaryGrid { n, axis, p_on })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub alpha: Switch,
    pub value: Option<f64>,
}

/// One deterministic rollout, logging the decision (and the value estimate,
/// when a value network is given) at every step.
pub fn time_trace(
    spec: &PolicySpec,
    value: Option<&Network>,
    n: usize,
    tau: f64,
    params: &RatchetParams,
    duration: f64,
    seed: u64,
) -> Result<Vec<TracePoint>> {
    params.validate()?;
    let budget = EvalBudget { duration, ensemble: 2, seed };
    let steps = budget.validate(params)?;
    let depth = delay_depth(tau, params.dt)?;
    if let Some(v) = value {
        v.check_input(n, depth)?;
        if v.config().out_dim != 1 {
            return Err(Error::Incompatible("policy network used as a value function".into()));
        }
    }
    let mut controller = spec.controller(n, depth, params)?;
    let (env, mut rng) = member_env(n, tau, params, seed, 0)?;
    let mut envs = [env];
    let mut action = [Switch::Off];
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        controller.decide(&envs, &mut action)?;
        let v = match value {
            Some(net) => {
                let mut b = ObsBatch::new(n, depth);
                b.push_env(&envs[0])?;
                Some(net.values(&b)?[0])
            }
            None => None,
        };
        out.push(TracePoint { t: envs[0].state.time(), alpha: action[0], value: v });
        envs[0].step(action[0], &mut rng)?;
    }
    Ok(out)
}

pub fn write_trace_csv(trace: &[TracePoint], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "t,alpha,value")?;
    for p in trace {
        match p.value {
            Some(v) => writeln!(w, "{},{},{v}", p.t, p.alpha as u8)?,
            None => writeln!(w, "{},{},", p.t, p.alpha as u8)?,
        }
    }
    Ok(())
}

//! Handcrafted switching policies: periodic, greedy, threshold and maximal
//! net displacement (MND).

use crate::bench::{self, EvalBudget, PolicySpec};
use crate::error::{Error, Result};
use crate::physics::{critical_points, force, RatchetParams, Switch};

/// Optimal open-loop periods in units of `L²/D`.
pub const DEFAULT_T_ON: f64 = 0.03;
pub const DEFAULT_T_OFF: f64 = 0.04;

/// On during the first `t_on` of every `t_on + t_off` cycle.
pub fn periodic_policy(t: f64, t_on: f64, t_off: f64) -> Result<Switch> {
    if !(t_on > 0.0 && t_off > 0.0) {
        return Err(Error::invalid(format!(
            "periodic switching needs t_on, t_off > 0 (got {t_on}, {t_off})"
        )));
    }
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid(format!("negative time {t}")));
    }
    let phase = t % (t_on + t_off);
    Ok(Switch::from_bool(phase < t_on))
}

/// Mean force over particles, summed in index order.
pub fn mean_force(positions: &[f64], params: &RatchetParams) -> f64 {
    positions.iter().map(|&x| force(params, x)).sum::<f64>() / positions.len() as f64
}

/// On iff the instantaneous mean force is strictly positive.
pub fn greedy_policy(positions: &[f64], params: &RatchetParams) -> Switch {
    Switch::heaviside(mean_force(positions, params))
}

/// Hysteretic switching on the mean force.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdState {
    pub u_on: f64,
    pub u_off: f64,
    pub prev_f: f64,
    pub prev_alpha: Switch,
}

impl ThresholdState {
    /// Starts switched on, with `f0` (the mean force at t = 0) as the
    /// previous force.
    pub fn new(u_on: f64, u_off: f64, f0: f64) -> Result<Self> {
        if !(u_on >= 0.0 && u_off <= 0.0) {
            return Err(Error::invalid(format!(
                "thresholds need u_on >= 0 and u_off <= 0 (got {u_on}, {u_off})"
            )));
        }
        Ok(Self { u_on, u_off, prev_f: f0, prev_alpha: Switch::On })
    }

    pub fn decide(&mut self, f_now: f64) -> Switch {
        let (alpha, next) = threshold_policy(*self, f_now);
        *self = next;
        alpha
    }
}

/// Off when the force is falling and at or below `u_on`; on when it is rising
/// and at or above `u_off`; otherwise the previous action is held. Rising and
/// falling are judged from the one-step difference.
pub fn threshold_policy(ts: ThresholdState, f_now: f64) -> (Switch, ThresholdState) {
    let alpha = if f_now < ts.prev_f && f_now <= ts.u_on {
        Switch::Off
    } else if f_now > ts.prev_f && f_now >= ts.u_off {
        Switch::On
    } else {
        ts.prev_alpha
    };
    (alpha, ThresholdState { prev_f: f_now, prev_alpha: alpha, ..ts })
}

/// Parameters of the displacement function `d(x) = x_min + x0 - x` on
/// `(x_max, x_max + L]`, extended periodically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MndParams {
    pub x0: f64,
    pub x_max: f64,
    /// `x_min` lifted into `(x_max, x_max + L]`.
    pub x_min: f64,
    length: f64,
}

impl MndParams {
    pub fn new(x0: f64, params: &RatchetParams) -> Result<Self> {
        if !x0.is_finite() {
            return Err(Error::invalid(format!("MND offset must be finite, got {x0}")));
        }
        let cp = critical_points(params);
        let l = params.length;
        let mut x_min = cp.x_min;
        while x_min <= cp.x_max {
            x_min += l;
        }
        Ok(Self { x0, x_max: cp.x_max, x_min, length: l })
    }

    /// Displacement still available before the particle reaches the minimum
    /// (shifted by `x0`).
    pub fn displacement(&self, x: f64) -> f64 {
        let l = self.length;
        let mut r = (x - self.x_max).rem_euclid(l);
        if r == 0.0 {
            r = l;
        }
        // x_min + x0 - (x_max + r), grouped so x = x_min gives exactly x0
        (self.x_min - self.x_max) - r + self.x0
    }
}

pub fn mnd_policy(positions: &[f64], mp: &MndParams) -> Switch {
    Switch::heaviside(positions.iter().map(|&x| mp.displacement(x)).sum())
}

/// Grid point with the highest evaluated current; ties go to smaller `|x0|`.
pub fn optimize_mnd_x0(
    n: usize,
    tau: f64,
    params: &RatchetParams,
    grid: &[f64],
    budget: &EvalBudget,
) -> Result<(f64, f64)> {
    let candidates: Vec<(f64, f64)> = grid
        .iter()
        .map(|&x0| {
            let report = bench::evaluate(&PolicySpec::Mnd { x0 }, n, tau, params, budget)?;
            Ok((x0, report.current_mean))
        })
        .collect::<Result<_>>()?;
    pick_best(candidates, |x0| x0.abs()).ok_or_else(|| Error::invalid("empty x0 grid"))
}

/// Threshold pair with the highest evaluated current over the grid product.
pub fn optimize_thresholds(
    n: usize,
    tau: f64,
    params: &RatchetParams,
    u_on_grid: &[f64],
    u_off_grid: &[f64],
    budget: &EvalBudget,
) -> Result<((f64, f64), f64)> {
    let mut candidates = Vec::with_capacity(u_on_grid.len() * u_off_grid.len());
    for &u_on in u_on_grid {
        for &u_off in u_off_grid {
            let spec = PolicySpec::Threshold { u_on, u_off };
            let report = bench::evaluate(&spec, n, tau, params, budget)?;
            candidates.push(((u_on, u_off), report.current_mean));
        }
    }
    pick_best(candidates, |(a, b)| a.abs() + b.abs()).ok_or_else(|| Error::invalid("empty threshold grid"))
}

/// Default x0 search grid: 26 points over `[-0.25, 0]`.
pub fn default_x0_grid() -> Vec<f64> {
    (0..26).map(|k| -0.25 + 0.01 * k as f64).collect()
}

/// Default threshold grids: `u_on ∈ {0, 0.5, …, 10}`, `u_off ∈ {-10, …, 0}`.
pub fn default_threshold_grids() -> (Vec<f64>, Vec<f64>) {
    let on = (0..=20).map(|k| 0.5 * k as f64).collect();
    let off = (0..=20).map(|k| -0.5 * k as f64).collect();
    (on, off)
}

fn pick_best<T: Copy>(candidates: Vec<(T, f64)>, size: impl Fn(T) -> f64) -> Option<(T, f64)> {
    candidates.into_iter().fold(None, |best, (c, score)| match best {
        None => Some((c, score)),
        Some((b, bs)) => {
            if score > bs || (score == bs && size(c) < size(b)) {
                Some((c, score))
            } else {
                Some((b, bs))
            }
        }
    })
}

//! Overdamped Langevin dynamics of N independent particles in a switchable
//! periodic potential.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// State of the potential: switched off (free diffusion) or on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[repr(u8)]
pub enum Switch {
    #[default]
    Off = 0,
    On = 1,
}

impl Switch {
    pub fn from_bool(on: bool) -> Self {
        if on {
            Switch::On
        } else {
            Switch::Off
        }
    }

    /// Heaviside step with the strict convention: zero maps to `Off`.
    pub fn heaviside(z: f64) -> Self {
        Switch::from_bool(z > 0.0)
    }

    pub fn is_on(self) -> bool {
        self == Switch::On
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Switch::Off),
            1 => Ok(Switch::On),
            other => Err(Error::invalid(format!("switch symbol must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PotentialKind {
    /// `U0 [sin(2πx/L) + sin(4πx/L)/4]`
    #[default]
    Smooth,
    /// Piecewise-linear: rises over `[0, L/3]`, falls over `(L/3, L)`.
    Sawtooth,
}

impl fmt::Display for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PotentialKind::Smooth => "smooth",
            PotentialKind::Sawtooth => "sawtooth",
        })
    }
}

impl FromStr for PotentialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(PotentialKind::Smooth),
            "sawtooth" => Ok(PotentialKind::Sawtooth),
            other => {
                Err(Error::invalid(format!("unknown potential {other:?} (expected smooth or sawtooth)")))
            }
        }
    }
}

/// Physical constants in reduced units (`L = kT = D = 1` by default).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatchetParams {
    pub length: f64,
    pub amplitude: f64,
    pub kt: f64,
    pub diffusion: f64,
    pub dt: f64,
    pub potential: PotentialKind,
}

impl Default for RatchetParams {
    fn default() -> Self {
        Self {
            length: 1.0,
            amplitude: 5.0,
            kt: 1.0,
            diffusion: 1.0,
            dt: 1e-3,
            potential: PotentialKind::Smooth,
        }
    }
}

impl RatchetParams {
    pub fn with_potential(potential: PotentialKind) -> Self {
        Self { potential, ..Self::default() }
    }

    /// Friction coefficient from the Einstein relation, `kT / D`.
    pub fn friction(&self) -> f64 {
        self.kt / self.diffusion
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("length", self.length),
            ("amplitude", self.amplitude),
            ("kt", self.kt),
            ("diffusion", self.diffusion),
            ("dt", self.dt),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Number of integration steps covering `duration`.
    pub fn steps_for(&self, duration: f64) -> usize {
        (duration / self.dt).round() as usize
    }

    fn wrap(&self, x: f64) -> f64 {
        x.rem_euclid(self.length)
    }
}

/// Potential energy at `x`.
pub fn potential(params: &RatchetParams, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("potential evaluated at x = {x}")));
    }
    let l = params.length;
    let u0 = params.amplitude;
    let y = params.wrap(x);
    Ok(match params.potential {
        PotentialKind::Smooth => {
            let theta = 2.0 * PI * y / l;
            u0 * (theta.sin() + 0.25 * (2.0 * theta).sin())
        }
        PotentialKind::Sawtooth => {
            if y <= l / 3.0 {
                3.0 * u0 / l * y
            } else {
                u0 - 1.5 * u0 / l * (y - l / 3.0)
            }
        }
    })
}

/// Force `-dU/dx` at `x`. At the sawtooth kinks the left-limit value is used.
#[inline]
pub fn force(params: &RatchetParams, x: f64) -> f64 {
    let l = params.length;
    let u0 = params.amplitude;
    let y = params.wrap(x);
    match params.potential {
        PotentialKind::Smooth => {
            let c = (2.0 * PI * y / l).cos();
            // cos(4πx/L) = 2c² - 1
            -u0 * PI / l * (2.0 * c + 2.0 * c * c - 1.0)
        }
        PotentialKind::Sawtooth => {
            if y > 0.0 && y <= l / 3.0 {
                -3.0 * u0 / l
            } else {
                1.5 * u0 / l
            }
        }
    }
}

/// Positions in `[0, L)` of the potential maximum and minimum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalPoints {
    pub x_max: f64,
    pub x_min: f64,
}

/// Locates the extrema of the active potential by bracketing sign changes of
/// the force on a uniform grid and bisecting each bracket. A force change from
/// negative to positive marks a maximum of `U`; positive to negative a minimum.
/// Bisection also converges onto the force discontinuities of the sawtooth.
pub fn critical_points(params: &RatchetParams) -> CriticalPoints {
    const GRID: usize = 1000;
    const TOL: f64 = 1e-12;
    let l = params.length;
    let h = l / GRID as f64;
    let mut x_max = None;
    let mut x_min = None;
    for k in 0..GRID {
        let a = k as f64 * h;
        let b = a + h;
        let fa = force(params, a);
        let fb = force(params, b);
        if fa.signum() == fb.signum() && fa != 0.0 && fb != 0.0 {
            continue;
        }
        let root = bisect(params, a, b, TOL);
        let root = params.wrap(root);
        if fa < 0.0 && fb >= 0.0 {
            x_max.get_or_insert(root);
        } else if fa > 0.0 && fb <= 0.0 {
            x_min.get_or_insert(root);
        }
    }
    CriticalPoints {
        x_max: x_max.expect("periodic potential has a maximum"),
        x_min: x_min.expect("periodic potential has a minimum"),
    }
}

fn bisect(params: &RatchetParams, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let fa_positive = force(params, a) > 0.0;
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if (force(params, mid) > 0.0) == fa_positive {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Unwrapped particle positions and elapsed time.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub positions: Vec<f64>,
    steps: u64,
    time: f64,
}

impl SystemState {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("a system needs at least one particle"));
        }
        if let Some(x) = positions.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("initial position {x}")));
        }
        Ok(Self { positions, steps: 0, time: 0.0 })
    }

    /// Particles i.i.d. uniform on `[0, L)`.
    pub fn uniform<R: Rng + ?Sized>(n: usize, params: &RatchetParams, rng: &mut R) -> Result<Self> {
        let positions = (0..n).map(|_| rng.random::<f64>() * params.length).collect();
        Self::new(positions)
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn mean_position(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.n() as f64
    }
}

/// Per-particle features `(cos 2πx/L, sin 2πx/L)`, row-major `N x 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    data: Vec<f64>,
}

impl Features {
    pub fn n(&self) -> usize {
        self.data.len() / 2
    }

    pub fn row(&self, i: usize) -> [f64; 2] {
        [self.data[2 * i], self.data[2 * i + 1]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

pub fn featurize(state: &SystemState, params: &RatchetParams) -> Features {
    let mut data = Vec::with_capacity(2 * state.n());
    featurize_into(&state.positions, params, &mut data);
    Features { data }
}

/// Appends the feature rows of `positions` to `out`.
pub fn featurize_into(positions: &[f64], params: &RatchetParams, out: &mut Vec<f64>) {
    let k = 2.0 * PI / params.length;
    for &x in positions {
        let (s, c) = (k * params.wrap(x)).sin_cos();
        out.push(c);
        out.push(s);
    }
}

/// Advances one Euler–Maruyama step and returns the mean displacement.
pub fn step<R: Rng + ?Sized>(
    state: &mut SystemState,
    alpha: Switch,
    params: &RatchetParams,
    rng: &mut R,
) -> Result<f64> {
    step_with_noise(state, alpha, params, || rng.sample::<f64, _>(StandardNormal))
}

/// Like [`step`], drawing the unit Gaussian increments from `noise`.
pub fn step_with_noise(
    state: &mut SystemState,
    alpha: Switch,
    params: &RatchetParams,
    mut noise: impl FnMut() -> f64,
) -> Result<f64> {
    let drift = params.dt / params.friction();
    let kick = (2.0 * params.diffusion * params.dt).sqrt();
    let mut total = 0.0;
    match alpha {
        Switch::On => {
            for x in state.positions.iter_mut() {
                let dx = drift * force(params, *x) + kick * noise();
                *x += dx;
                total += dx;
            }
        }
        Switch::Off => {
            for x in state.positions.iter_mut() {
                let dx = kick * noise();
                *x += dx;
                total += dx;
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("integration diverged at t = {}", state.time)));
    }
    state.steps += 1;
    state.time = state.steps as f64 * params.dt;
    Ok(total / state.n() as f64)
}

/// Number of integration steps spanned by the delay `tau`.
pub fn delay_depth(tau: f64, dt: f64) -> Result<usize> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::invalid(format!("delay must be finite and >= 0, got {tau}")));
    }
    let d = (tau / dt).round();
    if (tau - d * dt).abs() > 1e-9 {
        return Err(Error::invalid(format!("delay {tau} is not an integer multiple of dt = {dt}")));
    }
    Ok(d as usize)
}

/// Environment whose switching decisions take effect `d = tau/dt` steps
/// after they are made.
#[derive(Clone, Debug)]
pub struct DelayedEnv {
    pub state: SystemState,
    pub params: RatchetParams,
    tau: f64,
    queue: VecDeque<Switch>,
}

impl DelayedEnv {
    /// The pending-action queue starts all `Off`.
    pub fn new(state: SystemState, params: RatchetParams, tau: f64) -> Result<Self> {
        params.validate()?;
        let depth = delay_depth(tau, params.dt)?;
        Ok(Self { state, params, tau, queue: std::iter::repeat_n(Switch::Off, depth).collect() })
    }

    pub fn with_queue(state: SystemState, params: RatchetParams, queue: Vec<Switch>) -> Result<Self> {
        params.validate()?;
        let tau = queue.len() as f64 * params.dt;
        Ok(Self { state, params, tau, queue: queue.into() })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn depth(&self) -> usize {
        self.queue.len()
    }

    /// Pending actions, oldest first: `(α_{t-τ}, …, α_{t-Δt})`.
    pub fn history(&self) -> impl ExactSizeIterator<Item = Switch> + '_ {
        self.queue.iter().copied()
    }

    /// Applies the oldest pending action and enqueues `new_alpha`.
    pub fn step<R: Rng + ?Sized>(&mut self, new_alpha: Switch, rng: &mut R) -> Result<f64> {
        let applied = self.push(new_alpha);
        step(&mut self.state, applied, &self.params, rng)
    }

    pub fn step_with_noise(&mut self, new_alpha: Switch, noise: impl FnMut() -> f64) -> Result<f64> {
        let applied = self.push(new_alpha);
        step_with_noise(&mut self.state, applied, &self.params, noise)
    }

    fn push(&mut self, new_alpha: Switch) -> Switch {
        match self.queue.pop_front() {
            Some(oldest) => {
                self.queue.push_back(new_alpha);
                oldest
            }
            None => new_alpha,
        }
    }
}

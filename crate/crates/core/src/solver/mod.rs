//! Finite-difference time steppers for the high-temperature system on the
//! periodic unit interval.
//!
//! Three schemes are available:
//!
//! * [`Scheme::SemiImplicit`]: conservative two-stage scheme in `(n, W_tot)`,
//!   one linear solve per variable and step.
//! * [`Scheme::ImplicitPicard`]: implicit Euler step in `(n, W)` with the
//!   truncated and regularized coefficients, solved by Picard iteration.
//! * [`Scheme::ZerothOrder`]: the logarithmic-type diffusion
//!   `∂ₜn = ∂ₓ(τ₀ ∂ₓn / g(n))`, `W` is left untouched.

mod schemes;
pub mod tridiag;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kinetics::{CompensatedSum, ModelParams};
pub use schemes::{g_mobility, step, step_implicit_picard, step_semi_implicit, step_zeroth_order};
pub use tridiag::{cyclic_tridiagonal_solve, TridiagError};

/// Slack allowed on the state bounds after each step.
pub const INVARIANT_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(#[from] TridiagError),
    #[error("invariant violated: {quantity}[{index}] = {value:e} outside bound {bound:e}")]
    InvariantViolation {
        quantity: &'static str,
        index: usize,
        value: f64,
        bound: f64,
    },
    #[error("Picard iteration did not converge after {iterations} iterations (last change {residual:e})")]
    PicardNoConvergence { iterations: usize, residual: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("step {step} (t = {t}) failed: {source}")]
    StepFailed {
        step: usize,
        t: f64,
        #[source]
        source: Box<SolverError>,
    },
}

/// Uniform cell-centred grid on the periodic unit interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicGrid1D {
    cells: usize,
    dx: f64,
}

impl PeriodicGrid1D {
    pub fn new(cells: usize) -> Result<Self, SolverError> {
        if cells < 4 {
            return Err(SolverError::InvalidConfig(format!(
                "grid needs at least 4 cells, got {cells}"
            )));
        }
        Ok(PeriodicGrid1D {
            cells,
            dx: 1.0 / cells as f64,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Cell centre `(i + 1/2) dx`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }
}

/// Cell values on a [`PeriodicGrid1D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Result<Self, SolverError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::InvalidState(format!(
                "non-finite value at cell {i}"
            )));
        }
        Ok(Field { values })
    }

    pub fn constant(value: f64, cells: usize) -> Self {
        Field {
            values: vec![value; cells],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean value, which equals the integral on the unit interval.
    pub fn mean(&self) -> f64 {
        let mut acc = CompensatedSum::default();
        for &v in &self.values {
            acc.add(v);
        }
        acc.value() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Discrete solution `(n, W)` after `step` time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub grid: PeriodicGrid1D,
    pub n: Field,
    pub w: Field,
    pub step: usize,
    pub t: f64,
}

impl State {
    pub fn new(grid: PeriodicGrid1D, n: Vec<f64>, w: Vec<f64>) -> Result<Self, SolverError> {
        if n.len() != grid.cells() || w.len() != grid.cells() {
            return Err(SolverError::InvalidState(format!(
                "fields of length {} and {} on a grid of {} cells",
                n.len(),
                w.len(),
                grid.cells()
            )));
        }
        Ok(State {
            grid,
            n: Field::new(n)?,
            w: Field::new(w)?,
            step: 0,
            t: 0.0,
        })
    }

    /// Total energy `W_tot = W - (U/2) n²` per cell.
    pub fn total_energy(&self, params: &ModelParams) -> Vec<f64> {
        let half_u = 0.5 * params.u();
        self.w
            .values()
            .iter()
            .zip(self.n.values())
            .map(|(w, n)| w - half_u * n * n)
            .collect()
    }

    /// Checks `δ ≤ n ≤ (1-δ)/η` and `W ≥ 0` up to `slack`.
    pub fn check_invariants(&self, params: &ModelParams, slack: f64) -> Result<(), SolverError> {
        let lo = params.delta();
        let hi = params.density_ceiling();
        for (i, &v) in self.n.values().iter().enumerate() {
            if v < lo - slack {
                return Err(SolverError::InvariantViolation {
                    quantity: "n",
                    index: i,
                    value: v,
                    bound: lo,
                });
            }
            if v > hi + slack {
                return Err(SolverError::InvariantViolation {
                    quantity: "n",
                    index: i,
                    value: v,
                    bound: hi,
                });
            }
        }
        for (i, &v) in self.w.values().iter().enumerate() {
            if v < -slack {
                return Err(SolverError::InvariantViolation {
                    quantity: "W",
                    index: i,
                    value: v,
                    bound: 0.0,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    SemiImplicit,
    ImplicitPicard,
    ZerothOrder,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::SemiImplicit => "semi_implicit",
            Scheme::ImplicitPicard => "implicit_picard",
            Scheme::ZerothOrder => "zeroth_order",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "semi_implicit" => Ok(Scheme::SemiImplicit),
            "implicit_picard" => Ok(Scheme::ImplicitPicard),
            "zeroth_order" => Ok(Scheme::ZerothOrder),
            other => Err(SolverError::InvalidConfig(format!(
                "unknown scheme '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    /// Regularization of the quadratic gradient term.
    pub alpha: f64,
    /// Truncation parameter; `W` is capped at `1/gamma`. `None` selects
    /// `1 / (2 max W)` of the state being stepped.
    pub gamma: Option<f64>,
    /// Ellipticity regularization added to `W` in the density equation.
    pub eps_reg: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-5,
            t_final: 0.1,
            scheme: Scheme::SemiImplicit,
            alpha: 0.0,
            gamma: None,
            eps_reg: 1e-10,
            picard_tol: 1e-11,
            picard_max: 200,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be finite and > 0");
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return bad("t_final must be finite and >= 0");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be >= 0");
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return bad("gamma must be > 0");
            }
        }
        if !(self.eps_reg.is_finite() && self.eps_reg >= 0.0) {
            return bad("eps_reg must be >= 0");
        }
        if !(self.picard_tol > 0.0) {
            return bad("picard_tol must be > 0");
        }
        if self.picard_max == 0 {
            return bad("picard_max must be >= 1");
        }
        Ok(())
    }

    /// Number of steps needed to reach `t_final`.
    pub fn steps(&self) -> Result<usize, SolverError> {
        step_index(self.t_final, self.dt)
    }
}

/// Index `k` with `k·dt = t`, rejecting times that are not on the step grid.
pub fn step_index(t: f64, dt: f64) -> Result<usize, SolverError> {
    let k = (t / dt).round();
    if (k * dt - t).abs() > 1e-9 * dt.max(t) {
        return Err(SolverError::InvalidConfig(format!(
            "time {t} is not a multiple of dt = {dt}"
        )));
    }
    Ok(k as usize)
}

/// Callback invoked on the initial state and after every step.
pub trait StepObserver {
    fn observe(&mut self, state: &State);
}

impl<F: FnMut(&State)> StepObserver for F {
    fn observe(&mut self, state: &State) {
        self(state)
    }
}

/// Steps `initial` to `config.t_final`, returning the states at the requested
/// output times followed by the final state (without duplicates).
///
/// Output times are snapped to the nearest step and must not exceed
/// `t_final`.
pub fn run_simulation(
    initial: &State,
    params: &ModelParams,
    config: &SolverConfig,
    output_times: &[f64],
    observers: &mut [&mut dyn StepObserver],
) -> Result<Vec<State>, SolverError> {
    config.validate()?;
    let steps = config.steps()?;
    let mut marks = Vec::with_capacity(output_times.len());
    for w in output_times.windows(2) {
        if w[1] < w[0] {
            return Err(SolverError::InvalidConfig(
                "output times must be sorted".into(),
            ));
        }
    }
    for &t in output_times {
        if !(t >= 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "negative output time {t}"
            )));
        }
        let k = (t / config.dt).round() as usize;
        if k > steps {
            return Err(SolverError::InvalidConfig(format!(
                "output time {t} beyond t_final = {}",
                config.t_final
            )));
        }
        marks.push(k);
    }
    marks.push(steps);
    marks.dedup();

    let mut cfg = *config;
    if cfg.gamma.is_none() {
        let wmax = initial.w.max();
        cfg.gamma = Some(if wmax > 0.0 {
            0.5 / wmax
        } else {
            f64::INFINITY
        });
    }

    let t0 = initial.t;
    let mut state = initial.clone();
    for obs in observers.iter_mut() {
        obs.observe(&state);
    }
    let mut out = Vec::with_capacity(marks.len());
    let mut next = marks.iter().peekable();
    if next.peek() == Some(&&0) {
        out.push(state.clone());
        next.next();
    }
    for k in 1..=steps {
        let mut new_state = step(&state, params, &cfg).map_err(|e| SolverError::StepFailed {
            step: k,
            t: state.t,
            source: Box::new(e),
        })?;
        new_state.t = t0 + k as f64 * cfg.dt;
        state = new_state;
        for obs in observers.iter_mut() {
            obs.observe(&state);
        }
        if next.peek() == Some(&&k) {
            out.push(state.clone());
            next.next();
        }
    }
    Ok(out)
}

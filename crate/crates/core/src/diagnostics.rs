//! Conserved and monotone quantities, steady-state prediction, positivity
//! reporters and exponential decay fits.

use thiserror::Error;

use crate::kinetics::ModelParams;
use crate::solver::{Field, SolverError, State, StepObserver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub energy_total: f64,
    pub variance: f64,
    pub n_min: f64,
    pub n_max: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub dist_to_steady: f64,
}

/// `Σ (v_i - mean)² dx`.
fn centered_square_norm(field: &Field, dx: f64) -> f64 {
    let mean = field.mean();
    field
        .values()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        * dx
}

/// Density the distance to steady state is measured against.
#[derive(Debug, Clone, PartialEq)]
pub enum SteadyTarget {
    Constant(f64),
    /// Cell values, e.g. a late state of the same run when the limit is
    /// not constant.
    Profile(Vec<f64>),
}

impl SteadyTarget {
    /// Discrete `L²` distance of `n` to the target.
    pub fn distance(&self, n: &[f64], dx: f64) -> f64 {
        let sq: f64 = match self {
            SteadyTarget::Constant(c) => n.iter().map(|v| (v - c).powi(2)).sum(),
            SteadyTarget::Profile(p) => n.iter().zip(p).map(|(v, c)| (v - c).powi(2)).sum(),
        };
        (sq * dx).sqrt()
    }
}

/// Computes the diagnostics of `state`.
///
/// `prev_w_mean` is the mean of `W` one step earlier (use the current mean on
/// the initial state); it weights the density part of the variance.
pub fn record(
    state: &State,
    params: &ModelParams,
    prev_w_mean: f64,
    target: &SteadyTarget,
) -> DiagnosticsRecord {
    let dx = state.grid.dx();
    let n = state.n.values();
    let w = state.w.values();
    let half_u = 0.5 * params.u();
    let mass = n.iter().sum::<f64>() * dx;
    let energy_total = w
        .iter()
        .zip(n)
        .map(|(w, n)| w - half_u * n * n)
        .sum::<f64>()
        * dx;
    let variance = centered_square_norm(&state.w, dx)
        + params.u() * prev_w_mean * centered_square_norm(&state.n, dx);
    let dist_to_steady = target.distance(n, dx);
    DiagnosticsRecord {
        t: state.t,
        mass,
        energy_total,
        variance,
        n_min: state.n.min(),
        n_max: state.n.max(),
        w_min: state.w.min(),
        w_max: state.w.max(),
        dist_to_steady,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteadyKind {
    Constant,
    Nonconstant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyPrediction {
    pub kind: SteadyKind,
    pub n_inf: f64,
    pub w_inf: f64,
    /// Energy level before clamping at zero.
    pub raw_w_inf: f64,
}

/// Constant steady state compatible with the conserved mass and total energy.
///
/// When the conserved total energy cannot be met with `W ≥ 0` the state is
/// reported as nonconstant with `w_inf = 0`.
pub fn predict_steady(
    n0: &Field,
    w0: &Field,
    params: &ModelParams,
) -> Result<SteadyPrediction, SolverError> {
    if n0.len() != w0.len() || n0.is_empty() {
        return Err(SolverError::InvalidState(format!(
            "fields of length {} and {}",
            n0.len(),
            w0.len()
        )));
    }
    let half_u = 0.5 * params.u();
    let n_inf = n0.mean();
    let total = w0
        .values()
        .iter()
        .zip(n0.values())
        .map(|(w, n)| w - half_u * n * n)
        .sum::<f64>()
        / n0.len() as f64;
    let raw = total + half_u * n_inf * n_inf;
    Ok(if raw >= 0.0 {
        SteadyPrediction {
            kind: SteadyKind::Constant,
            n_inf,
            w_inf: raw,
            raw_w_inf: raw,
        }
    } else {
        SteadyPrediction {
            kind: SteadyKind::Nonconstant,
            n_inf,
            w_inf: 0.0,
            raw_w_inf: raw,
        }
    })
}

/// Outcome of a sufficient condition: `holds` iff `margin > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionCheck {
    pub holds: bool,
    /// Right-hand side minus left-hand side.
    pub margin: f64,
}

/// Largest mobility `max g(s)` over `s ∈ [δ, n_max]`.
fn max_mobility(params: &ModelParams, n_max: f64) -> f64 {
    let lo = params.delta();
    let hi = n_max.max(lo);
    let eta = params.eta();
    let g = |s: f64| s * (1.0 - eta * s);
    if eta > 0.0 {
        let peak = 0.5 / eta;
        if (lo..=hi).contains(&peak) {
            return g(peak);
        }
    }
    g(lo).max(g(hi))
}

/// Sufficient condition for strict positivity of `W` after the next step in
/// one dimension. `prev_prev_w_mean` is the mean of `W` two levels back.
pub fn check_positivity_condition(
    state: &State,
    prev_prev_w_mean: f64,
    params: &ModelParams,
    dt: f64,
) -> Result<ConditionCheck, DiagnosticsError> {
    if params.d() != 1 {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "positivity condition is stated for d = 1, got d = {}",
            params.d()
        )));
    }
    if !(dt > 0.0) {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "dt must be > 0, got {dt}"
        )));
    }
    let dx = state.grid.dx();
    let big_g = max_mobility(params, state.n.max());
    let lhs = big_g / dt * centered_square_norm(&state.w, dx)
        + params.u() * (big_g * prev_prev_w_mean / dt + 0.5) * centered_square_norm(&state.n, dx);
    let margin = state.w.mean() - lhs;
    Ok(ConditionCheck {
        holds: margin > 0.0,
        margin,
    })
}

/// Sufficient condition for the next `W` not to vanish identically:
/// `(U/2) ‖n - n̄‖² < mean W`.
pub fn check_nonvanishing_condition(state: &State, params: &ModelParams) -> ConditionCheck {
    let lhs = 0.5 * params.u() * centered_square_norm(&state.n, state.grid.dx());
    let margin = state.w.mean() - lhs;
    ConditionCheck {
        holds: margin > 0.0,
        margin,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log error = c - rate · t`.
pub fn fit_decay(times: &[f64], errors: &[f64]) -> Result<DecayFit, DiagnosticsError> {
    if times.len() != errors.len() {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "{} times but {} errors",
            times.len(),
            errors.len()
        )));
    }
    if times.len() < 5 {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "need at least 5 samples, got {}",
            times.len()
        )));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(DiagnosticsError::InvalidArgument(format!(
            "errors must be positive and finite, got {e}"
        )));
    }
    let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    if hi / lo < 10.0 {
        return Err(DiagnosticsError::DegenerateFit(format!(
            "errors span only a factor {:.3}",
            hi / lo
        )));
    }
    let logs: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, r_squared) = least_squares(times, &logs)?;
    Ok(DecayFit {
        rate: -slope,
        r_squared,
    })
}

/// Slope and coefficient of determination of the least-squares line.
pub(crate) fn least_squares(x: &[f64], y: &[f64]) -> Result<(f64, f64), DiagnosticsError> {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(DiagnosticsError::DegenerateFit("abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok((slope, r_squared))
}

/// Observer that records diagnostics on every state it sees.
#[derive(Debug, Clone)]
pub struct DiagnosticsRecorder {
    params: ModelParams,
    target: SteadyTarget,
    prev_w_mean: Option<f64>,
    pub records: Vec<DiagnosticsRecord>,
}

impl DiagnosticsRecorder {
    pub fn new(params: ModelParams, target: SteadyTarget) -> Self {
        DiagnosticsRecorder {
            params,
            target,
            prev_w_mean: None,
            records: Vec::new(),
        }
    }
}

impl StepObserver for DiagnosticsRecorder {
    fn observe(&mut self, state: &State) {
        let w_mean = state.w.mean();
        let weight = self.prev_w_mean.unwrap_or(w_mean);
        self.records
            .push(record(state, &self.params, weight, &self.target));
        self.prev_w_mean = Some(w_mean);
    }
}

//! Initial-data presets, sampled at cell centres without smoothing.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::solver::{PeriodicGrid1D, SolverError, State};

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `3/4` on `[1/4, 3/4]`, `1/4` elsewhere.
    Step,
    /// `1/4` on `[0, 1/2)`, `3/4` on `[1/2, 1)`.
    ShiftedStep,
    Constant(f64),
    /// `mean + amplitude · cos(2π · mode · x)`.
    Cosine {
        mean: f64,
        amplitude: f64,
        mode: u32,
    },
    /// Explicit cell values; the grid must match.
    Values(Vec<f64>),
}

impl Profile {
    pub fn sample(&self, grid: &PeriodicGrid1D) -> Result<Vec<f64>, SolverError> {
        let xs = grid.centers();
        Ok(match self {
            Profile::Step => xs
                .iter()
                .map(|&x| {
                    if (0.25..=0.75).contains(&x) {
                        0.75
                    } else {
                        0.25
                    }
                })
                .collect(),
            Profile::ShiftedStep => xs
                .iter()
                .map(|&x| if x < 0.5 { 0.25 } else { 0.75 })
                .collect(),
            Profile::Constant(v) => vec![*v; grid.cells()],
            Profile::Cosine {
                mean,
                amplitude,
                mode,
            } => xs
                .iter()
                .map(|&x| mean + amplitude * (2.0 * PI * *mode as f64 * x).cos())
                .collect(),
            Profile::Values(v) => {
                if v.len() != grid.cells() {
                    return Err(SolverError::InvalidState(format!(
                        "profile has {} values but the grid has {} cells",
                        v.len(),
                        grid.cells()
                    )));
                }
                v.clone()
            }
        })
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Step => f.write_str("step"),
            Profile::ShiftedStep => f.write_str("step2"),
            Profile::Constant(v) => write!(f, "constant({v:?})"),
            Profile::Cosine {
                mean,
                amplitude,
                mode,
            } => write!(f, "cosine({mean:?}, {amplitude:?}, {mode})"),
            Profile::Values(_) => f.write_str("values"),
        }
    }
}

/// Parses `step`, `step2`, `constant(v)`, a bare number, `cosine(amplitude, mode)`
/// (mean 1/2) or `cosine(mean, amplitude, mode)`.
impl FromStr for Profile {
    type Err = SolverError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || SolverError::InvalidConfig(format!("unrecognized profile '{s}'"));
        match s {
            "step" => return Ok(Profile::Step),
            "step2" => return Ok(Profile::ShiftedStep),
            _ => {}
        }
        if let Ok(v) = s.parse::<f64>() {
            return Ok(Profile::Constant(v));
        }
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        let args: Vec<&str> = inner.split(',').map(str::trim).collect();
        let num = |a: &str| a.parse::<f64>().map_err(|_| bad());
        let mode = |a: &str| a.parse::<u32>().map_err(|_| bad());
        match (name.trim(), args.as_slice()) {
            ("constant", [v]) => Ok(Profile::Constant(num(v)?)),
            ("cosine", [amp, m]) => Ok(Profile::Cosine {
                mean: 0.5,
                amplitude: num(amp)?,
                mode: mode(m)?,
            }),
            ("cosine", [mean, amp, m]) => Ok(Profile::Cosine {
                mean: num(mean)?,
                amplitude: num(amp)?,
                mode: mode(m)?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Initial density and energy profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub density: Profile,
    pub energy: Profile,
}

impl InitialCondition {
    pub fn new(density: Profile, energy: Profile) -> Self {
        InitialCondition { density, energy }
    }

    /// Step density with constant energy `w0`, the standard two-level setup.
    pub fn step_with_energy(w0: f64) -> Self {
        InitialCondition::new(Profile::Step, Profile::Constant(w0))
    }

    pub fn state(&self, grid: PeriodicGrid1D) -> Result<State, SolverError> {
        State::new(
            grid,
            self.density.sample(&grid)?,
            self.energy.sample(&grid)?,
        )
    }
}

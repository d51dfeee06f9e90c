//! Grid-refinement studies: observed temporal and spatial convergence orders
//! against a finer reference run.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::least_squares;
use crate::initial::InitialCondition;
use crate::kinetics::ModelParams;
use crate::solver::{run_simulation, step_index, PeriodicGrid1D, SolverConfig, SolverError, State};

/// Errors at or below this level are treated as exact agreement.
pub const DEGENERATE_ERROR: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid study: {0}")]
    InvalidStudy(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Time,
    Space,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Time => "time",
            Axis::Space => "space",
        })
    }
}

/// Which unknown enters the error norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorVariable {
    #[default]
    Density,
    Energy,
}

impl ErrorVariable {
    fn pick<'a>(&self, state: &'a State) -> &'a [f64] {
        match self {
            ErrorVariable::Density => state.n.values(),
            ErrorVariable::Energy => state.w.values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub axis: Axis,
    /// Strictly decreasing.
    pub step_sizes: Vec<f64>,
    pub errors: Vec<f64>,
    /// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})` for successive entries, which
    /// is the base-2 log of the error ratio for halvings. Empty when degenerate.
    pub observed_orders: Vec<f64>,
    /// Least-squares slope of `log e` against `log h`.
    pub fitted_order: Option<f64>,
    /// Set when every error is at round-off level, in which case no orders
    /// are reported.
    pub degenerate: bool,
}

impl ConvergenceReport {
    fn assemble(axis: Axis, step_sizes: Vec<f64>, errors: Vec<f64>) -> Result<Self, HarnessError> {
        let degenerate = errors.iter().any(|&e| e <= DEGENERATE_ERROR);
        let (observed_orders, fitted_order) = if degenerate {
            (Vec::new(), None)
        } else {
            let observed = step_sizes
                .windows(2)
                .zip(errors.windows(2))
                .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
                .collect();
            (observed, fit_order(&step_sizes, &errors)?)
        };
        Ok(ConvergenceReport {
            axis,
            step_sizes,
            errors,
            observed_orders,
            fitted_order,
            degenerate,
        })
    }
}

/// Least-squares slope in log-log coordinates; `None` for fewer than two points.
pub fn fit_order(step_sizes: &[f64], errors: &[f64]) -> Result<Option<f64>, HarnessError> {
    if step_sizes.len() != errors.len() {
        return Err(HarnessError::InvalidStudy(format!(
            "{} step sizes but {} errors",
            step_sizes.len(),
            errors.len()
        )));
    }
    if step_sizes.len() < 2 {
        return Ok(None);
    }
    if step_sizes.iter().chain(errors).any(|v| !(*v > 0.0)) {
        return Err(HarnessError::InvalidStudy(
            "step sizes and errors must be positive".into(),
        ));
    }
    let lh: Vec<f64> = step_sizes.iter().map(|h| h.ln()).collect();
    let le: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, _) =
        least_squares(&lh, &le).map_err(|e| HarnessError::InvalidStudy(e.to_string()))?;
    Ok(Some(slope))
}

/// Averages consecutive blocks of `fine` onto `coarse_cells` cells.
pub fn restrict(fine: &[f64], coarse_cells: usize) -> Result<Vec<f64>, HarnessError> {
    if coarse_cells == 0 || !fine.len().is_multiple_of(coarse_cells) {
        return Err(HarnessError::InvalidStudy(format!(
            "{coarse_cells} cells do not nest in {} cells",
            fine.len()
        )));
    }
    let ratio = fine.len() / coarse_cells;
    Ok(fine
        .chunks(ratio)
        .map(|c| c.iter().sum::<f64>() / ratio as f64)
        .collect())
}

fn l2_diff(a: &[f64], b: &[f64], dx: f64) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * dx).sqrt()
}

fn final_state(
    initial: &State,
    params: &ModelParams,
    config: &SolverConfig,
) -> Result<State, HarnessError> {
    let states = run_simulation(initial, params, config, &[], &mut [])?;
    Ok(states
        .into_iter()
        .last()
        .expect("trajectory always holds the final state"))
}

/// Spatial study: every grid in `grids` and the reference grid `ref_cells`
/// are stepped to `base.t_final` with `base.dt`; the error is the discrete
/// `L²` distance at the final time between the coarse solution and the
/// reference averaged onto the coarse cells.
pub fn spatial_study(
    base: &SolverConfig,
    params: &ModelParams,
    initial: &InitialCondition,
    grids: &[usize],
    ref_cells: usize,
    variable: ErrorVariable,
) -> Result<ConvergenceReport, HarnessError> {
    if grids.is_empty() {
        return Err(HarnessError::InvalidStudy("no grids given".into()));
    }
    if grids.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HarnessError::InvalidStudy(
            "grids must be strictly increasing".into(),
        ));
    }
    for &cells in grids {
        if cells >= ref_cells || !ref_cells.is_multiple_of(cells) {
            return Err(HarnessError::InvalidStudy(format!(
                "grid {cells} is not strictly nested in the reference grid {ref_cells}"
            )));
        }
    }
    base.validate()?;

    let run = |cells: usize| -> Result<State, HarnessError> {
        let state = initial.state(PeriodicGrid1D::new(cells)?)?;
        final_state(&state, params, base)
    };
    let (reference, coarse) = rayon::join(
        || run(ref_cells),
        || grids.par_iter().map(|&c| run(c)).collect::<Vec<_>>(),
    );
    let reference = reference?;
    let fine = variable.pick(&reference);

    let mut errors = Vec::with_capacity(grids.len());
    for (result, &cells) in coarse.into_iter().zip(grids) {
        let state = result?;
        let restricted = restrict(fine, cells)?;
        errors.push(l2_diff(variable.pick(&state), &restricted, state.grid.dx()));
    }
    let step_sizes = grids.iter().map(|&c| 1.0 / c as f64).collect();
    ConvergenceReport::assemble(Axis::Space, step_sizes, errors)
}

/// Observer keeping copies of the chosen variable at selected step indices.
struct Sampler<'a> {
    wanted: &'a BTreeMap<usize, ()>,
    variable: ErrorVariable,
    step: usize,
    kept: BTreeMap<usize, Vec<f64>>,
}

impl crate::solver::StepObserver for Sampler<'_> {
    fn observe(&mut self, state: &State) {
        if self.wanted.contains_key(&self.step) {
            self.kept
                .insert(self.step, self.variable.pick(state).to_vec());
        }
        self.step += 1;
    }
}

/// Temporal study on the grid of `cells` cells. Every `dt` must be an
/// integer multiple of `ref_dt`, so the reference is available exactly at
/// each coarse time level. The error is
/// `sqrt(Σ_k dt Σ_i dx (u_i^k - u_ref(t_k))²)` over all steps `k ≥ 1`.
pub fn temporal_study(
    base: &SolverConfig,
    params: &ModelParams,
    initial: &InitialCondition,
    cells: usize,
    dts: &[f64],
    ref_dt: f64,
    variable: ErrorVariable,
) -> Result<ConvergenceReport, HarnessError> {
    if dts.is_empty() {
        return Err(HarnessError::InvalidStudy("no time steps given".into()));
    }
    if dts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(HarnessError::InvalidStudy(
            "time steps must be strictly decreasing".into(),
        ));
    }
    let smallest = dts[dts.len() - 1];
    if !(ref_dt > 0.0 && ref_dt < smallest) {
        return Err(HarnessError::InvalidStudy(format!(
            "reference step {ref_dt} must be positive and below {smallest}"
        )));
    }
    let grid = PeriodicGrid1D::new(cells)?;
    let initial = initial.state(grid)?;

    let mut ratios = Vec::with_capacity(dts.len());
    let mut wanted = BTreeMap::new();
    let ref_config = SolverConfig {
        dt: ref_dt,
        ..*base
    };
    ref_config.validate()?;
    let ref_steps = ref_config.steps()?;
    for &dt in dts {
        let ratio = step_index(dt, ref_dt).map_err(|_| {
            HarnessError::InvalidStudy(format!("dt = {dt} is not a multiple of {ref_dt}"))
        })?;
        let config = SolverConfig { dt, ..*base };
        let steps = config.steps()?;
        if steps * ratio != ref_steps {
            return Err(HarnessError::InvalidStudy(format!(
                "dt = {dt} does not reach t_final = {} on the reference time grid",
                base.t_final
            )));
        }
        for k in 1..=steps {
            wanted.insert(k * ratio, ());
        }
        ratios.push(ratio);
    }

    let run_ref = || -> Result<BTreeMap<usize, Vec<f64>>, HarnessError> {
        let mut sampler = Sampler {
            wanted: &wanted,
            variable,
            step: 0,
            kept: BTreeMap::new(),
        };
        run_simulation(&initial, params, &ref_config, &[], &mut [&mut sampler])?;
        Ok(sampler.kept)
    };
    let run_coarse = |dt: f64| -> Result<Vec<Vec<f64>>, HarnessError> {
        let config = SolverConfig { dt, ..*base };
        let mut levels = Vec::new();
        let mut keep = |s: &State| levels.push(variable.pick(s).to_vec());
        run_simulation(&initial, params, &config, &[], &mut [&mut keep])?;
        Ok(levels)
    };
    let (reference, coarse) = rayon::join(run_ref, || {
        dts.par_iter().map(|&dt| run_coarse(dt)).collect::<Vec<_>>()
    });
    let reference = reference?;

    let dx = grid.dx();
    let mut errors = Vec::with_capacity(dts.len());
    for ((result, &dt), &ratio) in coarse.into_iter().zip(dts).zip(&ratios) {
        let levels = result?;
        let mut sum = 0.0;
        for (k, level) in levels.iter().enumerate().skip(1) {
            let r = &reference[&(k * ratio)];
            sum += dt * l2_diff(level, r, dx).powi(2);
        }
        errors.push(sum.sqrt());
    }
    ConvergenceReport::assemble(Axis::Time, dts.to_vec(), errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::Profile;

    fn params() -> ModelParams {
        ModelParams::new(1, 1.0 / 2f64.sqrt(), 10.0, 1.0, 1.0, 0.01).unwrap()
    }

    #[test]
    fn restriction_preserves_mass() {
        let fine: Vec<f64> = (0..120)
            .map(|i| ((i * 37) % 11) as f64 * 0.1 + 0.3)
            .collect();
        let coarse = restrict(&fine, 30).unwrap();
        let sf: f64 = fine.iter().sum::<f64>() / 120.0;
        let sc: f64 = coarse.iter().sum::<f64>() / 30.0;
        assert!((sf - sc).abs() < 1e-14);
        assert!(restrict(&fine, 7).is_err());
    }

    #[test]
    fn fit_order_of_power_law() {
        let h = [0.1, 0.05, 0.025, 0.0125];
        let e: Vec<f64> = h.iter().map(|x| 3.0 * x * x).collect();
        assert!((fit_order(&h, &e).unwrap().unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fit_order(&h[..1], &e[..1]).unwrap(), None);
    }

    #[test]
    fn report_orders_are_log_ratios() {
        let h = vec![0.4, 0.2, 0.1];
        let e = vec![0.8, 0.4, 0.2];
        let r = ConvergenceReport::assemble(Axis::Time, h, e).unwrap();
        assert!(r.observed_orders.iter().all(|o| (o - 1.0).abs() < 1e-12));
        assert!((r.fitted_order.unwrap() - 1.0).abs() < 1e-12);
        assert!(!r.degenerate);
    }

    #[test]
    fn spatial_study_rejects_bad_grids() {
        let ic = InitialCondition::step_with_energy(1.0);
        let cfg = SolverConfig {
            dt: 1e-5,
            t_final: 1e-5,
            ..SolverConfig::default()
        };
        let p = params();
        let v = ErrorVariable::Density;
        assert!(spatial_study(&cfg, &p, &ic, &[8, 16], 16, v).is_err());
        assert!(spatial_study(&cfg, &p, &ic, &[12, 16], 32, v).is_err());
        assert!(spatial_study(&cfg, &p, &ic, &[16, 8], 32, v).is_err());
        assert!(spatial_study(&cfg, &p, &ic, &[], 32, v).is_err());
    }

    #[test]
    fn temporal_study_rejects_bad_steps() {
        let ic = InitialCondition::step_with_energy(1.0);
        let cfg = SolverConfig {
            t_final: 0.01,
            ..SolverConfig::default()
        };
        let p = params();
        let v = ErrorVariable::Density;
        assert!(temporal_study(&cfg, &p, &ic, 8, &[1e-3, 5e-4], 5e-4, v).is_err());
        assert!(temporal_study(&cfg, &p, &ic, 8, &[5e-4, 1e-3], 1e-4, v).is_err());
        assert!(temporal_study(&cfg, &p, &ic, 8, &[1e-3, 3e-4], 1e-4, v).is_err());
    }

    #[test]
    fn constant_state_is_degenerate() {
        let ic = InitialCondition::new(Profile::Constant(0.4), Profile::Constant(0.6));
        let cfg = SolverConfig {
            t_final: 0.01,
            ..SolverConfig::default()
        };
        let r = temporal_study(
            &cfg,
            &params(),
            &ic,
            16,
            &[2e-3, 1e-3],
            5e-4,
            ErrorVariable::Density,
        )
        .unwrap();
        assert!(r.degenerate);
        assert!(r.errors.iter().all(|&e| e == 0.0));
        assert_eq!(r.fitted_order, None);
    }

    #[test]
    fn studies_are_deterministic() {
        let ic = InitialCondition::new(
            Profile::Cosine {
                mean: 0.5,
                amplitude: 0.1,
                mode: 1,
            },
            Profile::Constant(1.0),
        );
        let cfg = SolverConfig {
            dt: 1e-4,
            t_final: 2e-3,
            ..SolverConfig::default()
        };
        let p = params();
        let a = spatial_study(&cfg, &p, &ic, &[8, 16], 64, ErrorVariable::Energy).unwrap();
        let b = spatial_study(&cfg, &p, &ic, &[8, 16], 64, ErrorVariable::Energy).unwrap();
        assert_eq!(a, b);
        let a = temporal_study(
            &cfg,
            &p,
            &ic,
            16,
            &[4e-4, 2e-4],
            1e-4,
            ErrorVariable::Density,
        )
        .unwrap();
        let b = temporal_study(
            &cfg,
            &p,
            &ic,
            16,
            &[4e-4, 2e-4],
            1e-4,
            ErrorVariable::Density,
        )
        .unwrap();
        assert_eq!(a, b);
    }
}

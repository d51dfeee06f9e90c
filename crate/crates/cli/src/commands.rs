//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::Path;

use optlattice::diagnostics::{
    predict_steady, DiagnosticsRecord, DiagnosticsRecorder, SteadyKind, SteadyTarget,
};
use optlattice::harness::{spatial_study, temporal_study, Axis, ConvergenceReport};
use optlattice::inversion::{invert_moments, InversionSettings};
use optlattice::kinetics::{
    appendix_closed_forms, band_integrals_quadrature, moments, MomentPair, Multipliers,
    QuadratureSpec,
};
use optlattice::solver::{run_simulation, PeriodicGrid1D, Scheme, State};

use crate::config::RunConfig;
use crate::output::{fmt_float, write_atomic, CsvTable};
use crate::plot::{emit_svg_plot, PlotOptions, Series};
use crate::CliError;

pub const SNAPSHOT_HEADER: [&str; 4] = ["x", "n", "W", "W_tot"];
pub const TIMESERIES_HEADER: [&str; 9] = [
    "t",
    "mass",
    "energy_total",
    "variance",
    "n_min",
    "n_max",
    "W_min",
    "W_max",
    "dist_to_steady",
];
pub const CONVERGENCE_HEADER: [&str; 3] = ["h", "error", "observed_order"];

/// Per-step tolerance on relative drift of conserved quantities.
const CONSERVATION_TOL: f64 = 1e-12;
/// Per-step tolerance on the monotone quantities of the implicit scheme.
const MONOTONE_TOL: f64 = 1e-9;
/// Tolerance on the band-integral identities.
const INTEGRAL_TOL: f64 = 1e-10;

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{}.csv", fmt_float(t))
}

fn snapshot_csv(state: &State, cfg: &RunConfig) -> Result<Vec<u8>, CliError> {
    let mut table = CsvTable::new(&SNAPSHOT_HEADER)?;
    let total = state.total_energy(&cfg.model);
    let columns = state.n.values().iter().zip(state.w.values()).zip(&total);
    for (i, ((&n, &w), &w_tot)) in columns.enumerate() {
        table.numbers(&[state.grid.center(i), n, w, w_tot])?;
    }
    Ok(table.finish()?)
}

fn timeseries_csv(records: &[DiagnosticsRecord], every: usize) -> Result<Vec<u8>, CliError> {
    let mut table = CsvTable::new(&TIMESERIES_HEADER)?;
    let last = records.len().saturating_sub(1);
    for (k, r) in records.iter().enumerate() {
        if k % every == 0 || k == last {
            table.numbers(&[
                r.t,
                r.mass,
                r.energy_total,
                r.variance,
                r.n_min,
                r.n_max,
                r.w_min,
                r.w_max,
                r.dist_to_steady,
            ])?;
        }
    }
    Ok(table.finish()?)
}

/// Conservation or monotonicity violations along a recorded trajectory.
fn trajectory_problems(records: &[DiagnosticsRecord], scheme: Scheme) -> Vec<String> {
    let mut worst_mass: f64 = 0.0;
    let mut worst_energy: f64 = 0.0;
    let mut energy_drop: f64 = 0.0;
    let mut variance_rise: f64 = 0.0;
    for w in records.windows(2) {
        worst_mass = worst_mass.max(((w[1].mass - w[0].mass) / w[0].mass).abs());
        let scale = w[0].energy_total.abs().max(f64::MIN_POSITIVE);
        worst_energy = worst_energy.max(((w[1].energy_total - w[0].energy_total) / scale).abs());
        energy_drop = energy_drop.max(w[0].energy_total - w[1].energy_total);
        variance_rise = variance_rise.max(w[1].variance - w[0].variance);
    }
    let mut problems = Vec::new();
    if worst_mass >= CONSERVATION_TOL {
        problems.push(format!("mass drift {worst_mass:e} per step"));
    }
    match scheme {
        Scheme::SemiImplicit if worst_energy >= CONSERVATION_TOL => {
            problems.push(format!("total energy drift {worst_energy:e} per step"));
        }
        Scheme::ImplicitPicard => {
            if energy_drop > MONOTONE_TOL {
                problems.push(format!("total energy decreased by {energy_drop:e}"));
            }
            if variance_rise > MONOTONE_TOL {
                problems.push(format!("variance increased by {variance_rise:e}"));
            }
        }
        _ => {}
    }
    problems
}

pub fn simulate(cfg: &RunConfig, check: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let params = cfg.model;
    let grid = PeriodicGrid1D::new(cfg.cells).map_err(solver_err)?;
    let initial = cfg.initial.resolve()?.state(grid).map_err(solver_err)?;
    let prediction = predict_steady(&initial.n, &initial.w, &params).map_err(solver_err)?;
    let target = match prediction.kind {
        SteadyKind::Constant => SteadyTarget::Constant(prediction.n_inf),
        // No closed form: measure against the end state of the same run.
        SteadyKind::Nonconstant => {
            let fin = run_simulation(&initial, &params, &cfg.solver, &[], &mut [])
                .map_err(solver_err)?
                .pop()
                .expect("trajectory holds the final state");
            SteadyTarget::Profile(fin.n.into_values())
        }
    };

    let mut recorder = DiagnosticsRecorder::new(params, target);
    let states = run_simulation(
        &initial,
        &params,
        &cfg.solver,
        &cfg.output.times,
        &mut [&mut recorder],
    )
    .map_err(solver_err)?;

    let mut labels = cfg.output.times.clone();
    let final_step = cfg.solver.steps().map_err(solver_err)?;
    let last_mark = labels.last().map(|&t| (t / cfg.solver.dt).round() as usize);
    if last_mark != Some(final_step) {
        labels.push(cfg.solver.t_final);
    }
    debug_assert_eq!(labels.len(), states.len());

    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    for (t, state) in labels.iter().zip(&states) {
        write_atomic(&dir.join(snapshot_name(*t)), &snapshot_csv(state, cfg)?)?;
    }
    let records = &recorder.records;
    write_atomic(
        &dir.join("timeseries.csv"),
        &timeseries_csv(records, cfg.output.every)?,
    )?;
    let fin = states.last().expect("trajectory holds the final state");
    if cfg.output.plot {
        plot_simulation(dir, fin, records)?;
    }

    writeln!(
        out,
        "simulate: scheme={} steps={final_step} t={} n=[{}, {}] W=[{}, {}] snapshots={}",
        cfg.solver.scheme,
        fmt_float(cfg.solver.t_final),
        fmt_float(fin.n.min()),
        fmt_float(fin.n.max()),
        fmt_float(fin.w.min()),
        fmt_float(fin.w.max()),
        states.len()
    )?;
    if check {
        let problems = trajectory_problems(records, cfg.solver.scheme);
        if !problems.is_empty() {
            return Err(CliError::Check(problems.join("; ")));
        }
        writeln!(out, "check: passed")?;
    }
    Ok(())
}

fn plot_simulation(dir: &Path, fin: &State, records: &[DiagnosticsRecord]) -> Result<(), CliError> {
    let x = fin.grid.centers();
    let profile = |v: &[f64]| x.iter().copied().zip(v.iter().copied()).collect();
    emit_svg_plot(
        &[
            Series::new("n", profile(fin.n.values())),
            Series::new("W", profile(fin.w.values())),
        ],
        &PlotOptions {
            title: format!("state at t = {}", fmt_float(fin.t)),
            x_label: "x".into(),
            y_label: "value".into(),
            log_y: false,
        },
        &dir.join("snapshot_final.svg"),
    )?;
    let dist: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.dist_to_steady)).collect();
    let log_y = dist.iter().all(|p| p.1 > 0.0);
    emit_svg_plot(
        &[Series::new("distance to steady state", dist)],
        &PlotOptions {
            title: "relaxation".into(),
            x_label: "t".into(),
            y_label: "distance".into(),
            log_y,
        },
        &dir.join("timeseries.svg"),
    )?;
    Ok(())
}

fn convergence_csv(report: &ConvergenceReport) -> Result<Vec<u8>, CliError> {
    let mut table = CsvTable::new(&CONVERGENCE_HEADER)?;
    for (i, (&h, &e)) in report.step_sizes.iter().zip(&report.errors).enumerate() {
        let order = if i == 0 {
            String::new()
        } else {
            fmt_float(report.observed_orders[i - 1])
        };
        table.row([fmt_float(h), fmt_float(e), order])?;
    }
    Ok(table.finish()?)
}

pub fn convergence(cfg: &RunConfig, check: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let s = &cfg.study;
    let initial = cfg.initial.resolve()?;
    let report = match s.axis {
        Axis::Space => spatial_study(
            &cfg.solver,
            &cfg.model,
            &initial,
            &s.grids,
            s.ref_cells,
            s.variable,
        ),
        Axis::Time => temporal_study(
            &cfg.solver,
            &cfg.model,
            &initial,
            cfg.cells,
            &s.dts,
            s.ref_dt,
            s.variable,
        ),
    }
    .map_err(solver_err)?;

    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("convergence.csv"), &convergence_csv(&report)?)?;
    if cfg.output.plot && !report.degenerate {
        emit_svg_plot(
            &[Series::new(
                "error",
                report
                    .step_sizes
                    .iter()
                    .map(|h| h.log10())
                    .zip(report.errors.iter().copied())
                    .collect(),
            )],
            &PlotOptions {
                title: format!("{} convergence", report.axis),
                x_label: "log10 h".into(),
                y_label: "error".into(),
                log_y: true,
            },
            &dir.join("convergence.svg"),
        )?;
    }

    let fitted = report.fitted_order.map_or("none".to_string(), fmt_float);
    writeln!(
        out,
        "convergence: axis={} runs={} fitted_order={fitted}{}",
        report.axis,
        report.errors.len(),
        if report.degenerate { " degenerate" } else { "" }
    )?;
    if check {
        let expected = s.expected();
        match report.fitted_order {
            Some(p) if (p - expected).abs() <= s.tolerance && !report.degenerate => {
                writeln!(out, "check: passed")?;
            }
            Some(p) => {
                return Err(CliError::Check(format!(
                    "fitted order {} outside {expected} +/- {}",
                    fmt_float(p),
                    fmt_float(s.tolerance)
                )))
            }
            None => return Err(CliError::Check("no order could be fitted".into())),
        }
    }
    Ok(())
}

pub fn moments_cmd(cfg: &RunConfig, check: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = cfg.kinetics.quadrature(&cfg.model)?;
    let lam = Multipliers::new(cfg.kinetics.lambda0, cfg.kinetics.lambda1);
    let m = moments(lam, &cfg.model, &spec);
    let mut table = CsvTable::new(&["lambda0", "lambda1", "n", "E"])?;
    table.numbers(&[lam.lambda0, lam.lambda1, m.n, m.e])?;
    out.write_all(&table.finish()?)?;
    if check {
        m.check_admissible(&cfg.model)
            .map_err(|e| CliError::Check(e.to_string()))?;
    }
    Ok(())
}

pub fn invert_cmd(cfg: &RunConfig, check: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = cfg.kinetics.quadrature(&cfg.model)?;
    let target = MomentPair::new(cfg.kinetics.n, cfg.kinetics.energy);
    let lam = invert_moments(target, &cfg.model, &spec, &InversionSettings::default())
        .map_err(solver_err)?;
    let back = moments(lam, &cfg.model, &spec);
    let residual = (back.n - target.n).abs().max((back.e - target.e).abs());
    let mut table = CsvTable::new(&["n", "E", "lambda0", "lambda1", "residual"])?;
    table.numbers(&[target.n, target.e, lam.lambda0, lam.lambda1, residual])?;
    out.write_all(&table.finish()?)?;
    if check && residual > 1e-10 * (1.0 + target.n.abs() + target.e.abs()) {
        return Err(CliError::Check(format!("moment residual {residual:e}")));
    }
    Ok(())
}

pub fn verify_integrals(cfg: &RunConfig, check: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = QuadratureSpec::new(cfg.kinetics.points.unwrap_or(64), cfg.model.d())
        .map_err(solver_err)?;
    let quad = band_integrals_quadrature(&cfg.model, &spec);
    let exact = appendix_closed_forms(&cfg.model);
    let dev = quad.deviations(&exact);
    let rows = [
        ("eps2", quad.eps2, exact.eps2, dev[0]),
        ("uu", quad.uu[(0, 0)], exact.uu, dev[1]),
        ("eps_uu", quad.eps_uu[(0, 0)], exact.eps_uu, dev[2]),
        ("eps2_uu", quad.eps2_uu[(0, 0)], exact.eps2_uu, dev[3]),
    ];
    let mut table = CsvTable::new(&["integral", "quadrature", "closed_form", "abs_diff"])?;
    let mut worst: f64 = 0.0;
    for (name, q, c, diff) in rows {
        table.row([
            name.to_string(),
            fmt_float(q),
            fmt_float(c),
            fmt_float(diff),
        ])?;
        worst = worst.max(diff);
    }
    out.write_all(&table.finish()?)?;
    if check && !(worst < INTEGRAL_TOL) {
        return Err(CliError::Check(format!("max deviation {worst:e}")));
    }
    Ok(())
}

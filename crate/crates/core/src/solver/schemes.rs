use super::tridiag::cyclic_tridiagonal_solve;
use super::{Scheme, SolverConfig, SolverError, State, INVARIANT_SLACK};
use crate::kinetics::ModelParams;

/// Mobility `g(n) = n (1 - η n)`.
pub fn g_mobility(n: f64, params: &ModelParams) -> f64 {
    n * (1.0 - params.eta() * n)
}

fn truncate_density(n: f64, params: &ModelParams) -> f64 {
    n.min(params.density_ceiling()).max(params.delta())
}

/// `g` evaluated at the truncated density `[n]_δ`; strictly positive.
fn g_truncated(n: f64, params: &ModelParams) -> f64 {
    g_mobility(truncate_density(n, params), params)
}

fn truncate_energy(w: f64, ceiling: f64) -> f64 {
    w.min(ceiling).max(0.0)
}

/// Face value between cell `i` and `i+1` by arithmetic averaging.
fn face_average(cell: &[f64]) -> Vec<f64> {
    let n = cell.len();
    (0..n)
        .map(|i| 0.5 * (cell[i] + cell[(i + 1) % n]))
        .collect()
}

/// `dx² ∂ₓ(a ∂ₓu)` at every cell for face coefficients `face[i]` at `i+1/2`.
fn apply_diffusion(face: &[f64], u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let flux: Vec<f64> = (0..n).map(|i| face[i] * (u[(i + 1) % n] - u[i])).collect();
    (0..n).map(|i| flux[i] - flux[(i + n - 1) % n]).collect()
}

/// Solves `(I - r D + diag(sink)) x = rhs` where `D u = apply_diffusion(face, u)`.
fn solve_diffusion(
    face: &[f64],
    r: f64,
    sink: Option<&[f64]>,
    rhs: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let n = rhs.len();
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for i in 0..n {
        let east = face[i];
        let west = face[(i + n - 1) % n];
        sub[i] = -r * west;
        sup[i] = -r * east;
        diag[i] = 1.0 + r * (east + west) + sink.map_or(0.0, |s| s[i]);
    }
    Ok(cyclic_tridiagonal_solve(&sub, &diag, &sup, rhs)?)
}

/// Implicit step `u_new = u + r D u_new - sink · u_new`, solved for the increment.
fn implicit_diffusion(
    face: &[f64],
    r: f64,
    u: &[f64],
    sink: Option<&[f64]>,
) -> Result<Vec<f64>, SolverError> {
    let mut rhs = apply_diffusion(face, u);
    for v in rhs.iter_mut() {
        *v *= r;
    }
    if let Some(sink) = sink {
        for ((v, s), x) in rhs.iter_mut().zip(sink).zip(u) {
            *v -= s * x;
        }
    }
    let inc = solve_diffusion(face, r, sink, &rhs)?;
    Ok(u.iter().zip(&inc).map(|(a, b)| a + b).collect())
}

/// `B(z) = z / (e^z - 1)`, with `B(0) = 1`.
fn bernoulli(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z / z.exp_m1()
    }
}

fn finish(
    prev: &State,
    n: Vec<f64>,
    w: Vec<f64>,
    dt: f64,
    params: &ModelParams,
) -> Result<State, SolverError> {
    let next = State {
        grid: prev.grid,
        n: super::Field::new(n)?,
        w: super::Field::new(w)?,
        step: prev.step + 1,
        t: prev.t + dt,
    };
    next.check_invariants(params, INVARIANT_SLACK)?;
    Ok(next)
}

/// Dispatches on `config.scheme`.
pub fn step(
    state: &State,
    params: &ModelParams,
    config: &SolverConfig,
) -> Result<State, SolverError> {
    match config.scheme {
        Scheme::SemiImplicit => step_semi_implicit(state, params, config),
        Scheme::ImplicitPicard => step_implicit_picard(state, params, config),
        Scheme::ZerothOrder => step_zeroth_order(state, params, config),
    }
}

/// Conservative semi-implicit step.
///
/// Stage 1 solves the density equation with the coefficient `W/g(n)` frozen
/// at the previous level. Stage 2 solves for `W_tot` with the flux
/// `κ/g(n) ∂ₓW - U W/(1-ηn) ∂ₓn` (`κ = (2d-1)/(2d)`) evaluated at the new
/// density, where `W = W_tot + (U/2) n²` is substituted so that `W` enters
/// implicitly. All cell coefficients are averaged arithmetically onto faces;
/// the face value of `W` in the drift is Scharfetter-Gummel weighted.
pub fn step_semi_implicit(
    state: &State,
    params: &ModelParams,
    config: &SolverConfig,
) -> Result<State, SolverError> {
    let dx = state.grid.dx();
    let r = config.dt / (dx * dx);
    let n_old = state.n.values();
    let w_old = state.w.values();
    let cells = n_old.len();

    let a: Vec<f64> = n_old
        .iter()
        .zip(w_old)
        .map(|(&n, &w)| w / g_mobility(n, params))
        .collect();
    let n_new = implicit_diffusion(&face_average(&a), r, n_old, None)?;

    let u = params.u();
    let eta = params.eta();
    let kappa = params.energy_diffusion_factor();
    let b: Vec<f64> = n_new
        .iter()
        .map(|&n| kappa / g_mobility(n, params))
        .collect();
    let c: Vec<f64> = n_new.iter().map(|&n| u / (1.0 - eta * n)).collect();
    let b_face = face_average(&b);
    let c_face = face_average(&c);
    // Face flux (times dx²) is upper W_{i+1} - lower W_i, exponentially fitted
    // in the drift so that the operator stays monotone at large cell Péclet
    // numbers. For small Péclet numbers it is the central flux.
    let mut upper = vec![0.0; cells];
    let mut lower = vec![0.0; cells];
    for i in 0..cells {
        let peclet = c_face[i] * (n_new[(i + 1) % cells] - n_new[i]) / b_face[i];
        upper[i] = b_face[i] * bernoulli(peclet);
        lower[i] = b_face[i] * bernoulli(-peclet);
    }

    // W at the old total energy with the new density, i.e. W_new for a zero increment.
    let half_u = 0.5 * u;
    let w_guess: Vec<f64> = (0..cells)
        .map(|i| w_old[i] + half_u * (n_new[i] * n_new[i] - n_old[i] * n_old[i]))
        .collect();
    let flux: Vec<f64> = (0..cells)
        .map(|i| upper[i] * w_guess[(i + 1) % cells] - lower[i] * w_guess[i])
        .collect();
    let rhs: Vec<f64> = (0..cells)
        .map(|i| r * (flux[i] - flux[(i + cells - 1) % cells]))
        .collect();

    let mut sub = vec![0.0; cells];
    let mut diag = vec![0.0; cells];
    let mut sup = vec![0.0; cells];
    for i in 0..cells {
        let west = (i + cells - 1) % cells;
        sub[i] = -r * lower[west];
        sup[i] = -r * upper[i];
        diag[i] = 1.0 + r * (lower[i] + upper[west]);
    }
    let inc = cyclic_tridiagonal_solve(&sub, &diag, &sup, &rhs)?;
    let w_new: Vec<f64> = w_guess.iter().zip(&inc).map(|(w, d)| w + d).collect();

    finish(state, n_new, w_new, config.dt, params)
}

/// Implicit Euler step of the truncated and regularized system, solved by
/// Picard iteration on the lagged coefficients.
///
/// Each sweep solves the density equation with coefficient
/// `([W*]_γ + ε)/g_δ(n*)` and then the energy equation with diffusion
/// `κ/g_δ(n*)` and source `-U [W*]_γ/g_δ(n*) |∂ₓn|²/(1+α|∂ₓn|²)` using the
/// fresh density. `|∂ₓn|²` at a cell is the mean of the two squared face
/// differences.
pub fn step_implicit_picard(
    state: &State,
    params: &ModelParams,
    config: &SolverConfig,
) -> Result<State, SolverError> {
    let dx = state.grid.dx();
    let dt = config.dt;
    let r = dt / (dx * dx);
    let n_old = state.n.values();
    let w_old = state.w.values();
    let cells = n_old.len();
    let wmax = state.w.max();
    let gamma = match config.gamma {
        Some(g) => {
            if wmax > 0.0 && g > 1.0 / wmax * (1.0 + 1e-12) {
                return Err(SolverError::InvalidConfig(format!(
                    "gamma = {g} exceeds 1/max W = {}",
                    1.0 / wmax
                )));
            }
            g
        }
        None if wmax > 0.0 => 0.5 / wmax,
        None => f64::INFINITY,
    };
    let ceiling = 1.0 / gamma;
    let u = params.u();
    let kappa = params.energy_diffusion_factor();

    let mut n_star = n_old.to_vec();
    let mut w_star = w_old.to_vec();
    let mut change = f64::INFINITY;
    for _ in 0..config.picard_max {
        let g_star: Vec<f64> = n_star.iter().map(|&n| g_truncated(n, params)).collect();
        let w_trunc: Vec<f64> = w_star
            .iter()
            .map(|&w| truncate_energy(w, ceiling))
            .collect();

        let a: Vec<f64> = (0..cells)
            .map(|i| (w_trunc[i] + config.eps_reg) / g_star[i])
            .collect();
        let n_new = implicit_diffusion(&face_average(&a), r, n_old, None)?;

        // The source is written as a rate times ([W*]_γ / W*) W_new and taken
        // into the matrix. This has the same fixed point and keeps W_new
        // nonnegative.
        let sink: Vec<f64> = (0..cells)
            .map(|i| {
                let east = n_new[(i + 1) % cells] - n_new[i];
                let west = n_new[i] - n_new[(i + cells - 1) % cells];
                let grad2 = (east * east + west * west) / (2.0 * dx * dx);
                let weight = if w_star[i] > 0.0 {
                    w_trunc[i] / w_star[i]
                } else {
                    0.0
                };
                dt * u * weight / g_star[i] * grad2 / (1.0 + config.alpha * grad2)
            })
            .collect();
        let b: Vec<f64> = g_star.iter().map(|g| kappa / g).collect();
        let w_new = implicit_diffusion(&face_average(&b), r, w_old, Some(&sink))?;

        let sq: f64 = (0..cells)
            .map(|i| (n_new[i] - n_star[i]).powi(2) + (w_new[i] - w_star[i]).powi(2))
            .sum();
        change = (sq * dx).sqrt();
        n_star = n_new;
        w_star = w_new;
        if change < config.picard_tol {
            return finish(state, n_star, w_star, dt, params);
        }
    }
    Err(SolverError::PicardNoConvergence {
        iterations: config.picard_max,
        residual: change,
    })
}

/// Semi-implicit step of `∂ₜn = ∂ₓ(τ₀ ∂ₓn / g(n))`; `W` is carried along.
pub fn step_zeroth_order(
    state: &State,
    params: &ModelParams,
    config: &SolverConfig,
) -> Result<State, SolverError> {
    let dx = state.grid.dx();
    let r = config.dt / (dx * dx);
    let n_old = state.n.values();
    let a: Vec<f64> = n_old
        .iter()
        .map(|&n| params.tau0() / g_mobility(n, params))
        .collect();
    let n_new = implicit_diffusion(&face_average(&a), r, n_old, None)?;
    finish(state, n_new, state.w.values().to_vec(), config.dt, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::PeriodicGrid1D;
    use std::f64::consts::PI;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    fn config(scheme: Scheme, dt: f64) -> SolverConfig {
        SolverConfig {
            dt,
            scheme,
            ..SolverConfig::default()
        }
    }

    fn smooth_state(cells: usize) -> State {
        let grid = PeriodicGrid1D::new(cells).unwrap();
        let n = grid
            .centers()
            .iter()
            .map(|x| 0.5 + 0.2 * (2.0 * PI * x).cos())
            .collect();
        let w = grid
            .centers()
            .iter()
            .map(|x| 0.8 + 0.3 * (4.0 * PI * x).cos())
            .collect();
        State::new(grid, n, w).unwrap()
    }

    fn step_state(w0: f64) -> State {
        let grid = PeriodicGrid1D::new(100).unwrap();
        let n = grid
            .centers()
            .iter()
            .map(|&x| {
                if (0.25..=0.75).contains(&x) {
                    0.75
                } else {
                    0.25
                }
            })
            .collect();
        State::new(grid, n, vec![w0; 100]).unwrap()
    }

    fn sum(v: &[f64]) -> f64 {
        v.iter().sum()
    }

    fn l2(a: &State, b: &State) -> f64 {
        let sq: f64 =
            a.n.values()
                .iter()
                .zip(b.n.values())
                .chain(a.w.values().iter().zip(b.w.values()))
                .map(|(x, y)| (x - y).powi(2))
                .sum();
        (sq * a.grid.dx()).sqrt()
    }

    const ALL: [Scheme; 3] = [
        Scheme::SemiImplicit,
        Scheme::ImplicitPicard,
        Scheme::ZerothOrder,
    ];

    #[test]
    fn constant_state_is_fixed() {
        let grid = PeriodicGrid1D::new(32).unwrap();
        let s = State::new(grid, vec![0.5; 32], vec![0.7; 32]).unwrap();
        for scheme in ALL {
            for dt in [1e-6, 1e-3, 1.0] {
                let next = step(&s, &params(), &config(scheme, dt)).unwrap();
                assert_eq!(next.n, s.n, "{scheme} dt={dt}");
                assert_eq!(next.w, s.w, "{scheme} dt={dt}");
                assert_eq!(next.step, 1);
            }
        }
    }

    #[test]
    fn semi_implicit_conserves_mass_and_total_energy() {
        let p = params();
        for s0 in [step_state(1.0), step_state(0.25), smooth_state(64)] {
            let mut s = s0;
            for _ in 0..50 {
                let next = step_semi_implicit(&s, &p, &config(Scheme::SemiImplicit, 1e-5)).unwrap();
                let m0 = sum(s.n.values());
                let m1 = sum(next.n.values());
                assert!(((m1 - m0) / m0).abs() < 1e-12);
                let e0 = sum(&s.total_energy(&p));
                let e1 = sum(&next.total_energy(&p));
                assert!(((e1 - e0) / e0).abs() < 1e-12, "{e0} {e1}");
                s = next;
            }
        }
    }

    #[test]
    fn every_scheme_conserves_mass() {
        let p = params();
        for scheme in ALL {
            let mut s = smooth_state(50);
            for _ in 0..20 {
                let next = step(&s, &p, &config(scheme, 1e-4)).unwrap();
                let m0 = sum(s.n.values());
                assert!(((sum(next.n.values()) - m0) / m0).abs() < 1e-12, "{scheme}");
                s = next;
            }
        }
    }

    #[test]
    fn picard_total_energy_nondecreasing_and_bounded() {
        let p = params();
        let s0 = smooth_state(64);
        let (n_max, w_max) = (s0.n.max(), s0.w.max());
        let mut s = s0;
        for _ in 0..50 {
            let next = step_implicit_picard(&s, &p, &config(Scheme::ImplicitPicard, 1e-4)).unwrap();
            let e0 = sum(&s.total_energy(&p));
            let e1 = sum(&next.total_energy(&p));
            assert!(e1 >= e0 - 1e-9);
            assert!(next.n.min() >= p.delta() - 1e-10);
            assert!(next.n.max() <= n_max + 1e-10);
            assert!(next.w.min() >= -1e-10);
            assert!(next.w.max() <= w_max + 1e-10);
            s = next;
        }
    }

    #[test]
    fn symmetric_data_stays_symmetric() {
        let p = params();
        for scheme in ALL {
            let mut s = step_state(0.5);
            for _ in 0..30 {
                s = step(&s, &p, &config(scheme, 1e-5)).unwrap();
            }
            let cells = s.grid.cells();
            for i in 0..cells {
                let j = cells - 1 - i;
                assert!(
                    (s.n.values()[i] - s.n.values()[j]).abs() < 1e-12,
                    "{scheme}"
                );
                assert!(
                    (s.w.values()[i] - s.w.values()[j]).abs() < 1e-12,
                    "{scheme}"
                );
            }
        }
    }

    #[test]
    fn picard_and_semi_implicit_agree_to_second_order_in_one_step() {
        let p = params();
        let s = smooth_state(100);
        let gap = |dt: f64| {
            let a = step_semi_implicit(&s, &p, &config(Scheme::SemiImplicit, dt)).unwrap();
            let b = step_implicit_picard(&s, &p, &config(Scheme::ImplicitPicard, dt)).unwrap();
            l2(&a, &b)
        };
        let ratio = gap(1e-4) / gap(5e-5);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_energy_freezes_density() {
        let p = params();
        let mut s = step_state(0.0);
        let n0 = s.n.clone();
        for _ in 0..5 {
            s = step_implicit_picard(&s, &p, &config(Scheme::ImplicitPicard, 1e-4)).unwrap();
        }
        let drift =
            s.n.values()
                .iter()
                .zip(n0.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        // Only the eps_reg = 1e-10 regularization moves the density.
        assert!(drift < 1e-6, "{drift}");
        assert!(s.w.values().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn explicit_gamma_above_bound_is_rejected() {
        let p = params();
        let s = smooth_state(16);
        let cfg = SolverConfig {
            gamma: Some(10.0),
            ..config(Scheme::ImplicitPicard, 1e-4)
        };
        assert!(matches!(
            step_implicit_picard(&s, &p, &cfg),
            Err(SolverError::InvalidConfig(_))
        ));
    }

    #[test]
    fn picard_reports_non_convergence() {
        let p = params();
        let s = step_state(1.0);
        let cfg = SolverConfig {
            picard_max: 2,
            ..config(Scheme::ImplicitPicard, 1e-4)
        };
        assert!(matches!(
            step_implicit_picard(&s, &p, &cfg),
            Err(SolverError::PicardNoConvergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn zeroth_order_keeps_energy() {
        let s = smooth_state(32);
        let next = step_zeroth_order(&s, &params(), &config(Scheme::ZerothOrder, 1e-3)).unwrap();
        assert_eq!(next.w, s.w);
        assert_ne!(next.n, s.n);
    }

    #[test]
    fn zeroth_order_linear_decay_rate() {
        // Linearization of ∂ₜn = τ₀ ∂ₓ(∂ₓn/n) about n̄ = 1/2 with η = 0:
        // the first Fourier mode decays like exp(-τ₀ (2π)² t / n̄).
        let p = ModelParams::new(1, 1.0 / 2f64.sqrt(), 10.0, 0.0, 1.0, 0.01).unwrap();
        let grid = PeriodicGrid1D::new(256).unwrap();
        let n = grid
            .centers()
            .iter()
            .map(|x| 0.5 + 1e-6 * (2.0 * PI * x).cos())
            .collect();
        let mut s = State::new(grid, n, vec![1.0; 256]).unwrap();
        let amplitude = |s: &State| {
            s.n.values()
                .iter()
                .enumerate()
                .map(|(i, v)| (v - 0.5) * (2.0 * PI * s.grid.center(i)).cos())
                .sum::<f64>()
                * 2.0
                * s.grid.dx()
        };
        let a0 = amplitude(&s);
        let dt = 1e-6;
        for _ in 0..1000 {
            s = step_zeroth_order(&s, &p, &config(Scheme::ZerothOrder, dt)).unwrap();
        }
        let rate = -(amplitude(&s) / a0).ln() / 1e-3;
        let exact = (2.0 * PI).powi(2) / 0.5;
        assert!(((rate - exact) / exact).abs() < 0.05, "{rate} vs {exact}");
    }

    #[test]
    fn invariant_violation_is_reported() {
        let p = params();
        let grid = PeriodicGrid1D::new(8).unwrap();
        let s = State::new(grid, vec![0.5; 8], vec![0.5; 8]).unwrap();
        let err = finish(&s, vec![0.5; 8], vec![-1e-6; 8], 1e-3, &p).unwrap_err();
        assert!(matches!(
            err,
            SolverError::InvariantViolation { quantity: "W", .. }
        ));
        let err = finish(&s, vec![0.001; 8], vec![0.5; 8], 1e-3, &p).unwrap_err();
        assert!(matches!(
            err,
            SolverError::InvariantViolation { quantity: "n", .. }
        ));
    }

    #[test]
    fn bernoulli_limits() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-9) - (1.0 - 0.5e-9)).abs() < 1e-15);
        assert!((bernoulli(-1.0) - bernoulli(1.0) - 1.0).abs() < 1e-15);
        assert_eq!(bernoulli(800.0), 0.0);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-12);
    }
}

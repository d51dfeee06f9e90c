//! Inversion of the moment map `λ ↦ (n, E)` and the self-consistent map
//! `μ ↦ (n, E)` in which the potential `V = -U₀ n` feeds back into the
//! equilibrium.
//!
//! With `μ₀ = λ₀ + λ₁ V` and `V = -U₀ n` the multiplier seen by the
//! equilibrium is `λ₀ = μ₀ + U₀ μ₁ n`, so the density solves the scalar
//! fixed-point problem `n = N(μ₀ + U₀ μ₁ n, μ₁)`. Its derivative is
//! `U₀ μ₁ ω₀`; the map loses invertibility where `1 - U₀ μ₁ ω₀ = 0`.

use thiserror::Error;

use crate::kinetics::{
    moments, omegas, torus_integrate, DualVariables, KineticsError, ModelParams, MomentPair,
    Multipliers, QuadratureSpec, EXP_CLAMP,
};

/// Determinants below this are treated as singular by the Newton solver.
pub const SINGULAR_JACOBIAN_TOL: f64 = 1e-14;
/// `|1 - U₀ μ₁ ω₀|` below this marks the self-consistent map as near-singular.
pub const NEAR_SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InversionError {
    #[error("singular Jacobian (det = {det:e}) at Newton iteration {iteration}")]
    SingularJacobian { det: f64, iteration: usize },
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid target moments: {0}")]
    InvalidTarget(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionSettings {
    /// Max-norm residual accepted by Newton's method.
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Initial Newton step length, halved while the residual grows.
    pub damping: f64,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
}

impl Default for InversionSettings {
    fn default() -> Self {
        InversionSettings {
            newton_tol: 1e-12,
            max_iter: 50,
            damping: 1.0,
            fixed_point_tol: 1e-13,
            fixed_point_max_iter: 2000,
        }
    }
}

impl InversionSettings {
    pub fn validate(&self) -> Result<(), InversionError> {
        if !(self.newton_tol > 0.0 && self.fixed_point_tol > 0.0) {
            return Err(InversionError::InvalidArgument(
                "tolerances must be positive".into(),
            ));
        }
        if self.max_iter == 0 || self.fixed_point_max_iter == 0 {
            return Err(InversionError::InvalidArgument(
                "iteration limits must be >= 1".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(InversionError::InvalidArgument(
                "damping must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn residual(
    lam: Multipliers,
    target: MomentPair,
    params: &ModelParams,
    spec: &QuadratureSpec,
) -> (f64, f64) {
    let m = moments(lam, params, spec);
    (m.n - target.n, m.e - target.e)
}

/// Finds `λ` with `moments(λ) = target` by damped Newton iteration on the
/// Jacobian `[[ω₀, ω₁], [ω₁, ω₂]]`.
pub fn invert_moments(
    target: MomentPair,
    params: &ModelParams,
    spec: &QuadratureSpec,
    settings: &InversionSettings,
) -> Result<Multipliers, InversionError> {
    settings.validate()?;
    target
        .check_admissible(params)
        .map_err(|e| InversionError::InvalidTarget(e.to_string()))?;

    // Exact whenever the target has λ₁ = 0.
    let eta = params.eta();
    let mut lam = Multipliers::new((target.n / (1.0 - eta * target.n)).ln(), 0.0);
    let (mut rn, mut re) = residual(lam, target, params, spec);
    let mut norm = rn.abs().max(re.abs());

    for iteration in 0..settings.max_iter {
        if norm < settings.newton_tol {
            return Ok(lam);
        }
        let [w0, w1, w2] = omegas(lam, params, spec);
        let det = w0 * w2 - w1 * w1;
        if det.abs() < SINGULAR_JACOBIAN_TOL {
            return Err(InversionError::SingularJacobian { det, iteration });
        }
        let step0 = -(w2 * rn - w1 * re) / det;
        let step1 = -(-w1 * rn + w0 * re) / det;

        let mut rho = settings.damping;
        loop {
            let trial = Multipliers::new(lam.lambda0 + rho * step0, lam.lambda1 + rho * step1);
            let (tn, te) = residual(trial, target, params, spec);
            let trial_norm = tn.abs().max(te.abs());
            if trial_norm < norm || rho < 1e-8 {
                lam = trial;
                rn = tn;
                re = te;
                norm = trial_norm;
                break;
            }
            rho *= 0.5;
        }
    }
    if norm < settings.newton_tol {
        return Ok(lam);
    }
    Err(InversionError::NoConvergence {
        iterations: settings.max_iter,
        residual: norm,
    })
}

/// Outcome of a scalar fixed-point solve.
struct FixedPoint {
    x: f64,
    residual: f64,
    iterations: usize,
}

/// Solves `x = g(x)` with relaxation `x ← (1-ρ)x + ρ g(x)`.
///
/// `ρ` starts at 0.5, doubles (up to 1) while the residual decreases and is
/// halved when it grows.
fn damped_fixed_point(
    start: f64,
    mut g: impl FnMut(f64) -> f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint, InversionError> {
    let mut x = start;
    let mut rho: f64 = 0.5;
    let mut prev = f64::INFINITY;
    let mut last = f64::INFINITY;
    for iterations in 0..max_iter {
        let gx = g(x);
        let res = (gx - x).abs();
        if !res.is_finite() {
            return Err(InversionError::NoConvergence {
                iterations,
                residual: res,
            });
        }
        last = res;
        if res < tol {
            return Ok(FixedPoint {
                x,
                residual: res,
                iterations,
            });
        }
        if res < prev {
            rho = (2.0 * rho).min(1.0);
        } else {
            rho *= 0.5;
        }
        prev = res;
        x = (1.0 - rho) * x + rho * gx;
    }
    Err(InversionError::NoConvergence {
        iterations: max_iter,
        residual: last,
    })
}

/// Solution of the self-consistent density problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfConsistent {
    pub moments: MomentPair,
    /// Multipliers `(μ₀ + U₀ μ₁ n, μ₁)` seen by the equilibrium.
    pub multipliers: Multipliers,
    pub residual: f64,
    pub iterations: usize,
}

/// Multipliers seen by the equilibrium at density `n`.
pub fn selfconsistent_multipliers(mu: DualVariables, n: f64, params: &ModelParams) -> Multipliers {
    DualVariables::to_multipliers(mu, -params.u0() * n)
}

/// Solves `n = ∫ dp / (η + exp(-μ₀ - U₀ μ₁ n - μ₁ ε))` and evaluates `E`
/// from the companion integral.
pub fn selfconsistent_density(
    mu: DualVariables,
    params: &ModelParams,
    spec: &QuadratureSpec,
    settings: &InversionSettings,
) -> Result<SelfConsistent, InversionError> {
    settings.validate()?;
    if !(mu.mu0.is_finite() && mu.mu1.is_finite()) {
        return Err(InversionError::InvalidArgument(
            "dual variables must be finite".into(),
        ));
    }
    let density = |n: f64| moments(selfconsistent_multipliers(mu, n, params), params, spec).n;
    let start = density(0.0);
    let fp = damped_fixed_point(
        start,
        density,
        settings.fixed_point_tol,
        settings.fixed_point_max_iter,
    )?;
    let multipliers = selfconsistent_multipliers(mu, fp.x, params);
    // A fixed point found with the occupation exponent clamped is an artifact.
    let band_width = 2.0 * params.d() as f64 * params.eps0();
    if multipliers.lambda0.abs() + multipliers.lambda1.abs() * band_width > EXP_CLAMP {
        return Err(InversionError::NoConvergence {
            iterations: fp.iterations,
            residual: f64::INFINITY,
        });
    }
    let m = moments(multipliers, params, spec);
    Ok(SelfConsistent {
        moments: MomentPair::new(fp.x, m.e),
        multipliers,
        residual: fp.residual,
        iterations: fp.iterations,
    })
}

/// Determinant of `∂(n, E)/∂μ` from the closed form
/// `(ω₀ω₂ - ω₁²) / (1 - U₀ μ₁ ω₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianDeterminant {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// Set when `|1 - U₀ μ₁ ω₀| < 1e-10`; `value` is then unreliable.
    pub near_singular: bool,
    pub omegas: [f64; 3],
}

pub fn jacobian_det_formula(
    mu: DualVariables,
    params: &ModelParams,
    spec: &QuadratureSpec,
    settings: &InversionSettings,
) -> Result<JacobianDeterminant, InversionError> {
    let sc = selfconsistent_density(mu, params, spec, settings)?;
    let w = omegas(sc.multipliers, params, spec);
    let numerator = w[0] * w[2] - w[1] * w[1];
    let denominator = 1.0 - params.u0() * mu.mu1 * w[0];
    Ok(JacobianDeterminant {
        value: numerator / denominator,
        numerator,
        denominator,
        near_singular: denominator.abs() < NEAR_SINGULAR_TOL,
        omegas: w,
    })
}

/// Maxwell-Boltzmann closed forms `n = e^{μ₀ + U₀μ₁n} I₀^d` and
/// `E = -2dε₀ e^{μ₀ + U₀μ₁n} I₀^{d-1} I₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbClosedForms {
    pub n: f64,
    pub e: f64,
    /// `∫ exp(-2ε₀μ₁ cos 2πp) dp`
    pub i0: f64,
    /// `∫ exp(-2ε₀μ₁ cos 2πp) cos 2πp dp`
    pub i1: f64,
}

pub fn mb_closed_forms(
    mu: DualVariables,
    params: &ModelParams,
    spec: &QuadratureSpec,
    settings: &InversionSettings,
) -> Result<MbClosedForms, InversionError> {
    if params.eta() != 0.0 {
        return Err(InversionError::InvalidArgument(
            "closed forms require Maxwell-Boltzmann statistics (eta = 0)".into(),
        ));
    }
    settings.validate()?;
    let line = QuadratureSpec::new(spec.points(), 1)?;
    let two_pi = 2.0 * std::f64::consts::PI;
    let eps0 = params.eps0();
    let slope = 2.0 * eps0 * mu.mu1;
    let i0 = torus_integrate(&line, |p| (-slope * (two_pi * p[0]).cos()).exp());
    let i1 = torus_integrate(&line, |p| {
        let c = (two_pi * p[0]).cos();
        (-slope * c).exp() * c
    });
    let d = params.d() as i32;
    let coupling = params.u0() * mu.mu1;
    let density = |n: f64| (mu.mu0 + coupling * n).exp() * i0.powi(d);
    let start = density(0.0);
    let fp = damped_fixed_point(
        start,
        density,
        settings.fixed_point_tol,
        settings.fixed_point_max_iter,
    )?;
    let n = fp.x;
    let e = -2.0 * d as f64 * eps0 * (mu.mu0 + coupling * n).exp() * i0.powi(d - 1) * i1;
    Ok(MbClosedForms { n, e, i0, i1 })
}

/// `ω₀ω₂ - ω₁²` for Maxwell-Boltzmann statistics in terms of `(n, E, μ₁)`:
/// `4ε₀² d n² - E n / μ₁ - E² / d`. Requires `μ₁ ≠ 0`.
pub fn mb_jacobian_numerator(n: f64, e: f64, mu1: f64, params: &ModelParams) -> f64 {
    let d = params.d() as f64;
    let eps0 = params.eps0();
    4.0 * eps0 * eps0 * d * n * n - e * n / mu1 - e * e / d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params(d: usize, eps0: f64, u0: f64, eta: f64) -> ModelParams {
        ModelParams::new(d, eps0, u0, eta, 1.0, 0.01).unwrap()
    }

    #[test]
    fn invert_symmetric_target() {
        let p = params(1, 1.0, 0.0, 1.0);
        let s = QuadratureSpec::for_params(&p);
        let lam = invert_moments(MomentPair::new(0.5, 0.0), &p, &s, &Default::default()).unwrap();
        assert_abs_diff_eq!(lam.lambda0, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(lam.lambda1, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn invert_round_trip_mb() {
        let p = params(1, 0.5, 0.0, 0.0);
        let s = QuadratureSpec::for_params(&p);
        let target = moments(Multipliers::new(0.0, 1.0), &p, &s);
        let lam = invert_moments(target, &p, &s, &Default::default()).unwrap();
        assert_abs_diff_eq!(lam.lambda0, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(lam.lambda1, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn invert_fermi_target_self_consistent() {
        let p = params(1, 1.0, 0.0, 1.0);
        let s = QuadratureSpec::for_params(&p);
        let target = MomentPair::new(0.3, 0.1);
        let lam = invert_moments(target, &p, &s, &Default::default()).unwrap();
        let back = moments(lam, &p, &s);
        assert_abs_diff_eq!(back.n, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(back.e, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn invert_rejects_inadmissible_target() {
        let p = params(1, 1.0, 0.0, 1.0);
        let s = QuadratureSpec::for_params(&p);
        let err = invert_moments(MomentPair::new(1.2, 0.0), &p, &s, &Default::default());
        assert!(matches!(err, Err(InversionError::InvalidTarget(_))));
    }

    #[test]
    fn invert_reports_no_convergence() {
        let p = params(1, 1.0, 0.0, 1.0);
        let s = QuadratureSpec::for_params(&p);
        let settings = InversionSettings {
            max_iter: 1,
            ..Default::default()
        };
        let err = invert_moments(MomentPair::new(0.3, 0.2), &p, &s, &settings);
        assert!(matches!(err, Err(InversionError::NoConvergence { .. })));
    }

    #[test]
    fn density_increases_with_lambda0() {
        let p = params(1, 1.0, 0.0, 1.0);
        let s = QuadratureSpec::for_params(&p);
        for &l1 in &[-1.0, 0.0, 0.7] {
            let mut prev = 0.0;
            for k in 0..21 {
                let l0 = -3.0 + 0.3 * k as f64;
                let n = moments(Multipliers::new(l0, l1), &p, &s).n;
                assert!(n > prev);
                prev = n;
            }
        }
    }

    #[test]
    fn selfconsistent_compensated_shift() {
        for &u0 in &[0.0, 0.5, 3.0] {
            let p = params(1, 1.0, u0, 1.0);
            let s = QuadratureSpec::for_params(&p);
            // With μ₁ = 0 the coupling vanishes and F ≡ 1/2 at μ₀ = 0.
            let sc =
                selfconsistent_density(DualVariables::new(0.0, 0.0), &p, &s, &Default::default())
                    .unwrap();
            assert_abs_diff_eq!(sc.moments.n, 0.5, epsilon = 1e-13);
            assert_abs_diff_eq!(sc.moments.e, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn selfconsistent_decouples_without_interaction() {
        let p = params(1, 1.0, 0.0, 1.0);
        let s = QuadratureSpec::for_params(&p);
        let mu = DualVariables::new(0.3, -0.8);
        let sc = selfconsistent_density(mu, &p, &s, &Default::default()).unwrap();
        let direct = moments(Multipliers::new(0.3, -0.8), &p, &s);
        assert_abs_diff_eq!(sc.moments.n, direct.n, epsilon = 1e-15);
        assert_abs_diff_eq!(sc.moments.e, direct.e, epsilon = 1e-15);
    }

    #[test]
    fn selfconsistent_residual_oracle() {
        let p = params(1, 1.0, 1.0, 1.0);
        let s = QuadratureSpec::for_params(&p);
        let mu = DualVariables::new(0.0, 0.3);
        let sc = selfconsistent_density(mu, &p, &s, &Default::default()).unwrap();
        let n = sc.moments.n;
        // Substitute n back into the defining integral directly.
        let lam0 = mu.mu0 + p.u0() * mu.mu1 * n;
        let back = moments(Multipliers::new(lam0, mu.mu1), &p, &s);
        assert!((back.n - n).abs() < 1e-13);
        assert_abs_diff_eq!(back.e, sc.moments.e, epsilon = 1e-15);
    }

    #[test]
    fn selfconsistent_reports_divergence() {
        // Maxwell-Boltzmann with strong positive feedback has no fixed point.
        let p = params(1, 1.0, 5.0, 0.0);
        let s = QuadratureSpec::for_params(&p);
        let err = selfconsistent_density(DualVariables::new(1.0, 1.0), &p, &s, &Default::default());
        assert!(matches!(err, Err(InversionError::NoConvergence { .. })));
    }

    #[test]
    fn det_without_interaction_is_numerator() {
        let p = params(1, 1.0, 0.0, 1.0);
        let s = QuadratureSpec::for_params(&p);
        let j = jacobian_det_formula(DualVariables::new(0.1, 0.4), &p, &s, &Default::default())
            .unwrap();
        assert_eq!(j.denominator, 1.0);
        assert_eq!(j.value, j.numerator);
        assert!(!j.near_singular);
    }

    #[test]
    fn det_parity_case_mb() {
        let p = params(1, 0.7, 0.6, 0.0);
        let s = QuadratureSpec::for_params(&p);
        let j = jacobian_det_formula(DualVariables::new(-0.2, 0.0), &p, &s, &Default::default())
            .unwrap();
        let sc = selfconsistent_density(DualVariables::new(-0.2, 0.0), &p, &s, &Default::default())
            .unwrap();
        assert_abs_diff_eq!(j.omegas[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(j.value, sc.moments.n * j.omegas[2], max_relative = 1e-13);
    }

    #[test]
    fn mb_closed_forms_bessel_values() {
        let p = params(1, 0.5, 0.0, 0.0);
        let s = QuadratureSpec::for_params(&p);
        let mb =
            mb_closed_forms(DualVariables::new(0.0, 1.0), &p, &s, &Default::default()).unwrap();
        assert_abs_diff_eq!(mb.i0, 1.266_065_877_752_008_4, epsilon = 1e-14);
        assert_abs_diff_eq!(mb.i1, -0.565_159_103_992_485, epsilon = 1e-14);
        assert_abs_diff_eq!(mb.n, mb.i0, epsilon = 1e-15);
        let flat =
            mb_closed_forms(DualVariables::new(0.3, 0.0), &p, &s, &Default::default()).unwrap();
        assert_abs_diff_eq!(flat.i0, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(flat.n, 0.3f64.exp(), epsilon = 1e-15);
    }

    #[test]
    fn mb_closed_forms_flat_band_limit() {
        let p = params(2, 1e-9, 0.4, 0.0);
        let s = QuadratureSpec::for_params(&p);
        let mu = DualVariables::new(0.2, -0.5);
        let mb = mb_closed_forms(mu, &p, &s, &Default::default()).unwrap();
        assert_abs_diff_eq!(mb.i0, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(mb.e, 0.0, epsilon = 1e-8);
        let implicit = (mu.mu0 + p.u0() * mu.mu1 * mb.n).exp();
        assert_abs_diff_eq!(mb.n, implicit, epsilon = 1e-8);
    }

    #[test]
    fn mb_closed_forms_require_mb_statistics() {
        let p = params(1, 0.5, 0.0, 1.0);
        let s = QuadratureSpec::for_params(&p);
        assert!(
            mb_closed_forms(DualVariables::new(0.0, 0.0), &p, &s, &Default::default()).is_err()
        );
    }

    #[test]
    fn mb_closed_forms_match_selfconsistent_map() {
        for &(d, mu0, mu1, u0) in &[(1, 0.1, 0.2, 0.5), (2, -0.4, -0.3, 1.0), (3, 0.0, 0.1, 0.3)] {
            let p = params(d, 0.6, u0, 0.0);
            let s = QuadratureSpec::new(if d == 3 { 32 } else { 64 }, d).unwrap();
            let mu = DualVariables::new(mu0, mu1);
            let mb = mb_closed_forms(mu, &p, &s, &Default::default()).unwrap();
            let sc = selfconsistent_density(mu, &p, &s, &Default::default()).unwrap();
            assert_abs_diff_eq!(mb.n, sc.moments.n, epsilon = 1e-10);
            assert_abs_diff_eq!(mb.e, sc.moments.e, epsilon = 1e-10);
        }
    }
}

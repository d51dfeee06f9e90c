//! Band structure, equilibrium distribution and moment integrals over the
//! Brillouin torus `T^d` for the tight-binding dispersion
//! `ε(p) = -2 ε₀ Σ cos(2π p_i)`.
//!
//! Every integral over `T^d` is evaluated with the tensor-product midpoint
//! rule of [`torus_integrate`]. The integrands are smooth and periodic, so the
//! rule converges faster than any power of `1/M`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use thiserror::Error;

/// Largest number of quadrature nodes a [`QuadratureSpec`] may request.
pub const MAX_QUADRATURE_NODES: usize = 1 << 24;

/// Bound applied to the exponent inside [`occupation`].
pub(crate) const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("invalid model parameter: {0}")]
    InvalidParams(String),
    #[error("invalid quadrature: {0}")]
    InvalidQuadrature(String),
    #[error("{0}")]
    InvalidArgument(String),
}

/// Physical constants of the lattice model.
///
/// The reduced interaction `U = U₀ / (2 d ε₀²)` is always recomputed from the
/// stored fields, never cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    d: usize,
    eps0: f64,
    u0: f64,
    eta: f64,
    tau0: f64,
    delta: f64,
}

impl ModelParams {
    pub fn new(
        d: usize,
        eps0: f64,
        u0: f64,
        eta: f64,
        tau0: f64,
        delta: f64,
    ) -> Result<Self, KineticsError> {
        let p = ModelParams {
            d,
            eps0,
            u0,
            eta,
            tau0,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters from the reduced interaction `U` instead of `U₀`.
    pub fn with_reduced_interaction(
        d: usize,
        eps0: f64,
        u: f64,
        eta: f64,
        tau0: f64,
        delta: f64,
    ) -> Result<Self, KineticsError> {
        let u0 = u * 2.0 * d as f64 * eps0 * eps0;
        Self::new(d, eps0, u0, eta, tau0, delta)
    }

    fn validate(&self) -> Result<(), KineticsError> {
        let bad = |m: &str| Err(KineticsError::InvalidParams(m.to_string()));
        if !(1..=3).contains(&self.d) {
            return bad("d must satisfy 1 <= d <= 3");
        }
        if !(self.eps0.is_finite() && self.eps0 > 0.0) {
            return bad("eps0 must be finite and > 0");
        }
        if !(self.u0.is_finite() && self.u0 >= 0.0) {
            return bad("U0 must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1]");
        }
        if !(self.tau0.is_finite() && self.tau0 > 0.0) {
            return bad("tau0 must be finite and > 0");
        }
        if !(self.delta > 0.0 && self.delta < 1.0 / (1.0 + self.eta)) {
            return bad("delta must satisfy 0 < delta < 1/(1+eta)");
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn eps0(&self) -> f64 {
        self.eps0
    }
    pub fn u0(&self) -> f64 {
        self.u0
    }
    pub fn eta(&self) -> f64 {
        self.eta
    }
    pub fn tau0(&self) -> f64 {
        self.tau0
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Reduced interaction strength `U₀ / (2 d ε₀²)`.
    pub fn u(&self) -> f64 {
        self.u0 / (2.0 * self.d as f64 * self.eps0 * self.eps0)
    }

    /// Upper density bound `(1-δ)/η`, infinite for Maxwell-Boltzmann statistics.
    pub fn density_ceiling(&self) -> f64 {
        if self.eta > 0.0 {
            (1.0 - self.delta) / self.eta
        } else {
            f64::INFINITY
        }
    }

    /// Diffusion prefactor `(2d-1)/(2d)` of the energy equation.
    pub fn energy_diffusion_factor(&self) -> f64 {
        let two_d = 2.0 * self.d as f64;
        (two_d - 1.0) / two_d
    }
}

impl Default for ModelParams {
    /// One-dimensional Fermi-Dirac lattice with `U = U₀ = 10`.
    fn default() -> Self {
        ModelParams {
            d: 1,
            eps0: std::f64::consts::FRAC_1_SQRT_2,
            u0: 10.0,
            eta: 1.0,
            tau0: 1.0,
            delta: 0.01,
        }
    }
}

/// Lagrange multipliers `(λ₀, λ₁)` of the equilibrium distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multipliers {
    pub lambda0: f64,
    pub lambda1: f64,
}

impl Multipliers {
    pub fn new(lambda0: f64, lambda1: f64) -> Self {
        Multipliers { lambda0, lambda1 }
    }
}

/// Dual entropy variables `μ₀ = λ₀ + λ₁ V`, `μ₁ = λ₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualVariables {
    pub mu0: f64,
    pub mu1: f64,
}

impl DualVariables {
    pub fn new(mu0: f64, mu1: f64) -> Self {
        DualVariables { mu0, mu1 }
    }

    pub fn from_multipliers(lam: Multipliers, potential: f64) -> Self {
        DualVariables {
            mu0: lam.lambda0 + lam.lambda1 * potential,
            mu1: lam.lambda1,
        }
    }

    /// Inverse of [`DualVariables::from_multipliers`].
    pub fn to_multipliers(self, potential: f64) -> Multipliers {
        Multipliers {
            lambda0: self.mu0 - self.mu1 * potential,
            lambda1: self.mu1,
        }
    }
}

/// Particle and energy density `(n, E)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPair {
    pub n: f64,
    pub e: f64,
}

impl MomentPair {
    pub fn new(n: f64, e: f64) -> Self {
        MomentPair { n, e }
    }

    /// Checks `0 < n < 1/η` and `|E| <= 2 d ε₀ n`.
    pub fn check_admissible(&self, params: &ModelParams) -> Result<(), KineticsError> {
        let fail = |m: String| Err(KineticsError::InvalidArgument(m));
        if !(self.n.is_finite() && self.e.is_finite()) {
            return fail("moments must be finite".into());
        }
        if self.n <= 0.0 {
            return fail(format!("density n = {} must be positive", self.n));
        }
        if params.eta > 0.0 && self.n >= 1.0 / params.eta {
            return fail(format!("density n = {} must be below 1/eta", self.n));
        }
        let band = 2.0 * params.d as f64 * params.eps0;
        if self.e.abs() >= band * self.n {
            return fail(format!(
                "energy E = {} violates |E| < 2 d eps0 n = {}",
                self.e,
                band * self.n
            ));
        }
        Ok(())
    }
}

/// Tensor-product quadrature rule on `T^d` with `m` points per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSpec {
    m: usize,
    d: usize,
}

impl QuadratureSpec {
    pub const DEFAULT_POINTS: usize = 64;

    pub fn new(m: usize, d: usize) -> Result<Self, KineticsError> {
        if m < 4 || !m.is_multiple_of(2) {
            return Err(KineticsError::InvalidQuadrature(format!(
                "points per dimension must be even and >= 4, got {m}"
            )));
        }
        if !(1..=3).contains(&d) {
            return Err(KineticsError::InvalidQuadrature(format!(
                "dimension must be 1, 2 or 3, got {d}"
            )));
        }
        let total = (m as u128).pow(d as u32);
        if total > MAX_QUADRATURE_NODES as u128 {
            return Err(KineticsError::InvalidQuadrature(format!(
                "{m}^{d} nodes exceed the budget of {MAX_QUADRATURE_NODES}"
            )));
        }
        Ok(QuadratureSpec { m, d })
    }

    /// Default rule (64 points per direction) for the dimension of `params`.
    pub fn for_params(params: &ModelParams) -> Self {
        QuadratureSpec {
            m: Self::DEFAULT_POINTS,
            d: params.d,
        }
    }

    pub fn points(&self) -> usize {
        self.m
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn nodes(&self) -> usize {
        self.m.pow(self.d as u32)
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Visits every midpoint node `p_i = (j_i + 1/2)/M` of the rule.
fn for_each_node(spec: &QuadratureSpec, mut visit: impl FnMut(&[f64])) {
    let m = spec.m;
    let d = spec.d;
    let coords: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect();
    let mut idx = [0usize; 3];
    let mut p = [0.0f64; 3];
    for _ in 0..spec.nodes() {
        for (pk, &ik) in p.iter_mut().zip(&idx[..d]) {
            *pk = coords[ik];
        }
        visit(&p[..d]);
        for ik in idx[..d].iter_mut() {
            *ik += 1;
            if *ik < m {
                break;
            }
            *ik = 0;
        }
    }
}

/// Integrates `f` over the unit torus with the midpoint rule of `spec`.
pub fn torus_integrate<F: FnMut(&[f64]) -> f64>(spec: &QuadratureSpec, mut f: F) -> f64 {
    let mut acc = CompensatedSum::default();
    for_each_node(spec, |p| acc.add(f(p)));
    acc.value() / spec.nodes() as f64
}

/// Band energy `ε(p) = -2 ε₀ Σ cos(2π p_i)`.
pub fn band_energy(p: &[f64], params: &ModelParams) -> f64 {
    -2.0 * params.eps0 * p.iter().map(|&x| (2.0 * PI * x).cos()).sum::<f64>()
}

/// Group velocity `u = ∇_p ε`, component `i` equal to `4π ε₀ sin(2π p_i)`.
pub fn velocity(p: &[f64], params: &ModelParams) -> Vec<f64> {
    p.iter()
        .map(|&x| 4.0 * PI * params.eps0 * (2.0 * PI * x).sin())
        .collect()
}

/// Occupation `1/(η + exp(-λ₀ - λ₁ ε))` at band energy `energy`.
///
/// The exponent is clamped to `[-700, 700]` so the result saturates at `0`
/// and `1/η` instead of overflowing.
pub fn occupation(lam: Multipliers, energy: f64, eta: f64) -> f64 {
    let arg = (-lam.lambda0 - lam.lambda1 * energy).clamp(-EXP_CLAMP, EXP_CLAMP);
    1.0 / (eta + arg.exp())
}

/// Equilibrium distribution `F(λ; p)`.
pub fn equilibrium(lam: Multipliers, p: &[f64], params: &ModelParams) -> f64 {
    occupation(lam, band_energy(p, params), params.eta)
}

fn check_spec(params: &ModelParams, spec: &QuadratureSpec) {
    assert_eq!(
        params.d, spec.d,
        "quadrature dimension must match the lattice dimension"
    );
}

/// Particle and energy densities `n = ∫F dp`, `E = ∫F ε dp`.
pub fn moments(lam: Multipliers, params: &ModelParams, spec: &QuadratureSpec) -> MomentPair {
    check_spec(params, spec);
    let mut n = CompensatedSum::default();
    let mut e = CompensatedSum::default();
    for_each_node(spec, |p| {
        let eps = band_energy(p, params);
        let f = occupation(lam, eps, params.eta);
        n.add(f);
        e.add(f * eps);
    });
    let w = spec.nodes() as f64;
    MomentPair {
        n: n.value() / w,
        e: e.value() / w,
    }
}

/// `ω_i = ∫ F(1-ηF) ε^i dp`.
pub fn omega(
    lam: Multipliers,
    i: u32,
    params: &ModelParams,
    spec: &QuadratureSpec,
) -> Result<f64, KineticsError> {
    if i > 4 {
        return Err(KineticsError::InvalidArgument(format!(
            "omega index must be <= 4, got {i}"
        )));
    }
    check_spec(params, spec);
    Ok(torus_integrate(spec, |p| {
        let eps = band_energy(p, params);
        let f = occupation(lam, eps, params.eta);
        f * (1.0 - params.eta * f) * eps.powi(i as i32)
    }))
}

/// `(ω₀, ω₁, ω₂)` in a single pass.
pub fn omegas(lam: Multipliers, params: &ModelParams, spec: &QuadratureSpec) -> [f64; 3] {
    check_spec(params, spec);
    let mut acc = [CompensatedSum::default(); 3];
    for_each_node(spec, |p| {
        let eps = band_energy(p, params);
        let f = occupation(lam, eps, params.eta);
        let w = f * (1.0 - params.eta * f);
        acc[0].add(w);
        acc[1].add(w * eps);
        acc[2].add(w * eps * eps);
    });
    let nodes = spec.nodes() as f64;
    [
        acc[0].value() / nodes,
        acc[1].value() / nodes,
        acc[2].value() / nodes,
    ]
}

/// `Γ_i = ∫ ε^i |∇ε|² F(1-ηF) dp`, `i ∈ {0, 1, 2}`.
pub fn gamma(
    lam: Multipliers,
    i: u32,
    params: &ModelParams,
    spec: &QuadratureSpec,
) -> Result<f64, KineticsError> {
    if i > 2 {
        return Err(KineticsError::InvalidArgument(format!(
            "gamma index must be 0, 1 or 2, got {i}"
        )));
    }
    check_spec(params, spec);
    Ok(torus_integrate(spec, |p| {
        let eps = band_energy(p, params);
        let f = occupation(lam, eps, params.eta);
        let grad2: f64 = velocity(p, params).iter().map(|u| u * u).sum();
        eps.powi(i as i32) * grad2 * f * (1.0 - params.eta * f)
    }))
}

/// Diffusion matrix `D = (D_ij)` of size `2d × 2d`, with
/// `D_ij^{kl} = τ ∫ u_k u_l F(1-ηF) ε^{i+j} dp`.
///
/// Row/column index `i*d + k` addresses moment `i` and direction `k`.
pub fn diffusion_matrix(
    lam: Multipliers,
    tau: f64,
    params: &ModelParams,
    spec: &QuadratureSpec,
) -> Result<DMatrix<f64>, KineticsError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(KineticsError::InvalidArgument(format!(
            "relaxation time must be positive, got {tau}"
        )));
    }
    check_spec(params, spec);
    let d = params.d;
    // Upper triangle of the d×d blocks for ε^0, ε^1, ε^2.
    let mut acc = vec![CompensatedSum::default(); 3 * d * d];
    for_each_node(spec, |p| {
        let eps = band_energy(p, params);
        let f = occupation(lam, eps, params.eta);
        let w = f * (1.0 - params.eta * f);
        let u = velocity(p, params);
        for k in 0..d {
            for l in k..d {
                let base = w * u[k] * u[l];
                acc[k * d + l].add(base);
                acc[d * d + k * d + l].add(base * eps);
                acc[2 * d * d + k * d + l].add(base * eps * eps);
            }
        }
    });
    let scale = tau / spec.nodes() as f64;
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..2 {
        for j in i..2 {
            let power = i + j;
            for k in 0..d {
                for l in k..d {
                    let v = acc[power * d * d + k * d + l].value() * scale;
                    let (r, c) = (i * d + k, j * d + l);
                    let (rt, ct) = (i * d + l, j * d + k);
                    m[(r, c)] = v;
                    m[(c, r)] = v;
                    m[(rt, ct)] = v;
                    m[(ct, rt)] = v;
                }
            }
        }
    }
    Ok(m)
}

/// Analytic values of the four band integrals used by the moment closure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandIntegrals {
    /// `∫ ε² dp`
    pub eps2: f64,
    /// diagonal of `∫ u_i u_j dp`
    pub uu: f64,
    /// diagonal of `∫ ε u_i u_j dp`
    pub eps_uu: f64,
    /// diagonal of `∫ ε² u_i u_j dp`
    pub eps2_uu: f64,
}

/// Closed forms `2dε₀²`, `½(4πε₀)²`, `0` and `8(2d-1)π²ε₀⁴`; all three
/// velocity integrals vanish off the diagonal.
pub fn appendix_closed_forms(params: &ModelParams) -> BandIntegrals {
    let d = params.d as f64;
    let e0 = params.eps0;
    BandIntegrals {
        eps2: 2.0 * d * e0 * e0,
        uu: 0.5 * (4.0 * PI * e0).powi(2),
        eps_uu: 0.0,
        eps2_uu: 8.0 * (2.0 * d - 1.0) * PI * PI * e0.powi(4),
    }
}

/// Quadrature values of the band integrals: `∫ε²` and the three `d × d`
/// velocity moment matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BandIntegralQuadrature {
    pub eps2: f64,
    pub uu: DMatrix<f64>,
    pub eps_uu: DMatrix<f64>,
    pub eps2_uu: DMatrix<f64>,
}

impl BandIntegralQuadrature {
    /// Largest absolute deviation from the closed forms of each family
    /// (`ε²`, `uu`, `εuu`, `ε²uu`), taken over all matrix entries.
    pub fn deviations(&self, exact: &BandIntegrals) -> [f64; 4] {
        let mat_dev = |m: &DMatrix<f64>, diag: f64| {
            let mut dev: f64 = 0.0;
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let target = if r == c { diag } else { 0.0 };
                    dev = dev.max((m[(r, c)] - target).abs());
                }
            }
            dev
        };
        [
            (self.eps2 - exact.eps2).abs(),
            mat_dev(&self.uu, exact.uu),
            mat_dev(&self.eps_uu, exact.eps_uu),
            mat_dev(&self.eps2_uu, exact.eps2_uu),
        ]
    }

    /// Largest absolute deviation from the closed forms over all entries.
    pub fn max_deviation(&self, exact: &BandIntegrals) -> f64 {
        self.deviations(exact).into_iter().fold(0.0, f64::max)
    }
}

pub fn band_integrals_quadrature(
    params: &ModelParams,
    spec: &QuadratureSpec,
) -> BandIntegralQuadrature {
    check_spec(params, spec);
    let d = params.d;
    // One pass over the nodes; entry (power, k, l) accumulates ε^power u_k u_l.
    let mut eps2 = CompensatedSum::default();
    let mut acc = vec![CompensatedSum::default(); 3 * d * d];
    let mut u = [0.0f64; 3];
    for_each_node(spec, |p| {
        let e = band_energy(p, params);
        eps2.add(e * e);
        for (k, &x) in p.iter().enumerate() {
            u[k] = 4.0 * PI * params.eps0 * (2.0 * PI * x).sin();
        }
        let powers = [1.0, e, e * e];
        for (power, &ep) in powers.iter().enumerate() {
            for k in 0..d {
                for l in 0..d {
                    acc[(power * d + k) * d + l].add(ep * u[k] * u[l]);
                }
            }
        }
    });
    let nodes = spec.nodes() as f64;
    let eps2 = eps2.value() / nodes;
    let moment =
        |power: usize| DMatrix::from_fn(d, d, |k, l| acc[(power * d + k) * d + l].value() / nodes);
    BandIntegralQuadrature {
        eps2,
        uu: moment(0),
        eps_uu: moment(1),
        eps2_uu: moment(2),
    }
}

/// `log(1 + η e^x)` without overflow for large `x`.
fn log_one_plus_scaled_exp(eta: f64, x: f64) -> f64 {
    let scaled = eta.ln() + x;
    if scaled > 0.0 {
        scaled + (-scaled).exp().ln_1p()
    } else {
        scaled.exp().ln_1p()
    }
}

/// Entropy density `h(λ)`.
///
/// For `η > 0` this is `nλ₀ + Eλ₁ - η⁻¹ ∫ log(1 + η e^{λ₀+λ₁ε}) dp`; for
/// `η = 0` the Maxwell-Boltzmann limit `∫(F log F - F) dp = nλ₀ + Eλ₁ - n`.
pub fn entropy_density(lam: Multipliers, params: &ModelParams, spec: &QuadratureSpec) -> f64 {
    let mp = moments(lam, params, spec);
    let linear = mp.n * lam.lambda0 + mp.e * lam.lambda1;
    if params.eta == 0.0 {
        return linear - mp.n;
    }
    let eta = params.eta;
    let log_term = torus_integrate(spec, |p| {
        let x = lam.lambda0 + lam.lambda1 * band_energy(p, params);
        log_one_plus_scaled_exp(eta, x)
    });
    linear - log_term / eta
}

/// Dual variables together with the symmetric coefficient matrix
/// `L₀₀ = D₀₀`, `L₀₁ = L₁₀ = D₀₁ - D₀₀ V`, `L₁₁ = D₁₁ - 2 D₀₁ V + D₀₀ V²`.
pub fn dual_coefficients(
    lam: Multipliers,
    potential: f64,
    tau: f64,
    params: &ModelParams,
    spec: &QuadratureSpec,
) -> Result<(DualVariables, DMatrix<f64>), KineticsError> {
    let dm = diffusion_matrix(lam, tau, params, spec)?;
    let d = params.d;
    let block = |i: usize, j: usize| dm.view((i * d, j * d), (d, d)).clone_owned();
    let d00 = block(0, 0);
    let d01 = block(0, 1);
    let d10 = block(1, 0);
    let d11 = block(1, 1);
    let v = potential;
    let l01 = &d01 - &d00 * v;
    let l10 = &d10 - &d00 * v;
    let l11 = &d11 - (&d01 + &d10) * v + &d00 * (v * v);
    let mut l = DMatrix::zeros(2 * d, 2 * d);
    l.view_mut((0, 0), (d, d)).copy_from(&d00);
    l.view_mut((0, d), (d, d)).copy_from(&l01);
    l.view_mut((d, 0), (d, d)).copy_from(&l10);
    l.view_mut((d, d), (d, d)).copy_from(&l11);
    Ok((DualVariables::from_multipliers(lam, potential), l))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

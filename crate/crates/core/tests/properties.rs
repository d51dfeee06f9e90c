use optlattice::harness::restrict;
use optlattice::initial::Profile;
use optlattice::inversion::{invert_moments, InversionSettings};
use optlattice::kinetics::{
    diffusion_matrix, min_eigenvalue, moments, ModelParams, Multipliers, QuadratureSpec,
};
use optlattice::solver::tridiag::cyclic_tridiagonal_apply;
use optlattice::solver::{
    cyclic_tridiagonal_solve, step, PeriodicGrid1D, Scheme, SolverConfig, State,
};
use proptest::prelude::*;

fn params(d: usize, eta: f64) -> ModelParams {
    ModelParams::new(d, 1.0, 1.0, eta, 1.0, 0.01).unwrap()
}

fn smooth_state(cells: usize, a: f64, b: f64, w0: f64) -> State {
    let grid = PeriodicGrid1D::new(cells).unwrap();
    let x = grid.centers();
    let n = x
        .iter()
        .map(|x| 0.5 + a * (2.0 * std::f64::consts::PI * x).cos())
        .collect();
    let w = x
        .iter()
        .map(|x| w0 + b * (4.0 * std::f64::consts::PI * x).sin())
        .collect();
    State::new(grid, n, w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inversion_recovers_multipliers(
        l0 in -1.0f64..1.0,
        l1 in -1.0f64..1.0,
        d in 1usize..=2,
        fermi in any::<bool>(),
    ) {
        let p = params(d, if fermi { 1.0 } else { 0.0 });
        let spec = QuadratureSpec::for_params(&p);
        let lam = Multipliers::new(l0, l1);
        let back = invert_moments(moments(lam, &p, &spec), &p, &spec, &InversionSettings::default())
            .unwrap();
        prop_assert!((back.lambda0 - l0).abs() < 1e-8);
        prop_assert!((back.lambda1 - l1).abs() < 1e-8);
    }

    #[test]
    fn fermi_density_stays_below_ceiling(l0 in -20.0f64..20.0, l1 in -5.0f64..5.0) {
        let p = params(1, 1.0);
        let m = moments(Multipliers::new(l0, l1), &p, &QuadratureSpec::for_params(&p));
        prop_assert!(m.n > 0.0 && m.n <= 1.0 + 1e-15);
    }

    #[test]
    fn diffusion_matrix_is_positive_definite(
        l0 in -2.0f64..2.0,
        l1 in -2.0f64..2.0,
        tau in 0.1f64..3.0,
    ) {
        let p = params(2, 1.0);
        let dm = diffusion_matrix(Multipliers::new(l0, l1), tau, &p, &QuadratureSpec::for_params(&p))
            .unwrap();
        prop_assert!(min_eigenvalue(&dm) > 0.0);
        prop_assert!((&dm - dm.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn tridiagonal_solution_has_small_residual(
        seed in proptest::collection::vec(-1.0f64..1.0, 3 * 12),
        rhs in proptest::collection::vec(-5.0f64..5.0, 12),
    ) {
        let n = 12;
        let sub: Vec<f64> = seed[..n].to_vec();
        let sup: Vec<f64> = seed[n..2 * n].to_vec();
        // Strict diagonal dominance guarantees solvability.
        let diag: Vec<f64> = (0..n)
            .map(|i| sub[i].abs() + sup[i].abs() + 1.0 + seed[2 * n + i].abs())
            .collect();
        let x = cyclic_tridiagonal_solve(&sub, &diag, &sup, &rhs).unwrap();
        let back = cyclic_tridiagonal_apply(&sub, &diag, &sup, &x);
        for (b, r) in back.iter().zip(&rhs) {
            prop_assert!((b - r).abs() < 1e-12);
        }
    }

    #[test]
    fn restriction_preserves_mass(
        coarse in 1usize..20,
        factor in 1usize..6,
        values in proptest::collection::vec(0.0f64..1.0, 120),
    ) {
        let fine: Vec<f64> = values.iter().cycle().take(coarse * factor).copied().collect();
        let r = restrict(&fine, coarse).unwrap();
        let fine_mass: f64 = fine.iter().sum::<f64>() / fine.len() as f64;
        let coarse_mass: f64 = r.iter().sum::<f64>() / coarse as f64;
        prop_assert!((fine_mass - coarse_mass).abs() < 1e-14);
    }

    #[test]
    fn profile_text_round_trips(
        mean in 0.05f64..0.9,
        amplitude in 0.0f64..0.04,
        mode in 1u32..6,
        value in 0.0f64..2.0,
    ) {
        let profiles = [
            Profile::Step,
            Profile::ShiftedStep,
            Profile::Constant(value),
            Profile::Cosine { mean, amplitude, mode },
        ];
        for p in profiles {
            let back: Profile = p.to_string().parse().unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn steps_conserve_mass_and_keep_bounds(
        a in 0.0f64..0.3,
        b in 0.0f64..0.3,
        w0 in 0.4f64..1.5,
        picard in any::<bool>(),
    ) {
        let p = ModelParams::default();
        let s = smooth_state(40, a, b, w0);
        let cfg = SolverConfig {
            dt: 1e-4,
            t_final: 1e-3,
            scheme: if picard { Scheme::ImplicitPicard } else { Scheme::SemiImplicit },
            ..SolverConfig::default()
        };
        let next = step(&s, &p, &cfg).unwrap();
        let mass = |s: &State| s.n.values().iter().sum::<f64>() * s.grid.dx();
        prop_assert!(((mass(&next) - mass(&s)) / mass(&s)).abs() < 1e-12);
        prop_assert!(next.w.min() >= 0.0);
        prop_assert!(next.n.min() >= p.delta());
        prop_assert!(next.n.max() <= s.n.max() + 1e-12);
    }
}

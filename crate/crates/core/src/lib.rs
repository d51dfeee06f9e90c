//! Energy-transport model for ultracold atoms in an optical lattice.
//!
//! * [`kinetics`]: equilibrium distribution, moments and diffusion
//!   coefficients computed by quadrature on the Brillouin torus.
//! * [`inversion`]: Newton inversion of the moment map and the self-consistent
//!   interaction map.
//! * [`solver`]: finite-difference steppers for the high-temperature
//!   `(n, W)` system on the periodic unit interval.
//! * [`diagnostics`]: conserved and monotone quantities, steady states, decay fits.
//! * [`harness`]: grid-refinement convergence studies.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod harness;
pub mod initial;
pub mod inversion;
pub mod kinetics;
pub mod solver;

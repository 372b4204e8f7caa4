//! Koopman spectral analysis of planar slow-fast (singularly perturbed)
//! oscillators, built around the van der Pol relaxation oscillator.
//!
//! The crate locates the stable relaxation-oscillation limit cycle of
//!
//! ```text
//! x' = F(x, y),    y' = eps * G(x, y)        (fast time t)
//! eps * dx/dtau = F,   dy/dtau = G           (slow time tau = eps * t)
//! ```
//!
//! and computes the two principal Koopman eigenpairs: the phase pair
//! `(i*omega, phi_iw)` whose level sets are isochrons, and the amplitude
//! pair `(nu, phi_nu)` whose level sets are isostables. It also provides
//! the singular-limit (`eps -> 0`) machinery: the critical-manifold
//! geometry, the projection onto the attracting branches, the constrained
//! flow with discontinuous jumps, and the closed-form eigenfunctions of
//! the constrained and concatenated flows.
//!
//! Modules follow the pipeline: [`model`] (vector fields and geometry),
//! [`ode`] (adaptive integration with dense output and section events),
//! [`cycle`] (limit-cycle location, Floquet exponents), [`spectral`]
//! (eigenfunction evaluation on points and grids), [`singular`]
//! (singular-limit flows and analytic eigenfunctions), [`grid_io`]
//! (parallel sweeps, CSV and raster output), and [`verify`] (the
//! self-check suite behind `koopman-sp verify`).

pub mod cycle;
pub mod error;
pub mod grid_io;
pub mod model;
pub mod ode;
pub mod singular;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use model::{
    AttractingBranch, ConstrainedState, ManifoldBranch, Region, SlowFastSystem, State, TimeScale,
};

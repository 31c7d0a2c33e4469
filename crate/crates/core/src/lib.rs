//! Deterministic numerical laboratory for the spatially homogeneous Landau
//! equation with Maxwellian-molecule and hard-potential kernels.
//!
//! The crate is organised around six building blocks:
//!
//! * [`multiindex`] — exact multi-index combinatorics (enumeration, binomials,
//!   the inverse-power sub-index sums and their fitted bound constants);
//! * [`grid`] — periodic velocity-space grids with DFT-based differentiation,
//!   quadrature, moments and weighted norms;
//! * [`kernel`] — the pointwise collision kernel `(a, b, c)` and FFT assembly
//!   of the convolved coefficient fields `(ā, b̄, c̄)`, plus ellipticity and
//!   coefficient-growth diagnostics;
//! * [`solver`] — explicit RK4 time integration of the flux and
//!   nondivergence forms of the equation with CFL-controlled steps;
//! * [`diagnostics`] — conservation records, derivative-norm tables, Gevrey
//!   regularity witnesses, the energy-identity decomposition and the
//!   per-order trajectory functionals;
//! * [`experiment`] — configuration, the scenario catalog, CSV/JSON/snapshot
//!   persistence and the pieces behind the `landau` CLI.

use mimalloc::MiMalloc;

// Spectral kernels lease and return large transform buffers at high rate;
// the default allocator's mmap churn dominates profiles without this.
#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod grid;
pub mod kernel;
pub mod multiindex;
pub mod solver;

pub use error::Error;
pub use grid::{Field, SpectralField, VelocityGrid};
pub use kernel::{CoefficientAssembler, CoefficientFields, KernelParams};
pub use multiindex::MultiIndex;
pub use solver::{RhsForm, SolverConfig, SolverState, Trajectory};

//! Maxwell-Lorentz reference solver and the hierarchy of envelope models
//! used to approximate ultrashort pulse propagation in Kerr media.
//!
//! Modules, bottom-up:
//! - [`grid`]: periodic grids, FFT plans and Fourier multipliers
//! - [`dispersion`]: characteristic variety, eigenprojectors, NLS coefficients
//! - [`fit`]: improved (rational) dispersion fit
//! - [`maxwell`]: 1D transverse Maxwell-Lorentz oracle
//! - [`nonlinear`]: envelope nonlinearities and ionization terms
//! - [`envelope`]: split-step envelope solvers
//! - [`diagnostics`]: invariants, bounds and blow-up detection
//! - [`harness`]: physical scaling, convergence studies and model comparison

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod diagnostics;
pub mod dispersion;
pub mod envelope;
pub mod error;
pub mod fit;
pub mod grid;
pub mod harness;
pub mod maxwell;
pub mod nonlinear;

pub use diagnostics::{BlowupThresholds, RunReport, RunStatus, SeriesRow};
pub use dispersion::{Branch, Ionization, MediumParams, NlsCoefficients, NonlinearityKind};
pub use envelope::{Carrier, EnvelopeSolver, EnvelopeState, ModelConfig, ModelKind};
pub use error::{Error, Result};
pub use fit::FitResult;
pub use grid::{Fft, GridSpec, SpectralField};
pub use harness::{CompareConfig, CompareRow, ConvergenceConfig, ConvergenceReport, ErrorNorm, PhysicalParams};
pub use maxwell::{MaxwellSolver, MaxwellState, WavePacketSpec};
pub use nonlinear::{EnvelopeIonization, FKind};
pub use num_complex::Complex64;

/// Imaginary unit.
pub const I: Complex64 = Complex64::new(0.0, 1.0);

//! Desk-scale numerics for Z^d-extensions driven by lattice random walks and
//! finite-state Markov chains.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: lattice points, zero-sum observables, stable-law parameters;
//! * [`driver`]: step laws (i.i.d. or Markov), sampling and exact occupation
//!   probabilities;
//! * [`spectral`]: twisted transfer operators, aperiodicity, stable-parameter
//!   recovery, local limit checks and normalising sequences;
//! * [`kernel`]: the symmetrised potential kernel by series, Fourier
//!   inversion and renewal asymptotics;
//! * [`excursion`]: excursions from the zero fibre, hitting statistics and the
//!   harmonic-equation oracle for hitting probabilities;
//! * [`greenkubo`]: Green-Kubo variances of extension and induced observables;
//! * [`mlgm`]: Mittag-Leffler laws, their Gaussian mixtures and the
//!   generalised CLT experiment;
//! * [`suite`]: the acceptance criteria, runnable as one report.
//!
//! Monte Carlo work is split into fixed-size batches, each with its own
//! counter-derived random stream, so results do not depend on the number of
//! worker threads. With the `parallel` feature (default) batches run on rayon;
//! without it everything runs sequentially.

pub mod driver;
pub mod error;
pub mod excursion;
pub mod exec;
pub mod greenkubo;
pub mod kernel;
pub mod lattice;
pub mod linalg;
pub mod mlgm;
pub mod numeric;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod suite;

pub use driver::{Driver, IidStep, MarkovDriver};
pub use error::{Result, ZdxError};
pub use exec::Exec;
pub use lattice::{Dim, Observable, Point, SlowlyVarying, StableParams};

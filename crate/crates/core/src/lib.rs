//! Learned stencil discretizations for 1D periodic nonlinear PDEs.
//!
//! A small multi-layer perceptron is slid across every `2m+1` point stencil
//! of a periodic grid to produce a discrete right-hand side, which is then
//! integrated with third-order TVD Runge-Kutta. The weights are fitted to
//! trajectory data by back-propagating through the time integrator, with
//! optional per-point latent noise estimates for de-noising.
//!
//! The crate also contains the classical solvers used to produce training
//! data and reference results: moment-condition finite differences, WENO5
//! with Lax-Friedrichs flux splitting, and an ETDRK4 pseudo-spectral
//! integrator for Kuramoto-Sivashinsky and Korteweg-de Vries.
//!
//! Modules, bottom-up:
//! - [`grid`]: periodic grids, stencil gathering, trajectories, sub-sampling.
//! - [`solvers`]: reference numerics.
//! - [`datagen`]: benchmark dataset recipes, forcing and noise.
//! - [`neural`]: MLP, reverse-mode tape, Adam.
//! - [`stencilnet`]: the learned operator, rollouts, loss and training.
//! - [`metrics`]: prediction, MSE, spectra, Lyapunov exponents, benchmarks.
//! - [`format`]: the `STN1` trajectory and `STNM` checkpoint binary formats.

pub mod datagen;
pub mod error;
pub mod format;
pub mod grid;
pub mod metrics;
pub mod neural;
pub mod solvers;
pub mod stencilnet;

pub use error::{Error, Result};
pub use grid::{Grid, StencilPatch, Trajectory};
pub use neural::Mlp;
pub use stencilnet::{StencilNetModel, TrainConfig};

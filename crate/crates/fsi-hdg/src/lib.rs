//! Monolithic ALE-HDG solver for 2D fluid-structure interaction.
//!
//! The fluid is incompressible Navier-Stokes on a moving domain, the structure
//! is linear elasticity on a fixed reference domain, and the two are coupled
//! through a single shared interface velocity trace. Velocity unknowns are
//! mapped with a Piola transform so the discrete velocity is exactly
//! divergence-free and exactly normal-continuous on the deformed mesh.
//!
//! Crate layout:
//! - [`mesh`]: conforming two-region triangulations (unit square, channel/flag, file IO)
//! - [`quadrature`], [`basis`]: simplex quadrature and Lagrange bases with derivatives
//! - [`dofs`]: field layout, interface identification, Dirichlet masks
//! - [`linalg`]: sparse matrices and a sparse direct LU solver
//! - [`geometry`]: ALE map caches, Piola transforms, discrete GCL quantities,
//!   time-step stability bounds
//! - [`fluid`], [`structure`]: HDG residual/Jacobian forms with stress elimination
//! - [`motion`]: harmonic mesh displacement extension
//! - [`manufactured`]: closed-form solution families and their source terms
//! - [`solver`]: monolithic Newton time stepping
//! - [`diagnostics`]: energy, divergence, error norms, probes, CSV/VTK output
//! - [`config`], [`cli`]: INI-style configuration and the command-line driver

pub mod basis;
pub mod channel;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod dofs;
pub mod fluid;
pub mod geometry;
pub mod linalg;
pub mod manufactured;
pub mod mesh;
pub mod motion;
pub mod quadrature;
pub mod solver;
pub mod structure;

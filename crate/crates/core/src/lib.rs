//! Clean-variable diffusion sampling, multi-view consistent Gaussian
//! noise, and score distillation against analytic teachers on a toy
//! differentiable sphere scene.
//!
//! The crate is organized around the pieces of that pipeline:
//!
//! - [`schedule`] — diffusion coefficient schedules, churn rates and
//!   timestep annealing;
//! - [`teacher`] — Gaussian-mixture score oracles with exact epsilon and
//!   sample predictions;
//! - [`samplers`] — probability-flow and clean-flow ODE/SDE steppers and
//!   the churned stochastic sampler;
//! - [`noise_transport`] — the equal-area sphere map and the footprint
//!   rasterizer that warps a reference noise grid into camera views while
//!   keeping every pixel unit-variance Gaussian;
//! - [`renderer`] — a differentiable textured unit sphere with an exact
//!   vector–Jacobian product;
//! - [`distill`] — the optimization loop driving the scene toward a
//!   teacher along an annealed diffusion trajectory;
//! - [`verify`] — statistical oracles and the acceptance suite.

pub mod config;
pub mod distill;
pub mod error;
pub mod field;
pub mod geom;
pub mod io;
pub mod noise_transport;
pub mod renderer;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod teacher;
pub mod verify;

pub use error::{Error, Result};
pub use field::{FieldRole, FieldShape, ImageField};

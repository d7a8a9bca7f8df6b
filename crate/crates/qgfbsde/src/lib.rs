//! Numerical laboratory for decoupled forward-backward stochastic differential
//! equations whose driver grows quadratically in the control variable.
//!
//! The crate couples two independent solver backends to one model description:
//!
//! * [`pde`] — a backward theta-scheme for the quasilinear parabolic PDE whose
//!   solution `u` represents the backward component, `Y_t = u(t, X_t)` and
//!   `Z_t = u_x(t, X_t) sigma(t, X_t)`;
//! * [`mc`] — seeded Euler-Maruyama path simulation with least-squares
//!   regression for the backward pair `(Y, Z)`, the variational process
//!   `dX/dx0`, and the exponential/Girsanov weight processes that express
//!   `dY_0/dx0` as a reweighted expectation.
//!
//! On top of the backends, [`theorems`] certifies sign statements about the
//! control process `Z`: comonotonicity of two models' controls, positivity of
//! `Z ⊙ sigma` for a single model, the representation identity linking the
//! regression, PDE, and variational views of `Z`, and the rewrite of a forward
//! SDE as a backward equation with `Z = sigma(t, X_t)`.
//!
//! Models are described by plain-text expressions in `t`, `x`, `y`, `z1..zd`
//! ([`expr`]), validated against quadratic-growth and ellipticity assumptions
//! ([`model`]), and loaded from sectioned config files ([`config`]). The
//! [`cli`] module drives everything from a batch command line.

pub mod cli;
pub mod config;
pub mod expr;
pub mod mc;
pub mod model;
pub mod pde;
pub mod theorems;

mod rng;

pub use expr::Expression;
pub use model::ModelSpec;

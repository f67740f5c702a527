//! Damped-Newton (δ) policy iteration for H∞ tracking control of
//! control-affine nonlinear systems.
//!
//! The tracking problem is posed on the augmented state `X = [e_d; r]`
//! (tracking error stacked on the reference), turning tracking into a
//! discounted zero-sum game whose value solves a tracking HJI equation.
//! The crate provides:
//!
//! * [`dynamics`]: plant models, the augmented system and a fixed-step RK4
//!   integrator.
//! * [`basis`]: polynomial feature maps for the critic and the two actors.
//! * [`collection`]: behavior-signal excitation and per-window discounted
//!   sufficient statistics.
//! * [`learner`]: off-policy and on-policy δ-PI, policy extraction and the
//!   HJI residual.
//! * [`evaluation`]: closed-loop tests, attenuation ratio and performance
//!   index.
//! * [`archive`]: the binary dataset format with its configuration
//!   fingerprint.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod basis;
pub mod collection;
pub mod dynamics;
mod error;
pub mod evaluation;
pub mod learner;
pub mod quadrature;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};

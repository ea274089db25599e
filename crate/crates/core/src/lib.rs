//! Population coding with superparamagnetic tunnel junctions.
//!
//! Stochastic two-state junctions under spin-torque bias act as neurons with
//! bell-shaped tuning curves. This crate models a single junction
//! ([`device`]), populations of them ([`population`]), their use as a basis
//! set for function synthesis ([`basis`]), trial-and-error learning of
//! transformations between populations ([`learning`]), the energy drawn by a
//! population ([`energy`]) and a behavioral model of the hybrid fixed-point
//! hardware datapath ([`datapath`]).
//!
//! The crate is `no_std` and only needs `alloc`. Every random draw comes from
//! a [`rng::StreamKey`] so results do not depend on evaluation order.

#![no_std]
// `!(x > 0.0)` also rejects NaN, which is the point
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod basis;
pub mod datapath;
pub mod device;
pub mod energy;
pub mod error;
pub mod learning;
pub mod population;
pub mod rng;

mod optim;

pub use error::{Error, Result};

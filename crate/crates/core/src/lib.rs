//! Kähler geometry of spaces of codimension-2 world-sheets, checked numerically.
//!
//! A [`sheet::DiscreteSheet`] samples a codimension-2 submanifold of a chart
//! [`ambient::MetricSpace`] on a spectral grid. Tangent vectors to the space of
//! sheets are boundary-zero normal fields; [`kaehler`] builds the L² metric,
//! the fiber-integrated 2-form and the normal rotation on them, and measures
//! closedness and integrability by finite differences. [`twistor`] handles the
//! lift into the bundle of oriented definite 2-planes with its CR structure,
//! and [`flows`] runs area-decreasing gradient descent.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ambient;
pub mod error;
pub mod expr;
pub mod fields;
pub mod flows;
pub mod grid;
pub mod kaehler;
pub mod linalg;
pub mod sheet;
pub mod twistor;
pub mod verify;

pub use error::{Error, Result};

//! Numerical metrisability tests for oriented projective surfaces.
//!
//! A projective structure is given on a chart by a torsion-free connection;
//! [`projective::check_metrisable_by`] decides whether it contains the
//! Levi-Civita connection of a candidate metric by computing two complex
//! residual fields, `a` (the trace-free, conformally symmetric part of the
//! connection relative to the metric's Weyl connection) and `b` (the Weyl
//! 1-form). Both vanish identically exactly when the metric metrises the
//! structure.
//!
//! The [`sphere`] module builds the family of metrics on the 2-sphere whose
//! unparametrised geodesics are great circles, from constant solutions of
//! the parallel-transport form of Liouville's linear system on the unit
//! tangent bundle. Those metrics are the end-to-end oracle for the
//! projective pipeline.

pub mod error;
pub mod expr;
pub mod frame;
pub mod geodesic;
pub mod grid;
pub mod projective;
pub mod sphere;
pub mod tensor;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use expr::{Expr, Var};

//! Variational and viscosity solvers for weakly coupled Hamilton-Jacobi systems.

// Negated comparisons are used on purpose: they reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caratheodory;
pub mod characteristics;
pub mod coupling;
pub mod csv;
pub mod error;
pub mod lagrangian;
pub mod lax_oleinik;
pub mod optimize;
pub mod oracle;
pub mod variational;

pub use error::{Error, Result};

/// Guide snippets, compiled and run as doctests so the book cannot drift.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/snippets/coupling.md")]
    pub struct Coupling;
    #[doc = include_str!("../../../book/src/snippets/lagrangians.md")]
    pub struct Lagrangians;
    #[doc = include_str!("../../../book/src/snippets/action.md")]
    pub struct Action;
    #[doc = include_str!("../../../book/src/snippets/characteristics.md")]
    pub struct Characteristics;
    #[doc = include_str!("../../../book/src/snippets/value.md")]
    pub struct Value;
    #[doc = include_str!("../../../book/src/snippets/oracle.md")]
    pub struct Oracle;
}

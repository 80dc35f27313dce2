//! Symbolic-numeric verification kernels for abundant structures on
//! conformally flat charts: exact expression calculus, chart tensor algebra,
//! the structural and invariant equations of abundant conformally
//! superintegrable systems, their Weylian and semi-Weyl reformulations, and
//! cotangent-bundle mechanics (conformal integrals, Bertrand-Darboux,
//! Stäckel transform, zero-energy trajectories).
//!
//! Everything is immutable after construction and safe to share across
//! threads; residual evaluation is pure.

pub mod abundant;
pub mod catalog;
pub mod expr;
pub mod field;
pub mod mech;
pub mod ode;
pub mod report;
pub mod sysspec;
pub mod tensor;
pub mod weylian;

pub use abundant::AbundantStructure;
pub use catalog::CatalogEntry;
pub use expr::{Expr, Rational};
pub use field::{Chart, JetValue, ScalarField};
pub use mech::{MomentumPolynomial, PotentialFamily};
pub use report::{EquationResidual, ResidualReport};
pub use sysspec::SystemSpec;
pub use tensor::{Connection, IndexKind, MetricField, SchoutenVariant, TensorField};

#[cfg(test)]
mod sanity {
    fn assert_send_sync<T: Send + Sync>() {}

    #[test]
    fn core_types_are_shareable() {
        assert_send_sync::<crate::Chart>();
        assert_send_sync::<crate::ScalarField>();
        assert_send_sync::<crate::TensorField>();
        assert_send_sync::<crate::MetricField>();
    }
}

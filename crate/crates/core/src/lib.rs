//! Numerical laboratory for smoothing operators, Hölder-Zygmund norms,
//! ∂̄ homotopy operators and a KAM iteration for almost complex structures.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::large_enum_variant)]

pub mod acs;
pub mod bm;
pub mod dbar;
pub mod domain;
pub mod error;
pub mod fft;
pub mod grid;
pub mod harness;
pub mod interp;
pub mod kam;
pub mod lp;
pub mod smooth;
pub mod torus;
pub mod znorm;

pub use error::{Error, Result};
pub use grid::{GridField, GridSpec, C64};
pub use lp::{ConePair, FamilyKind, LpFamily, SpectralProfile};

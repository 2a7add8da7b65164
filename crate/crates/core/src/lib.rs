//! Verify-and-reconstruct engine for isometric immersions into `S^k × H^m`.
//!
//! Discrete submanifold data (metric, normal bundle connection, second
//! fundamental form and the product-structure blocks) is checked against the
//! Gauss, Codazzi and Ricci equations together with the algebra and
//! parallelism of the product structure. Compatible data is integrated back
//! into an immersion by parallel transport in a flat Lorentzian bundle, and
//! the rebuild is verified and aligned with any other realization.

pub mod error;
pub mod extract;
pub mod fields;
pub mod flatbundle;
pub mod grid;
pub mod io;
pub mod lorentz;
pub mod pipeline;
pub mod reconstruct;
pub mod stencil;
pub mod structure;

pub use error::{Error, Result};
pub use grid::{ChartGrid, Slot, TensorField};
pub use lorentz::{AmbientFrame, LorentzVector, ProductPoint, ProductSplit};

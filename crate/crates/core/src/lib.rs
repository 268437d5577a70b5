//! Numerical Finsler geometry on low-dimensional charts.
//!
//! The crate evaluates the connection and curvature stack of a Finsler
//! structure `F(x, y)` with exact fiber derivatives (truncated Taylor
//! arithmetic), integrates scalar fields over the indicatrix bundle against
//! the Liouville measure, checks variational identities of the total
//! curvature functional and integrates the scalar curvature flow
//! `∂t log F = −H(u, u)` on periodic surfaces.
//!
//! ```
//! use finsler::zoo;
//! use finsler::curvature::ricci_directional;
//!
//! let funk = zoo::get_entry("funk-disk", &Default::default()).unwrap();
//! let h = ricci_directional(funk.structure(), &[0.2, 0.1], &[0.7f64.cos(), 0.7f64.sin()]).unwrap();
//! assert!((h + 0.25).abs() < 1e-9);
//! ```

pub mod chart;
pub mod connections;
pub mod curvature;
pub mod error;
pub mod flow;
pub mod grid;
pub mod jet;
pub mod measure;
pub mod numerics;
pub mod scalar;
pub mod structure;
pub mod variations;
pub mod zoo;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use chart::{build_grid, BaseGrid, BaseMode, DerivMode, FiberGrid, JetRequest};
pub use error::{FinslerError, Result};
pub use jet::{Jet, JetSpace};
pub use scalar::Scalar;
pub use structure::{Chart, ClosedForm, FinslerStructure, Mode, SymTensor2, SymTensor3};

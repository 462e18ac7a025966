//! Lindahl equilibrium computation for divisible public-goods budgeting.
//!
//! The crate covers the uncapped setting (proportional response dynamics,
//! equivalently entropy mirror descent on a spending-form convex program)
//! and the capped setting (the same program with per-project funding caps,
//! solved natively or exported as an exponential-cone problem), together
//! with equilibrium certification, Pareto and core-stability audits, a
//! reduction for separable piecewise-linear concave utilities, and readers
//! for participatory-budgeting ballot files.
//!
//! # Example
//!
//! ```
//! use lindahl_core::capped::{recover_prices_capped, solve_capped_native, CappedSolveOptions};
//! use lindahl_core::model::{rescale_valuations, Cap, Instance, DEFAULT_RESCALE_TARGET};
//! use lindahl_core::verify::verify_lindahl;
//!
//! // Two agents share a capped project and each have a personal backup.
//! let instance = Instance::new(
//!     vec![1.0, 1.0],
//!     vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (2, 1.0)]],
//!     vec![Cap::Finite(1.0), Cap::Unbounded, Cap::Unbounded],
//!     None,
//! )
//! .unwrap();
//!
//! // The capped program wants valuations above 1; solve and recover prices.
//! let rescaled = rescale_valuations(&instance, DEFAULT_RESCALE_TARGET).unwrap();
//! let solution =
//!     solve_capped_native(&rescaled.instance, &CappedSolveOptions::default()).unwrap();
//! assert!(solution.converged);
//! assert!((solution.x[0] - 1.0).abs() < 1e-6); // shared project fills its cap
//!
//! let prices = recover_prices_capped(&rescaled.instance, &solution);
//! let certificate = verify_lindahl(&rescaled.instance, &solution.x, &prices, 1e-6).unwrap();
//! assert!(certificate.is_zero_respecting_lindahl());
//! ```

// Indexed loops over parallel arrays are the house style in the numeric
// kernels; the iterator forms obscure the coupled updates.
#![allow(clippy::needless_range_loop)]

pub mod capped;
pub mod conic;
pub mod dynamics;
pub mod fixtures;
pub mod json;
pub mod lp;
pub mod model;
pub mod pabulib;
pub mod splc;
pub mod verify;

pub use model::{Allocation, Cap, ContributionMatrix, Instance, PriceSystem};

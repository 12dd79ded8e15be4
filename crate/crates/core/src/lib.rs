//! Multi-population replicator dynamics on the assignment manifold and their
//! embedding into a single simplex of joint distributions.
//!
//! The crate is organized bottom-up:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`simplex`] | Fisher-Rao primitives on one simplex and row-wise on the assignment manifold |
//! | [`meta`] | Multi-indices, the product embedding `T`, the lift `Q`, marginalization `M`, entropy |
//! | [`payoff`] | Payoff models (S-flow, EGN, generic linear, multi-game, potential, custom) |
//! | [`dynamics`] | Fixed-step integrators on the assignment manifold, the meta-simplex and tangent spaces |
//! | [`equilibria`] | Nash / ESS checks in both presentations, brute-force Nash enumeration |
//! | [`learning`] | Adjoint sensitivities for parameterized flows and EGN interaction learning |
//! | [`verify`] | Seeded numerical verification suites reporting max error against tolerance |
//!
//! States are dense `nalgebra` matrices: an assignment state is an `n x c`
//! row-stochastic matrix, a joint state is a vector of length `N = c^n`
//! indexed by multi-indices in row-major order (first node most significant).

pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod learning;
pub mod meta;
pub mod payoff;
pub mod simplex;
pub mod verify;

pub use error::{Error, Result};
pub use meta::{Dims, MetaState, MetaTangent, MultiIndex, DEFAULT_SIZE_CAP};
pub use payoff::{EmbeddedPayoff, GraphWeights, PayoffModel};
pub use simplex::{AssignmentState, AssignmentTangent, SimplexPoint, TangentVec};

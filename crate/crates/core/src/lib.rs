//! Additive operator decompositions and splitting schemes for evolution
//! equations at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: compressed-row operators, weighted norms, and the
//!   conjugate-gradient core behind every implicit sub-step.
//! - [`model`]: the five-point diffusion operator on a rectangle with
//!   Dirichlet boundary, plus exact eigenmode references.
//! - [`decomposition`]: partitions of unity and the operator families they
//!   induce (directional, diagonal-scaled, factorized, component-space,
//!   skew-symmetric).
//! - [`schemes`]: the time-stepping compositions over those families, with
//!   stability-threshold metadata.
//! - [`analysis`]: dense references, a-priori estimate checks, and
//!   convergence-order studies.

pub mod analysis;
pub mod decomposition;
pub mod linalg;
pub mod model;
pub mod schemes;

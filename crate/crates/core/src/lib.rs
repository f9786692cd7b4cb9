//! Vector fields, Haar averaging, equivariant flows and gauge transport on
//! differentiable stacks presented by concrete Lie groupoids.
//!
//! The crate computes on groupoid presentations: action groupoids `M ⋊ G` of
//! compact groups acting on embedded manifolds, finite groupoids, and finite
//! systems of étale charts. The [`harness`] module loads scenario files and
//! produces the verification reports used by the `gflow` CLI.

// Residual tests are written as `!(r <= tol)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod etale;
pub mod expr;
pub mod fields;
pub mod flows;
pub mod geometry;
pub mod groupoid;
pub mod groups;
pub mod harness;
pub mod report;

pub use error::{Error, Result};
pub use expr::{parse, Bindings, Expr};
pub use geometry::{Config, Manifold, Point, SmoothMap, TangentVector};
pub use groups::{CompactGroup, GroupElement, HaarConfig, SmoothAction};
pub use report::{CheckResult, VerificationReport};

use rand::SeedableRng;

/// The single PRNG used for all sampling.
pub type Rng = rand_xoshiro::Xoshiro256PlusPlus;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

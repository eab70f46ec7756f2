//! Random attention-only transformers on the sphere and their
//! drift–diffusion limits.
//!
//! Tokens are unit vectors in `R^d`; each layer moves them along the
//! softmax-attention velocity field of freshly sampled random heads. The
//! crate simulates that chain, its homogenized stochastic differential
//! equation with common noise, and the scalar order-parameter equations
//! that the Gaussian case reduces to.

pub mod attention;
pub mod chain;
pub mod diagnostics;
pub mod reductions;
pub mod error;
pub mod experiments;
mod field;
pub mod rng;
pub mod sde;
pub mod sphere;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/sphere.md")]
    struct Sphere;
    #[doc = include_str!("../../../book/src/attention.md")]
    struct Attention;
    #[doc = include_str!("../../../book/src/chain.md")]
    struct Chain;
    #[doc = include_str!("../../../book/src/sde.md")]
    struct Sde;
    #[doc = include_str!("../../../book/src/reductions.md")]
    struct Reductions;
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    struct Diagnostics;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
    #[doc = include_str!("../../../book/src/formats.md")]
    struct Formats;
}

//! Dissipative state-feedback synthesis for linear systems with pointwise
//! and distributed delays.

pub mod augplant;
pub mod basis;
pub mod error;
pub mod expr;
pub mod fixtures;
pub mod gram;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod quad;
pub mod sdp;
pub mod sim;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/projections.md")]
    mod projections {}
    #[doc = include_str!("../../../book/src/lifting.md")]
    mod lifting {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

//! Dense rewards learned from stage indicators.
//!
//! Per-stage discriminators separate trajectories that progressed beyond a
//! stage from those that did not. Their squashed logits fill the gap between
//! consecutive integer stage rewards, giving a dense reward that can be
//! trained on one task variant and reused on another.

pub mod agent;
pub mod buffers;
pub mod env;
pub mod error;
pub mod grid;
pub mod harness;
pub mod nn;
pub mod pipeline;
pub mod reward;
pub mod tabular;
pub mod weights;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/stages.md")]
    mod stages {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/tabular.md")]
    mod tabular {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

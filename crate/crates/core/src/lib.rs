//! Envy-preference evaluation harness.
//!
//! Two protocols are run against scripted policies or chat-completion
//! endpoints:
//!
//! - a three-turn point-allocation game over four-option payoff matrices,
//!   scored with the terms T1 (self-loss), T2 (relative advantage) and T3
//!   (peer reduction);
//! - a seven-scenario workplace dialogue with five 1-5 ratings per turn.
//!
//! ```
//! use envy_harness::payoff::{builtin_matrix, OptionId};
//! use envy_harness::scoring::{term_t1, term_t2, term_t3};
//!
//! let m1 = builtin_matrix("M1").unwrap();
//! assert_eq!(term_t1(&m1, OptionId::B), 0.125);
//! assert_eq!(term_t2(&m1, OptionId::B), 1.0);
//! assert!((term_t3(&m1, OptionId::B) - 5.0 / 12.0).abs() < 1e-12);
//! ```
//!
//! Runs are described by a JSON [`manifest`], executed by the [`runner`],
//! persisted by the [`store`] and summarized by [`analysis`].

pub mod agents;
pub mod analysis;
pub mod error;
pub mod manifest;
pub mod parsing;
pub mod payoff;
pub mod protocol_point;
pub mod protocol_workplace;
pub mod runner;
pub mod scoring;
pub mod seed;
pub mod store;

pub use error::{AgentError, Error, Result};

// Code blocks in the guide run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/payoff-matrices.md")]
    mod payoff_matrices {}
    #[doc = include_str!("../../../book/src/envy-terms.md")]
    mod envy_terms {}
    #[doc = include_str!("../../../book/src/point-protocol.md")]
    mod point_protocol {}
    #[doc = include_str!("../../../book/src/workplace-protocol.md")]
    mod workplace_protocol {}
    #[doc = include_str!("../../../book/src/agents.md")]
    mod agents {}
    #[doc = include_str!("../../../book/src/runs.md")]
    mod runs {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

//! Prompt-query encoding stack and utility-scheduled preference RL.
//!
//! The crate has two halves that share one numeric substrate:
//!
//! * [`encoding`]: a progressive cross-attention chain over per-block
//!   feature stacks, a learnable-query aggregator, and text-conditioned
//!   weight adapters whose scores are softmaxed into fusion weights.
//! * [`degrpo`]: a preference-pair policy optimizer that scores every
//!   training sample by reward separability and gradient sensitivity,
//!   smooths that signal into a per-sample state, and uses the state to
//!   retire, decay or keep samples. [`policy`] supplies a factorised toy
//!   policy with exact log-probabilities so every quantity can be checked,
//!   and [`reward`] the structured fine-grained reward.
//!
//! [`harness`] wires both halves into reproducible synthetic experiments.

pub mod degrpo;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod policy;
pub mod reward;

pub use error::{Error, Result};

//! Utility-scheduled preference optimization.
//!
//! Each visited sample gets `k` candidates from the policy. Candidates with
//! distinct rewards form preference pairs. The sample's utility is the product
//! of two geometric means over those pairs: reward gaps and score-function
//! gradient differences. Utilities above the batch median push an
//! exponentially smoothed state `s` up, the rest pull it down, and `s` decides
//! whether the sample is dropped, kept with a decayed advantage, or kept at
//! full weight.

mod config;
mod lifecycle;
mod objective;
mod pairs;
mod step;

pub use config::{DeGrpoConfig, KlSign, RemovalRule};
pub use lifecycle::{advantage, batch_threshold, lifecycle_factor, recurrent_update, Lifecycle};
pub use objective::{clip, objective, ObjectiveReport, PairTerm, SampleTerms};
pub use pairs::{
    attach_gradients, build_pairs, geometric_mean, gradient_sensitivity, mean_gap,
    reward_separability, utility, PreferencePair,
};
pub use step::{
    degrpo_step, HistoryEntry, Learner, Mode, OpTrace, SampleRecord, SampleStep, Status,
    StepReport, DE_ONLY_OPS,
};

//! Moral-framework alignment laboratory.
//!
//! Framework-labeled two-action scenarios are ingested ([`corpus`]), audited
//! ([`analysis`]), scored with a composite keyword + decision reward
//! ([`reward`]), and used to train a small categorical text policy
//! ([`policy`]) with group-relative policy optimization ([`grpo`]). The
//! [`eval`] module turns any trained policy into per-framework alignment
//! scores over a held-out scenario set.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod framework;
pub mod grpo;
pub mod policy;
pub mod reward;
pub mod synth;

pub use corpus::{Corpus, CorpusSplit, Scenario, SplitRule};
pub use error::{Error, Result};
pub use eval::{AlignmentReport, Backend, EvalConfig};
pub use framework::{ActionIndex, Decision, DecisionToken, FrameworkId, FrameworkSet};
pub use grpo::{TrainConfig, TrainOutcome};
pub use policy::{Featurizer, PolicyParams, SampledCompletion};
pub use reward::{KeywordConfig, KeywordSet, RewardBreakdown};

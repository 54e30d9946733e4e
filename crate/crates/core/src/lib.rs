//! Latency-aware neural architecture search over a factorized block space.
//!
//! A [`arch::Skeleton`] fixes the block layout; every block picks one layer
//! type and a repeat count. [`codec`] flattens those choices into tokens,
//! [`cost`] and [`eval`] score the decoded network, [`reward`] folds accuracy
//! and latency into one number, and [`controller`] learns a policy over the
//! tokens. [`pareto`] tracks the accuracy/latency front of everything seen.

pub mod arch;
pub mod baselines;
pub mod codec;
pub mod controller;
pub mod cost;
pub mod eval;
pub mod explore;
pub mod pareto;
pub mod presets;
pub mod reward;

pub use arch::{NetworkArch, Skeleton};
pub use controller::{run_search, SearchConfig};
pub use eval::{Evaluation, Evaluator};
pub use reward::{reward, RewardConfig};

// Keeps the guide's code blocks compiling as doc-tests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/search-space.md")]
    struct SearchSpace;
    #[doc = include_str!("../../../book/src/cost-model.md")]
    struct CostModel;
    #[doc = include_str!("../../../book/src/reward.md")]
    struct Reward;
    #[doc = include_str!("../../../book/src/controller.md")]
    struct Controller;
    #[doc = include_str!("../../../book/src/pareto.md")]
    struct Pareto;
    #[doc = include_str!("../../../book/src/evaluators.md")]
    struct Evaluators;
}

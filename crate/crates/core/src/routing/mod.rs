//! Per-layer routing mathematics.
//!
//! All probabilities here come from natural-log softmaxes; nothing in this
//! module touches the base-10 scaling-law code.

mod balance;
mod gate;
mod hash;
mod nucleus;
mod rl;
mod sinkhorn;

pub use balance::balancing_loss;
pub use gate::{softmax, softmax_gate, GateOutput, RouterLogits};
pub use hash::{hash_route, HashRouter, HashStrategy};
pub use nucleus::nucleus_filter;
pub use rl::{huber, rl_losses, RlLossTerms, RlWeights};
pub use sinkhorn::{greedy_project, sinkhorn_plan, AssignmentPlan, SinkhornOptions};

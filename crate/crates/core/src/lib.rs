//! Graph-based step-level credit assignment for group-based reinforcement
//! learning.
//!
//! Rollouts of one task instance are merged into a state-transition graph
//! ([`graph::TransitionGraph`]); every node gets a minimum cost-to-goal
//! distance, every edge a distance-discounted reward, and edges leaving the
//! same node are normalized against each other to produce a step-level
//! advantage ([`credit`]). Those advantages drive a clipped surrogate update
//! of a tabular softmax policy ([`policy`]) on small deterministic
//! environments ([`envs`]). [`harness`] wires the pieces into a full training
//! loop with GRPO and GiGPO baselines and the property probes.

pub mod credit;
pub mod envs;
pub mod error;
pub mod graph;
pub mod harness;
pub mod policy;
pub mod rollout;

pub use error::{Error, Result};

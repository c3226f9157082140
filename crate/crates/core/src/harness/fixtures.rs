//! Hand-built rollout groups with known graph structure.

use crate::rollout::{canonical_state_key, ActionId, Outcome, StateKey, Step, Trajectory, TrajectorySet};

pub fn merged_loop_key(name: &str) -> StateKey {
    canonical_state_key(&[("node", name.into())]).expect("single label")
}

fn unit_step(from: &str, action: ActionId, to: &str) -> Step {
    Step {
        state: merged_loop_key(from),
        action,
        next_state: merged_loop_key(to),
        cost: 1.0,
        env_penalty: 0.0,
    }
}

/// Two trajectories from a shared start `s1`, both passing through `s2`.
///
/// The successful one detours through `s2_1`, loops `s2 -> s4_1 -> s2`, then
/// reaches `succ`. The failed one goes straight to `s2` and then into `s3_2`,
/// from which the goal was never reached. With unit costs `d(s1) = 2` and the
/// largest finite distance is 2.
pub fn merged_loop_rollouts() -> TrajectorySet {
    let success = Trajectory::new(
        vec![
            unit_step("s1", 0, "s2_1"),
            unit_step("s2_1", 0, "s2"),
            unit_step("s2", 0, "s4_1"),
            unit_step("s4_1", 0, "s2"),
            unit_step("s2", 1, "succ"),
        ],
        Outcome::Success,
    )
    .expect("valid chain");
    let failure = Trajectory::new(
        vec![unit_step("s1", 1, "s2"), unit_step("s2", 2, "s3_2")],
        Outcome::FailTerminal,
    )
    .expect("valid chain");
    TrajectorySet::new("merged-loop", vec![success, failure], 10.0, -0.1).expect("valid set")
}

//! Trajectories, canonical state identity and the rollout file format.

mod io;
mod key;

pub use io::{read_rollouts, write_rollouts};
pub use key::{canonical_state_key, ComponentValue, StateKey};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into an environment's fixed action set.
pub type ActionId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    /// Ended in an absorbing failure state.
    FailTerminal,
    /// Hit the step limit without success. Scores like a failure.
    Truncated,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        matches!(self, Outcome::Success)
    }
}

/// One environment transition `(s, a, s', c)` plus the per-step shaping
/// penalty the environment reported.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: StateKey,
    pub action: ActionId,
    pub next_state: StateKey,
    pub cost: f64,
    pub env_penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub outcome: Outcome,
    pub terminal_state: StateKey,
}

impl Trajectory {
    /// Builds a trajectory whose terminal state is the last step's successor.
    pub fn new(steps: Vec<Step>, outcome: Outcome) -> Result<Self> {
        let terminal_state = steps
            .last()
            .map(|s| s.next_state.clone())
            .ok_or_else(|| Error::Validation("trajectory has no steps".into()))?;
        let traj = Trajectory {
            steps,
            outcome,
            terminal_state,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn initial_state(&self) -> &StateKey {
        &self.steps[0].state
    }

    /// Checks step chaining, positive costs and the terminal state.
    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.steps.last() else {
            return Err(Error::Validation("trajectory has no steps".into()));
        };
        for (t, step) in self.steps.iter().enumerate() {
            if !(step.cost.is_finite() && step.cost > 0.0) {
                return Err(Error::Validation(format!(
                    "step {t}: cost must be positive and finite, got {}",
                    step.cost
                )));
            }
            if !step.env_penalty.is_finite() {
                return Err(Error::Validation(format!("step {t}: non-finite penalty")));
            }
        }
        for (t, pair) in self.steps.windows(2).enumerate() {
            if pair[0].next_state != pair[1].state {
                return Err(Error::Validation(format!(
                    "step {}: state does not match previous step's next state",
                    t + 1
                )));
            }
        }
        if last.next_state != self.terminal_state {
            return Err(Error::Validation(
                "terminal state differs from the last step's next state".into(),
            ));
        }
        Ok(())
    }
}

/// One rollout group: `M` trajectories sampled from identical resets of a
/// single task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub task_id: String,
    pub trajectories: Vec<Trajectory>,
    pub r_succ: f64,
    pub invalid_penalty: f64,
}

impl TrajectorySet {
    pub fn new(
        task_id: impl Into<String>,
        trajectories: Vec<Trajectory>,
        r_succ: f64,
        invalid_penalty: f64,
    ) -> Result<Self> {
        let set = TrajectorySet {
            task_id: task_id.into(),
            trajectories,
            r_succ,
            invalid_penalty,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn group_size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn success_count(&self) -> usize {
        self.trajectories
            .iter()
            .filter(|t| t.outcome.is_success())
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::Validation("trajectory set is empty".into()));
        }
        if !(self.r_succ.is_finite() && self.r_succ > 0.0) {
            return Err(Error::Validation(format!(
                "r_succ must be positive, got {}",
                self.r_succ
            )));
        }
        let initial = self.trajectories[0].steps.first().map(|s| &s.state);
        for (m, traj) in self.trajectories.iter().enumerate() {
            traj.validate()
                .map_err(|e| Error::Validation(format!("trajectory {m}: {e}")))?;
            if Some(traj.initial_state()) != initial {
                return Err(Error::Validation(format!(
                    "trajectory {m} starts from a different initial state"
                )));
            }
        }
        Ok(())
    }

    /// Returns `R(τ_m)` for every trajectory, in order.
    pub fn returns(&self) -> Vec<f64> {
        self.trajectories
            .iter()
            .map(|t| trajectory_return(t, self.r_succ))
            .collect()
    }
}

/// Sparse outcome reward plus the sum of per-step penalties.
pub fn trajectory_return(traj: &Trajectory, r_succ: f64) -> f64 {
    let outcome = if traj.outcome.is_success() { r_succ } else { 0.0 };
    outcome + traj.steps.iter().map(|s| s.env_penalty).sum::<f64>()
}

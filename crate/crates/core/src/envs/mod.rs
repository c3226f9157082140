//! Small deterministic sparse-reward environments.
//!
//! Every environment exposes a fixed action set. Actions that are not
//! admissible in the current state leave the state unchanged and carry the
//! invalid-action penalty, mirroring an agent that emits a malformed action.

pub mod chain;
pub mod keydoor;
pub mod sokoban;

pub use chain::ChainTrap;
pub use keydoor::KeyDoorGrid;
pub use sokoban::MiniSokoban;

use std::fmt::Debug;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{ActionId, StateKey};

pub const INVALID_ACTION_PENALTY: f64 = -0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Running,
    Success,
    /// Absorbing failure; the goal is unreachable from here.
    Trap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub next: S,
    pub status: Status,
    pub cost: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub max_steps: usize,
    pub action_names: &'static [&'static str],
}

impl EnvSpec {
    pub fn action_count(&self) -> usize {
        self.action_names.len()
    }
}

pub trait Environment: Send + Sync {
    type State: Clone + Eq + Hash + Debug + Send + Sync;

    fn spec(&self) -> &EnvSpec;

    fn reset(&self, task_seed: u64) -> Self::State;

    fn status(&self, state: &Self::State) -> Status;

    fn admissible_actions(&self, state: &Self::State) -> Vec<ActionId>;

    /// Applies an admissible action. Only called with admissible actions on
    /// running states.
    fn apply(&self, state: &Self::State, action: ActionId) -> Self::State;

    fn state_key(&self, state: &Self::State) -> StateKey;

    /// Unit cost unless an environment says otherwise.
    fn cost(&self, _state: &Self::State, _action: ActionId) -> f64 {
        1.0
    }

    fn step(&self, state: &Self::State, action: ActionId) -> Result<Transition<Self::State>> {
        if action as usize >= self.spec().action_count() {
            return Err(Error::Env(format!(
                "{}: action {action} outside the action set of size {}",
                self.spec().name,
                self.spec().action_count()
            )));
        }
        let status = self.status(state);
        if status != Status::Running {
            // terminal states self-loop
            return Ok(Transition {
                next: state.clone(),
                status,
                cost: self.cost(state, action),
                penalty: 0.0,
            });
        }
        let admissible = self.admissible_actions(state).contains(&action);
        let (next, penalty) = if admissible {
            (self.apply(state, action), 0.0)
        } else {
            (state.clone(), INVALID_ACTION_PENALTY)
        };
        let status = self.status(&next);
        Ok(Transition {
            next,
            status,
            cost: self.cost(state, action),
            penalty,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    ChainTrap,
    KeyDoor,
    MiniSokoban,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::ChainTrap, EnvKind::KeyDoor, EnvKind::MiniSokoban];

    /// Distance discount used when none is configured.
    pub fn default_omega(self) -> f64 {
        match self {
            EnvKind::ChainTrap | EnvKind::KeyDoor => 0.1,
            EnvKind::MiniSokoban => 0.8,
        }
    }

    pub fn default_max_steps(self) -> usize {
        match self {
            EnvKind::ChainTrap => 15,
            EnvKind::KeyDoor => 50,
            EnvKind::MiniSokoban => 15,
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chaintrap" | "chain" => Ok(EnvKind::ChainTrap),
            "keydoor" | "keydoorgrid" => Ok(EnvKind::KeyDoor),
            "minisokoban" | "sokoban" => Ok(EnvKind::MiniSokoban),
            other => Err(Error::Config(format!("unknown environment {other:?}"))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvKind::ChainTrap => "chaintrap",
            EnvKind::KeyDoor => "keydoor",
            EnvKind::MiniSokoban => "minisokoban",
        })
    }
}

/// Calls `$body` with `$env` bound to a concrete environment of `$kind`.
#[macro_export]
macro_rules! with_env {
    ($kind:expr, $max_steps:expr, |$env:ident| $body:expr) => {{
        let max_steps: usize = $max_steps;
        match $kind {
            $crate::envs::EnvKind::ChainTrap => {
                let $env = $crate::envs::ChainTrap::new(6, max_steps);
                $body
            }
            $crate::envs::EnvKind::KeyDoor => {
                let $env = $crate::envs::KeyDoorGrid::new(max_steps);
                $body
            }
            $crate::envs::EnvKind::MiniSokoban => {
                let $env = $crate::envs::MiniSokoban::new(max_steps);
                $body
            }
        }
    }};
}

use super::{EnvSpec, Environment, Status};
use crate::rollout::{canonical_state_key, ActionId, StateKey};

pub const RIGHT: ActionId = 0;
pub const LEFT: ActionId = 1;
pub const DROP: ActionId = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChainState {
    pub pos: u8,
    pub trapped: bool,
}

/// Positions `0..n` on a line with the goal at `n - 1`. `Right` and `Left`
/// move one cell; `Drop` falls into an absorbing trap from anywhere. `Left`
/// at the left end is inadmissible.
#[derive(Debug, Clone)]
pub struct ChainTrap {
    n: u8,
    spec: EnvSpec,
}

impl ChainTrap {
    pub fn new(n: u8, max_steps: usize) -> Self {
        assert!(n >= 2, "chain needs at least two cells");
        ChainTrap {
            n,
            spec: EnvSpec {
                name: "chaintrap",
                max_steps,
                action_names: &["right", "left", "drop"],
            },
        }
    }

    pub fn goal(&self) -> u8 {
        self.n - 1
    }
}

impl Environment for ChainTrap {
    type State = ChainState;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, _task_seed: u64) -> ChainState {
        ChainState {
            pos: 0,
            trapped: false,
        }
    }

    fn status(&self, s: &ChainState) -> Status {
        if s.trapped {
            Status::Trap
        } else if s.pos == self.goal() {
            Status::Success
        } else {
            Status::Running
        }
    }

    fn admissible_actions(&self, s: &ChainState) -> Vec<ActionId> {
        if s.pos == 0 {
            vec![RIGHT, DROP]
        } else {
            vec![RIGHT, LEFT, DROP]
        }
    }

    fn apply(&self, s: &ChainState, action: ActionId) -> ChainState {
        match action {
            RIGHT => ChainState {
                pos: s.pos + 1,
                ..*s
            },
            LEFT => ChainState {
                pos: s.pos - 1,
                ..*s
            },
            _ => ChainState {
                trapped: true,
                ..*s
            },
        }
    }

    fn state_key(&self, s: &ChainState) -> StateKey {
        canonical_state_key(&[
            ("pos", i64::from(s.pos).into()),
            ("trapped", i64::from(s.trapped).into()),
        ])
        .expect("fixed labels")
    }
}

use super::{EnvSpec, Environment, Status};
use crate::rollout::{canonical_state_key, ActionId, StateKey};

pub const UP: ActionId = 0;
pub const DOWN: ActionId = 1;
pub const LEFT: ActionId = 2;
pub const RIGHT: ActionId = 3;

const SIZE: i8 = 4;
const TARGET: (i8, i8) = (2, 2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SokobanState {
    pub player: (i8, i8),
    pub boxed: (i8, i8),
}

/// One box on a 4×4 floor surrounded by walls.
///
/// ```text
///   x: 0 1 2 3
/// y=0  @ . . .
/// y=1  . $ . .
/// y=2  . . T .
/// y=3  . . . .
/// ```
/// Pushing the box into a corner away from the target is an absorbing trap.
/// Walking into a wall, or pushing the box into one, is inadmissible.
#[derive(Debug, Clone)]
pub struct MiniSokoban {
    spec: EnvSpec,
}

impl MiniSokoban {
    pub fn new(max_steps: usize) -> Self {
        MiniSokoban {
            spec: EnvSpec {
                name: "minisokoban",
                max_steps,
                action_names: &["up", "down", "left", "right"],
            },
        }
    }

    fn delta(action: ActionId) -> (i8, i8) {
        match action {
            UP => (0, -1),
            DOWN => (0, 1),
            LEFT => (-1, 0),
            _ => (1, 0),
        }
    }

    fn inside((x, y): (i8, i8)) -> bool {
        (0..SIZE).contains(&x) && (0..SIZE).contains(&y)
    }

    fn is_corner((x, y): (i8, i8)) -> bool {
        (x == 0 || x == SIZE - 1) && (y == 0 || y == SIZE - 1)
    }
}

impl Environment for MiniSokoban {
    type State = SokobanState;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, _task_seed: u64) -> SokobanState {
        SokobanState {
            player: (0, 0),
            boxed: (1, 1),
        }
    }

    fn status(&self, s: &SokobanState) -> Status {
        if s.boxed == TARGET {
            Status::Success
        } else if Self::is_corner(s.boxed) {
            Status::Trap
        } else {
            Status::Running
        }
    }

    fn admissible_actions(&self, s: &SokobanState) -> Vec<ActionId> {
        (0..4)
            .filter(|&a| {
                let (dx, dy) = Self::delta(a);
                let to = (s.player.0 + dx, s.player.1 + dy);
                if !Self::inside(to) {
                    return false;
                }
                to != s.boxed || Self::inside((to.0 + dx, to.1 + dy))
            })
            .collect()
    }

    fn apply(&self, s: &SokobanState, action: ActionId) -> SokobanState {
        let (dx, dy) = Self::delta(action);
        let to = (s.player.0 + dx, s.player.1 + dy);
        let boxed = if to == s.boxed {
            (to.0 + dx, to.1 + dy)
        } else {
            s.boxed
        };
        SokobanState { player: to, boxed }
    }

    fn state_key(&self, s: &SokobanState) -> StateKey {
        canonical_state_key(&[
            ("player", format!("{},{}", s.player.0, s.player.1).into()),
            ("box", format!("{},{}", s.boxed.0, s.boxed.1).into()),
        ])
        .expect("fixed labels")
    }
}

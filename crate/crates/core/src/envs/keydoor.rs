use super::{EnvSpec, Environment, Status};
use crate::rollout::{canonical_state_key, ActionId, StateKey};

pub const UP: ActionId = 0;
pub const DOWN: ActionId = 1;
pub const LEFT: ActionId = 2;
pub const RIGHT: ActionId = 3;
pub const PICKUP: ActionId = 4;

const SIZE: i8 = 5;

/// ```text
///   x: 0 1 2 3 4
/// y=0  S . . # .
/// y=1  . K . # .
/// y=2  . . . D .
/// y=3  . ~ . # .
/// y=4  . . . # G
/// ```
/// `S` start, `K` key, `D` door (opens when entered while holding the key),
/// `~` lava (absorbing trap), `G` goal.
const WALL_X: i8 = 3;
const DOOR: (i8, i8) = (3, 2);
const KEY: (i8, i8) = (1, 1);
const LAVA: (i8, i8) = (1, 3);
const GOAL: (i8, i8) = (4, 4);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeyDoorState {
    pub x: i8,
    pub y: i8,
    pub has_key: bool,
    pub door_open: bool,
}

/// A 5×5 grid: fetch the key, open the door in the dividing wall, reach the
/// goal. Walking back and forth revisits cells and produces cycles in the
/// transition graph.
#[derive(Debug, Clone)]
pub struct KeyDoorGrid {
    spec: EnvSpec,
}

impl KeyDoorGrid {
    pub fn new(max_steps: usize) -> Self {
        KeyDoorGrid {
            spec: EnvSpec {
                name: "keydoor",
                max_steps,
                action_names: &["up", "down", "left", "right", "pickup"],
            },
        }
    }

    fn target(s: &KeyDoorState, action: ActionId) -> (i8, i8) {
        match action {
            UP => (s.x, s.y - 1),
            DOWN => (s.x, s.y + 1),
            LEFT => (s.x - 1, s.y),
            _ => (s.x + 1, s.y),
        }
    }

    fn can_enter(s: &KeyDoorState, (x, y): (i8, i8)) -> bool {
        if !(0..SIZE).contains(&x) || !(0..SIZE).contains(&y) {
            return false;
        }
        if (x, y) == DOOR {
            return s.door_open || s.has_key;
        }
        x != WALL_X
    }
}

impl Environment for KeyDoorGrid {
    type State = KeyDoorState;

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, _task_seed: u64) -> KeyDoorState {
        KeyDoorState {
            x: 0,
            y: 0,
            has_key: false,
            door_open: false,
        }
    }

    fn status(&self, s: &KeyDoorState) -> Status {
        if (s.x, s.y) == LAVA {
            Status::Trap
        } else if (s.x, s.y) == GOAL {
            Status::Success
        } else {
            Status::Running
        }
    }

    fn admissible_actions(&self, s: &KeyDoorState) -> Vec<ActionId> {
        let mut out: Vec<ActionId> = [UP, DOWN, LEFT, RIGHT]
            .into_iter()
            .filter(|&a| Self::can_enter(s, Self::target(s, a)))
            .collect();
        if !s.has_key && (s.x, s.y) == KEY {
            out.push(PICKUP);
        }
        out
    }

    fn apply(&self, s: &KeyDoorState, action: ActionId) -> KeyDoorState {
        if action == PICKUP {
            return KeyDoorState { has_key: true, ..*s };
        }
        let (x, y) = Self::target(s, action);
        KeyDoorState {
            x,
            y,
            door_open: s.door_open || (x, y) == DOOR,
            ..*s
        }
    }

    fn state_key(&self, s: &KeyDoorState) -> StateKey {
        canonical_state_key(&[
            ("pos", format!("{},{}", s.x, s.y).into()),
            ("key", i64::from(s.has_key).into()),
            ("door", i64::from(s.door_open).into()),
        ])
        .expect("fixed labels")
    }
}

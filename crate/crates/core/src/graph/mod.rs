//! Aggregation of a rollout group into a state-transition graph, and
//! minimum cost-to-goal distances over it.

mod distance;
mod dot;

pub use distance::{compute_distances, effective_distance, Distance, DistanceMap};
pub use dot::export_dot;

use rustc_hash::FxHashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rollout::{ActionId, Outcome, StateKey, TrajectorySet};

pub type NodeId = usize;
pub type EdgeId = usize;

pub(crate) type KeyIndex = FxHashMap<StateKey, NodeId>;

/// A deduplicated transition `(src, action, dst, cost)`. The positions at
/// which it was observed are available from
/// [`TransitionGraph::occurrences`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: NodeId,
    pub action: ActionId,
    pub dst: NodeId,
    pub cost: f64,
}

/// Rows of variable length packed into one buffer.
#[derive(Debug, Clone, Default)]
struct Packed<T> {
    offsets: Vec<usize>,
    items: Vec<T>,
}

impl<T: Copy + Default> Packed<T> {
    /// Groups `(row, item)` pairs by row, keeping their relative order.
    fn from_pairs(rows: usize, pairs: impl Iterator<Item = (usize, T)> + Clone) -> Self {
        let mut offsets = vec![0usize; rows + 1];
        for (r, _) in pairs.clone() {
            offsets[r + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        let mut items = vec![T::default(); offsets[rows]];
        let mut fill = offsets.clone();
        for (r, item) in pairs {
            items[fill[r]] = item;
            fill[r] += 1;
        }
        Packed { offsets, items }
    }

    fn row(&self, r: usize) -> &[T] {
        &self.items[self.offsets[r]..self.offsets[r + 1]]
    }
}

#[derive(Debug, Clone)]
pub struct TransitionGraph {
    nodes: Vec<StateKey>,
    index: Arc<KeyIndex>,
    /// Nodes sorted by key bytes, and each node's position in that order.
    by_key: Vec<NodeId>,
    rank: Vec<usize>,
    edges: Vec<Edge>,
    occurrences: Packed<(usize, usize)>,
    out_edges: Packed<EdgeId>,
    in_edges: Packed<EdgeId>,
    goal: Vec<bool>,
    fail_terminal: Vec<bool>,
    initial: NodeId,
    /// Row `m` lists the edge taken at every step of trajectory `m`.
    step_edges: Packed<EdgeId>,
}

impl TransitionGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn key(&self, node: NodeId) -> &StateKey {
        &self.nodes[node]
    }

    pub fn keys(&self) -> &[StateKey] {
        &self.nodes
    }

    pub fn node(&self, key: &StateKey) -> Option<NodeId> {
        self.index.get(key).copied()
    }

    pub(crate) fn index(&self) -> &Arc<KeyIndex> {
        &self.index
    }

    /// Nodes in canonical key order.
    pub fn nodes_by_key(&self) -> &[NodeId] {
        &self.by_key
    }

    /// Position of `node` in canonical key order.
    pub fn key_rank(&self, node: NodeId) -> usize {
        self.rank[node]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    /// `(trajectory, step)` positions where edge `id` was taken, in order.
    pub fn occurrences(&self, id: EdgeId) -> &[(usize, usize)] {
        self.occurrences.row(id)
    }

    pub fn out_edges(&self, node: NodeId) -> &[EdgeId] {
        self.out_edges.row(node)
    }

    pub fn in_edges(&self, node: NodeId) -> &[EdgeId] {
        self.in_edges.row(node)
    }

    pub fn is_goal(&self, node: NodeId) -> bool {
        self.goal[node]
    }

    pub fn is_fail_terminal(&self, node: NodeId) -> bool {
        self.fail_terminal[node]
    }

    pub fn goal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&n| self.goal[n])
    }

    pub fn fail_terminals(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&n| self.fail_terminal[n])
    }

    pub fn initial(&self) -> NodeId {
        self.initial
    }

    /// Edge taken at step `t` of trajectory `m`.
    pub fn step_edge(&self, m: usize, t: usize) -> EdgeId {
        self.step_edges.row(m)[t]
    }

    /// Edges taken by trajectory `m`, one per step.
    pub fn trajectory_edges(&self, m: usize) -> &[EdgeId] {
        self.step_edges.row(m)
    }
}

/// Merges every trajectory of `set` into one graph.
///
/// Identical states become one node; identical `(src, action, dst, cost)`
/// transitions become one edge that records all of its occurrences. A
/// trajectory's terminal state is marked as a goal when it succeeded and as a
/// failure terminal otherwise.
pub fn aggregate(set: &TrajectorySet) -> Result<TransitionGraph> {
    let total = set.total_steps();
    let hasher = rustc_hash::FxBuildHasher;
    let mut nodes: Vec<StateKey> = Vec::with_capacity(total + 1);
    let mut index = KeyIndex::with_capacity_and_hasher(total + 1, hasher);
    let mut edges: Vec<Edge> = Vec::with_capacity(total);
    let mut edge_index: FxHashMap<(NodeId, ActionId, NodeId, u64), EdgeId> =
        FxHashMap::with_capacity_and_hasher(total, hasher);
    let mut taken: Vec<EdgeId> = Vec::with_capacity(total);
    let mut traj_of_step: Vec<usize> = Vec::with_capacity(total);

    let mut intern = |key: &StateKey, nodes: &mut Vec<StateKey>| -> NodeId {
        if let Some(&id) = index.get(key) {
            return id;
        }
        let id = nodes.len();
        nodes.push(key.clone());
        index.insert(key.clone(), id);
        id
    };

    let mut terminals: Vec<(NodeId, Outcome)> = Vec::with_capacity(set.trajectories.len());
    for (m, traj) in set.trajectories.iter().enumerate() {
        let mut src = intern(traj.initial_state(), &mut nodes);
        for step in &traj.steps {
            let dst = intern(&step.next_state, &mut nodes);
            let id = *edge_index
                .entry((src, step.action, dst, step.cost.to_bits()))
                .or_insert_with(|| {
                    edges.push(Edge {
                        src,
                        action: step.action,
                        dst,
                        cost: step.cost,
                    });
                    edges.len() - 1
                });
            taken.push(id);
            traj_of_step.push(m);
            src = dst;
        }
        terminals.push((src, traj.outcome));
    }

    let n = nodes.len();
    let mut goal = vec![false; n];
    let mut fail_terminal = vec![false; n];
    for (node, outcome) in terminals {
        if outcome.is_success() {
            goal[node] = true;
        } else {
            fail_terminal[node] = true;
        }
    }
    if let Some(bad) = (0..n).find(|&i| goal[i] && fail_terminal[i]) {
        return Err(Error::Aggregation(format!(
            "state {} is both a goal and a failure terminal",
            nodes[bad]
        )));
    }

    let mut by_key: Vec<NodeId> = (0..n).collect();
    by_key.sort_unstable_by(|&a, &b| nodes[a].cmp(&nodes[b]));
    let mut rank = vec![0usize; n];
    for (r, &node) in by_key.iter().enumerate() {
        rank[node] = r;
    }

    let mut step_start = vec![0usize; set.trajectories.len()];
    for m in 1..set.trajectories.len() {
        step_start[m] = step_start[m - 1] + set.trajectories[m - 1].len();
    }
    let positions = taken
        .iter()
        .zip(&traj_of_step)
        .enumerate()
        .map(|(i, (&e, &m))| (e, (m, i - step_start[m])));
    let occurrences = Packed::from_pairs(edges.len(), positions);
    let step_edges = Packed::from_pairs(set.trajectories.len(), traj_of_step.iter().copied().zip(taken.iter().copied()));
    let out_edges = Packed::from_pairs(n, edges.iter().enumerate().map(|(id, e)| (e.src, id)));
    let in_edges = Packed::from_pairs(n, edges.iter().enumerate().map(|(id, e)| (e.dst, id)));

    Ok(TransitionGraph {
        initial: 0,
        nodes,
        index: Arc::new(index),
        by_key,
        rank,
        edges,
        occurrences,
        out_edges,
        in_edges,
        goal,
        fail_terminal,
        step_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fixtures;
    use crate::rollout::{canonical_state_key, ComponentValue, Step, Trajectory};
    use std::collections::HashSet;

    fn key(pos: i64) -> StateKey {
        canonical_state_key(&[("pos", ComponentValue::Int(pos))]).unwrap()
    }

    #[test]
    fn single_step_success() {
        let t = Trajectory::new(
            vec![Step {
                state: key(0),
                action: 0,
                next_state: key(1),
                cost: 1.0,
                env_penalty: 0.0,
            }],
            Outcome::Success,
        )
        .unwrap();
        let set = TrajectorySet::new("one", vec![t], 10.0, -0.1).unwrap();
        let g = aggregate(&set).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.goal_nodes().collect::<Vec<_>>(), vec![g.node(&key(1)).unwrap()]);
    }

    #[test]
    fn shared_states_merge() {
        let set = fixtures::merged_loop_rollouts();
        let g = aggregate(&set).unwrap();
        let distinct: HashSet<&StateKey> = set
            .trajectories
            .iter()
            .flat_map(|t| t.steps.iter().flat_map(|s| [&s.state, &s.next_state]))
            .collect();
        assert_eq!(g.node_count(), distinct.len());
        assert_eq!(g.node_count(), 6);
        let s1 = g.node(&fixtures::merged_loop_key("s1")).unwrap();
        let s2 = g.node(&fixtures::merged_loop_key("s2")).unwrap();
        assert_eq!(g.out_edges(s1).len(), 2);
        assert_eq!(g.out_edges(s2).len(), 3);
        // s2 is entered from three different steps across both trajectories.
        let into_s2: usize = g.in_edges(s2).iter().map(|&e| g.occurrences(e).len()).sum();
        assert_eq!(into_s2, 3);
    }

    #[test]
    fn duplicate_transitions_are_deduplicated() {
        let st = |a: i64, b: i64| Step {
            state: key(a),
            action: 0,
            next_state: key(b),
            cost: 1.0,
            env_penalty: 0.0,
        };
        let t = Trajectory::new(vec![st(0, 1), st(1, 2)], Outcome::Success).unwrap();
        let set = TrajectorySet::new("dup", vec![t.clone(), t], 10.0, 0.0).unwrap();
        let g = aggregate(&set).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.occurrences(0), &[(0, 0), (1, 0)]);
        assert_eq!(g.step_edge(1, 1), 1);
    }

    #[test]
    fn goal_and_fail_conflict_is_an_error() {
        let st = Step {
            state: key(0),
            action: 0,
            next_state: key(1),
            cost: 1.0,
            env_penalty: 0.0,
        };
        let ok = Trajectory::new(vec![st.clone()], Outcome::Success).unwrap();
        let bad = Trajectory::new(vec![st], Outcome::FailTerminal).unwrap();
        let set = TrajectorySet::new("x", vec![ok, bad], 10.0, 0.0).unwrap();
        assert!(matches!(aggregate(&set), Err(Error::Aggregation(_))));
    }
}

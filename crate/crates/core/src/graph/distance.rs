use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use super::{KeyIndex, NodeId, TransitionGraph};
use crate::error::{Error, Result};
use crate::rollout::StateKey;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distance {
    Finite(f64),
    Unreachable,
}

impl Distance {
    pub fn finite(self) -> Option<f64> {
        match self {
            Distance::Finite(d) => Some(d),
            Distance::Unreachable => None,
        }
    }
}

/// Minimum cost-to-goal for every node of one graph.
///
/// Unreachable nodes are scored as `d_max + 1` wherever a finite value is
/// needed, where `d_max` is the largest finite distance in the graph.
#[derive(Debug, Clone)]
pub struct DistanceMap {
    dist: Vec<Distance>,
    index: Arc<KeyIndex>,
    pub d_max: f64,
    pub effective_unreachable: f64,
}

impl DistanceMap {
    pub(crate) fn from_parts(dist: Vec<Distance>, index: Arc<KeyIndex>) -> Self {
        let d_max = dist
            .iter()
            .filter_map(|d| d.finite())
            .fold(0.0_f64, f64::max);
        DistanceMap {
            dist,
            index,
            d_max,
            effective_unreachable: d_max + 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn get(&self, node: NodeId) -> Distance {
        self.dist[node]
    }

    pub fn as_slice(&self) -> &[Distance] {
        &self.dist
    }

    pub fn lookup(&self, key: &StateKey) -> Result<Distance> {
        self.index
            .get(key)
            .map(|&n| self.dist[n])
            .ok_or_else(|| Error::UnknownState(key.describe()))
    }

    /// Finite distance with the `d_max + 1` substitution applied.
    pub fn effective(&self, node: NodeId) -> f64 {
        match self.dist[node] {
            Distance::Finite(d) => d,
            Distance::Unreachable => self.effective_unreachable,
        }
    }
}

/// `dist[s]` if finite, else `d_max + 1`.
pub fn effective_distance(dm: &DistanceMap, s: &StateKey) -> Result<f64> {
    let node = dm
        .index
        .get(s)
        .ok_or_else(|| Error::UnknownState(s.describe()))?;
    Ok(dm.effective(*node))
}

#[derive(Debug, PartialEq)]
struct Frontier {
    dist: f64,
    rank: usize,
    node: NodeId,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // Reversed so BinaryHeap pops the smallest (distance, key rank) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.rank.cmp(&self.rank))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum cost from every node to any goal node.
///
/// One multi-source Dijkstra over reversed edges, seeded with all goal nodes
/// at distance zero. Ties pop in canonical key order.
pub fn compute_distances(g: &TransitionGraph) -> Result<DistanceMap> {
    if let Some(e) = g.edges().iter().find(|e| !(e.cost.is_finite() && e.cost > 0.0)) {
        return Err(Error::Precondition(format!(
            "edge {} -[{}]-> {} has non-positive cost {}",
            g.key(e.src),
            e.action,
            g.key(e.dst),
            e.cost
        )));
    }
    let n = g.node_count();

    let mut best = vec![f64::INFINITY; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    for goal in g.goal_nodes() {
        best[goal] = 0.0;
        heap.push(Frontier {
            dist: 0.0,
            rank: g.key_rank(goal),
            node: goal,
        });
    }
    while let Some(Frontier { dist, node, .. }) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        for &eid in g.in_edges(node) {
            let e = g.edge(eid);
            let candidate = dist + e.cost;
            if !settled[e.src] && candidate < best[e.src] {
                best[e.src] = candidate;
                heap.push(Frontier {
                    dist: candidate,
                    rank: g.key_rank(e.src),
                    node: e.src,
                });
            }
        }
    }

    let dist = best
        .into_iter()
        .map(|d| {
            if d.is_finite() {
                Distance::Finite(d)
            } else {
                Distance::Unreachable
            }
        })
        .collect();
    Ok(DistanceMap::from_parts(dist, Arc::clone(g.index())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::aggregate;
    use crate::harness::fixtures::{merged_loop_key, merged_loop_rollouts};
    use crate::rollout::{canonical_state_key, ComponentValue, Outcome, Step, Trajectory, TrajectorySet};

    #[test]
    fn merged_loop_distances() {
        let g = aggregate(&merged_loop_rollouts()).unwrap();
        let dm = compute_distances(&g).unwrap();
        let d = |name: &str| dm.lookup(&merged_loop_key(name)).unwrap();
        assert_eq!(d("succ"), Distance::Finite(0.0));
        assert_eq!(d("s2"), Distance::Finite(1.0));
        assert_eq!(d("s1"), Distance::Finite(2.0));
        assert_eq!(d("s2_1"), Distance::Finite(2.0));
        assert_eq!(d("s4_1"), Distance::Finite(2.0));
        assert_eq!(d("s3_2"), Distance::Unreachable);
        assert_eq!(dm.d_max, 2.0);
        assert_eq!(effective_distance(&dm, &merged_loop_key("s3_2")).unwrap(), 3.0);
        assert_eq!(effective_distance(&dm, &merged_loop_key("s1")).unwrap(), 2.0);
    }

    #[test]
    fn unknown_key_is_a_lookup_error() {
        let g = aggregate(&merged_loop_rollouts()).unwrap();
        let dm = compute_distances(&g).unwrap();
        assert!(effective_distance(&dm, &merged_loop_key("nowhere")).is_err());
    }

    #[test]
    fn no_goal_means_everything_maps_to_one() {
        let key = |p: i64| canonical_state_key(&[("p", ComponentValue::Int(p))]).unwrap();
        let st = |a, b| Step {
            state: key(a),
            action: 0,
            next_state: key(b),
            cost: 2.0,
            env_penalty: 0.0,
        };
        let t = Trajectory::new(vec![st(0, 1), st(1, 2), st(2, 0)], Outcome::Truncated).unwrap();
        let set = TrajectorySet::new("nogoal", vec![t], 10.0, 0.0).unwrap();
        let g = aggregate(&set).unwrap();
        let dm = compute_distances(&g).unwrap();
        assert_eq!(dm.d_max, 0.0);
        assert_eq!(dm.effective_unreachable, 1.0);
        for n in 0..g.node_count() {
            assert_eq!(dm.get(n), Distance::Unreachable);
            assert_eq!(dm.effective(n), 1.0);
        }
    }
}

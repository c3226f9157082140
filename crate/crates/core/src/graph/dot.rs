use std::fmt::Write as _;

use super::{DistanceMap, TransitionGraph};
use crate::graph::Distance;

const LABEL_WIDTH: usize = 32;

fn node_label(text: &str) -> String {
    let mut label: String = text.chars().take(LABEL_WIDTH).collect();
    if text.chars().count() > LABEL_WIDTH {
        label.push_str("...");
    }
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders the graph as a DOT digraph. Nodes are numbered in canonical key
/// order and edges sorted, so the output is a pure function of the graph.
pub fn export_dot(g: &TransitionGraph, dm: &DistanceMap) -> String {
    let rank = |n: usize| g.key_rank(n);

    let mut out = String::from("digraph transitions {\n");
    for &n in g.nodes_by_key() {
        let dist = match dm.get(n) {
            Distance::Finite(d) => format!("{d}"),
            Distance::Unreachable => "inf".to_string(),
        };
        let shape = if g.is_goal(n) {
            ", shape=doublecircle"
        } else if g.is_fail_terminal(n) {
            ", shape=box"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\\nd={}\"{}];",
            rank(n),
            node_label(&g.key(n).describe()),
            dist,
            shape
        );
    }
    let mut edges: Vec<_> = g.edges().iter().collect();
    edges.sort_by(|a, b| {
        (rank(a.src), a.action, rank(a.dst))
            .cmp(&(rank(b.src), b.action, rank(b.dst)))
            .then(a.cost.total_cmp(&b.cost))
    });
    for e in edges {
        let _ = writeln!(
            out,
            "  n{} -> n{} [label=\"{}:{}\"];",
            rank(e.src), rank(e.dst), e.action, e.cost
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{aggregate, compute_distances};
    use crate::harness::fixtures::merged_loop_rollouts;
    use crate::rollout::{canonical_state_key, ComponentValue, Outcome, Step, Trajectory, TrajectorySet};

    #[test]
    fn minimal_graph_has_five_lines() {
        let key = |p: i64| canonical_state_key(&[("pos", ComponentValue::Int(p))]).unwrap();
        let t = Trajectory::new(
            vec![Step {
                state: key(0),
                action: 1,
                next_state: key(1),
                cost: 1.0,
                env_penalty: 0.0,
            }],
            Outcome::Success,
        )
        .unwrap();
        let set = TrajectorySet::new("min", vec![t], 10.0, 0.0).unwrap();
        let g = aggregate(&set).unwrap();
        let dm = compute_distances(&g).unwrap();
        let dot = export_dot(&g, &dm);
        assert_eq!(dot.lines().count(), 5, "{dot}");
        assert_eq!(
            dot,
            "digraph transitions {\n  n0 [label=\"pos=0\\nd=1\"];\n  n1 [label=\"pos=1\\nd=0\", shape=doublecircle];\n  n0 -> n1 [label=\"1:1\"];\n}\n"
        );
    }

    #[test]
    fn export_is_deterministic() {
        let set = merged_loop_rollouts();
        let render = || {
            let g = aggregate(&set).unwrap();
            let dm = compute_distances(&g).unwrap();
            export_dot(&g, &dm)
        };
        let a = render();
        assert_eq!(a, render());
        // six merged nodes, seven distinct edges
        assert_eq!(a.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count(), 6);
        assert_eq!(a.lines().filter(|l| l.contains("->")).count(), 7);
    }

    #[test]
    fn long_labels_are_truncated() {
        assert_eq!(node_label(&"x".repeat(40)), format!("{}...", "x".repeat(32)));
        assert_eq!(node_label("a\"b"), "a\\\"b");
    }
}

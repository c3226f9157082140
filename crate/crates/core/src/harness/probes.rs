//! Oracles and property probes for distances, monotonicity and variance.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;

use crate::credit::{build_step_groups, graph_advantages_grouped, CreditParams};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::graph::{aggregate, compute_distances, Distance, DistanceMap, EdgeId, TransitionGraph};
use crate::policy::TabularPolicy;
use crate::rollout::{canonical_state_key, ActionId, Outcome, StateKey, Step, Trajectory, TrajectorySet};

use super::sampling::{rollout_group, Sampling};

/// Bellman-Ford relaxation on reversed edges until nothing changes.
pub fn brute_force_distances(g: &TransitionGraph) -> DistanceMap {
    let mut best = vec![f64::INFINITY; g.node_count()];
    for goal in g.goal_nodes() {
        best[goal] = 0.0;
    }
    loop {
        let mut changed = false;
        for e in g.edges() {
            let via = best[e.dst] + e.cost;
            if via < best[e.src] {
                best[e.src] = via;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let dist = best
        .into_iter()
        .map(|d| if d.is_finite() { Distance::Finite(d) } else { Distance::Unreachable })
        .collect();
    DistanceMap::from_parts(dist, std::sync::Arc::clone(g.index()))
}

/// Shape of the random rollout groups behind [`random_trajectory_set`].
#[derive(Debug, Clone, Copy)]
pub struct RandomGraphSpec {
    pub max_nodes: usize,
    pub costs: &'static [f64],
    pub max_len: usize,
    pub max_trajectories: usize,
    /// Let a `(state, action)` pair lead to one of two successors.
    pub stochastic: bool,
}

impl Default for RandomGraphSpec {
    fn default() -> Self {
        RandomGraphSpec {
            max_nodes: 12,
            costs: &[1.0, 2.0, 3.0],
            max_len: 15,
            max_trajectories: 6,
            stochastic: false,
        }
    }
}

fn node_key(i: usize) -> StateKey {
    canonical_state_key(&[("node", (i as i64).into())]).expect("single label")
}

/// Random walks over a random labelled transition system of at most
/// `spec.max_nodes` states, all starting from state 0.
pub fn random_trajectory_set<R: Rng + ?Sized>(spec: &RandomGraphSpec, rng: &mut R) -> TrajectorySet {
    let n = rng.random_range(2..=spec.max_nodes.max(2));
    let goal_count = rng.random_range(0..=2.min(n - 1));
    let mut is_goal = vec![false; n];
    for _ in 0..goal_count {
        is_goal[rng.random_range(1..n)] = true;
    }
    // successors[s][a] = [(dst, cost); 1 or 2]
    let successors: Vec<Vec<Vec<(usize, f64)>>> = (0..n)
        .map(|_| {
            (0..rng.random_range(1..=3))
                .map(|_| {
                    let branches = if spec.stochastic && rng.random_bool(0.3) { 2 } else { 1 };
                    (0..branches)
                        .map(|_| {
                            let c = spec.costs[rng.random_range(0..spec.costs.len())];
                            (rng.random_range(0..n), c)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let group = rng.random_range(1..=spec.max_trajectories.max(1));
    let trajectories = (0..group)
        .map(|_| {
            let len = rng.random_range(1..=spec.max_len.max(1));
            let mut s = 0usize;
            let mut steps = Vec::with_capacity(len);
            let mut outcome = if rng.random_bool(0.5) { Outcome::Truncated } else { Outcome::FailTerminal };
            for _ in 0..len {
                let a = rng.random_range(0..successors[s].len());
                let options = &successors[s][a];
                let (dst, cost) = options[rng.random_range(0..options.len())];
                steps.push(Step {
                    state: node_key(s),
                    action: a as ActionId,
                    next_state: node_key(dst),
                    cost,
                    env_penalty: 0.0,
                });
                s = dst;
                if is_goal[s] {
                    outcome = Outcome::Success;
                    break;
                }
            }
            Trajectory::new(steps, outcome).expect("chained by construction")
        })
        .collect::<Vec<_>>();
    // walks stop on goals, so a failed walk never ends on one
    TrajectorySet::new("random", trajectories, 10.0, 0.0).expect("shared start")
}

/// Two out-edges of one node whose exponents `d(s') + c` are strictly
/// ordered but whose advantages are not.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityViolation {
    pub source: StateKey,
    /// Edge with the smaller exponent.
    pub closer: EdgeId,
    pub farther: EdgeId,
    pub closer_adv: f64,
    pub farther_adv: f64,
}

/// Checks that within every step group a smaller exponent means a strictly
/// larger advantage.
pub fn monotonicity_probe(g: &TransitionGraph, dm: &DistanceMap, p: &CreditParams) -> Vec<MonotonicityViolation> {
    let groups = build_step_groups(g);
    let ga = graph_advantages_grouped(g, dm, p, &groups);
    let exponent = |e: EdgeId| dm.effective(g.edge(e).dst) + g.edge(e).cost;
    let mut out = Vec::new();
    for (src, members) in groups.iter() {
        for &i in members {
            for &j in members {
                if exponent(i) < exponent(j) && ga.advantages[i] <= ga.advantages[j] {
                    out.push(MonotonicityViolation {
                        source: g.key(src).clone(),
                        closer: i,
                        farther: j,
                        closer_adv: ga.advantages[i],
                        farther_adv: ga.advantages[j],
                    });
                }
            }
        }
    }
    out
}

/// Conditional-variance statistics for one edge, pooled over batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVariance {
    pub source: StateKey,
    pub action: ActionId,
    pub target: StateKey,
    pub visits: usize,
    pub success_visits: usize,
    pub failure_visits: usize,
    /// Batches in which the edge occurred at least twice.
    pub batches: usize,
    /// Mean within-batch variance of the graph reward.
    pub var_graph: f64,
    /// Mean within-batch variance of the undiscounted return.
    pub var_grpo: f64,
    /// Mean within-batch variance of the discounted return.
    pub var_gigpo: f64,
    /// Batches where the graph variance exceeded either trajectory variance
    /// by more than the tolerance.
    pub violations: usize,
}

impl EdgeVariance {
    pub fn qualifies(&self, min_visits: usize) -> bool {
        self.visits >= min_visits && self.success_visits > 0 && self.failure_visits > 0
    }
}

fn population_variance(xs: &[f64]) -> f64 {
    if xs.iter().all(|x| *x == xs[0]) {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

#[derive(Default)]
struct Accum {
    visits: usize,
    success: usize,
    failure: usize,
    batches: usize,
    var_graph: f64,
    var_grpo: f64,
    var_gigpo: f64,
    violations: usize,
}

pub const VARIANCE_TOLERANCE: f64 = 1e-12;

/// Samples `batches` rollout groups of size `group_size` with `pol` and
/// compares, edge by edge and batch by batch, the spread of graph rewards
/// with the spread of trajectory-level feedback on the same edge.
///
/// Each batch gets its own graph. Edges are returned in key order.
#[allow(clippy::too_many_arguments)]
pub fn variance_probe<E: Environment, R: Rng + ?Sized>(
    env: &E,
    pol: &TabularPolicy,
    batches: usize,
    group_size: usize,
    p: &CreditParams,
    rng: &mut R,
) -> Result<Vec<EdgeVariance>> {
    if batches == 0 {
        return Err(Error::Precondition("variance probe needs at least one batch".into()));
    }
    let mut acc: BTreeMap<(StateKey, ActionId, StateKey), Accum> = BTreeMap::new();
    for _ in 0..batches {
        let set = rollout_group(
            env,
            pol,
            group_size,
            env.spec().max_steps,
            0,
            Sampling::Temperature(1.0),
            p.r_succ,
            rng,
        )?;
        let g = aggregate(&set)?;
        let dm = compute_distances(&g)?;
        let ga = graph_advantages_grouped(&g, &dm, p, &build_step_groups(&g));
        let returns = set.returns();
        for (id, e) in g.edges().iter().enumerate() {
            let mut xg = Vec::with_capacity(g.occurrences(id).len());
            let mut xs = Vec::with_capacity(g.occurrences(id).len());
            let mut xd = Vec::with_capacity(g.occurrences(id).len());
            let slot = acc
                .entry((g.key(e.src).clone(), e.action, g.key(e.dst).clone()))
                .or_default();
            for &(m, t) in g.occurrences(id) {
                let len = set.trajectories[m].len();
                xg.push(ga.rewards[id]);
                xs.push(returns[m]);
                xd.push(p.gigpo_lambda.powi((len - 1 - t) as i32) * returns[m]);
                slot.visits += 1;
                if set.trajectories[m].outcome.is_success() {
                    slot.success += 1;
                } else {
                    slot.failure += 1;
                }
            }
            if xg.len() < 2 {
                continue;
            }
            let (vg, vs, vd) = (population_variance(&xg), population_variance(&xs), population_variance(&xd));
            slot.batches += 1;
            slot.var_graph += vg;
            slot.var_grpo += vs;
            slot.var_gigpo += vd;
            if vg > vs + VARIANCE_TOLERANCE || vg > vd + VARIANCE_TOLERANCE {
                slot.violations += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((source, action, target), a)| {
            let b = a.batches.max(1) as f64;
            EdgeVariance {
                source,
                action,
                target,
                visits: a.visits,
                success_visits: a.success,
                failure_visits: a.failure,
                batches: a.batches,
                var_graph: a.var_graph / b,
                var_grpo: a.var_grpo / b,
                var_gigpo: a.var_gigpo / b,
                violations: a.violations,
            }
        })
        .collect())
}

/// Plain-text table of the qualifying edges.
pub fn format_variance_report(rows: &[EdgeVariance], min_visits: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<40} {:>6} {:>6} {:>6} {:>12} {:>12} {:>12} {:>5}",
        "edge", "visits", "succ", "fail", "var_graph", "var_grpo", "var_gigpo", "viol"
    );
    for r in rows.iter().filter(|r| r.qualifies(min_visits)) {
        let edge = format!("{} -[{}]-> {}", r.source, r.action, r.target);
        let _ = writeln!(
            out,
            "{:<40} {:>6} {:>6} {:>6} {:>12.6e} {:>12.6e} {:>12.6e} {:>5}",
            edge, r.visits, r.success_visits, r.failure_visits, r.var_graph, r.var_grpo, r.var_gigpo, r.violations
        );
    }
    out
}

/// Plain-text `node distance` table in canonical key order.
pub fn format_distance_table(g: &TransitionGraph, dm: &DistanceMap) -> String {
    let mut order: Vec<usize> = (0..g.node_count()).collect();
    order.sort_by(|&a, &b| g.key(a).cmp(g.key(b)));
    let mut out = String::from("node\tdistance\n");
    for n in order {
        let d = match dm.get(n) {
            Distance::Finite(d) => format!("{d}"),
            Distance::Unreachable => format!("inf ({})", dm.effective_unreachable),
        };
        let _ = writeln!(out, "{}\t{}", g.key(n), d);
    }
    out
}

/// Compares two distance maps node by node.
pub fn distances_agree(a: &DistanceMap, b: &DistanceMap) -> bool {
    a.len() == b.len() && a.as_slice() == b.as_slice() && a.d_max == b.d_max
}

/// Count of each outcome, for reports.
pub fn outcome_counts(set: &TrajectorySet) -> HashMap<Outcome, usize> {
    let mut out = HashMap::new();
    for t in &set.trajectories {
        *out.entry(t.outcome).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ChainTrap;
    use crate::harness::fixtures::{merged_loop_key, merged_loop_rollouts};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bellman_ford_on_merged_loop() {
        let g = aggregate(&merged_loop_rollouts()).unwrap();
        let dm = brute_force_distances(&g);
        assert_eq!(dm.lookup(&merged_loop_key("s1")).unwrap(), Distance::Finite(2.0));
        assert_eq!(dm.d_max, 2.0);
        assert!(distances_agree(&dm, &compute_distances(&g).unwrap()));
    }

    #[test]
    fn goal_free_graph_is_unreachable_everywhere() {
        let traj = Trajectory::new(
            vec![Step {
                state: node_key(0),
                action: 0,
                next_state: node_key(1),
                cost: 1.0,
                env_penalty: 0.0,
            }],
            Outcome::Truncated,
        )
        .unwrap();
        let set = TrajectorySet::new("t", vec![traj], 10.0, 0.0).unwrap();
        let dm = brute_force_distances(&aggregate(&set).unwrap());
        assert!(dm.as_slice().iter().all(|d| *d == Distance::Unreachable));
    }

    #[test]
    fn random_graphs_agree_with_dijkstra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for stochastic in [false, true] {
            let spec = RandomGraphSpec { stochastic, ..RandomGraphSpec::default() };
            for _ in 0..200 {
                let set = random_trajectory_set(&spec, &mut rng);
                let g = aggregate(&set).unwrap();
                assert!(g.node_count() <= 12);
                assert!(distances_agree(&compute_distances(&g).unwrap(), &brute_force_distances(&g)));
            }
        }
    }

    #[test]
    fn merged_loop_is_monotone() {
        let g = aggregate(&merged_loop_rollouts()).unwrap();
        let dm = compute_distances(&g).unwrap();
        assert!(monotonicity_probe(&g, &dm, &CreditParams::default()).is_empty());
    }

    #[test]
    fn reversed_ordering_is_reported() {
        // a negative success reward inverts every ordering
        let g = aggregate(&merged_loop_rollouts()).unwrap();
        let dm = compute_distances(&g).unwrap();
        let inverted = CreditParams { omega: 0.5, r_succ: -10.0, ..CreditParams::default() };
        assert!(!monotonicity_probe(&g, &dm, &inverted).is_empty());
    }

    #[test]
    fn graph_feedback_never_spreads_within_a_batch() {
        let env = ChainTrap::new(6, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = CreditParams::default();
        let rows = variance_probe(&env, &TabularPolicy::new(), 200, 8, &p, &mut rng).unwrap();
        assert!(rows.iter().all(|r| r.var_graph == 0.0 && r.violations == 0));
        assert!(rows.iter().any(|r| r.qualifies(30) && r.var_grpo > 0.0));
        let table = format_variance_report(&rows, 30);
        assert!(table.lines().count() > 1);
    }
}

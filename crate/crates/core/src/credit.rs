//! Advantage estimation.
//!
//! Three estimators share the group-normalization rules below:
//!
//! * graph advantage `A^G`: each edge is rewarded `r_succ · ω^(d(s') + c)`
//!   and normalized against the other edges leaving the same node;
//! * episode advantage `A^E`: trajectory returns normalized over the rollout
//!   group (GRPO);
//! * anchor-state step advantage `A^S`: discounted returns
//!   `λ^(T_m - 1 - t) R(τ_m)` for zero-based `t`, normalized over all steps
//!   that start from the same state (GiGPO).
//!
//! Normalization uses the population standard deviation. A group of size one,
//! or one whose deviation is at most `std_floor` times the group's largest
//! absolute value, yields all-zero advantages.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DistanceMap, Edge, EdgeId, NodeId, TransitionGraph};
use crate::rollout::TrajectorySet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreditParams {
    /// Distance discount `ω`, strictly inside (0, 1).
    pub omega: f64,
    pub r_succ: f64,
    pub beta_g: f64,
    pub beta_e: f64,
    /// Within-trajectory discount `λ` for the GiGPO baseline.
    pub gigpo_lambda: f64,
    pub std_floor: f64,
    /// Weight each edge by its occurrence count in the group statistics.
    pub occurrence_weighted: bool,
}

impl Default for CreditParams {
    fn default() -> Self {
        CreditParams {
            omega: 0.1,
            r_succ: 10.0,
            beta_g: 1.0,
            beta_e: 1.0,
            gigpo_lambda: 0.95,
            std_floor: 1e-8,
            occurrence_weighted: false,
        }
    }
}

impl CreditParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::Config(format!("omega must lie in (0,1), got {}", self.omega)));
        }
        if !(self.r_succ > 0.0 && self.r_succ.is_finite()) {
            return Err(Error::Config(format!("r_succ must be positive, got {}", self.r_succ)));
        }
        if !(self.beta_g >= 0.0 && self.beta_e >= 0.0) {
            return Err(Error::Config("balancing factors must be non-negative".into()));
        }
        if !(self.gigpo_lambda > 0.0 && self.gigpo_lambda <= 1.0) {
            return Err(Error::Config(format!(
                "gigpo_lambda must lie in (0,1], got {}",
                self.gigpo_lambda
            )));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::Config("std_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Which advantage the policy update consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// `β^G·A^G + β^E·A^E`
    GraphGpo,
    /// `β^E·A^E`; the graph term is dropped.
    Grpo,
    /// `β^G·A^S + β^E·A^E`
    GiGpo,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graphgpo" => Ok(Estimator::GraphGpo),
            "grpo" => Ok(Estimator::Grpo),
            "gigpo" => Ok(Estimator::GiGpo),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::GraphGpo => "graphgpo",
            Estimator::Grpo => "grpo",
            Estimator::GiGpo => "gigpo",
        })
    }
}

/// Normalizes `values` to zero mean and unit population deviation.
/// `weights`, when given, must be positive and the same length.
pub fn group_normalize(values: &[f64], weights: Option<&[f64]>, std_floor: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    group_normalize_into(values, weights, std_floor, &mut out);
    out
}

/// [`group_normalize`] writing into `out`, which must match `values` in
/// length.
pub fn group_normalize_into(values: &[f64], weights: Option<&[f64]>, std_floor: f64, out: &mut [f64]) {
    out.fill(0.0);
    if values.len() < 2 {
        return;
    }
    let (mean, var) = match weights {
        None => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var)
        }
        Some(w) => {
            let total: f64 = w.iter().sum();
            let mean = values.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / total;
            let var = values
                .iter()
                .zip(w)
                .map(|(v, w)| w * (v - mean).powi(2))
                .sum::<f64>()
                / total;
            (mean, var)
        }
    };
    let std = var.sqrt();
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if std <= std_floor * scale {
        return;
    }
    for (o, v) in out.iter_mut().zip(values) {
        *o = (v - mean) / std;
    }
}

/// `r_succ · ω^(d_eff(dst) + cost)`.
pub fn graph_step_reward(e: &Edge, dm: &DistanceMap, p: &CreditParams) -> f64 {
    p.r_succ * p.omega.powf(dm.effective(e.dst) + e.cost)
}

/// Out-edges of every node that has any, in canonical key order of the
/// source node. Each edge appears in exactly one group.
#[derive(Debug, Clone)]
pub struct StepGroups<'g> {
    graph: &'g TransitionGraph,
    sources: Vec<NodeId>,
}

impl<'g> StepGroups<'g> {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn sources(&self) -> &[NodeId] {
        &self.sources
    }

    /// `(source, members)` pairs in key order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &'g [EdgeId])> + '_ {
        self.sources.iter().map(|&n| (n, self.graph.out_edges(n)))
    }

    pub fn get(&self, node: NodeId) -> Option<&'g [EdgeId]> {
        let members = self.graph.out_edges(node);
        (!members.is_empty()).then_some(members)
    }
}

pub fn build_step_groups(g: &TransitionGraph) -> StepGroups<'_> {
    StepGroups {
        graph: g,
        sources: g
            .nodes_by_key()
            .iter()
            .copied()
            .filter(|&n| !g.out_edges(n).is_empty())
            .collect(),
    }
}

/// Per-edge graph rewards and advantages, indexed by [`EdgeId`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphAdvantages {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

pub fn graph_advantages(g: &TransitionGraph, dm: &DistanceMap, p: &CreditParams) -> GraphAdvantages {
    let groups = build_step_groups(g);
    graph_advantages_grouped(g, dm, p, &groups)
}

pub fn graph_advantages_grouped(
    g: &TransitionGraph,
    dm: &DistanceMap,
    p: &CreditParams,
    groups: &StepGroups<'_>,
) -> GraphAdvantages {
    let rewards: Vec<f64> = g.edges().iter().map(|e| graph_step_reward(e, dm, p)).collect();
    let mut advantages = vec![0.0; rewards.len()];
    let (mut values, mut weights, mut normed) = (Vec::new(), Vec::new(), Vec::new());
    for (_, members) in groups.iter() {
        values.clear();
        values.extend(members.iter().map(|&e| rewards[e]));
        weights.clear();
        if p.occurrence_weighted {
            weights.extend(members.iter().map(|&e| g.occurrences(e).len() as f64));
        }
        normed.resize(members.len(), 0.0);
        let w = p.occurrence_weighted.then_some(weights.as_slice());
        group_normalize_into(&values, w, p.std_floor, &mut normed);
        for (&e, &a) in members.iter().zip(&normed) {
            advantages[e] = a;
        }
    }
    GraphAdvantages { rewards, advantages }
}

/// GRPO-style episode advantages over the group's trajectory returns.
pub fn episode_advantages(set: &TrajectorySet, p: &CreditParams) -> Vec<f64> {
    group_normalize(&set.returns(), None, p.std_floor)
}

/// GiGPO-style step advantages, indexed `[m][t]`.
///
/// Step `t` (zero-based) of a trajectory of length `T_m` is rewarded
/// `λ^(T_m - 1 - t) · R(τ_m)`, so the final step gets the undiscounted return.
pub fn gigpo_step_advantages(set: &TrajectorySet, g: &TransitionGraph, p: &CreditParams) -> Vec<Vec<f64>> {
    let returns = set.returns();
    let mut by_state: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); g.node_count()];
    for (m, traj) in set.trajectories.iter().enumerate() {
        let len = traj.len();
        for t in 0..len {
            let src = g.edge(g.step_edge(m, t)).src;
            let reward = p.gigpo_lambda.powi((len - 1 - t) as i32) * returns[m];
            by_state[src].push((m, t, reward));
        }
    }
    let mut out: Vec<Vec<f64>> = set.trajectories.iter().map(|t| vec![0.0; t.len()]).collect();
    for members in by_state.iter().filter(|v| !v.is_empty()) {
        let values: Vec<f64> = members.iter().map(|x| x.2).collect();
        let normed = group_normalize(&values, None, p.std_floor);
        for (&(m, t, _), a) in members.iter().zip(normed) {
            out[m][t] = a;
        }
    }
    out
}

/// Every advantage signal for one rollout group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTable {
    pub estimator: Estimator,
    /// `R^G` per edge.
    pub edge_reward: Vec<f64>,
    /// `A^G` per edge.
    pub edge_adv: Vec<f64>,
    /// `A^E` per trajectory.
    pub episode_adv: Vec<f64>,
    /// Final per-step advantage, `[m][t]`.
    pub step_adv: Vec<Vec<f64>>,
    /// `A^S`, only for the GiGPO estimator.
    pub gigpo_step_adv: Option<Vec<Vec<f64>>>,
}

impl AdvantageTable {
    /// Mean of `|A^G|` over edges; zero for an empty graph.
    pub fn mean_abs_edge_adv(&self) -> f64 {
        if self.edge_adv.is_empty() {
            return 0.0;
        }
        self.edge_adv.iter().map(|a| a.abs()).sum::<f64>() / self.edge_adv.len() as f64
    }
}

/// `β^G·A^G(e) + β^E·A^E(τ_m)` for every occurrence `(m, t)` of every edge.
pub fn combined_advantages(
    set: &TrajectorySet,
    g: &TransitionGraph,
    dm: &DistanceMap,
    p: &CreditParams,
) -> AdvantageTable {
    advantage_table(Estimator::GraphGpo, set, g, dm, p)
}

pub fn advantage_table(
    estimator: Estimator,
    set: &TrajectorySet,
    g: &TransitionGraph,
    dm: &DistanceMap,
    p: &CreditParams,
) -> AdvantageTable {
    let ga = graph_advantages(g, dm, p);
    let episode_adv = episode_advantages(set, p);
    let (beta_g, gigpo) = match estimator {
        Estimator::GraphGpo => (p.beta_g, None),
        Estimator::Grpo => (0.0, None),
        Estimator::GiGpo => (p.beta_g, Some(gigpo_step_advantages(set, g, p))),
    };
    let step_adv = set
        .trajectories
        .iter()
        .enumerate()
        .map(|(m, _)| {
            let episode_term = p.beta_e * episode_adv[m];
            match &gigpo {
                Some(s) => s[m].iter().map(|a| beta_g * a + episode_term).collect(),
                None => g
                    .trajectory_edges(m)
                    .iter()
                    .map(|&e| beta_g * ga.advantages[e] + episode_term)
                    .collect(),
            }
        })
        .collect();
    AdvantageTable {
        estimator,
        edge_reward: ga.rewards,
        edge_adv: ga.advantages,
        episode_adv,
        step_adv,
        gigpo_step_adv: gigpo,
    }
}

#[derive(Debug, Serialize)]
struct AdvantageRecord<'a> {
    m: usize,
    t: usize,
    edge: &'a str,
    reward_g: f64,
    adv_g: f64,
    adv_e: f64,
    adv: f64,
}

/// One line per trajectory step: `{m, t, edge, reward_g, adv_g, adv_e, adv}`.
pub fn write_advantage_dump<W: Write>(
    set: &TrajectorySet,
    g: &TransitionGraph,
    table: &AdvantageTable,
    mut sink: W,
) -> Result<usize> {
    let mut count = 0;
    for (m, traj) in set.trajectories.iter().enumerate() {
        for t in 0..traj.len() {
            let eid = g.step_edge(m, t);
            let e = g.edge(eid);
            let summary = format!("{} -[{}]-> {}", g.key(e.src), e.action, g.key(e.dst));
            let rec = AdvantageRecord {
                m,
                t,
                edge: &summary,
                reward_g: table.edge_reward[eid],
                adv_g: table.edge_adv[eid],
                adv_e: table.episode_adv[m],
                adv: table.step_adv[m][t],
            };
            serde_json::to_writer(&mut sink, &rec).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            sink.write_all(b"\n")?;
            count += 1;
        }
    }
    Ok(count)
}

//! Tabular softmax policy and the clipped surrogate objective.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{ActionId, StateKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Clip range `ε` for the importance ratio.
    pub clip_eps: f64,
    /// Weight of the KL penalty against the reference policy.
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    /// Passes over each iteration's samples.
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            clip_eps: 0.2,
            kl_coef: 0.01,
            learning_rate: 1.0,
            minibatch_size: 64,
            epochs: 1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps <= 1.0) {
            return Err(Error::Config(format!("clip_eps must lie in (0,1], got {}", self.clip_eps)));
        }
        if !(self.kl_coef >= 0.0) {
            return Err(Error::Config("kl_coef must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.minibatch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("minibatch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// One `(state, action, advantage)` training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub state: StateKey,
    pub action: ActionId,
    /// Number of actions the policy chooses among at `state`.
    pub arity: usize,
    pub advantage: f64,
}

/// Sparse gradient over the logits of the states a batch touched.
pub type Gradient = HashMap<StateKey, Vec<f64>>;

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Softmax policy with one logit row per visited state. States without a
/// row act uniformly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TabularPolicy {
    logits: HashMap<StateKey, Vec<f64>>,
}

impl TabularPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state_count(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self, s: &StateKey) -> Option<&[f64]> {
        self.logits.get(s).map(Vec::as_slice)
    }

    pub fn set_logits(&mut self, s: StateKey, logits: Vec<f64>) {
        self.logits.insert(s, logits);
    }

    fn row(&self, s: &StateKey, arity: usize) -> Result<Option<&[f64]>> {
        if arity == 0 {
            return Err(Error::Precondition(format!("state {s} has no admissible actions")));
        }
        match self.logits.get(s) {
            Some(row) if row.len() != arity => Err(Error::Precondition(format!(
                "state {s} has {} logits but {arity} actions were requested",
                row.len()
            ))),
            Some(row) => Ok(Some(row)),
            None => Ok(None),
        }
    }

    pub fn log_probabilities(&self, s: &StateKey, arity: usize) -> Result<Vec<f64>> {
        Ok(match self.row(s, arity)? {
            Some(row) => log_softmax(row),
            None => vec![-(arity as f64).ln(); arity],
        })
    }

    pub fn action_probabilities(&self, s: &StateKey, arity: usize) -> Result<Vec<f64>> {
        Ok(self
            .log_probabilities(s, arity)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// Softmax of `logits / temperature`.
    pub fn tempered_probabilities(&self, s: &StateKey, arity: usize, temperature: f64) -> Result<Vec<f64>> {
        if !(temperature > 0.0) {
            return Err(Error::Precondition(format!("temperature must be positive, got {temperature}")));
        }
        Ok(match self.row(s, arity)? {
            Some(row) => {
                let scaled: Vec<f64> = row.iter().map(|z| z / temperature).collect();
                log_softmax(&scaled).into_iter().map(f64::exp).collect()
            }
            None => vec![1.0 / arity as f64; arity],
        })
    }

    /// Highest-logit action; ties go to the lowest index.
    pub fn greedy_action(&self, s: &StateKey, arity: usize) -> Result<ActionId> {
        Ok(match self.row(s, arity)? {
            None => 0,
            Some(row) => {
                let mut best = 0;
                for (i, &z) in row.iter().enumerate() {
                    if z > row[best] {
                        best = i;
                    }
                }
                best as ActionId
            }
        })
    }

    /// Gradient descent step on the touched logits. Nothing is modified if
    /// any gradient entry is non-finite.
    pub fn apply_update(&mut self, gradient: &Gradient, learning_rate: f64) -> Result<()> {
        for (s, g) in gradient {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient for state {s}")));
            }
            if let Some(row) = self.logits.get(s) {
                if row.len() != g.len() {
                    return Err(Error::Precondition(format!("gradient arity mismatch at state {s}")));
                }
            }
        }
        for (s, g) in gradient {
            let row = self
                .logits
                .entry(s.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (z, d) in row.iter_mut().zip(g) {
                *z -= learning_rate * d;
            }
        }
        Ok(())
    }

    /// Writes `{state_key_bytes, action, logit}` lines sorted by state then
    /// action.
    pub fn write_checkpoint<W: Write>(&self, mut sink: W) -> Result<usize> {
        let mut states: Vec<&StateKey> = self.logits.keys().collect();
        states.sort();
        let mut count = 0;
        for s in states {
            let encoded = s.to_base64();
            for (action, &logit) in self.logits[s].iter().enumerate() {
                let line = CheckpointLine {
                    state_key_bytes: encoded.clone(),
                    action: action as ActionId,
                    logit,
                };
                serde_json::to_writer(&mut sink, &line).map_err(|e| Error::Io(std::io::Error::other(e)))?;
                sink.write_all(b"\n")?;
                count += 1;
            }
        }
        sink.flush()?;
        Ok(count)
    }

    pub fn read_checkpoint<R: BufRead>(source: R) -> Result<Self> {
        let mut logits: HashMap<StateKey, Vec<f64>> = HashMap::new();
        for (idx, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CheckpointLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let key = StateKey::from_base64(&parsed.state_key_bytes).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let row = logits.entry(key).or_default();
            if parsed.action as usize != row.len() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected action {}, got {}", row.len(), parsed.action),
                });
            }
            row.push(parsed.logit);
        }
        Ok(TabularPolicy { logits })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointLine {
    state_key_bytes: String,
    action: ActionId,
    logit: f64,
}

/// Exact `KL(π ‖ π_ref)` at one state, from log-probabilities.
fn kl_row(logp: &[f64], ref_logp: &[f64]) -> f64 {
    logp.iter()
        .zip(ref_logp)
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum()
}

/// Mean over `states` of the exact categorical `KL(pol ‖ ref_pol)`.
pub fn kl_exact(pol: &TabularPolicy, ref_pol: &TabularPolicy, states: &[(StateKey, usize)]) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (s, arity) in states {
        let lp = pol.log_probabilities(s, *arity)?;
        let lq = ref_pol.log_probabilities(s, *arity)?;
        total += kl_row(&lp, &lq);
    }
    Ok(total / states.len() as f64)
}

/// Negated clipped surrogate plus KL penalty, averaged over the batch, and
/// its gradient with respect to `pol`'s logits.
///
/// Per sample with ratio `ρ = π(a|s) / π_old(a|s)`:
/// `-min(ρ·A, clip(ρ, 1-ε, 1+ε)·A) + β·KL(π(·|s) ‖ π_ref(·|s))`.
/// When the clipped term is the strict minimum the surrogate contributes no
/// gradient.
pub fn surrogate_loss(
    pol: &TabularPolicy,
    old_pol: &TabularPolicy,
    ref_pol: &TabularPolicy,
    batch: &[PolicySample],
    cfg: &OptimConfig,
) -> Result<(f64, Gradient)> {
    let mut grad: Gradient = HashMap::new();
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for sample in batch {
        let adv = sample.advantage;
        if !adv.is_finite() {
            return Err(Error::NonFinite(format!("advantage at state {}", sample.state)));
        }
        let a = sample.action as usize;
        if a >= sample.arity {
            return Err(Error::Precondition(format!(
                "action {a} out of range for arity {}",
                sample.arity
            )));
        }
        let logp = pol.log_probabilities(&sample.state, sample.arity)?;
        let old_logp = old_pol.log_probabilities(&sample.state, sample.arity)?;
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let ratio = (logp[a] - old_logp[a]).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
        loss -= scale * unclipped.min(clipped);

        let row = grad
            .entry(sample.state.clone())
            .or_insert_with(|| vec![0.0; sample.arity]);
        if unclipped <= clipped {
            // d rho / d z_j = rho * (1[j = a] - pi_j)
            for (j, g) in row.iter_mut().enumerate() {
                let indicator = if j == a { 1.0 } else { 0.0 };
                *g -= scale * adv * ratio * (indicator - probs[j]);
            }
        }

        if cfg.kl_coef > 0.0 {
            let ref_logp = ref_pol.log_probabilities(&sample.state, sample.arity)?;
            let kl = kl_row(&logp, &ref_logp);
            loss += scale * cfg.kl_coef * kl;
            // d KL / d z_j = pi_j * (log pi_j - log ref_j - KL)
            for (j, g) in row.iter_mut().enumerate() {
                *g += scale * cfg.kl_coef * probs[j] * (logp[j] - ref_logp[j] - kl);
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("surrogate loss".into()));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::rollout::{canonical_state_key, ComponentValue};
    use proptest::prelude::*;

    fn key(p: i64) -> StateKey {
        canonical_state_key(&[("p", ComponentValue::Int(p))]).unwrap()
    }

    fn sample(p: i64, action: ActionId, arity: usize, advantage: f64) -> PolicySample {
        PolicySample {
            state: key(p),
            action,
            arity,
            advantage,
        }
    }

    #[test]
    fn unseen_state_is_uniform() {
        let pol = TabularPolicy::new();
        assert_eq!(pol.action_probabilities(&key(0), 4).unwrap(), vec![0.25; 4]);
        assert!(pol.action_probabilities(&key(0), 0).is_err());
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let mut pol = TabularPolicy::new();
        pol.set_logits(key(0), vec![1.0, 1.0]);
        for p in pol.action_probabilities(&key(0), 2).unwrap() {
            assert_abs_diff_eq!(p, 0.5, epsilon = 1e-15);
        }
        pol.set_logits(key(1), vec![2.0, 0.0, 0.0]);
        let p = pol.action_probabilities(&key(1), 3).unwrap();
        let z = 2f64.exp() + 2.0;
        let expected = [2f64.exp() / z, 1.0 / z, 1.0 / z];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(pol.action_probabilities(&key(1), 2).is_err());
    }

    #[test]
    fn identity_ratio_loss_is_negative_mean_advantage() {
        let pol = TabularPolicy::new();
        let batch = vec![sample(0, 0, 3, 1.5), sample(1, 2, 3, -0.5), sample(0, 1, 3, 0.25)];
        let cfg = OptimConfig {
            kl_coef: 0.0,
            ..OptimConfig::default()
        };
        let (loss, _) = surrogate_loss(&pol, &pol, &pol, &batch, &cfg).unwrap();
        assert!((loss - -(1.5 - 0.5 + 0.25) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clip_branch_caps_positive_advantage() {
        // Two actions; choose logits so that pi(a=0) = 0.75 against an old
        // uniform policy, i.e. rho = 1.5.
        let mut pol = TabularPolicy::new();
        pol.set_logits(key(0), vec![3f64.ln(), 0.0]);
        let old = TabularPolicy::new();
        let cfg = OptimConfig {
            kl_coef: 0.0,
            clip_eps: 0.2,
            ..OptimConfig::default()
        };
        let (loss, grad) = surrogate_loss(&pol, &old, &old, &[sample(0, 0, 2, 1.0)], &cfg).unwrap();
        assert!((loss - -1.2).abs() < 1e-12);
        assert_eq!(grad[&key(0)], vec![0.0, 0.0]);
    }

    #[test]
    fn kl_of_identical_policies_is_zero() {
        let mut pol = TabularPolicy::new();
        pol.set_logits(key(0), vec![0.3, -1.0, 2.0]);
        let states = vec![(key(0), 3), (key(1), 3)];
        assert!(kl_exact(&pol, &pol, &states).unwrap().abs() < 1e-15);
        let cfg = OptimConfig::default();
        let (with_kl, _) = surrogate_loss(&pol, &pol, &pol, &[sample(0, 0, 3, 0.0)], &cfg).unwrap();
        assert!(with_kl.abs() < 1e-15);
    }

    #[test]
    fn kl_hand_evaluation() {
        let mut pol = TabularPolicy::new();
        pol.set_logits(key(0), vec![0.0, 0.0]);
        let mut reference = TabularPolicy::new();
        reference.set_logits(key(0), vec![0.9f64.ln(), 0.1f64.ln()]);
        let kl = kl_exact(&pol, &reference, &[(key(0), 2)]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_leaves_policy_unchanged() {
        let mut pol = TabularPolicy::new();
        pol.set_logits(key(0), vec![0.5, -0.5]);
        let before = pol.clone();
        let mut g = Gradient::new();
        g.insert(key(0), vec![0.0, 0.0]);
        pol.apply_update(&g, 1.0).unwrap();
        assert_eq!(pol, before);
    }

    #[test]
    fn non_finite_gradient_aborts_update() {
        let mut pol = TabularPolicy::new();
        pol.set_logits(key(0), vec![0.5, -0.5]);
        let before = pol.clone();
        let mut g = Gradient::new();
        g.insert(key(1), vec![0.1, 0.1]);
        g.insert(key(0), vec![f64::NAN, 0.0]);
        assert!(matches!(pol.apply_update(&g, 1.0), Err(Error::NonFinite(_))));
        assert_eq!(pol, before);
    }

    #[test]
    fn non_finite_advantage_is_rejected() {
        let pol = TabularPolicy::new();
        let err = surrogate_loss(&pol, &pol, &pol, &[sample(0, 0, 2, f64::INFINITY)], &OptimConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn positive_advantage_step_raises_probability() {
        let mut pol = TabularPolicy::new();
        let old = pol.clone();
        let cfg = OptimConfig {
            kl_coef: 0.0,
            learning_rate: 0.5,
            ..OptimConfig::default()
        };
        let batch = [sample(0, 1, 3, 1.0), sample(1, 2, 3, -1.0)];
        let (_, grad) = surrogate_loss(&pol, &old, &old, &batch, &cfg).unwrap();
        pol.apply_update(&grad, cfg.learning_rate).unwrap();
        assert!(pol.action_probabilities(&key(0), 3).unwrap()[1] > 1.0 / 3.0);
        assert!(pol.action_probabilities(&key(1), 3).unwrap()[2] < 1.0 / 3.0);
        // untouched state
        assert!(pol.logits(&key(2)).is_none());
    }

    #[test]
    fn checkpoint_round_trip_is_sorted() {
        let mut pol = TabularPolicy::new();
        pol.set_logits(key(3), vec![0.1, 0.2]);
        pol.set_logits(key(1), vec![-1.0, 0.5, 2.25]);
        let mut buf = Vec::new();
        assert_eq!(pol.write_checkpoint(&mut buf).unwrap(), 5);
        let back = TabularPolicy::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, pol);
        let mut again = Vec::new();
        back.write_checkpoint(&mut again).unwrap();
        assert_eq!(buf, again);
        let first = String::from_utf8(buf).unwrap();
        assert!(first.lines().next().unwrap().contains(&key(1).to_base64()));
    }

    #[test]
    fn greedy_picks_lowest_index_among_ties() {
        let mut pol = TabularPolicy::new();
        pol.set_logits(key(0), vec![1.0, 3.0, 3.0]);
        assert_eq!(pol.greedy_action(&key(0), 3).unwrap(), 1);
        assert_eq!(pol.greedy_action(&key(9), 3).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(p in proptest::collection::vec(-4.0f64..4.0, 4), q in proptest::collection::vec(-4.0f64..4.0, 4)) {
            let mut a = TabularPolicy::new();
            a.set_logits(key(0), p);
            let mut b = TabularPolicy::new();
            b.set_logits(key(0), q);
            prop_assert!(kl_exact(&a, &b, &[(key(0), 4)]).unwrap() >= -1e-15);
        }

        #[test]
        fn probabilities_sum_to_one(z in proptest::collection::vec(-30.0f64..30.0, 1..8)) {
            let n = z.len();
            let mut pol = TabularPolicy::new();
            pol.set_logits(key(0), z);
            let p = pol.action_probabilities(&key(0), n).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn clipping_is_inert_inside_the_trust_region(z in proptest::collection::vec(-0.05f64..0.05, 3), adv in -2.0f64..2.0) {
            let mut pol = TabularPolicy::new();
            pol.set_logits(key(0), z);
            let old = TabularPolicy::new();
            let cfg = OptimConfig { kl_coef: 0.0, clip_eps: 0.2, ..OptimConfig::default() };
            let (loss, _) = surrogate_loss(&pol, &old, &old, &[sample(0, 1, 3, adv)], &cfg).unwrap();
            let ratio = pol.action_probabilities(&key(0), 3).unwrap()[1] * 3.0;
            prop_assert!((loss - -(ratio * adv)).abs() < 1e-12);
        }
    }
}

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::credit::{advantage_table, AdvantageTable, CreditParams, Estimator};
use crate::envs::{EnvKind, Environment};
use crate::error::{Error, Result};
use crate::graph::{aggregate, compute_distances, DistanceMap, TransitionGraph};
use crate::policy::{surrogate_loss, OptimConfig, PolicySample, TabularPolicy};
use crate::rollout::TrajectorySet;
use crate::with_env;

use super::metrics::{IterationRecord, MetricsLog};
use super::sampling::{dynamic_sample, evaluate, rollout_group, stream_seed, Sampling};

const STREAM_ROLLOUT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    /// Episode step limit; the environment default when `None`.
    pub max_steps: Option<usize>,
    pub estimator: Estimator,
    pub group_size: usize,
    pub tasks_per_iteration: usize,
    pub iterations: usize,
    pub credit: CreditParams,
    pub optim: OptimConfig,
    pub seed: u64,
    pub dynamic_sampling: bool,
    pub max_attempts: usize,
    /// Evaluate after every `eval_every` iterations; 0 disables evaluation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_temperature: f64,
    pub train_temperature: f64,
    /// Worker threads for per-task rollout and credit; 1 is fully serial.
    pub threads: usize,
    /// Record wall-clock phase times. When off the timing columns are zero
    /// and the metrics file is a pure function of the config.
    pub record_timing: bool,
    /// Stop after the first evaluation whose success rate reaches this value.
    pub stop_at_eval_sr: Option<f64>,
}

impl ExperimentConfig {
    pub fn for_env(env: EnvKind) -> Self {
        ExperimentConfig {
            env,
            max_steps: None,
            estimator: Estimator::GraphGpo,
            group_size: 8,
            tasks_per_iteration: 4,
            iterations: 60,
            credit: CreditParams {
                omega: env.default_omega(),
                ..CreditParams::default()
            },
            optim: OptimConfig::default(),
            seed: 0,
            dynamic_sampling: false,
            max_attempts: 10,
            eval_every: 1,
            eval_episodes: 100,
            eval_temperature: 0.4,
            train_temperature: 1.0,
            threads: 1,
            record_timing: true,
            stop_at_eval_sr: None,
        }
    }

    pub fn steps_limit(&self) -> usize {
        self.max_steps.unwrap_or_else(|| self.env.default_max_steps())
    }

    pub fn validate(&self) -> Result<()> {
        self.credit.validate()?;
        self.optim.validate()?;
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be at least 2".into()));
        }
        if self.tasks_per_iteration == 0 {
            return Err(Error::Config("tasks_per_iteration must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if self.steps_limit() == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive when evaluating".into()));
        }
        for (name, t) in [("eval_temperature", self.eval_temperature), ("train_temperature", self.train_temperature)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if let Some(t) = self.stop_at_eval_sr {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("stop_at must lie in [0,1], got {t}")));
            }
        }
        Ok(())
    }

    /// Sets one option from its textual form. Keys match the CLI flags with
    /// dashes replaced by underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" => Ok(false),
                _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
            }
        }
        match key.trim().replace('-', "_").as_str() {
            "env" => {
                self.env = value.trim().parse()?;
                self.credit.omega = self.env.default_omega();
            }
            "algo" => self.estimator = value.trim().parse()?,
            "group_size" => self.group_size = num(key, value)?,
            "tasks" => self.tasks_per_iteration = num(key, value)?,
            "iters" => self.iterations = num(key, value)?,
            "max_steps" => self.max_steps = Some(num(key, value)?),
            "omega" => self.credit.omega = num(key, value)?,
            "rsucc" => self.credit.r_succ = num(key, value)?,
            "beta_g" => self.credit.beta_g = num(key, value)?,
            "beta_e" => self.credit.beta_e = num(key, value)?,
            "gigpo_lambda" => self.credit.gigpo_lambda = num(key, value)?,
            "std_floor" => self.credit.std_floor = num(key, value)?,
            "occurrence_weighted" => self.credit.occurrence_weighted = flag(key, value)?,
            "clip_eps" => self.optim.clip_eps = num(key, value)?,
            "kl_coef" => self.optim.kl_coef = num(key, value)?,
            "lr" => self.optim.learning_rate = num(key, value)?,
            "minibatch" => self.optim.minibatch_size = num(key, value)?,
            "epochs" => self.optim.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dynamic_sampling" => self.dynamic_sampling = flag(key, value)?,
            "max_attempts" => self.max_attempts = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "eval_temperature" => self.eval_temperature = num(key, value)?,
            "train_temperature" => self.train_temperature = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "timing" => self.record_timing = flag(key, value)?,
            "stop_at" => self.stop_at_eval_sr = Some(num(key, value)?),
            other => return Err(Error::Config(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    /// Builds a config from `key=value` pairs. `env` is applied first so
    /// that an explicit `omega` overrides the environment default.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let env: EnvKind = match pairs.get("env") {
            Some(v) => v.trim().parse()?,
            None => EnvKind::ChainTrap,
        };
        let mut cfg = ExperimentConfig::for_env(env);
        for (k, v) in pairs.iter().filter(|(k, _)| k.as_str() != "env") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: MetricsLog,
    pub policy: TabularPolicy,
}

/// Everything produced for one task in one iteration.
pub struct TaskBatch {
    pub task: usize,
    pub set: TrajectorySet,
    pub attempts: usize,
    pub graph: TransitionGraph,
    pub distances: DistanceMap,
    pub table: AdvantageTable,
    ms_rollout: f64,
    ms_graph: f64,
    ms_adv: f64,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn run_task<E: Environment>(
    env: &E,
    cfg: &ExperimentConfig,
    pol: &TabularPolicy,
    iteration: usize,
    task: usize,
) -> Result<TaskBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, iteration as u64, STREAM_ROLLOUT, task as u64]));
    let sampling = Sampling::Temperature(cfg.train_temperature);
    let task_seed = task as u64;
    let t0 = Instant::now();
    let (set, attempts) = if cfg.dynamic_sampling {
        dynamic_sample(
            env,
            pol,
            cfg.group_size,
            cfg.steps_limit(),
            task_seed,
            cfg.max_attempts,
            sampling,
            cfg.credit.r_succ,
            &mut rng,
        )?
    } else {
        let set = rollout_group(env, pol, cfg.group_size, cfg.steps_limit(), task_seed, sampling, cfg.credit.r_succ, &mut rng)?;
        (set, 1)
    };
    let ms_rollout = elapsed_ms(t0);
    let t1 = Instant::now();
    let graph = aggregate(&set)?;
    let distances = compute_distances(&graph)?;
    let ms_graph = elapsed_ms(t1);
    let t2 = Instant::now();
    let table = advantage_table(cfg.estimator, &set, &graph, &distances, &cfg.credit);
    let ms_adv = elapsed_ms(t2);
    Ok(TaskBatch {
        task,
        set,
        attempts,
        graph,
        distances,
        table,
        ms_rollout,
        ms_graph,
        ms_adv,
    })
}

pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    train_observed(cfg, |_, _| Ok(()))
}

/// Runs training and hands every task batch to `observe` in task order,
/// after credit assignment and before the policy update.
pub fn train_observed<F>(cfg: &ExperimentConfig, observe: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &TaskBatch) -> Result<()>,
{
    cfg.validate()?;
    with_env!(cfg.env, cfg.steps_limit(), |env| train_env(&env, cfg, observe))
}

fn train_env<E, F>(env: &E, cfg: &ExperimentConfig, mut observe: F) -> Result<TrainOutcome>
where
    E: Environment,
    F: FnMut(usize, &TaskBatch) -> Result<()>,
{
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let arity = env.spec().action_count();
    let reference = TabularPolicy::new();
    let mut pol = reference.clone();
    let mut log = MetricsLog::default();
    let timing = |ms: f64| if cfg.record_timing { ms } else { 0.0 };

    for iteration in 0..cfg.iterations {
        let t_snapshot = Instant::now();
        let old = pol.clone();
        let mut ms_update = elapsed_ms(t_snapshot);
        let batches: Vec<TaskBatch> = match &pool {
            Some(pool) => pool.install(|| {
                (0..cfg.tasks_per_iteration)
                    .into_par_iter()
                    .map(|k| run_task(env, cfg, &old, iteration, k))
                    .collect::<Result<Vec<_>>>()
            })?,
            None => (0..cfg.tasks_per_iteration)
                .map(|k| run_task(env, cfg, &old, iteration, k))
                .collect::<Result<Vec<_>>>()?,
        };

        let mut samples = Vec::with_capacity(batches.iter().map(|b| b.set.total_steps()).sum());
        let (mut successes, mut trajectories, mut steps) = (0usize, 0usize, 0usize);
        let (mut nodes, mut edges, mut abs_adv) = (0.0, 0.0, 0.0);
        let (mut ms_rollout, mut ms_graph, mut ms_adv) = (0.0, 0.0, 0.0);
        for b in &batches {
            observe(iteration + 1, b)?;
            successes += b.set.success_count();
            trajectories += b.set.group_size();
            steps += b.set.total_steps();
            nodes += b.graph.node_count() as f64;
            edges += b.graph.edge_count() as f64;
            abs_adv += b.table.mean_abs_edge_adv();
            ms_rollout += b.ms_rollout;
            ms_graph += b.ms_graph;
            ms_adv += b.ms_adv;
            let t_samples = Instant::now();
            for (m, traj) in b.set.trajectories.iter().enumerate() {
                for (t, step) in traj.steps.iter().enumerate() {
                    samples.push(PolicySample {
                        state: step.state.clone(),
                        action: step.action,
                        arity,
                        advantage: b.table.step_adv[m][t],
                    });
                }
            }
            ms_update += elapsed_ms(t_samples);
        }

        let t_update = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, iteration as u64, STREAM_SHUFFLE]));
        for _ in 0..cfg.optim.epochs {
            samples.shuffle(&mut rng);
            for chunk in samples.chunks(cfg.optim.minibatch_size) {
                let (loss, grad) = surrogate_loss(&pol, &old, &reference, chunk, &cfg.optim)
                    .map_err(|e| Error::NonFinite(format!("iteration {}: {e}", iteration + 1)))?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("iteration {}: loss {loss}", iteration + 1)));
                }
                pol.apply_update(&grad, cfg.optim.learning_rate)
                    .map_err(|e| Error::NonFinite(format!("iteration {}: {e}", iteration + 1)))?;
            }
        }
        ms_update += elapsed_ms(t_update);

        let eval_sr = if cfg.eval_every > 0 && ((iteration + 1) % cfg.eval_every == 0 || iteration + 1 == cfg.iterations) {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, iteration as u64, STREAM_EVAL]));
            Some(evaluate(&pol, env, cfg.eval_episodes, Sampling::Temperature(cfg.eval_temperature), &mut rng)?)
        } else {
            None
        };

        let tasks = batches.len() as f64;
        log.records.push(IterationRecord {
            iteration: iteration + 1,
            train_sr: successes as f64 / trajectories as f64,
            eval_sr,
            mean_abs_adv: abs_adv / tasks,
            mean_len: steps as f64 / trajectories as f64,
            nodes: nodes / tasks,
            edges: edges / tasks,
            ms_rollout: timing(ms_rollout),
            ms_graph: timing(ms_graph),
            ms_adv: timing(ms_adv),
            ms_update: timing(ms_update),
        });
        if let (Some(target), Some(sr)) = (cfg.stop_at_eval_sr, eval_sr) {
            if sr >= target {
                break;
            }
        }
    }
    Ok(TrainOutcome { metrics: log, policy: pol })
}

/// Success rate of `pol` on a fresh environment of `kind`.
pub fn evaluate_kind(
    kind: EnvKind,
    max_steps: Option<usize>,
    pol: &TabularPolicy,
    episodes: usize,
    temperature: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, STREAM_EVAL]));
    with_env!(kind, max_steps.unwrap_or_else(|| kind.default_max_steps()), |env| evaluate(
        pol,
        &env,
        episodes,
        Sampling::Temperature(temperature),
        &mut rng
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(env: EnvKind) -> ExperimentConfig {
        ExperimentConfig {
            iterations: 3,
            tasks_per_iteration: 2,
            eval_episodes: 10,
            record_timing: false,
            ..ExperimentConfig::for_env(env)
        }
    }

    #[test]
    fn stops_at_target_success_rate() {
        let cfg = ExperimentConfig {
            iterations: 5,
            stop_at_eval_sr: Some(0.0),
            ..quick(EnvKind::ChainTrap)
        };
        let out = train(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 1);
        let mut bad = cfg.clone();
        bad.stop_at_eval_sr = Some(1.5);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_iterations_leave_policy_untouched() {
        let cfg = ExperimentConfig { iterations: 0, ..quick(EnvKind::ChainTrap) };
        let out = train(&cfg).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(out.policy, TabularPolicy::new());
    }

    #[test]
    fn one_record_per_iteration() {
        let out = train(&quick(EnvKind::KeyDoor)).unwrap();
        let its: Vec<usize> = out.metrics.records.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![1, 2, 3]);
        assert!(out.metrics.records.iter().all(|r| r.eval_sr.is_some()));
    }

    #[test]
    fn same_seed_same_csv() {
        let cfg = quick(EnvKind::MiniSokoban);
        assert_eq!(train(&cfg).unwrap().metrics.to_csv(), train(&cfg).unwrap().metrics.to_csv());
    }

    #[test]
    fn parallel_matches_serial() {
        let cfg = ExperimentConfig { tasks_per_iteration: 4, ..quick(EnvKind::ChainTrap) };
        let par = ExperimentConfig { threads: 3, ..cfg.clone() };
        let a = train(&cfg).unwrap();
        let b = train(&par).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn grpo_equals_graphgpo_without_graph_term() {
        let grpo = ExperimentConfig { estimator: Estimator::Grpo, ..quick(EnvKind::ChainTrap) };
        let mut zero = quick(EnvKind::ChainTrap);
        zero.credit.beta_g = 0.0;
        assert_eq!(train(&grpo).unwrap().metrics.to_csv(), train(&zero).unwrap().metrics.to_csv());
    }

    #[test]
    fn observer_sees_every_task() {
        let cfg = quick(EnvKind::ChainTrap);
        let mut seen = Vec::new();
        train_observed(&cfg, |it, b| {
            seen.push((it, b.task));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(1, 0), (1, 1), (2, 0), (2, 1), (3, 0), (3, 1)]);
    }

    #[test]
    fn config_pairs() {
        let pairs: BTreeMap<String, String> = [("omega", "0.3"), ("env", "minisokoban"), ("group-size", "4")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let cfg = ExperimentConfig::from_pairs(&pairs).unwrap();
        assert_eq!(cfg.env, EnvKind::MiniSokoban);
        assert_eq!(cfg.credit.omega, 0.3);
        assert_eq!(cfg.group_size, 4);
        let mut bad = cfg.clone();
        assert!(bad.set("bogus", "1").is_err());
        assert!(bad.set("lr", "fast").is_err());
        assert!(ExperimentConfig { group_size: 1, ..cfg }.validate().is_err());
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "graphgpo", version, about = "Graph-based credit assignment experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a tabular policy and write metrics, checkpoint and plot data.
    Train(TrainArgs),
    /// Report the success rate of a policy checkpoint.
    Eval(EvalArgs),
    /// Build the transition graph of a rollout file and write DOT, distances
    /// and advantages.
    InspectGraph(InspectArgs),
    /// Run the distance, monotonicity and variance property suites.
    Probe(ProbeArgs),
    /// Validate a rollout file and write it back out.
    Convert(ConvertArgs),
}

/// Experiment options shared by `train` and the config file. Every field is
/// optional so that unset flags fall back to the config file.
#[derive(Debug, Default, Args)]
pub struct ExperimentFlags {
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub rsucc: Option<f64>,
    #[arg(long)]
    pub beta_g: Option<f64>,
    #[arg(long)]
    pub beta_e: Option<f64>,
    #[arg(long)]
    pub gigpo_lambda: Option<f64>,
    #[arg(long)]
    pub clip_eps: Option<f64>,
    #[arg(long)]
    pub kl_coef: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resample groups whose outcomes are all identical.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dynamic_sampling: Option<bool>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub eval_temperature: Option<f64>,
    /// Worker threads; capped by GRAPHGPO_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write zeros in the timing columns so the CSV is reproducible.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_timing: Option<bool>,
}

impl ExperimentFlags {
    /// The flags that were given, as config-file `key=value` pairs.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident => $key:literal),* $(,)?) => {
                $(if let Some(v) = &self.$field { out.push(($key, v.to_string())); })*
            };
        }
        push!(
            env => "env", algo => "algo", group_size => "group_size", tasks => "tasks",
            iters => "iters", max_steps => "max_steps", omega => "omega", rsucc => "rsucc",
            beta_g => "beta_g", beta_e => "beta_e", gigpo_lambda => "gigpo_lambda",
            clip_eps => "clip_eps", kl_coef => "kl_coef", lr => "lr", minibatch => "minibatch",
            epochs => "epochs", seed => "seed", dynamic_sampling => "dynamic_sampling",
            max_attempts => "max_attempts", eval_every => "eval_every",
            eval_episodes => "eval_episodes", eval_temperature => "eval_temperature",
            threads => "threads",
        );
        if let Some(off) = self.no_timing {
            out.push(("timing", (!off).to_string()));
        }
        out
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: ExperimentFlags,
    /// Config file of `key=value` lines; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Train once per value, e.g. `omega=0.1,0.2,0.4`. Each run writes to
    /// its own subdirectory.
    #[arg(long)]
    pub sweep: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "chaintrap")]
    pub env: String,
    /// Policy checkpoint written by `train`; the uniform policy if omitted.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0.4)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// JSONL rollout file.
    pub rollouts: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub omega: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta_g: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Distance,
    Monotonicity,
    Variance,
    All,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    /// Random graphs for the distance and monotonicity suites.
    #[arg(long, default_value_t = 200)]
    pub graphs: usize,
    /// Sampled batches per environment for the variance suite.
    #[arg(long, default_value_t = 1000)]
    pub batches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    pub output: PathBuf,
}

/// Reads `key=value` lines. Blank lines and `#` comments are skipped; keys
/// may use dashes or underscores.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

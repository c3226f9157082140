use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use graphgpo::credit::{advantage_table, write_advantage_dump, CreditParams, Estimator};
use graphgpo::envs::EnvKind;
use graphgpo::graph::{aggregate, compute_distances, export_dot};
use graphgpo::harness::{
    brute_force_distances, distances_agree, evaluate_kind, format_distance_table, format_variance_report,
    monotonicity_probe, random_trajectory_set, train, variance_probe, ExperimentConfig, RandomGraphSpec,
};
use graphgpo::policy::TabularPolicy;
use graphgpo::rollout::{read_rollouts, write_rollouts};
use graphgpo::{with_env, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exit;
use crate::options::{read_config, Cli, Command, ConvertArgs, EvalArgs, InspectArgs, ProbeArgs, Suite, TrainArgs};

pub const THREADS_VAR: &str = "GRAPHGPO_THREADS";
const MIN_EDGE_VISITS: usize = 30;
const EMA_ALPHA: f64 = 0.95;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Usage(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io(_) | CliError::Run(_) => exit::IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) | CliError::Usage(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Usage(e.to_string()),
            Error::Io(_) | Error::Parse { .. } | Error::Validation(_) | Error::StateKey(_) => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Run(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(contents.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

pub fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::InspectGraph(args) => cmd_inspect(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Convert(args) => cmd_convert(args),
    }
}

/// Worker count after applying the `GRAPHGPO_THREADS` cap.
fn capped_threads(requested: Option<usize>, cap: Option<&str>) -> Result<usize, CliError> {
    let requested = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match cap {
        None => Ok(requested.max(1)),
        Some(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&c| c > 0)
                .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
            Ok(requested.clamp(1, cap))
        }
    }
}

struct TrainPlan {
    out_dir: PathBuf,
    runs: Vec<(Option<String>, ExperimentConfig)>,
}

fn plan_train(args: &TrainArgs, thread_cap: Option<&str>) -> Result<TrainPlan, CliError> {
    let mut pairs = match &args.config {
        Some(path) => read_config(path)?,
        None => BTreeMap::new(),
    };
    for (k, v) in args.flags.pairs() {
        pairs.insert(k.to_string(), v);
    }
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| pairs.remove("out_dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let sweep = args.sweep.clone().or_else(|| pairs.remove("sweep"));
    let requested = match pairs.remove("threads") {
        Some(v) => Some(
            v.parse::<usize>()
                .map_err(|_| CliError::Usage(format!("threads: expected a positive integer, got {v:?}")))?,
        ),
        None => None,
    };
    let threads = capped_threads(requested, thread_cap)?;

    let mut runs = Vec::new();
    let variants: Vec<Option<(String, String)>> = match sweep {
        None => vec![None],
        Some(spec) => {
            let (key, values) = spec
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("sweep must look like key=v1,v2, got {spec:?}")))?;
            let key = key.trim().replace('-', "_");
            let values: Vec<_> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(CliError::Usage("sweep needs at least one value".into()));
            }
            values.into_iter().map(|v| Some((key.clone(), v.to_string()))).collect()
        }
    };
    for variant in variants {
        let mut run_pairs = pairs.clone();
        let label = variant.map(|(k, v)| {
            run_pairs.insert(k.clone(), v.clone());
            format!("{k}={v}")
        });
        let mut cfg = ExperimentConfig::from_pairs(&run_pairs)?;
        cfg.threads = threads;
        cfg.validate()?;
        runs.push((label, cfg));
    }
    Ok(TrainPlan { out_dir, runs })
}

fn cmd_train(args: TrainArgs) -> Result<u8, CliError> {
    let cap = std::env::var(THREADS_VAR).ok();
    let plan = plan_train(&args, cap.as_deref())?;
    for (label, cfg) in &plan.runs {
        let dir = match label {
            Some(l) => plan.out_dir.join(l),
            None => plan.out_dir.clone(),
        };
        let outcome = train(cfg)?;
        write_file(&dir.join("metrics.csv"), &outcome.metrics.to_csv())?;
        write_file(&dir.join("plot.csv"), &outcome.metrics.ema_plot_csv(EMA_ALPHA))?;
        let path = dir.join("policy.jsonl");
        let mut w = create(&path)?;
        outcome.policy.write_checkpoint(&mut w)?;
        let last = outcome.metrics.last();
        let eval = last.and_then(|r| r.eval_sr).map_or("-".to_string(), |v| format!("{v:.3}"));
        let reach = outcome
            .metrics
            .iterations_to_reach(0.9)
            .map_or("-".to_string(), |i| i.to_string());
        println!(
            "{}env={} algo={} seed={} iterations={} final_eval_sr={} iters_to_0.9={} out={}",
            label.as_ref().map(|l| format!("[{l}] ")).unwrap_or_default(),
            cfg.env,
            cfg.estimator,
            cfg.seed,
            outcome.metrics.len(),
            eval,
            reach,
            dir.display()
        );
    }
    Ok(exit::OK)
}

fn cmd_eval(args: EvalArgs) -> Result<u8, CliError> {
    let env: EnvKind = args.env.parse()?;
    let pol = match &args.policy {
        Some(path) => TabularPolicy::read_checkpoint(open(path)?)?,
        None => TabularPolicy::new(),
    };
    if args.episodes == 0 {
        return Err(CliError::Usage("episodes must be positive".into()));
    }
    let sr = evaluate_kind(env, args.max_steps, &pol, args.episodes, args.temperature, args.seed)?;
    println!("success_rate={sr}");
    Ok(exit::OK)
}

fn cmd_inspect(args: InspectArgs) -> Result<u8, CliError> {
    let set = read_rollouts(open(&args.rollouts)?)?;
    let p = CreditParams {
        omega: args.omega,
        r_succ: set.r_succ,
        beta_g: args.beta_g,
        beta_e: args.beta_e,
        ..CreditParams::default()
    };
    p.validate()?;
    let g = aggregate(&set)?;
    let dm = compute_distances(&g)?;
    let table = advantage_table(Estimator::GraphGpo, &set, &g, &dm, &p);
    let distances = format_distance_table(&g, &dm);
    write_file(&args.out_dir.join("graph.dot"), &export_dot(&g, &dm))?;
    write_file(&args.out_dir.join("distances.tsv"), &distances)?;
    let path = args.out_dir.join("advantages.jsonl");
    let mut w = create(&path)?;
    write_advantage_dump(&set, &g, &table, &mut w)?;
    w.flush().map_err(|e| io_err(&path, e))?;
    println!(
        "nodes={} edges={} d_max={}",
        g.node_count(),
        g.edge_count(),
        dm.d_max
    );
    print!("{distances}");
    Ok(exit::OK)
}

fn cmd_probe(args: ProbeArgs) -> Result<u8, CliError> {
    let mut violations = 0usize;
    let run = |s: Suite| args.suite == Suite::All || args.suite == s;
    if run(Suite::Distance) {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let spec = RandomGraphSpec::default();
        let mut bad = 0;
        for _ in 0..args.graphs {
            let set = random_trajectory_set(&spec, &mut rng);
            let g = aggregate(&set)?;
            if !distances_agree(&compute_distances(&g)?, &brute_force_distances(&g)) {
                bad += 1;
            }
        }
        println!("distance: {} graphs, {bad} disagreements", args.graphs);
        violations += bad;
    }
    if run(Suite::Monotonicity) {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
        let spec = RandomGraphSpec::default();
        let mut bad = 0;
        for _ in 0..args.graphs {
            let set = random_trajectory_set(&spec, &mut rng);
            let g = aggregate(&set)?;
            let dm = compute_distances(&g)?;
            for omega in [0.1, 0.5, 0.9] {
                let p = CreditParams {
                    omega,
                    ..CreditParams::default()
                };
                for v in monotonicity_probe(&g, &dm, &p) {
                    println!(
                        "  violation omega={omega} at {}: {} ({}) vs {} ({})",
                        v.source, v.closer, v.closer_adv, v.farther, v.farther_adv
                    );
                    bad += 1;
                }
            }
        }
        println!("monotonicity: {} graphs x 3 omegas, {bad} violations", args.graphs);
        violations += bad;
    }
    if run(Suite::Variance) {
        if args.batches == 0 {
            return Err(CliError::Usage("batches must be positive".into()));
        }
        for kind in [EnvKind::ChainTrap, EnvKind::KeyDoor] {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(2));
            let p = CreditParams {
                omega: kind.default_omega(),
                ..CreditParams::default()
            };
            let pol = TabularPolicy::new();
            let rows = with_env!(kind, kind.default_max_steps(), |env| variance_probe(
                &env,
                &pol,
                args.batches,
                8,
                &p,
                &mut rng
            ))?;
            let qualifying: Vec<_> = rows.iter().filter(|r| r.qualifies(MIN_EDGE_VISITS)).collect();
            let bad: usize = qualifying.iter().map(|r| r.violations).sum();
            println!(
                "variance {kind}: {} batches, {} qualifying edges, {bad} violations",
                args.batches,
                qualifying.len()
            );
            print!("{}", format_variance_report(&rows, MIN_EDGE_VISITS));
            violations += bad;
        }
    }
    Ok(if violations == 0 { exit::OK } else { exit::VIOLATION })
}

fn cmd_convert(args: ConvertArgs) -> Result<u8, CliError> {
    let set = read_rollouts(open(&args.input)?)?;
    let mut w = create(&args.output)?;
    let n = write_rollouts(&set, &mut w)?;
    w.flush().map_err(|e| io_err(&args.output, e))?;
    println!("trajectories={} lines={n}", set.trajectories.len());
    Ok(exit::OK)
}

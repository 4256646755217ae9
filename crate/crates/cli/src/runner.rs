//! Runs an experiment over its seeds and writes traces and the summary.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use predfilt_core::bounds::{hilofi_step_bound, lrkf_step_bound};
use predfilt_core::decision::{
    epsilon_greedy_action, predictive_sample_action, thompson_sample_action, ActionSet, BoProposer,
    BoStrategy, BoxDomain, Refinement,
};
use predfilt_core::environments::{
    find_mnist_train, inbetween_dataset, load_mnist_idx, BanditEnv, MnistDataset,
};
use predfilt_core::filters::{
    hilofi_step_with, lrkf_step_with, Belief, FilterOptions, NoiseConfig,
};
use predfilt_core::net::{init_params, Model, NetworkSpec, OutputSelect};
use predfilt_core::rng::{stream_rng, AGENT_STREAM};
use predfilt_core::Error as CoreError;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind, PolicyKind};
use crate::trace::{
    summary_csv, Accumulator, Action, SeedSummary, StepRecord, TraceError, TraceWriter,
};

pub const DATA_DIR_ENV: &str = "PREDFILT_DATA_DIR";

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    MissingDataset(String),
    Core(CoreError),
    Trace(TraceError),
}

impl RunError {
    /// Process exit code: 1 for configuration problems, 2 for a missing or
    /// unreadable dataset, 3 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::MissingDataset(_) => 2,
            RunError::Core(_) | RunError::Trace(_) => 3,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::MissingDataset(m) => write!(f, "dataset unavailable: {m}"),
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Trace(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        RunError::Core(e)
    }
}

impl From<TraceError> for RunError {
    fn from(e: TraceError) -> Self {
        RunError::Trace(e)
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Trace(TraceError::Io(e))
    }
}

/// Records and totals of one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub records: Vec<StepRecord>,
    pub summary: SeedSummary,
}

/// Directory holding the MNIST files: the config value, else the
/// environment variable.
pub fn mnist_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.mnist
        .data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

pub fn load_mnist(dir: Option<&Path>) -> Result<Arc<MnistDataset>, RunError> {
    let dir = dir
        .ok_or_else(|| RunError::MissingDataset(format!("set mnist.data_dir or {DATA_DIR_ENV}")))?;
    let (images, labels) = find_mnist_train(dir).ok_or_else(|| {
        RunError::MissingDataset(format!(
            "no train-images-idx3-ubyte / train-labels-idx1-ubyte in {}",
            dir.display()
        ))
    })?;
    load_mnist_idx(&images, &labels)
        .map(Arc::new)
        .map_err(|e| RunError::MissingDataset(format!("{}: {e}", images.display())))
}

/// One filter update, optionally with the covariance error bound.
pub fn update<M: Model + ?Sized>(
    belief: &Belief,
    model: &M,
    x: &[f64],
    y: &[f64],
    noise: &NoiseConfig,
    diagnostics: bool,
) -> Result<(Belief, Option<f64>), CoreError> {
    let opts = FilterOptions::default();
    Ok(match belief {
        Belief::HiLoFi(b) if diagnostics => {
            let (next, info) = hilofi_step_with(b, model, x, y, noise, &opts)?;
            let bound = hilofi_step_bound(b, &info, noise).loosest();
            (Belief::HiLoFi(next), Some(bound))
        }
        Belief::Lrkf(b) if diagnostics => {
            let (next, info) = lrkf_step_with(b, model, x, y, noise, &opts)?;
            let bound = lrkf_step_bound(b, &info, noise);
            (Belief::Lrkf(next), Some(bound))
        }
        _ => (belief.step(model, x, y, noise, &opts)?, None),
    })
}

fn nanos(d: Duration) -> u64 {
    d.as_nanos().min(u64::MAX as u128) as u64
}

fn initial_belief(
    cfg: &ExperimentConfig,
    spec: &NetworkSpec,
    seed: u64,
) -> Result<Belief, CoreError> {
    Belief::from_prior(cfg.filter, &init_params(spec, seed), &cfg.prior())
}

fn noise(cfg: &ExperimentConfig, outputs: usize) -> Result<NoiseConfig, CoreError> {
    NoiseConfig::isotropic(
        outputs,
        cfg.noise.r.sqrt(),
        cfg.noise.q_last,
        cfg.noise.q_hidden,
    )
}

fn run_bandit(
    cfg: &ExperimentConfig,
    seed: u64,
    mut env: BanditEnv,
) -> Result<Vec<StepRecord>, RunError> {
    let spec = cfg.network();
    // all heads for the policy, the chosen head for the update
    let heads_noise = noise(cfg, env.num_actions())?;
    let noise = noise(cfg, 1)?;
    let mut belief = initial_belief(cfg, &spec, seed)?;
    let mut rng = stream_rng(seed, AGENT_STREAM);
    let actions = ActionSet::Heads(env.num_actions());
    let mut acc = Accumulator::default();
    let mut out = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let context = match env.context() {
            Err(CoreError::EndOfStream) => {
                return Err(RunError::Config(ConfigError {
                    problems: vec![(
                        "steps".into(),
                        format!("dataset ends after {} steps", out.len()),
                    )],
                }))
            }
            c => c?,
        };
        let c = context.as_slice();
        let start = Instant::now();
        let a = match cfg.policy {
            PolicyKind::Pbayes => {
                predictive_sample_action(&belief, &spec, c, &actions, &heads_noise, &mut rng)?.0
            }
            PolicyKind::Ts => thompson_sample_action(&belief, &spec, c, &actions, &mut rng)?.0,
            PolicyKind::EpsGreedy => {
                epsilon_greedy_action(&belief, &spec, c, &actions, cfg.epsilon, &mut rng)?
            }
            PolicyKind::Ei => unreachable!("rejected by validate"),
        };
        let mut elapsed = start.elapsed();
        let outcome = env.reward(a)?;
        let head = OutputSelect {
            inner: &spec,
            index: a,
        };
        let pred = belief.predictive(&head, c, &noise);
        let start = Instant::now();
        let (next, bound) = update(
            &belief,
            &head,
            c,
            &[outcome.reward],
            &noise,
            cfg.diagnostics,
        )?;
        elapsed += start.elapsed();
        belief = next;
        out.push(acc.record(
            Action::Index(a),
            outcome.reward,
            Some(outcome.regret()),
            nanos(elapsed),
            pred.mean[0],
            pred.std(0),
            bound,
        ));
    }
    Ok(out)
}

fn run_bo(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<StepRecord>, RunError> {
    let f = cfg.bo_function();
    let spec = cfg.network();
    let noise = noise(cfg, 1)?;
    let mut belief = initial_belief(cfg, &spec, seed)?;
    let mut rng = stream_rng(seed, AGENT_STREAM);
    let domain = BoxDomain::unit(f.dim(), cfg.candidate_count)?;
    let refinement = cfg.bo_refine().then(Refinement::default);
    let proposer = BoProposer::new(domain, seed, refinement)?;
    let mut best = f64::NEG_INFINITY;
    let mut acc = Accumulator::default();
    let mut out = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let strategy = match cfg.policy {
            // EI has nothing to improve on before the first observation
            PolicyKind::Ei if t > 0 => BoStrategy::Ei,
            _ => BoStrategy::Ts,
        };
        let start = Instant::now();
        let x = proposer.propose(&belief, &spec, strategy, best, &noise, &mut rng)?;
        let mut elapsed = start.elapsed();
        let y = f.eval(&x)?;
        let pred = belief.predictive(&spec, &x, &noise);
        let start = Instant::now();
        let (next, bound) = update(&belief, &spec, &x, &[y], &noise, cfg.diagnostics)?;
        elapsed += start.elapsed();
        belief = next;
        best = best.max(y);
        let regret = f.max_value().map(|m| (m - y).max(0.0));
        out.push(acc.record(
            Action::Point(x),
            y,
            regret,
            nanos(elapsed),
            pred.mean[0],
            pred.std(0),
            bound,
        ));
    }
    Ok(out)
}

/// Predictive std at the gap centre over the mean predictive std at the
/// training inputs.
pub fn gap_std_ratio<M: Model + ?Sized>(
    belief: &Belief,
    model: &M,
    xs: &[f64],
    noise: &NoiseConfig,
) -> f64 {
    let centre = belief.predictive(model, &[0.0], noise).std(0);
    let train = xs
        .iter()
        .map(|&x| belief.predictive(model, &[x], noise).std(0))
        .sum::<f64>()
        / xs.len() as f64;
    centre / train
}

fn run_inbetween(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<StepRecord>, f64), RunError> {
    let spec = cfg.network();
    let noise = noise(cfg, 1)?;
    let mut belief = initial_belief(cfg, &spec, seed)?;
    let (xs, ys) = inbetween_dataset(seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut stream_rng(seed, AGENT_STREAM));
    let mut acc = Accumulator::default();
    let mut out = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let i = order[t % order.len()];
        let (x, y) = ([xs[i]], ys[i]);
        let pred = belief.predictive(&spec, &x, &noise);
        let start = Instant::now();
        let (next, bound) = update(&belief, &spec, &x, &[y], &noise, cfg.diagnostics)?;
        let elapsed = start.elapsed();
        belief = next;
        let err = y - pred.mean[0];
        out.push(acc.record(
            Action::Point(x.to_vec()),
            -err * err,
            None,
            nanos(elapsed),
            pred.mean[0],
            pred.std(0),
            bound,
        ));
    }
    Ok((out, gap_std_ratio(&belief, &spec, &xs, &noise)))
}

/// Runs one seed. `data` is required for `mnist_bandit`.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    data: Option<&Arc<MnistDataset>>,
) -> Result<SeedRun, RunError> {
    let (records, ratio) = match cfg.experiment {
        ExperimentKind::Bandit => {
            let b = &cfg.bandit;
            let env = BanditEnv::drifting(b.arms, b.context_dim, b.noise_std, b.drift_var, seed)?;
            (run_bandit(cfg, seed, env)?, None)
        }
        ExperimentKind::MnistBandit => {
            let data = data.ok_or_else(|| RunError::MissingDataset("MNIST not loaded".into()))?;
            (
                run_bandit(cfg, seed, BanditEnv::mnist(data.clone(), seed)?)?,
                None,
            )
        }
        ExperimentKind::Bo => (run_bo(cfg, seed)?, None),
        ExperimentKind::Inbetween => {
            let (r, ratio) = run_inbetween(cfg, seed)?;
            (r, Some(ratio))
        }
    };
    let summary = SeedSummary::from_records(seed, &records, ratio);
    Ok(SeedRun { records, summary })
}

/// Runs every seed in parallel. Results come back in seed-list order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>, RunError> {
    cfg.validate()?;
    let data = match cfg.experiment {
        ExperimentKind::MnistBandit => Some(load_mnist(mnist_dir(cfg).as_deref())?),
        _ => None,
    };
    cfg.seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s, data.as_ref()))
        .collect()
}

pub fn trace_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("trace_seed{seed}.jsonl"))
}

pub const SUMMARY_FILE: &str = "summary.csv";

/// Runs the experiment and writes `trace_seed<seed>.jsonl` per seed,
/// `summary.csv`, and the resolved `config.toml` into `out_dir`.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<SeedSummary>, RunError> {
    let runs = run_all(cfg)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml_string())?;
    let mut summaries = Vec::with_capacity(runs.len());
    for (seed, run) in cfg.seeds.iter().zip(runs) {
        let file = fs::File::create(trace_path(out_dir, *seed))?;
        let mut w = TraceWriter::new(BufWriter::new(file));
        for r in &run.records {
            w.write(r)?;
        }
        w.finish()?;
        summaries.push(run.summary);
    }
    fs::write(out_dir.join(SUMMARY_FILE), summary_csv(&summaries))?;
    Ok(summaries)
}

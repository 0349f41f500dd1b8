//! `mulch`: simulate, fit and evaluate community Hawkes models from the
//! command line.
//!
//! Every subcommand prints one JSON summary line on success (command, seed,
//! wall-clock seconds, output paths). Usage errors exit with 2, everything
//! else with 1.

mod config;
mod units;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use mulch::eval::{self, AucConfig};
use mulch::events::{
    self, count_matrix, load_events, save_events, EventStream, IdMap, LoadOptions,
};
use mulch::fit::{self, FitConfig, SelectionMetric};
use mulch::motifs::{count_temporal_motifs, motif_mape, MotifMatrix};
use mulch::simulate::{generate_network, SimConfig};
use mulch::spectral::spectral_cluster;
use mulch::{ExcitationType, MembershipFile, MulchModel};

use units::{parse_betas, TimeUnit};

#[derive(Parser)]
#[command(
    name = "mulch",
    version,
    about = "Multivariate community Hawkes models for event networks",
    args_override_self = true
)]
struct Cli {
    /// Worker threads (defaults to the available parallelism).
    #[arg(long, global = true, env = "MULCH_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a network from a simulation config or a fitted model.
    Simulate(SimulateArgs),
    /// Spectral clustering of the count matrix.
    Cluster(ClusterArgs),
    /// Spectral clustering, block pair fits and likelihood refinement.
    Fit(FitArgs),
    /// Test log-likelihood and dynamic link prediction AUC.
    Evaluate(EvaluateArgs),
    /// Three-edge temporal motif counts.
    Motifs(MotifsArgs),
    /// MAPE between observed and simulated motif counts.
    MotifCompare(MotifCompareArgs),
    /// Choose the number of blocks by a held-out metric.
    SelectK(SelectKArgs),
}

/// How to read an event CSV.
#[derive(Args)]
struct InputArgs {
    /// `sender,receiver,time` CSV (header optional).
    #[arg(long)]
    events: PathBuf,
    /// Skip self-loop rows instead of failing.
    #[arg(long)]
    drop_self_loops: bool,
    /// Map timestamps affinely onto `[0, RESCALE]` after loading.
    #[arg(long)]
    rescale: Option<f64>,
    /// Observation horizon (defaults to the largest timestamp).
    #[arg(long)]
    duration: Option<f64>,
}

impl InputArgs {
    fn load(&self) -> Result<(EventStream, IdMap)> {
        let opts = LoadOptions {
            drop_self_loops: self.drop_self_loops,
            duration: self.duration,
            id_map: None,
        };
        let (mut stream, ids) = load_events(&self.events, &opts)?;
        if let Some(max) = self.rescale {
            stream = events::rescale_timestamps(&stream, max)?;
        }
        Ok((stream, ids))
    }
}

/// Decay rates and the kernel options shared by `fit` and `select-k`.
#[derive(Args)]
struct ModelArgs {
    /// Number of blocks.
    #[arg(long)]
    k: usize,
    /// Decay rates (`0.0714,1,12`) or durations (`2w,1d,2h`).
    #[arg(long, default_value = "2w,1d,2h")]
    betas: String,
    /// Unit of the timestamps, used to turn durations into rates.
    #[arg(long, value_enum, default_value = "day")]
    time_unit: TimeUnit,
    /// Excitation types to fit; the rest are fixed at zero
    /// (self, recip, turn, gen_recip, allied_cont, allied_recip).
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    excitations: Option<Vec<String>>,
    /// Maximum number of refinement rounds (0 disables refinement).
    #[arg(long, default_value_t = 15)]
    max_refinement_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn fit_config(&self, k: usize) -> Result<FitConfig> {
        let mut cfg = FitConfig::new(k, parse_betas(&self.betas, self.time_unit)?);
        cfg.seed = self.seed;
        cfg.max_refinement_iters = self.max_refinement_iters;
        if let Some(names) = &self.excitations {
            cfg.active = names.iter().map(|n| excitation(n)).collect::<Result<_>>()?;
        }
        Ok(cfg)
    }
}

fn excitation(name: &str) -> Result<ExcitationType> {
    ExcitationType::ALL
        .into_iter()
        .find(|t| t.key() == name.trim())
        .with_context(|| format!("unknown excitation type {name:?}"))
}

/// The training prefix: an explicit count or a fraction of the stream.
#[derive(Args)]
struct SplitArgs {
    /// Number of leading events used for training.
    #[arg(long, conflicts_with = "train_frac")]
    n_train: Option<usize>,
    /// Fraction of leading events used for training.
    #[arg(long)]
    train_frac: Option<f64>,
}

impl SplitArgs {
    fn n_train(&self, n_events: usize, default_frac: Option<f64>) -> Result<Option<usize>> {
        if let Some(n) = self.n_train {
            return Ok(Some(n));
        }
        match self.train_frac.or(default_frac) {
            None => Ok(None),
            Some(f) if f > 0.0 && f <= 1.0 => Ok(Some((f * n_events as f64).floor() as usize)),
            Some(f) => bail!("train fraction must lie in (0, 1], got {f}"),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (JSON mirroring the simulation settings).
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    config: Option<PathBuf>,
    /// Simulate from a fitted model and its membership instead.
    #[arg(long, requires = "duration")]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    membership_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    n_nodes: Option<usize>,
    /// Simulate non-stationary parameters up to the event cap.
    #[arg(long)]
    allow_unstable: bool,
    /// Event cap per couple for unstable runs.
    #[arg(long)]
    max_events: Option<usize>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-round log-likelihood and membership changes.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    membership_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Any of `loglik`, `auc`, `expected`.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "loglik,auc")]
    metrics: Vec<String>,
    #[arg(long, default_value_t = 100)]
    n_windows: usize,
    /// Window length (defaults to the test duration / 100).
    #[arg(long)]
    window_len: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MotifsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    /// Maximum span of a motif instance.
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MotifCompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    actual: PathBuf,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, required = true)]
    sims: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectKArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    /// Candidate block counts.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "1,2,3,4")]
    candidates: Vec<usize>,
    /// `test-loglik` or `auc`.
    #[arg(long, default_value = "test-loglik")]
    metric: String,
    /// Decay rates or durations shared by every candidate fit.
    #[arg(long, default_value = "2w,1d,2h")]
    betas: String,
    #[arg(long, value_enum, default_value = "day")]
    time_unit: TimeUnit,
    #[arg(long, default_value_t = 15)]
    max_refinement_iters: usize,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// The one-line summary printed on success.
#[derive(Serialize)]
struct Summary {
    command: &'static str,
    seed: Option<u64>,
    seconds: f64,
    outputs: BTreeMap<&'static str, PathBuf>,
}

struct Outcome {
    seed: Option<u64>,
    outputs: BTreeMap<&'static str, PathBuf>,
}

impl Outcome {
    fn new(seed: Option<u64>) -> Self {
        Outcome {
            seed,
            outputs: BTreeMap::new(),
        }
    }

    fn output(mut self, name: &'static str, path: Option<&Path>) -> Self {
        if let Some(p) = path {
            self.outputs.insert(name, p.to_path_buf());
        }
        self
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set up {n} workers: {e}");
            return ExitCode::from(1);
        }
    }
    let start = Instant::now();
    let name = command_name(&cli.command);
    match run(cli.command) {
        Ok(outcome) => {
            let summary = Summary {
                command: name,
                seed: outcome.seed,
                seconds: start.elapsed().as_secs_f64(),
                outputs: outcome.outputs,
            };
            println!(
                "{}",
                serde_json::to_string(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(1)
        }
    }
}

/// The error chain joined by `: `, skipping causes already quoted by
/// their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate(_) => "simulate",
        Command::Cluster(_) => "cluster",
        Command::Fit(_) => "fit",
        Command::Evaluate(_) => "evaluate",
        Command::Motifs(_) => "motifs",
        Command::MotifCompare(_) => "motif-compare",
        Command::SelectK(_) => "select-k",
    }
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Cluster(a) => cluster(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Motifs(a) => motifs(a),
        Command::MotifCompare(a) => motif_compare(a),
        Command::SelectK(a) => select_k(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("{}: cannot write", path.display()))
}

fn sim_config_from_model(path: &Path) -> Result<SimConfig> {
    let model = MulchModel::load(path)?;
    let z = model.membership();
    let n = z.len().max(1) as f64;
    Ok(SimConfig {
        pi: z.block_sizes().iter().map(|&s| s as f64 / n).collect(),
        betas: model.betas().to_vec(),
        blocks: model.grid().to_vec(),
        duration: 0.0,
        n_nodes: z.len(),
        seed: 0,
        membership: Some(z.labels().to_vec()),
        allow_unstable: false,
        max_events: mulch::simulate::DEFAULT_MAX_EVENTS,
    })
}

fn simulate(a: SimulateArgs) -> Result<Outcome> {
    let mut cfg = match (&a.config, &a.model) {
        (Some(p), _) => SimConfig::load(p)?,
        (None, Some(p)) => sim_config_from_model(p)?,
        (None, None) => unreachable!("clap requires one of --config and --model"),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.duration {
        cfg.duration = d;
    }
    if let Some(n) = a.n_nodes {
        if cfg.membership.is_some() {
            bail!("--n-nodes cannot change a fixed membership");
        }
        cfg.n_nodes = n;
    }
    cfg.allow_unstable |= a.allow_unstable;
    if let Some(m) = a.max_events {
        cfg.max_events = m;
    }
    let net = generate_network(&cfg)?;
    if net.truncated {
        log::warn!("simulation hit the event cap; the output is truncated");
    }
    let ids = IdMap::identity(net.events.n_nodes());
    save_events(&a.out, &net.events, Some(&ids))?;
    if let Some(p) = &a.membership_out {
        MembershipFile::new(net.membership(), ids).save(p)?;
    }
    Ok(Outcome::new(Some(cfg.seed))
        .output("events", Some(&a.out))
        .output("membership", a.membership_out.as_deref()))
}

fn cluster(a: ClusterArgs) -> Result<Outcome> {
    let (stream, ids) = a.input.load()?;
    let z = spectral_cluster(&count_matrix(&stream), a.k, a.seed)?;
    MembershipFile::new(&z, ids).save(&a.out)?;
    Ok(Outcome::new(Some(a.seed)).output("membership", Some(&a.out)))
}

/// Training prefix of `stream`, restricted to the nodes it mentions. Node
/// ids follow first appearance, so those nodes are a prefix of the index.
fn training_prefix(stream: &EventStream, n_train: Option<usize>) -> Result<EventStream> {
    match n_train {
        Some(n) if n < stream.len() => {
            let (train, _) = events::split_train_test(stream, n)?;
            Ok(eval::trim_to_active_prefix(train)?)
        }
        Some(n) if n > stream.len() => bail!("n_train = {n} exceeds the {} events", stream.len()),
        _ => Ok(stream.clone()),
    }
}

fn fit_cmd(a: FitArgs) -> Result<Outcome> {
    let (stream, ids) = a.input.load()?;
    let cfg = a.model.fit_config(a.model.k)?;
    let n_train = a.split.n_train(stream.len(), None)?;
    let train = training_prefix(&stream, n_train)?;
    log::info!(
        "fitting K = {} on {} events over [0, {}]",
        cfg.k,
        train.len(),
        train.duration()
    );
    let result = fit::fit_mulch(&train, &cfg)?;
    result.model.save(&a.out)?;
    if let Some(p) = &a.trace {
        write_json(p, &result.trace())?;
    }
    if let Some(p) = &a.membership_out {
        let mut kept = IdMap::new();
        for i in 0..result.model.n_nodes() {
            kept.intern(
                ids.name(i)
                    .expect("training nodes are a prefix of the id map"),
            );
        }
        MembershipFile::new(result.model.membership(), kept).save(p)?;
    }
    Ok(Outcome::new(Some(cfg.seed))
        .output("model", Some(&a.out))
        .output("trace", a.trace.as_deref())
        .output("membership", a.membership_out.as_deref()))
}

fn evaluate(a: EvaluateArgs) -> Result<Outcome> {
    let (full, _) = a.input.load()?;
    let model = MulchModel::load(&a.model)?;
    let n_train = a
        .split
        .n_train(full.len(), None)?
        .context("evaluate needs --n-train or --train-frac")?;
    let full = if full.n_nodes() < model.n_nodes() {
        full.with_n_nodes(model.n_nodes())?
    } else {
        full
    };
    let mut report = serde_json::Map::new();
    report.insert("n_train".into(), json!(n_train));
    report.insert("n_test".into(), json!(full.len().saturating_sub(n_train)));
    for metric in &a.metrics {
        match metric.trim() {
            "loglik" => {
                let ll = eval::test_log_likelihood_per_event(&model, &full, n_train)?;
                report.insert("test_log_likelihood_per_event".into(), json!(ll));
            }
            "auc" => {
                let cfg = AucConfig {
                    n_windows: a.n_windows,
                    window_len: a.window_len,
                    ..AucConfig::new(a.seed)
                };
                let auc = eval::dynamic_link_prediction_auc(&model, &full, n_train, &cfg)?;
                report.insert("auc".into(), serde_json::to_value(&auc)?);
            }
            "expected" => {
                let model = eval::extend_to(&model, full.n_nodes())?;
                let counts = eval::expected_block_counts(&model, full.duration())?;
                report.insert("expected_pair_counts".into(), json!(counts));
            }
            other => bail!("unknown metric {other:?} (use loglik, auc or expected)"),
        }
    }
    write_json(&a.out, &report)?;
    Ok(Outcome::new(Some(a.seed)).output("eval", Some(&a.out)))
}

fn motifs(a: MotifsArgs) -> Result<Outcome> {
    if !(a.delta.is_finite() && a.delta >= 0.0) {
        bail!("delta must be a nonnegative number, got {}", a.delta);
    }
    let (stream, _) = a.input.load()?;
    count_temporal_motifs(&stream, a.delta).save(&a.out)?;
    Ok(Outcome::new(None).output("motifs", Some(&a.out)))
}

fn motif_compare(a: MotifCompareArgs) -> Result<Outcome> {
    let actual = MotifMatrix::load(&a.actual)?;
    let sims = a
        .sims
        .iter()
        .map(MotifMatrix::load)
        .collect::<mulch::Result<Vec<_>>>()?;
    write_json(&a.out, &motif_mape(&actual, &sims)?)?;
    Ok(Outcome::new(None).output("mape", Some(&a.out)))
}

fn select_k(a: SelectKArgs) -> Result<Outcome> {
    let (full, _) = a.input.load()?;
    let metric = match a.metric.as_str() {
        "test-loglik" | "loglik" => SelectionMetric::TestLoglik,
        "auc" => SelectionMetric::Auc,
        other => bail!("unknown metric {other:?} (use test-loglik or auc)"),
    };
    let n_train = a
        .split
        .n_train(full.len(), Some(0.8))?
        .expect("a default fraction is given");
    let mut cfg = FitConfig::new(1, parse_betas(&a.betas, a.time_unit)?);
    cfg.seed = a.seed;
    cfg.max_refinement_iters = a.max_refinement_iters;
    let selection = fit::select_k(&full, n_train, &a.candidates, metric, &cfg)?;
    write_json(&a.out, &selection)?;
    Ok(Outcome::new(Some(a.seed)).output("selection", Some(&a.out)))
}

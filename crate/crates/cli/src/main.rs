use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use nanomap::GaussianPoint;
use nanomap_cli::bench::{self, BenchScene, PoseBench, QueryBench, Trials};
use nanomap_cli::commands::{self, ChainOptions};
use nanomap_cli::config::{one_line, Config, EdgeSigma, CONFIG_ENV};
use nanomap_sim::run_scenario;

#[derive(Parser)]
#[command(name = "nanomap", version, about = "Frame-chain local mapping: log replay, queries and benchmarks")]
struct Cli {
    /// TOML config; flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay pose, cloud and correction logs and answer a query file.
    Replay(ReplayArgs),
    /// Answer one query at one time from the logs.
    Query(QueryArgs),
    /// Render a scenario and write its logs, chain settings and spec.
    ExportScenario(ExportArgs),
    /// Time insertion plus queries for the chain and the voxel map.
    BenchQueries(BenchQueriesArgs),
    /// Time pose corrections for the chain and the voxel map.
    BenchPoseUpdates(BenchPoseArgs),
    /// Run a scenario and write its search-depth histogram.
    BenchHistogram(HistogramArgs),
}

#[derive(Args)]
struct LogArgs {
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    clouds: PathBuf,
    #[arg(long)]
    corrections: Option<PathBuf>,
}

#[derive(Args)]
struct ChainArgs {
    /// Frames kept in the chain.
    #[arg(long)]
    capacity: Option<usize>,
    /// Neighbors per query.
    #[arg(short, long)]
    k: Option<usize>,
    /// Isotropic per-edge translation variance, m².
    #[arg(long)]
    edge_sigma: Option<f64>,
    /// Nominal seconds between frames.
    #[arg(long)]
    frame_period: Option<f64>,
    /// Answer the queries of a step on several threads.
    #[arg(long)]
    parallel: bool,
}

impl ChainArgs {
    fn options(&self, config: &Config) -> ChainOptions {
        let mut section = config.chain.clone();
        section.capacity = self.capacity.or(section.capacity);
        section.k = self.k.or(section.k);
        section.edge_sigma = self.edge_sigma.map(EdgeSigma::Isotropic).or(section.edge_sigma);
        section.frame_period = self.frame_period.or(section.frame_period);
        let mut opts = ChainOptions::from_section(&section);
        opts.parallel = self.parallel || config.bench.parallel.unwrap_or(false);
        opts
    }
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    logs: LogArgs,
    #[arg(long)]
    queries: PathBuf,
    /// Result CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    chain: ChainArgs,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    logs: LogArgs,
    /// Query time, s.
    #[arg(long)]
    time: f64,
    /// Body-frame point as x,y,z.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    point: Vec<f64>,
    /// Isotropic standard deviation, m.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[command(flatten)]
    chain: ChainArgs,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Preset name or scenario TOML file.
    #[arg(long)]
    scenario: Option<String>,
    /// Acceleration noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn section(&self, config: &Config) -> nanomap_cli::config::ScenarioSection {
        let mut s = config.scenario.clone();
        s.scenario = self.scenario.clone().or(s.scenario);
        s.sigma = self.sigma.or(s.sigma);
        s.seed = self.seed.or(s.seed);
        s
    }
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    /// Frames held by the chain and the voxel map.
    #[arg(long)]
    history: Option<usize>,
    /// Fan chain queries out over threads.
    #[arg(long)]
    parallel: bool,
    /// Per-trial CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mean and standard error per point, as CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
}

impl TrialArgs {
    fn trials(&self, config: &Config) -> Trials {
        Trials {
            warmup: self.warmup.or(config.bench.warmup).unwrap_or(bench::DEFAULT_WARMUP),
            trials: self.trials.or(config.bench.trials).unwrap_or(bench::DEFAULT_TRIALS),
            parallel: self.parallel || config.bench.parallel.unwrap_or(false),
        }
    }

    fn resolution(&self, config: &Config) -> (usize, usize) {
        (self.cols.or(config.bench.cols).unwrap_or(320), self.rows.or(config.bench.rows).unwrap_or(240))
    }

    fn history(&self, config: &Config) -> usize {
        self.history.or(config.bench.history).unwrap_or(150)
    }
}

#[derive(Args)]
struct BenchQueriesArgs {
    #[command(flatten)]
    common: TrialArgs,
    /// Query counts per insertion, comma separated.
    #[arg(long, value_delimiter = ',')]
    n_queries: Option<Vec<usize>>,
    /// Chain lengths for the worst-case sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    histories: Option<Vec<usize>>,
    /// Queries per trial in the worst-case sweep.
    #[arg(long)]
    history_queries: Option<usize>,
}

#[derive(Args)]
struct BenchPoseArgs {
    #[command(flatten)]
    common: TrialArgs,
    /// Corrected poses per batch, comma separated.
    #[arg(long, value_delimiter = ',')]
    n_poses: Option<Vec<usize>>,
}

#[derive(Args)]
struct HistogramArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Histogram CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-query metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn replay(args: &ReplayArgs, config: &Config) -> Result<()> {
    let (streams, camera) = commands::load_streams(&args.logs.poses, &args.logs.clouds, args.logs.corrections.as_deref(), Some(&args.queries))?;
    let opts = args.chain.options(config);
    let stats = commands::replay_to_csv(&streams, camera, &opts, output(args.out.as_deref())?)?;
    eprintln!(
        "poses={} clouds_inserted={} clouds_dropped={} corrections={} query_steps={}",
        stats.poses, stats.clouds_inserted, stats.clouds_dropped, stats.corrections, stats.query_steps
    );
    Ok(())
}

fn query(args: &QueryArgs, config: &Config) -> Result<()> {
    let (streams, camera) = commands::load_streams(&args.logs.poses, &args.logs.clouds, args.logs.corrections.as_deref(), None)?;
    let [x, y, z] = args.point[..] else {
        anyhow::bail!("--point takes three comma-separated values, got {}", args.point.len());
    };
    let p = Vector3::new(x, y, z);
    if !(args.sigma >= 0.0 && args.sigma.is_finite()) {
        anyhow::bail!("--sigma must be finite and non-negative");
    }
    let streams = commands::single_query(&streams, args.time, GaussianPoint::isotropic(p, args.sigma));
    commands::replay_to_csv(&streams, camera, &args.chain.options(config), output(None)?)?;
    Ok(())
}

fn export(args: &ExportArgs, config: &Config) -> Result<()> {
    let scenario = commands::load_scenario(&args.scenario.section(config), "forward")?;
    let e = commands::export_scenario(&scenario, &args.out_dir)?;
    eprintln!(
        "wrote {} poses, {} clouds, {} correction batches, {} query steps to {}",
        e.streams.poses.len(),
        e.streams.clouds.len(),
        e.streams.corrections.len(),
        e.streams.queries.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn report(common: &TrialArgs, rows: &[bench::BenchRow]) -> Result<()> {
    let summary = bench::summarize(rows);
    bench::write_rows(output(common.out.as_deref())?, rows)?;
    if let Some(p) = &common.summary {
        bench::write_summary(output(Some(p))?, &summary)?;
    }
    for s in &summary {
        eprintln!("{} {}: {:.0} ± {:.0} ns over {} trials", s.experiment, s.parameter, s.mean_ns, s.stderr_ns, s.trials);
    }
    Ok(())
}

fn bench_queries(args: &BenchQueriesArgs, config: &Config) -> Result<()> {
    let common = &args.common;
    let trials = common.trials(config);
    let defaults = QueryBench::default();
    let cfg = QueryBench {
        history: common.history(config),
        n_queries: args.n_queries.clone().or(config.bench.n_queries.clone()).unwrap_or(defaults.n_queries),
        histories: args.histories.clone().or(config.bench.histories.clone()).unwrap_or(defaults.histories),
        history_queries: args.history_queries.or(config.bench.history_queries).unwrap_or(defaults.history_queries),
    };
    let (cols, rows) = common.resolution(config);
    let scenario = commands::load_scenario(&common.scenario.section(config), "forward")?;
    let scene = BenchScene::render(scenario.spec, cols, rows, cfg.frames_needed(&trials))?;
    report(common, &bench::bench_queries(&scene, &cfg, &trials)?)
}

fn bench_pose_updates(args: &BenchPoseArgs, config: &Config) -> Result<()> {
    let common = &args.common;
    let trials = common.trials(config);
    let history = common.history(config);
    let cfg = PoseBench {
        history,
        n_poses: args.n_poses.clone().or(config.bench.n_poses.clone()).unwrap_or(PoseBench::default().n_poses),
    };
    let (cols, rows) = common.resolution(config);
    let scenario = commands::load_scenario(&common.scenario.section(config), "forward")?;
    let scene = BenchScene::render(scenario.spec, cols, rows, history)?;
    report(common, &bench::bench_pose_updates(&scene, &cfg, &trials)?)
}

fn bench_histogram(args: &HistogramArgs, config: &Config) -> Result<()> {
    let scenario = commands::load_scenario(&args.scenario.section(config), "forward")?;
    let metrics = run_scenario(&scenario)?;
    commands::write_histogram(output(args.out.as_deref())?, &metrics)?;
    if let Some(p) = &args.metrics {
        commands::write_metrics(output(Some(p))?, &metrics)?;
    }
    eprintln!("{}", commands::histogram_summary(&metrics));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Replay(a) => replay(a, &config),
        Command::Query(a) => query(a, &config),
        Command::ExportScenario(a) => export(a, &config),
        Command::BenchQueries(a) => bench_queries(a, &config),
        Command::BenchPoseUpdates(a) => bench_pose_updates(a, &config),
        Command::BenchHistogram(a) => bench_histogram(a, &config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("nanomap: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nanomap: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}

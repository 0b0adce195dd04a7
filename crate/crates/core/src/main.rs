//! Command-line entry point.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use bootroute::client::{MockBackend, ModelClient};
use bootroute::config::{load_config_file, Overrides, RouterConfig};
use bootroute::cost::{optimal_k, present_currency, ParetoPoint};
use bootroute::harness::{self, RunReport, SweepAxis};
use bootroute::pipeline::{Router, StrategyChoice};
use bootroute::theory::{
    self, ConsistencyModel, MergePolicy, PollutionParams, ScoreFamily, SelectorOracle, SweepParams,
};
use bootroute::types::Query;

#[derive(Parser)]
#[command(name = "bootroute", version, about = "Route queries across a model pool using short probes")]
struct Cli {
    /// Router configuration (TOML or JSON).
    #[arg(long, global = true, default_value = "bootroute.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum pipelines in flight.
    #[arg(long, global = true, default_value_t = 4)]
    concurrency: usize,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Mock script file; overrides the config's `mock_scripts`.
    #[arg(long, global = true)]
    mocks: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Router,
    AllFull,
    SingleBest,
}

#[derive(Args)]
struct StrategyOpts {
    #[arg(long, value_enum, default_value = "router")]
    strategy: StrategyArg,
    /// Model for `single-best`.
    #[arg(long)]
    model: Option<String>,
}

impl StrategyOpts {
    fn choice(&self) -> Result<StrategyChoice> {
        Ok(match self.strategy {
            StrategyArg::Router => StrategyChoice::Router,
            StrategyArg::AllFull => StrategyChoice::AllFull,
            StrategyArg::SingleBest => {
                StrategyChoice::SingleBest(self.model.clone().context("--strategy single-best needs --model")?)
            }
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Route one query and print the answer.
    Route {
        text: String,
        #[arg(long, default_value = "cli")]
        query_id: String,
        #[arg(long = "capability")]
        capabilities: Vec<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        boot_budget: Option<u32>,
        #[command(flatten)]
        strategy: StrategyOpts,
    },
    /// Run a JSONL dataset and write a report plus traces.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        strategy: StrategyOpts,
    },
    /// Run the dataset once per value of one router parameter.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<u64>,
    },
    /// Monte-Carlo experiments on merge quality.
    Simulate {
        #[command(subcommand)]
        experiment: Experiment,
    },
    /// Pareto frontier over benchmark reports and extra points.
    Pareto {
        /// `report.json` files.
        reports: Vec<PathBuf>,
        /// Extra point as `label:score:cost`.
        #[arg(long = "point", value_parser = parse_point)]
        points: Vec<ParetoPoint>,
    },
    /// Serve `POST /route`, `GET /trace/{id}` and `GET /healthz`.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}

#[derive(Args, Clone, Copy)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "beta")]
    family: FamilyArg,
    #[arg(long, default_value_t = 0.8)]
    mean: f64,
    #[arg(long, default_value_t = 0.04)]
    variance: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Uniform,
    TruncatedNormal,
    BernoulliMixture,
    Beta,
}

impl From<FamilyArg> for ScoreFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Uniform => ScoreFamily::Uniform,
            FamilyArg::TruncatedNormal => ScoreFamily::TruncatedNormal,
            FamilyArg::BernoulliMixture => ScoreFamily::BernoulliMixture,
            FamilyArg::Beta => ScoreFamily::Beta,
        }
    }
}

#[derive(Subcommand)]
enum Experiment {
    /// Variance of the mean of k scores, for each k.
    Variance {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        k: Vec<usize>,
    },
    /// Merged score with and without top-k filtering of a mixed pool.
    Pollution {
        #[arg(long, default_value_t = 3)]
        n_good: usize,
        #[arg(long, default_value_t = 2)]
        n_bad: usize,
        #[arg(long, default_value_t = 0.9)]
        good_mean: f64,
        #[arg(long, default_value_t = 0.2)]
        bad_mean: f64,
        #[arg(long, default_value_t = 0.01)]
        variance: f64,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Selector noise; 0 ranks by true score.
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
    },
    /// Objective over k for top-k-of-N selection.
    KSweep {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 5)]
        pool_size: usize,
        #[arg(long, default_value_t = 0.001)]
        cost_per_candidate: f64,
        #[arg(long, default_value_t = 0.001)]
        merge_cost: f64,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
    },
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse()
}

fn parse_point(s: &str) -> Result<ParetoPoint, String> {
    let parts: Vec<&str> = s.rsplitn(3, ':').collect();
    if parts.len() != 3 {
        return Err(format!("expected label:score:cost, got '{s}'"));
    }
    let cost: f64 = parts[0].parse().map_err(|e| format!("cost: {e}"))?;
    let score: f64 = parts[1].parse().map_err(|e| format!("score: {e}"))?;
    Ok(ParetoPoint::new(parts[2], score, cost))
}

fn oracle(noise_sd: f64) -> SelectorOracle {
    if noise_sd > 0.0 {
        SelectorOracle::Noisy { noise_sd }
    } else {
        SelectorOracle::Perfect
    }
}

struct Loaded {
    config: RouterConfig,
    client: ModelClient,
}

fn load(cli: &Cli) -> Result<Loaded> {
    let mut config = load_config_file(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(m) = &cli.mocks {
        config.mock_scripts = Some(m.clone());
    }
    let mut client = ModelClient::new()?;
    if let Some(path) = &config.mock_scripts {
        let mocks = MockBackend::load(path).with_context(|| format!("loading mock scripts {}", path.display()))?;
        client = client.with_mocks(Arc::new(mocks));
    }
    Ok(Loaded { config, client })
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn print_summary(report: &RunReport) {
    let a = &report.aggregate;
    let acc = a.accuracy.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{}: accuracy {acc} ({}/{} scored, {} failed), tokens {}, cost {} (mean {} per query)",
        report.label,
        a.correct,
        a.scored,
        a.failed,
        a.total_tokens,
        present_currency(a.total_cost),
        present_currency(a.mean_cost_per_query)
    );
}

fn simulate(experiment: &Experiment, seed: u64, out: Option<&Path>) -> Result<()> {
    match experiment {
        Experiment::Variance { model, k } => {
            let m = ConsistencyModel::new(model.family.into(), model.mean, model.variance, seed)?;
            println!("k,empirical_mean,empirical_variance,nominal_variance");
            for &k in k {
                let s = theory::simulate_merge_variance(&m, k, model.trials)?;
                println!("{k},{},{},{}", s.empirical_mean, s.empirical_variance, model.variance / k as f64);
            }
            if m.clipping_mass() > theory::CLIP_WARN {
                eprintln!("warning: {:.2}% of the distribution is clamped to [0, 1]", 100.0 * m.clipping_mass());
            }
        }
        Experiment::Pollution { n_good, n_bad, good_mean, bad_mean, variance, k, noise_sd, trials } => {
            let good = ConsistencyModel::new(ScoreFamily::Beta, *good_mean, *variance, seed)?;
            let bad = ConsistencyModel::new(ScoreFamily::Beta, *bad_mean, *variance, seed)?;
            let base = PollutionParams {
                good,
                bad,
                n_good: *n_good,
                n_bad: *n_bad,
                policy: MergePolicy::Mean,
                with_filter: false,
                k: *k,
                oracle: oracle(*noise_sd),
                trials: *trials,
            };
            let open = theory::simulate_pool_pollution(&base)?;
            let filtered = theory::simulate_pool_pollution(&PollutionParams { with_filter: true, ..base })?;
            println!("no filter:        {:.6}", open.mean_merged_score);
            println!("top-{k} filter:     {:.6}", filtered.mean_merged_score);
        }
        Experiment::KSweep { model, pool_size, cost_per_candidate, merge_cost, lambda, noise_sd } => {
            let m = ConsistencyModel::new(model.family.into(), model.mean, model.variance, seed)?;
            let points = theory::sweep_k_objective(&SweepParams {
                model: m,
                pool_size: *pool_size,
                cost_per_candidate: *cost_per_candidate,
                merge_cost: *merge_cost,
                lambda: *lambda,
                policy: MergePolicy::Mean,
                oracle: oracle(*noise_sd),
                trials: model.trials,
            })?;
            theory::write_sweep_csv(&points, std::io::stdout())?;
            let (scores, costs) = theory::sweep_maps(&points);
            println!("# optimal k = {}", optimal_k(&scores, &costs, *lambda)?);
            if let Some(dir) = out {
                std::fs::create_dir_all(dir)?;
                theory::write_sweep_csv(&points, std::fs::File::create(dir.join("k_sweep.csv"))?)?;
            }
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();

    match &cli.command {
        Command::Simulate { experiment } => simulate(experiment, cli.seed.unwrap_or(0), cli.out.as_deref())?,
        Command::Pareto { reports, points } => {
            let mut all = points.clone();
            for path in reports {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let report: RunReport = serde_json::from_str(&text)?;
                all.push(harness::report_point(&report));
            }
            if all.is_empty() {
                bail!("no points: pass report files or --point");
            }
            let dir = out_dir(&cli, "pareto");
            for p in harness::emit_pareto(&all, &dir)? {
                println!("{}\t{}\t{}", p.label, p.score, p.cost);
            }
        }
        Command::Route { text, query_id, capabilities, k, layers, boot_budget, strategy } => {
            let ctx = load(&cli)?;
            let overrides = Overrides { k: *k, layers: *layers, boot_budget: *boot_budget };
            let config = ctx.config.with_overrides(&overrides)?;
            let router = Router::new(ctx.client, config);
            let query = Query::new(query_id, text).requiring(capabilities.iter().cloned());
            let result = router.run(&query, &strategy.choice()?).await;
            let trace = match &result {
                Ok(t) => Some(t),
                Err(e) => e.partial_trace(),
            };
            if let (Some(dir), Some(t)) = (&cli.out, trace) {
                write_json(&dir.join(format!("{query_id}.trace.json")), t)?;
            }
            let trace = result?;
            let totals = trace.ledger.totals();
            println!("{}", trace.final_text);
            eprintln!(
                "calls {}, tokens {}, cost {}",
                trace.call_count(),
                totals.tokens,
                present_currency(totals.currency)
            );
        }
        Command::Bench { dataset, strategy } => {
            let ctx = load(&cli)?;
            let tasks = harness::load_dataset(dataset)?;
            let run = harness::run_benchmark(&ctx.client, &tasks, &ctx.config, &strategy.choice()?, cli.concurrency).await?;
            let dir = out_dir(&cli, "bench-out");
            harness::write_run(&dir, &run)?;
            print_summary(&run.report);
        }
        Command::Sweep { dataset, axis, values } => {
            let ctx = load(&cli)?;
            let tasks = harness::load_dataset(dataset)?;
            let sweep = harness::run_sweep(&ctx.client, &tasks, &ctx.config, *axis, values, cli.concurrency).await?;
            let dir = out_dir(&cli, "sweep-out");
            std::fs::create_dir_all(&dir)?;
            harness::write_sweep_csv(&sweep, std::fs::File::create(dir.join("sweep.csv"))?)?;
            let mut points = Vec::new();
            for run in &sweep.runs {
                let value = run.report.sweep.map_or(0, |s| s.value);
                harness::write_run(&dir.join(format!("{}-{value}", axis.name())), run)?;
                print_summary(&run.report);
                points.push(harness::report_point(&run.report));
            }
            for (value, reason) in &sweep.skipped {
                eprintln!("skipped {}={value}: {reason}", axis.name());
            }
            if !points.is_empty() {
                harness::emit_pareto(&points, &dir)?;
            }
        }
        Command::Serve { bind } => {
            let ctx = load(&cli)?;
            let listener = tokio::net::TcpListener::bind(bind).await.with_context(|| format!("binding {bind}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            let router = Router::new(ctx.client, ctx.config);
            harness::serve::serve(router, listener, cli.concurrency, async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        }
    }
    Ok(())
}

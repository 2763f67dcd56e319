//! `navg`: build, query and benchmark forest-seeded navigation graphs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use navforest::bench::{self, ParamOverrides, SweepGrid};
use navforest::container::{BuildConfig, SearchDefaults};
use navforest::forest::{EntropyMode, ForestConfig};
use navforest::report::{to_csv, to_json, BenchRow};
use navforest::synth::ClusteredSpec;
use navforest::vecs::{save_fvecs, write_atomic};
use navforest::{Error, Exec, Metric, SearchMode};

#[derive(Parser)]
#[command(name = "navg", version, about = "Forest-seeded navigation graph search")]
struct Cli {
    /// Run every batch loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact K nearest neighbors of every query, written as ivecs.
    Groundtruth {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        topk: usize,
        #[arg(long, value_enum, default_value_t = MetricArg::L2)]
        metric: MetricArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the forest, build the graph and write an index file.
    Build(BuildArgs),
    /// Run one parameter setting and report recall and cost.
    Query {
        #[command(flatten)]
        common: QueryArgs,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        /// Write the result ids of every query as ivecs.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Cartesian sweep over beam width, seed count and iterations.
    Sweep {
        #[command(flatten)]
        common: QueryArgs,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_delimiter = ',')]
        beam: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        iters: Vec<usize>,
    },
    /// Print index metadata.
    Info {
        #[arg(long)]
        index: PathBuf,
    },
    /// Write a synthetic clustered base and query set as fvecs.
    Synth {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long = "num-queries", default_value_t = 100)]
        num_queries: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        clusters: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 0.5)]
        decay: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        queries: PathBuf,
    },
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    metric: MetricArg,
    #[arg(long, default_value_t = 64)]
    trees: usize,
    #[arg(long, default_value_t = 13)]
    depth: usize,
    #[arg(long, default_value_t = 100)]
    candidates: usize,
    #[arg(long = "min-leaf", default_value_t = 8)]
    min_leaf: usize,
    /// Train each tree on a bootstrap sample.
    #[arg(long)]
    bagging: bool,
    #[arg(long, value_enum, default_value_t = EntropyArg::Diagonal)]
    entropy: EntropyArg,
    /// Neighbors per vertex in every graph level.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Fraction of the dataset kept at each level, bottom first.
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.1")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    topk: Option<usize>,
    /// Query metric; defaults to the metric the graph was built with.
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, value_enum, default_value_t = ModeArg::Forest)]
    mode: ModeArg,
    /// GNNS restarts; defaults to the seed count.
    #[arg(long)]
    restarts: Option<usize>,
    /// Return the best K of all visited vertices, allowing K above the beam.
    #[arg(long)]
    pool: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Leave wall-clock columns empty so reports are reproducible.
    #[arg(long = "no-timing")]
    no_timing: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    L1,
    L2,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::L1 => Metric::L1,
            MetricArg::L2 => Metric::L2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EntropyArg {
    Diagonal,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Forest,
    Gnns,
    ForestOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl QueryArgs {
    fn mode(&self) -> SearchMode {
        match self.mode {
            ModeArg::Forest => SearchMode::Forest,
            ModeArg::ForestOnly => SearchMode::ForestOnly,
            ModeArg::Gnns => SearchMode::Gnns {
                restarts: self.restarts.unwrap_or(0),
            },
        }
    }

    fn emit(&self, rows: &[BenchRow]) -> anyhow::Result<()> {
        let text = match self.format {
            Format::Csv => to_csv(rows),
            Format::Json => to_json(rows),
        };
        write_output(self.out.as_deref(), &text)
    }
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes())
            .with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn build_config(a: &BuildArgs) -> BuildConfig {
    BuildConfig {
        forest: ForestConfig {
            num_trees: a.trees,
            max_depth: a.depth,
            candidates_per_node: a.candidates,
            min_leaf: a.min_leaf,
            entropy_mode: match a.entropy {
                EntropyArg::Diagonal => EntropyMode::Diagonal,
                EntropyArg::Full => EntropyMode::Full,
            },
            bagging: a.bagging,
            ..ForestConfig::default()
        },
        k: a.k,
        fractions: a.fractions.clone(),
        build_metric: a.metric.into(),
        seed: a.seed,
        search: SearchDefaults {
            beam: a.beam,
            max_iters: a.iters,
            num_seeds: a.seeds,
            top_k: a.topk,
        },
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.command {
        Command::Groundtruth {
            base,
            queries,
            topk,
            metric,
            out,
        } => {
            let truth = bench::cmd_groundtruth(&base, &queries, topk, metric.into(), &out, exec)?;
            eprintln!("wrote {} rows of {topk} ids to {}", truth.len(), out.display());
        }
        Command::Build(args) => {
            let (index, stats) = bench::cmd_build(&args.base, &build_config(&args), &args.out, exec)?;
            print!("{}", bench::format_build_stats(&stats));
            println!("index: {} ({} vectors, dim {})", args.out.display(), index.meta.num_samples, index.meta.dim);
        }
        Command::Query {
            common,
            truth,
            beam,
            iters,
            seeds,
            results,
        } => {
            let overrides = ParamOverrides {
                beam,
                max_iters: iters,
                num_seeds: seeds,
                top_k: common.topk,
                metric: common.metric.map(Metric::from),
                pool_visited: common.pool,
            };
            let row = bench::cmd_query(
                &common.index,
                &common.queries,
                truth.as_deref(),
                &overrides,
                common.mode(),
                common.seed,
                !common.no_timing,
                results.as_deref(),
                exec,
            )?;
            common.emit(&[row])?;
        }
        Command::Sweep {
            common,
            truth,
            beam,
            seeds,
            iters,
        } => {
            let overrides = ParamOverrides {
                top_k: common.topk,
                metric: common.metric.map(Metric::from),
                pool_visited: common.pool,
                ..Default::default()
            };
            let grid = SweepGrid {
                beams: beam,
                seeds,
                iters,
            };
            let rows = bench::cmd_sweep(
                &common.index,
                &common.queries,
                &truth,
                &grid,
                &overrides,
                common.mode(),
                common.seed,
                !common.no_timing,
                exec,
            )?;
            common.emit(&rows)?;
        }
        Command::Info { index } => print!("{}", bench::cmd_info(&index)?),
        Command::Synth {
            n,
            num_queries,
            dim,
            clusters,
            spread,
            decay,
            seed,
            base,
            queries,
        } => {
            let spec = ClusteredSpec {
                dim,
                clusters,
                spread,
                decay,
                seed,
                ..Default::default()
            };
            let (b, q) = spec.generate(n, num_queries)?;
            save_fvecs(&base, &b)?;
            save_fvecs(&queries, &q)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidParameter(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(v) = std::env::var("NAVG_THREADS") {
        match v.parse::<usize>() {
            Ok(t) if t >= 1 => {
                if let Err(e) = navforest::exec::init_thread_pool(t) {
                    eprintln!("navg: cannot size thread pool: {e}");
                }
            }
            _ => {
                eprintln!("navg: NAVG_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(1);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("navg: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

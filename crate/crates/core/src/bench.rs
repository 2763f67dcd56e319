//! Benchmark harness behind the `navg` binary: ground truth, index build,
//! query evaluation and parameter sweeps.
//!
//! Commands return values rather than printing, so the binary owns all I/O
//! formatting and exit codes. Output files are written atomically.

use std::path::Path;
use std::time::Instant;

use crate::container::{BuildConfig, BuildStats, Index, SearchDefaults};
use crate::dataset::{Metric, VectorDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::oracle::{ground_truth, knn_exact, recall_at};
use crate::report::{format_fractions, BenchRow};
use crate::search::{QueryResult, SearchMode, SearchParams};
use crate::vecs::{load_fvecs, load_ivecs, save_ivecs};

/// Queries timed with a linear scan for the wall-clock speedup.
const LINEAR_TIMING_QUERIES: usize = 20;

/// Search flags left unset fall back to the defaults stored in the index.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParamOverrides {
    pub beam: Option<usize>,
    pub max_iters: Option<usize>,
    pub num_seeds: Option<usize>,
    pub top_k: Option<usize>,
    pub metric: Option<Metric>,
    pub pool_visited: bool,
}

impl ParamOverrides {
    pub fn resolve(&self, defaults: &SearchDefaults, build_metric: Metric) -> SearchParams {
        SearchParams {
            beam: self.beam.unwrap_or(defaults.beam),
            max_iters: self.max_iters.unwrap_or(defaults.max_iters),
            num_seeds: self.num_seeds.unwrap_or(defaults.num_seeds),
            top_k: self.top_k.unwrap_or(defaults.top_k),
            metric: self.metric.unwrap_or(build_metric),
            pool_visited: self.pool_visited,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOptions {
    pub mode: SearchMode,
    pub params: SearchParams,
    pub seed: u64,
    /// Measure wall-clock columns; off makes reports byte-reproducible.
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub row: BenchRow,
    pub results: Vec<QueryResult>,
}

fn check_dims(index: &Index, queries: &VectorDataset) -> Result<()> {
    if !queries.is_empty() && queries.dim() != index.meta.dim {
        return Err(Error::DimensionMismatch {
            expected: index.meta.dim,
            found: queries.dim(),
        });
    }
    Ok(())
}

fn check_truth(truth: &[Vec<u32>], queries: usize, k: usize) -> Result<()> {
    if truth.len() != queries {
        return Err(Error::invalid(format!(
            "truth has {} rows for {} queries",
            truth.len(),
            queries
        )));
    }
    if let Some((i, row)) = truth.iter().enumerate().find(|(_, t)| t.len() < k) {
        return Err(Error::invalid(format!(
            "truth row {i} lists {} neighbors, fewer than K={k}",
            row.len()
        )));
    }
    Ok(())
}

/// Converts an ivecs truth file to ids, rejecting negative entries.
pub fn truth_ids(lists: Vec<Vec<i32>>) -> Result<Vec<Vec<u32>>> {
    lists
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .map(|v| {
                    u32::try_from(v)
                        .map_err(|_| Error::invalid(format!("negative id {v} in truth row {i}")))
                })
                .collect()
        })
        .collect()
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

/// Mean seconds per query of an exact linear scan over a prefix of the
/// queries.
fn linear_scan_secs(index: &Index, queries: &VectorDataset, k: usize, metric: Metric) -> Result<f64> {
    let count = queries.len().min(LINEAR_TIMING_QUERIES);
    let k = k.min(index.vectors.len());
    let start = Instant::now();
    for i in 0..count {
        std::hint::black_box(knn_exact(&index.vectors, queries.get(i), k, metric)?);
    }
    Ok(start.elapsed().as_secs_f64() / count as f64)
}

/// Runs every query and summarizes the run as one report row.
pub fn evaluate(
    index: &Index,
    queries: &VectorDataset,
    truth: Option<&[Vec<u32>]>,
    opts: &QueryOptions,
    exec: Exec,
) -> Result<Evaluation> {
    check_dims(index, queries)?;
    if queries.is_empty() {
        return Err(Error::invalid("query set is empty"));
    }
    opts.params.validate()?;
    let k = opts.params.top_k;
    if let Some(t) = truth {
        check_truth(t, queries.len(), k)?;
    }

    let searcher = index.searcher();
    let start = Instant::now();
    let results = searcher.run_batch(queries, opts.mode, &opts.params, opts.seed, exec)?;
    let batch_secs = start.elapsed().as_secs_f64();

    let recall = match truth {
        Some(t) => Some(mean(
            results
                .iter()
                .zip(t)
                .map(|(r, t)| recall_at(&r.ids(), &t[..k]))
                .collect::<Result<Vec<f64>>>()?
                .into_iter(),
        )),
        None => None,
    };
    let evals = mean(results.iter().map(|r| r.stats.distance_evals as f64));
    let n = index.meta.num_samples;
    let speedup_evals = n as f64 / evals.max(1.0);
    let (qps, speedup_wall) = if opts.timing {
        let search_secs = mean(results.iter().map(|r| r.stats.wall_time));
        let linear = linear_scan_secs(index, queries, k, opts.params.metric)?;
        (
            Some(queries.len() as f64 / batch_secs.max(f64::MIN_POSITIVE)),
            Some(linear / search_secs.max(f64::MIN_POSITIVE)),
        )
    } else {
        (None, None)
    };

    let build = &index.meta.build;
    let row = BenchRow {
        dataset_id: index.meta.dataset_digest[..16].to_string(),
        n,
        d: index.meta.dim,
        num_trees: build.forest.num_trees,
        max_depth: build.forest.max_depth,
        k: build.k,
        fractions: format_fractions(&build.fractions),
        mode: opts.mode.name().to_string(),
        metric: opts.params.metric.name().to_string(),
        beam: opts.params.beam,
        it_max: opts.params.max_iters,
        num_seeds: match opts.mode {
            SearchMode::Gnns { restarts } if restarts > 0 => restarts,
            _ => opts.params.num_seeds,
        },
        top_k: k,
        pool: opts.params.pool_visited,
        seed: opts.seed,
        queries: queries.len(),
        recall_at_k: recall,
        dist_evals: evals,
        qps,
        speedup_evals,
        speedup_wall,
    };
    Ok(Evaluation { row, results })
}

/// Exact top-`k` of every query, written as ivecs. Nothing is written on
/// error.
pub fn cmd_groundtruth(
    base: &Path,
    queries: &Path,
    k: usize,
    metric: Metric,
    out: &Path,
    exec: Exec,
) -> Result<Vec<Vec<u32>>> {
    let base = load_fvecs(base)?;
    let queries = load_fvecs(queries)?;
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    if k > base.len() {
        return Err(Error::TooSmall(format!(
            "K={k} exceeds the base size N={}",
            base.len()
        )));
    }
    if !queries.is_empty() && queries.dim() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            found: queries.dim(),
        });
    }
    let truth = ground_truth(&base, &queries, k, metric, exec)?;
    let rows: Vec<Vec<i32>> = truth
        .iter()
        .map(|r| r.iter().map(|&id| id as i32).collect())
        .collect();
    save_ivecs(out, &rows)?;
    Ok(truth)
}

/// Builds and saves an index.
pub fn cmd_build(base: &Path, config: &BuildConfig, out: &Path, exec: Exec) -> Result<(Index, BuildStats)> {
    let ds = load_fvecs(base)?;
    let (index, stats) = Index::build(&ds, config, exec)?;
    index.save(out)?;
    Ok((index, stats))
}

/// Human-readable build summary: timings, leaf-size histogram in
/// power-of-two bins and per-level vertex counts.
pub fn format_build_stats(stats: &BuildStats) -> String {
    let mut out = format!(
        "forest: {:.2}s\ngraph: {:.2}s\nlevels: {}\nleaves: {}\n",
        stats.forest_secs,
        stats.graph_secs,
        stats
            .level_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(" "),
        stats.leaf_sizes.len()
    );
    let mut bins: Vec<usize> = Vec::new();
    for &s in &stats.leaf_sizes {
        let b = usize::BITS as usize - s.max(1).leading_zeros() as usize - 1;
        if bins.len() <= b {
            bins.resize(b + 1, 0);
        }
        bins[b] += 1;
    }
    for (b, count) in bins.iter().enumerate().filter(|(_, &c)| c > 0) {
        out.push_str(&format!(
            "  leaf size {:>6}..{:<6} {count}\n",
            1usize << b,
            (1usize << (b + 1)) - 1
        ));
    }
    out
}

fn load_truth(path: Option<&Path>) -> Result<Option<Vec<Vec<u32>>>> {
    path.map(|p| load_ivecs(p).and_then(truth_ids)).transpose()
}

/// Evaluates one parameter setting. With `results_out`, the result ids of
/// every query are written as ivecs.
pub fn cmd_query(
    index: &Path,
    queries: &Path,
    truth: Option<&Path>,
    overrides: &ParamOverrides,
    mode: SearchMode,
    seed: u64,
    timing: bool,
    results_out: Option<&Path>,
    exec: Exec,
) -> Result<BenchRow> {
    let index = Index::load(index)?;
    let queries = load_fvecs(queries)?;
    let truth = load_truth(truth)?;
    let params = overrides.resolve(&index.meta.build.search, index.meta.build.build_metric);
    let opts = QueryOptions {
        mode,
        params,
        seed,
        timing,
    };
    let eval = evaluate(&index, &queries, truth.as_deref(), &opts, exec)?;
    if let Some(path) = results_out {
        let ids: Vec<Vec<i32>> = eval
            .results
            .iter()
            .map(|r| r.results.iter().map(|n| n.id as i32).collect())
            .collect();
        save_ivecs(path, &ids)?;
    }
    Ok(eval.row)
}

/// Values swept by [`cmd_sweep`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub beams: Vec<usize>,
    pub seeds: Vec<usize>,
    pub iters: Vec<usize>,
}

impl SweepGrid {
    /// Cells in row order: beam outermost, then seeds, then iterations.
    pub fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut cells = Vec::new();
        for &b in &self.beams {
            for &s in &self.seeds {
                for &i in &self.iters {
                    cells.push((b, s, i));
                }
            }
        }
        cells
    }
}

/// Evaluates every cell of `grid`; unset axes fall back to `base` and the
/// index defaults. Every cell is validated before any query runs.
pub fn sweep(
    index: &Index,
    queries: &VectorDataset,
    truth: &[Vec<u32>],
    grid: &SweepGrid,
    base: &ParamOverrides,
    mode: SearchMode,
    seed: u64,
    timing: bool,
    exec: Exec,
) -> Result<Vec<BenchRow>> {
    let defaults = base.resolve(&index.meta.build.search, index.meta.build.build_metric);
    let axis = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
    if grid.beams.is_empty() && grid.seeds.is_empty() && grid.iters.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let full = SweepGrid {
        beams: axis(&grid.beams, defaults.beam),
        seeds: axis(&grid.seeds, defaults.num_seeds),
        iters: axis(&grid.iters, defaults.max_iters),
    };
    let cells: Vec<QueryOptions> = full
        .cells()
        .into_iter()
        .map(|(beam, num_seeds, max_iters)| QueryOptions {
            mode,
            params: SearchParams {
                beam,
                num_seeds,
                max_iters,
                ..defaults
            },
            seed,
            timing,
        })
        .collect();
    for c in &cells {
        c.params.validate()?;
    }
    cells
        .iter()
        .map(|opts| evaluate(index, queries, Some(truth), opts, exec).map(|e| e.row))
        .collect()
}

/// File-based [`sweep`].
pub fn cmd_sweep(
    index: &Path,
    queries: &Path,
    truth: &Path,
    grid: &SweepGrid,
    base: &ParamOverrides,
    mode: SearchMode,
    seed: u64,
    timing: bool,
    exec: Exec,
) -> Result<Vec<BenchRow>> {
    let index = Index::load(index)?;
    let queries = load_fvecs(queries)?;
    let truth = truth_ids(load_ivecs(truth)?)?;
    sweep(&index, &queries, &truth, grid, base, mode, seed, timing, exec)
}

/// Index metadata as pretty JSON followed by a structural summary.
pub fn cmd_info(index: &Path) -> Result<String> {
    let index = Index::load(index)?;
    let mut out = serde_json::to_string_pretty(&index.meta).expect("metadata serializes");
    out.push('\n');
    let leaves = index.forest.leaf_sizes();
    let depth = index.forest.trees().iter().map(|t| t.depth()).max().unwrap_or(0);
    out.push_str(&format!(
        "trees: {} (max depth reached {depth}, {} leaves, mean leaf size {:.1})\n",
        index.forest.trees().len(),
        leaves.len(),
        mean(leaves.iter().map(|&s| s as f64))
    ));
    for level in index.graph.levels() {
        let edges: usize = level.vertices().iter().map(|&v| level.out_degree(v)).sum();
        out.push_str(&format!(
            "level {}: {} vertices, {edges} edges\n",
            level.level(),
            level.len()
        ));
    }
    Ok(out)
}

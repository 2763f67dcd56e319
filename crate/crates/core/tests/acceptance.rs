//! Acceptance suite. Each test prints one `PASS`/`FAIL`/`SKIP` line.
//!
//! The large-corpus criteria take several minutes and are ignored by default:
//!
//! ```text
//! cargo test --release --test acceptance -- --include-ignored --nocapture --test-threads=1
//! ```

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use navforest::bench::{evaluate, QueryOptions};
use navforest::navgraph::build_multiscale;
use navforest::oracle::{ground_truth, recall_at};
use navforest::search::{query_rng, SearchMode};
use navforest::synth::{uniform, ClusteredSpec};
use navforest::vecs::{load_fvecs, load_ivecs};
use navforest::{distance, BuildConfig, Exec, Index, Metric, SearchParams, VectorDataset};

fn report(id: u32, pass: bool, detail: String) {
    println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Graph construction against a brute-force oracle

/// Full distance table with the library distance, sorted on (distance, id).
fn knn_oracle(ds: &VectorDataset, vertices: &[u32], k: usize, metric: Metric) -> Vec<Vec<u32>> {
    vertices
        .iter()
        .map(|&v| {
            let mut all: Vec<(f64, u32)> = vertices
                .iter()
                .filter(|&&u| u != v)
                .map(|&u| (distance(ds.get(v as usize), ds.get(u as usize), metric).unwrap(), u))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, u)| u).collect()
        })
        .collect()
}

#[test]
fn c1_graph_levels_equal_brute_force_knn() {
    let start = Instant::now();
    let mut mismatched = 0usize;
    let mut edges = 0usize;
    for seed in 0..25u64 {
        let ds = uniform(2000, 16, 1000 + seed);
        let graph = build_multiscale(&ds, &[1.0, 0.1], 20, Metric::L2, seed).unwrap();
        for level in graph.levels() {
            let want = knn_oracle(&ds, level.vertices(), 20, Metric::L2);
            for (&v, w) in level.vertices().iter().zip(&want) {
                let got = level.neighbors(v);
                edges += w.len();
                mismatched += got.len().abs_diff(w.len());
                mismatched += got.iter().zip(w).filter(|(a, b)| a != b).count();
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        mismatched == 0,
        format!("25 datasets, {edges} edges, {mismatched} mismatched, {secs:.1} s"),
    );
}

// ---------------------------------------------------------------------------
// Beam monotonicity

#[test]
fn c2_best_beam_distance_never_increases() {
    let spec = ClusteredSpec::default();
    let (base, queries) = spec.generate(10_000, 1000).unwrap();
    let (index, _) = Index::build(&base, &BuildConfig::default(), Exec::default()).unwrap();
    let params = SearchParams {
        top_k: 100,
        pool_visited: true,
        ..Default::default()
    };
    let results = index
        .searcher()
        .run_batch(&queries, SearchMode::Forest, &params, 1, Exec::default())
        .unwrap();
    let mut violations = 0;
    let mut steps = 0;
    for r in &results {
        let trace = &r.stats.best_trace;
        steps += trace.len().saturating_sub(1);
        violations += trace.windows(2).filter(|w| w[1].1 > w[0].1).count();
    }
    report(
        2,
        violations == 0 && results.len() == 1000,
        format!("1000 queries, {steps} iteration/level steps, {violations} violations"),
    );
}

// ---------------------------------------------------------------------------
// Nesting and degree

#[test]
fn c3_levels_nest_and_degrees_are_capped() {
    let ds = ClusteredSpec::default().generate(10_000, 0).unwrap().0;
    let k = 20;
    let graph = build_multiscale(&ds, &[1.0, 0.1, 0.01], k, Metric::L2, 3).unwrap();
    let mut violations = 0;
    let levels = graph.levels();
    let all: Vec<u32> = (0..10_000).collect();
    violations += usize::from(levels.len() != 3);
    violations += usize::from(levels[0].vertices() != &all[..]);
    for pair in levels.windows(2) {
        let lower: HashSet<u32> = pair[0].vertices().iter().copied().collect();
        violations += pair[1].vertices().iter().filter(|v| !lower.contains(v)).count();
    }
    for level in levels {
        let members: HashSet<u32> = level.vertices().iter().copied().collect();
        let want = k.min(level.len() - 1);
        for &v in level.vertices() {
            let adj = level.neighbors(v);
            violations += usize::from(adj.len() != want);
            violations += adj.iter().filter(|u| **u == v || !members.contains(u)).count();
        }
    }
    let sizes: Vec<usize> = levels.iter().map(|l| l.len()).collect();
    report(
        3,
        violations == 0 && sizes == [10_000, 1000, 100],
        format!("level sizes {sizes:?}, {violations} violations"),
    );
}

// ---------------------------------------------------------------------------
// Large synthetic corpus shared by criteria 4 to 6

const N: usize = 100_000;
const QUERIES: usize = 1000;
const K: usize = 100;

struct Corpus {
    index: Index,
    queries: VectorDataset,
    truth: Vec<Vec<u32>>,
}

fn corpus(seed: u64) -> Arc<Corpus> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<Corpus>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(c) = cache.lock().unwrap().get(&seed) {
        return c.clone();
    }
    let start = Instant::now();
    let spec = ClusteredSpec {
        seed,
        ..Default::default()
    };
    let (base, queries) = spec.generate(N, QUERIES).unwrap();
    let truth = ground_truth(&base, &queries, K, Metric::L2, Exec::default()).unwrap();
    let (index, stats) = Index::build(&base, &BuildConfig::default(), Exec::default()).unwrap();
    println!(
        "  corpus seed {seed}: forest {:.1} s, graph {:.1} s, total {:.1} s",
        stats.forest_secs,
        stats.graph_secs,
        start.elapsed().as_secs_f64()
    );
    let c = Arc::new(Corpus {
        index,
        queries,
        truth,
    });
    cache.lock().unwrap().insert(seed, c.clone());
    c
}

fn pipeline_params() -> SearchParams {
    SearchParams {
        top_k: K,
        pool_visited: true,
        ..Default::default()
    }
}

struct Measured {
    recall: f64,
    evals: f64,
    speedup_evals: f64,
    speedup_wall: Option<f64>,
    per_query_evals: Vec<usize>,
}

fn measure(c: &Corpus, mode: SearchMode, params: SearchParams, timing: bool) -> Measured {
    let opts = QueryOptions {
        mode,
        params,
        seed: 42,
        timing,
    };
    let eval = evaluate(&c.index, &c.queries, Some(&c.truth), &opts, Exec::default()).unwrap();
    Measured {
        recall: eval.row.recall_at_k.unwrap(),
        evals: eval.row.dist_evals,
        speedup_evals: eval.row.speedup_evals,
        speedup_wall: eval.row.speedup_wall,
        per_query_evals: eval.results.iter().map(|r| r.stats.distance_evals).collect(),
    }
}

fn pipeline(seed: u64) -> &'static Measured {
    static RUNS: OnceLock<Mutex<HashMap<u64, &'static Measured>>> = OnceLock::new();
    let runs = RUNS.get_or_init(Default::default);
    if let Some(m) = runs.lock().unwrap().get(&seed) {
        return m;
    }
    let m: &'static Measured =
        Box::leak(Box::new(measure(&corpus(seed), SearchMode::Forest, pipeline_params(), true)));
    runs.lock().unwrap().insert(seed, m);
    m
}

#[test]
#[ignore = "builds a 100k-vector index; run with --include-ignored"]
fn c4_recall_at_one_sixtieth_of_a_linear_scan() {
    let start = Instant::now();
    let m = pipeline(1);
    let budget = N as f64 / 60.0;
    let within = m.evals <= budget;
    let grade = if m.recall >= 0.70 {
        "target 0.70 met"
    } else if m.recall >= 0.60 {
        "above the 0.60 floor, below the 0.70 target"
    } else {
        "below the 0.60 floor"
    };
    report(
        4,
        within && m.recall >= 0.60,
        format!(
            "recall@100 {:.4} ({grade}), {:.1} evals/query (budget {budget:.0}, {:.0}x fewer than a scan), {:.0} s",
            m.recall,
            m.evals,
            m.speedup_evals,
            start.elapsed().as_secs_f64()
        ),
    );
    if let Some(wall) = m.speedup_wall {
        println!(
            "  info: wall-clock speedup {wall:.1}x vs distance-evaluation speedup {:.0}x",
            m.speedup_evals
        );
    }
}

/// GNNS with the same per-query distance evaluation budget as the forest run.
fn gnns_matched(c: &Corpus, budgets: &[usize]) -> f64 {
    let searcher = c.index.searcher();
    let params = pipeline_params();
    let mut scratch = searcher.scratch();
    let mut total = 0.0;
    for (i, (q, &budget)) in c.queries.iter().zip(budgets).enumerate() {
        let mut rng = query_rng(42, i);
        let r = searcher
            .search_gnns(&mut scratch, q, N, Some(budget), &params, &mut rng)
            .unwrap();
        assert!(r.stats.distance_evals <= budget);
        total += recall_at(&r.ids(), &c.truth[i][..K]).unwrap();
    }
    total / c.queries.len() as f64
}

#[test]
#[ignore = "builds five 100k-vector indexes; run with --include-ignored"]
fn c5_forest_seeding_beats_random_restarts() {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 1..=5 {
        let forest = pipeline(seed);
        let gnns = gnns_matched(&corpus(seed), &forest.per_query_evals);
        wins += usize::from(forest.recall > gnns);
        lines.push(format!("seed {seed}: forest {:.4} vs gnns {gnns:.4}", forest.recall));
        println!("  {}", lines.last().unwrap());
    }
    report(
        5,
        wins >= 4,
        format!("forest wins on {wins}/5 datasets at matched evaluation budgets"),
    );
}

#[test]
#[ignore = "builds a 100k-vector index; run with --include-ignored"]
fn c6_forest_only_is_cheap_and_inaccurate() {
    let full = pipeline(1);
    let c = corpus(1);
    let only = measure(&c, SearchMode::ForestOnly, pipeline_params(), false);
    let ratio = only.evals / full.evals;
    report(
        6,
        only.recall < 0.10 && ratio <= 0.01,
        format!(
            "forest-only recall@100 {:.4}, {:.1} evals/query = {:.2}% of the pipeline's {:.1}",
            only.recall,
            only.evals,
            100.0 * ratio,
            full.evals
        ),
    );
}

// ---------------------------------------------------------------------------
// Optional public corpus

#[test]
fn c7_gist_when_present() {
    let Some(dir) = std::env::var_os("NAVG_GIST_DIR").map(PathBuf::from) else {
        println!("criterion 7: SKIP (set NAVG_GIST_DIR to a directory with gist_base.fvecs, gist_query.fvecs, gist_groundtruth.ivecs)");
        return;
    };
    let base = load_fvecs(dir.join("gist_base.fvecs")).unwrap();
    let queries = load_fvecs(dir.join("gist_query.fvecs")).unwrap();
    let truth: Vec<Vec<u32>> = load_ivecs(dir.join("gist_groundtruth.ivecs"))
        .unwrap()
        .into_iter()
        .map(|r| r.into_iter().map(|v| v as u32).collect())
        .collect();
    let (index, _) = Index::build(&base, &BuildConfig::default(), Exec::default()).unwrap();
    let opts = QueryOptions {
        mode: SearchMode::Forest,
        params: pipeline_params(),
        seed: 42,
        timing: true,
    };
    let row = evaluate(&index, &queries, Some(&truth), &opts, Exec::default())
        .unwrap()
        .row;
    let recall = row.recall_at_k.unwrap();
    report(
        7,
        recall >= 0.63 && row.speedup_evals >= 50.0,
        format!(
            "recall@100 {recall:.4}, evaluation speedup {:.1}x, wall-clock speedup {:.1}x",
            row.speedup_evals,
            row.speedup_wall.unwrap_or(f64::NAN)
        ),
    );
}

// ---------------------------------------------------------------------------
// Determinism through the command line

fn navg(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_navg"))
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn build_and_query(dir: &Path, tag: &str) -> (Vec<u8>, Vec<u8>) {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let index = p(&format!("index-{tag}.nvg"));
    let csv = p(&format!("report-{tag}.csv"));
    navg(&[
        "build", "--base", &p("base.fvecs"), "--out", &index, "--trees", "16", "--seed", "11",
    ]);
    navg(&[
        "query", "--index", &index, "--queries", &p("q.fvecs"), "--truth", &p("gt.ivecs"),
        "--topk", "100", "--pool", "--seed", "11", "--no-timing", "--out", &csv,
    ]);
    (std::fs::read(index).unwrap(), std::fs::read(csv).unwrap())
}

#[test]
fn c8_identical_flags_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    navg(&[
        "synth", "--n", "5000", "--num-queries", "100", "--seed", "8", "--base", &p("base.fvecs"),
        "--queries", &p("q.fvecs"),
    ]);
    navg(&[
        "groundtruth", "--base", &p("base.fvecs"), "--queries", &p("q.fvecs"), "--topk", "100",
        "--out", &p("gt.ivecs"),
    ]);
    let (index_a, csv_a) = build_and_query(dir.path(), "a");
    let (index_b, csv_b) = build_and_query(dir.path(), "b");
    report(
        8,
        index_a == index_b && csv_a == csv_b,
        format!(
            "index {} bytes identical: {}, report {} bytes identical: {}",
            index_a.len(),
            index_a == index_b,
            csv_a.len(),
            csv_a == csv_b
        ),
    );
}

//! Hierarchical beam traversal over the navigation graph.
//!
//! A query starts from a seed set `C`. At each level, from the top down, the
//! traversal repeatedly forms `C' = C + unvisited neighbors of C`, ranks `C'` by
//! distance to the query and keeps the best `n` as the new `C`, until `C` stops
//! changing or `it_max` iterations have run. Visited marks and cached distances
//! persist across levels, so every vertex is evaluated at most once per query.
//!
//! Seeds that are not vertices of the current level stay in `C` and compete on
//! distance but contribute no neighbors until a level that contains them.

use std::collections::HashSet;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{Metric, VectorDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forest::{RetrievalForest, VoteTally};
use crate::navgraph::MultiscaleGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchParams {
    /// Beam width `n`: candidates kept after each iteration.
    pub beam: usize,
    /// Maximum iterations per level.
    pub max_iters: usize,
    /// Results requested.
    pub top_k: usize,
    /// Seeds taken from the forest.
    pub num_seeds: usize,
    /// Query metric used to rank candidates.
    pub metric: Metric,
    /// Return the best `top_k` of every vertex evaluated instead of the final
    /// beam. Without it `top_k` may not exceed `beam`.
    pub pool_visited: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            beam: 10,
            max_iters: 5,
            top_k: 10,
            num_seeds: 10,
            metric: Metric::L2,
            pool_visited: false,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.max_iters == 0 || self.top_k == 0 || self.num_seeds == 0 {
            return Err(Error::invalid(
                "beam, max_iters, top_k and num_seeds must all be >= 1",
            ));
        }
        if !self.pool_visited && self.top_k > self.beam {
            return Err(Error::invalid(format!(
                "top_k ({}) exceeds beam width ({}); enable pooling of visited vertices",
                self.top_k, self.beam
            )));
        }
        Ok(())
    }
}

/// Seeding strategy for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Forest seeds, then hierarchical traversal.
    Forest,
    /// Uniformly random restarts of single-path greedy descent on level 1.
    Gnns { restarts: usize },
    /// Forest seeds ranked by distance, no traversal.
    ForestOnly,
}

impl SearchMode {
    pub fn name(&self) -> &'static str {
        match self {
            SearchMode::Forest => "forest",
            SearchMode::Gnns { .. } => "gnns",
            SearchMode::ForestOnly => "forest-only",
        }
    }
}

impl FromStr for SearchMode {
    type Err = Error;

    /// Parses the mode name; `gnns` gets zero restarts, meaning "as many as
    /// seeds" once resolved against [`SearchParams`].
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forest" => Ok(SearchMode::Forest),
            "gnns" => Ok(SearchMode::Gnns { restarts: 0 }),
            "forest-only" => Ok(SearchMode::ForestOnly),
            other => Err(Error::invalid(format!("unknown search mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: u32,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SearchStats {
    pub distance_evals: usize,
    /// Distinct vertices whose distance is cached at the end of the query.
    pub vertices_visited: usize,
    /// Neighbor lists read.
    pub expansions: usize,
    /// Forest nodes visited while routing the query.
    pub forest_nodes: usize,
    /// Iterations run per level, top level first. GNNS reports total greedy
    /// steps as a single entry.
    pub iterations_per_level: Vec<usize>,
    /// `(level, best distance in C)` at the start and after every iteration.
    pub best_trace: Vec<(usize, f64)>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub results: Vec<Neighbor>,
    pub stats: SearchStats,
}

impl QueryResult {
    pub fn ids(&self) -> Vec<u32> {
        self.results.iter().map(|n| n.id).collect()
    }
}

#[inline]
fn by_distance(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Per-query visited marks and distance cache, reusable across queries.
#[derive(Debug, Clone)]
pub struct SearchScratch {
    stamp: Vec<u32>,
    dist: Vec<f64>,
    epoch: u32,
    touched: Vec<u32>,
    evals: usize,
    tally: VoteTally,
}

impl SearchScratch {
    pub fn new(num_samples: usize) -> Self {
        Self {
            stamp: vec![0; num_samples],
            dist: vec![0.0; num_samples],
            epoch: 0,
            touched: Vec::new(),
            evals: 0,
            tally: VoteTally::default(),
        }
    }

    fn begin(&mut self, num_samples: usize) {
        if self.stamp.len() != num_samples {
            *self = Self::new(num_samples);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.touched.clear();
        self.evals = 0;
    }

    #[inline]
    fn cached(&self, id: u32) -> Option<f64> {
        (self.stamp[id as usize] == self.epoch).then(|| self.dist[id as usize])
    }

    /// Distance of `id`, evaluating and marking it visited on first sight.
    /// Returns `(distance, newly_visited)`.
    #[inline]
    fn visit(&mut self, ds: &VectorDataset, q: &[f32], metric: Metric, id: u32) -> (f64, bool) {
        if let Some(d) = self.cached(id) {
            return (d, false);
        }
        let d = metric.eval(q, ds.get(id as usize));
        self.stamp[id as usize] = self.epoch;
        self.dist[id as usize] = d;
        self.touched.push(id);
        self.evals += 1;
        (d, true)
    }

    /// Best `k` of everything visited in this query.
    fn best_visited(&self, k: usize) -> Vec<(f64, u32)> {
        let mut all: Vec<(f64, u32)> = self
            .touched
            .iter()
            .map(|&id| (self.dist[id as usize], id))
            .collect();
        if all.len() > k {
            all.select_nth_unstable_by(k, by_distance);
            all.truncate(k);
        }
        all.sort_unstable_by(by_distance);
        all
    }
}

/// Query-time view over a built index.
#[derive(Debug, Clone, Copy)]
pub struct Searcher<'a> {
    ds: &'a VectorDataset,
    graph: &'a MultiscaleGraph,
    forest: Option<&'a RetrievalForest>,
}

impl<'a> Searcher<'a> {
    pub fn new(
        ds: &'a VectorDataset,
        graph: &'a MultiscaleGraph,
        forest: Option<&'a RetrievalForest>,
    ) -> Result<Self> {
        if graph.num_samples() != ds.len() {
            return Err(Error::invalid(format!(
                "graph covers {} samples but the dataset has {}",
                graph.num_samples(),
                ds.len()
            )));
        }
        if let Some(f) = forest {
            if f.num_samples() != ds.len() || f.dim() != ds.dim() {
                return Err(Error::invalid("forest and dataset disagree in size"));
            }
        }
        Ok(Self { ds, graph, forest })
    }

    pub fn scratch(&self) -> SearchScratch {
        SearchScratch::new(self.ds.len())
    }

    fn forest(&self) -> Result<&'a RetrievalForest> {
        self.forest
            .ok_or_else(|| Error::invalid("this search mode needs a retrieval forest"))
    }

    /// Hierarchical traversal from explicit seeds.
    pub fn traverse(
        &self,
        scratch: &mut SearchScratch,
        q: &[f32],
        seeds: &[u32],
        params: &SearchParams,
    ) -> Result<QueryResult> {
        let start = Instant::now();
        self.ds.check_query(q)?;
        params.validate()?;
        if seeds.is_empty() {
            return Err(Error::invalid("traversal needs at least one seed"));
        }
        if let Some(&bad) = seeds.iter().find(|&&s| s as usize >= self.ds.len()) {
            return Err(Error::invalid(format!("seed id {bad} out of range")));
        }
        let mut result = self.traverse_unchecked(scratch, q, seeds, params);
        result.stats.wall_time = start.elapsed().as_secs_f64();
        Ok(result)
    }

    fn traverse_unchecked(
        &self,
        scratch: &mut SearchScratch,
        q: &[f32],
        seeds: &[u32],
        params: &SearchParams,
    ) -> QueryResult {
        let metric = params.metric;
        scratch.begin(self.ds.len());
        let mut stats = SearchStats::default();

        let mut beam: Vec<(f64, u32)> = Vec::with_capacity(seeds.len());
        for &s in seeds {
            let (d, new) = scratch.visit(self.ds, q, metric, s);
            if new {
                beam.push((d, s));
            }
        }
        beam.sort_unstable_by(by_distance);
        let top = self.graph.num_levels();
        stats.best_trace.push((top, beam[0].0));

        let mut next: Vec<(f64, u32)> = Vec::new();
        for lv in (1..=top).rev() {
            let level = &self.graph.levels()[lv - 1];
            let mut iters = 0;
            for _ in 0..params.max_iters {
                iters += 1;
                next.clear();
                next.extend_from_slice(&beam);
                for &(_, c) in &beam {
                    let adj = level.neighbors(c);
                    if !adj.is_empty() {
                        stats.expansions += 1;
                    }
                    for &u in adj {
                        let (d, new) = scratch.visit(self.ds, q, metric, u);
                        if new {
                            next.push((d, u));
                        }
                    }
                }
                next.sort_unstable_by(by_distance);
                next.truncate(params.beam);
                let unchanged = next.len() == beam.len()
                    && next.iter().zip(&beam).all(|(a, b)| a.1 == b.1);
                std::mem::swap(&mut beam, &mut next);
                stats.best_trace.push((lv, beam[0].0));
                if unchanged {
                    break;
                }
            }
            stats.iterations_per_level.push(iters);
        }

        let chosen = if params.pool_visited {
            scratch.best_visited(params.top_k)
        } else {
            beam.truncate(params.top_k);
            beam
        };
        stats.distance_evals = scratch.evals;
        stats.vertices_visited = scratch.touched.len();
        QueryResult {
            results: chosen
                .into_iter()
                .map(|(distance, id)| Neighbor { id, distance })
                .collect(),
            stats,
        }
    }

    /// Forest-seeded hierarchical search.
    pub fn search(
        &self,
        scratch: &mut SearchScratch,
        q: &[f32],
        params: &SearchParams,
    ) -> Result<QueryResult> {
        let start = Instant::now();
        let forest = self.forest()?;
        self.ds.check_query(q)?;
        params.validate()?;
        let (seeds, forest_nodes) = forest.top_voted(&mut scratch.tally, q, params.num_seeds)?;
        let mut result = self.traverse_unchecked(scratch, q, &seeds, params);
        result.stats.forest_nodes = forest_nodes;
        result.stats.wall_time = start.elapsed().as_secs_f64();
        Ok(result)
    }

    /// Forest seeds ranked by the query metric; no graph traversal.
    pub fn forest_only(
        &self,
        scratch: &mut SearchScratch,
        q: &[f32],
        params: &SearchParams,
    ) -> Result<QueryResult> {
        let start = Instant::now();
        let forest = self.forest()?;
        self.ds.check_query(q)?;
        params.validate()?;
        scratch.begin(self.ds.len());
        let (seeds, forest_nodes) = forest.top_voted(&mut scratch.tally, q, params.num_seeds)?;
        for id in seeds {
            scratch.visit(self.ds, q, params.metric, id);
        }
        let results = scratch
            .best_visited(params.top_k)
            .into_iter()
            .map(|(distance, id)| Neighbor { id, distance })
            .collect();
        Ok(QueryResult {
            results,
            stats: SearchStats {
                distance_evals: scratch.evals,
                vertices_visited: scratch.touched.len(),
                forest_nodes,
                wall_time: start.elapsed().as_secs_f64(),
                ..Default::default()
            },
        })
    }

    /// Random-restart greedy search on the bottom level.
    ///
    /// Each restart begins at a fresh uniformly random vertex and follows a
    /// single path, moving to the best neighbor while that improves on the
    /// current vertex. All evaluated vertices are pooled and the best `top_k`
    /// returned. `eval_budget`, when set, caps the number of distance
    /// evaluations; restarts continue until either limit is hit.
    pub fn search_gnns<R: Rng>(
        &self,
        scratch: &mut SearchScratch,
        q: &[f32],
        restarts: usize,
        eval_budget: Option<usize>,
        params: &SearchParams,
        rng: &mut R,
    ) -> Result<QueryResult> {
        let start = Instant::now();
        self.ds.check_query(q)?;
        if params.top_k == 0 {
            return Err(Error::invalid("top_k must be >= 1"));
        }
        if restarts == 0 {
            return Err(Error::invalid("GNNS needs at least one restart"));
        }
        let n = self.ds.len();
        let restarts = restarts.min(n);
        let budget = eval_budget.unwrap_or(usize::MAX);
        let metric = params.metric;
        let bottom = &self.graph.levels()[0];
        scratch.begin(n);
        let mut stats = SearchStats::default();
        let mut used: HashSet<u32> = HashSet::new();
        let mut steps = 0;

        'restarts: for _ in 0..restarts {
            if scratch.evals >= budget {
                break;
            }
            let seed = loop {
                let s = rng.gen_range(0..n as u32);
                if used.insert(s) {
                    break s;
                }
            };
            let (d, _) = scratch.visit(self.ds, q, metric, seed);
            let mut cur = (d, seed);
            loop {
                let mut best = cur;
                stats.expansions += 1;
                for &u in bottom.neighbors(cur.1) {
                    if scratch.cached(u).is_none() && scratch.evals >= budget {
                        break 'restarts;
                    }
                    let (d, _) = scratch.visit(self.ds, q, metric, u);
                    if by_distance(&(d, u), &best).is_lt() {
                        best = (d, u);
                    }
                }
                if best.1 == cur.1 {
                    break;
                }
                cur = best;
                steps += 1;
            }
        }

        stats.iterations_per_level.push(steps);
        stats.distance_evals = scratch.evals;
        stats.vertices_visited = scratch.touched.len();
        let results = scratch
            .best_visited(params.top_k)
            .into_iter()
            .map(|(distance, id)| Neighbor { id, distance })
            .collect();
        stats.wall_time = start.elapsed().as_secs_f64();
        Ok(QueryResult { results, stats })
    }

    /// Runs one query in `mode`. GNNS draws from a stream keyed by `seed` and
    /// the query index, so batch results do not depend on execution order.
    pub fn run(
        &self,
        scratch: &mut SearchScratch,
        q: &[f32],
        mode: SearchMode,
        params: &SearchParams,
        seed: u64,
        query_index: usize,
    ) -> Result<QueryResult> {
        match mode {
            SearchMode::Forest => self.search(scratch, q, params),
            SearchMode::ForestOnly => self.forest_only(scratch, q, params),
            SearchMode::Gnns { restarts } => {
                let restarts = if restarts == 0 { params.num_seeds } else { restarts };
                let mut rng = query_rng(seed, query_index);
                self.search_gnns(scratch, q, restarts, None, params, &mut rng)
            }
        }
    }

    /// Runs every query of `queries`, results in query order.
    pub fn run_batch(
        &self,
        queries: &VectorDataset,
        mode: SearchMode,
        params: &SearchParams,
        seed: u64,
        exec: Exec,
    ) -> Result<Vec<QueryResult>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        self.ds.check_query(queries.get(0))?;
        exec.map_init(
            queries.len(),
            || self.scratch(),
            |scratch, i| self.run(scratch, queries.get(i), mode, params, seed, i),
        )
        .into_iter()
        .collect()
    }
}

/// Random stream for query `index` of a batch.
pub fn query_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(index as u64);
    rng
}

/// One-shot [`Searcher::traverse`].
pub fn traverse(
    ds: &VectorDataset,
    graph: &MultiscaleGraph,
    q: &[f32],
    seeds: &[u32],
    params: &SearchParams,
) -> Result<QueryResult> {
    let s = Searcher::new(ds, graph, None)?;
    s.traverse(&mut s.scratch(), q, seeds, params)
}

/// One-shot forest-seeded [`Searcher::search`].
pub fn search(
    ds: &VectorDataset,
    forest: &RetrievalForest,
    graph: &MultiscaleGraph,
    q: &[f32],
    params: &SearchParams,
) -> Result<QueryResult> {
    let s = Searcher::new(ds, graph, Some(forest))?;
    s.search(&mut s.scratch(), q, params)
}

/// One-shot [`Searcher::search_gnns`] without an evaluation budget.
pub fn search_gnns<R: Rng>(
    ds: &VectorDataset,
    graph: &MultiscaleGraph,
    q: &[f32],
    restarts: usize,
    params: &SearchParams,
    rng: &mut R,
) -> Result<QueryResult> {
    let s = Searcher::new(ds, graph, None)?;
    s.search_gnns(&mut s.scratch(), q, restarts, None, params, rng)
}

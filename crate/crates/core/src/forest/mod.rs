//! Retrieval forest: a randomized decision forest whose leaves store sample ids.
//!
//! Trees are grown greedily. Every node draws a random candidate set of sparse
//! two-feature tests `x[a] - x[b] <= tau` and keeps the one with the largest
//! information gain, where entropy is the log-determinant of the (regularized)
//! covariance of the samples reaching the node. At query time each tree routes
//! the query to one leaf and votes once for every id stored there; ids are
//! ranked by vote count.

mod entropy;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::VectorDataset;
use crate::error::{Error, Result};
use crate::exec::Exec;

pub use entropy::{entropy, EntropyMode};
use entropy::Moments;

/// A sparse projection test: route left iff `x[phi.0] - x[phi.1] <= tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub phi: (u32, u32),
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl SplitParams {
    pub fn new(phi: (u32, u32), tau: f64, dim: usize) -> Result<Self> {
        let s = Self { phi, tau };
        s.validate(dim)?;
        Ok(s)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let (a, b) = self.phi;
        if a == b || a as usize >= dim || b as usize >= dim {
            return Err(Error::invalid(format!(
                "split features {:?} must be distinct and below {dim}",
                self.phi
            )));
        }
        if !self.tau.is_finite() {
            return Err(Error::invalid("split threshold must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn projection(&self, x: &[f32]) -> f64 {
        x[self.phi.0 as usize] as f64 - x[self.phi.1 as usize] as f64
    }

    #[inline]
    pub fn goes_left(&self, x: &[f32]) -> bool {
        self.projection(x) <= self.tau
    }

    #[inline]
    pub fn route(&self, x: &[f32]) -> Side {
        if self.goes_left(x) {
            Side::Left
        } else {
            Side::Right
        }
    }
}

/// Range-checked routing of one vector. Ties go left.
pub fn split_test(x: &[f32], theta: &SplitParams) -> Result<Side> {
    theta.validate(x.len())?;
    Ok(theta.route(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    /// Size of the random candidate set drawn at every node.
    pub candidates_per_node: usize,
    pub min_leaf: usize,
    pub entropy_mode: EntropyMode,
    pub ridge: f64,
    pub bagging: bool,
    pub rng_seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            num_trees: 64,
            max_depth: 13,
            candidates_per_node: 100,
            min_leaf: 8,
            entropy_mode: EntropyMode::Diagonal,
            ridge: 1e-6,
            bagging: false,
            rng_seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::invalid("num_trees must be >= 1"));
        }
        if self.candidates_per_node == 0 {
            return Err(Error::invalid("candidates_per_node must be >= 1"));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be >= 1"));
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid("ridge must be a positive finite number"));
        }
        if self.max_depth > u16::MAX as usize {
            return Err(Error::invalid("max_depth is unreasonably large"));
        }
        Ok(())
    }
}

/// Flat tree node. Children and buckets are indices into the owning [`Tree`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        split: SplitParams,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        len: u32,
    },
}

/// One tree stored as a node arena (root at index 0, preorder) plus the
/// concatenated leaf buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
    pub(crate) buckets: Vec<u32>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn bucket(&self, start: u32, len: u32) -> &[u32] {
        &self.buckets[start as usize..(start + len) as usize]
    }

    /// Leaf bucket reached by `x`, plus the number of nodes visited.
    #[inline]
    pub fn route(&self, x: &[f32]) -> (&[u32], usize) {
        let mut i = 0usize;
        let mut visited = 1;
        loop {
            match self.nodes[i] {
                Node::Split { split, left, right } => {
                    i = if split.goes_left(x) { left } else { right } as usize;
                    visited += 1;
                }
                Node::Leaf { start, len } => return (self.bucket(start, len), visited),
            }
        }
    }

    /// All leaf buckets with their depth, in preorder.
    pub fn leaves(&self) -> Vec<(usize, &[u32])> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, depth)) = stack.pop() {
            match self.nodes[i] {
                Node::Split { left, right, .. } => {
                    stack.push((right as usize, depth + 1));
                    stack.push((left as usize, depth + 1));
                }
                Node::Leaf { start, len } => out.push((depth, self.bucket(start, len))),
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        self.leaves().iter().map(|(d, _)| *d).max().unwrap_or(0)
    }

    /// Checks arena structure: children in range and referenced once, every
    /// node reachable, buckets nonempty and within bounds.
    pub(crate) fn validate(&self, dim: usize, n: usize) -> Result<()> {
        let bad = |m: &str| Error::Integrity(format!("tree: {m}"));
        if self.nodes.is_empty() {
            return Err(bad("no nodes"));
        }
        let mut seen = vec![false; self.nodes.len()];
        seen[0] = true;
        for (idx, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Split { split, left, right } => {
                    split.validate(dim).map_err(|e| bad(&e.to_string()))?;
                    // preorder: children always follow their parent
                    for c in [left, right] {
                        let c = c as usize;
                        if c <= idx || c >= self.nodes.len() || seen[c] {
                            return Err(bad("bad child reference"));
                        }
                        seen[c] = true;
                    }
                }
                Node::Leaf { start, len } => {
                    let end = start as usize + len as usize;
                    if len == 0 || end > self.buckets.len() {
                        return Err(bad("bad bucket range"));
                    }
                    if self.buckets[start as usize..end].iter().any(|&id| id as usize >= n) {
                        return Err(bad("bucket id out of range"));
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("unreachable node"));
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq)]
pub struct RetrievalForest {
    pub(crate) trees: Vec<Tree>,
    pub(crate) config: ForestConfig,
    pub(crate) dim: usize,
    pub(crate) num_samples: usize,
}

impl fmt::Debug for RetrievalForest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RetrievalForest")
            .field("trees", &self.trees.len())
            .field("dim", &self.dim)
            .field("num_samples", &self.num_samples)
            .finish()
    }
}

/// Ranked output of a forest query.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestVotes {
    /// `(id, votes)` by descending votes, ties by ascending id.
    pub ranked: Vec<(u32, u32)>,
    /// Tree nodes visited while routing.
    pub nodes_visited: usize,
}

/// Per-query vote counts, zeroed again after every use.
#[derive(Debug, Clone, Default)]
pub struct VoteTally {
    counts: Vec<u32>,
    touched: Vec<u32>,
}

impl RetrievalForest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    /// Routes `q` through every tree and tallies one vote per id per reached
    /// bucket.
    pub fn votes(&self, q: &[f32]) -> Result<ForestVotes> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        let mut hits = Vec::new();
        let mut nodes_visited = 0;
        for tree in &self.trees {
            let (bucket, visited) = tree.route(q);
            hits.extend_from_slice(bucket);
            nodes_visited += visited;
        }
        hits.sort_unstable();
        let mut ranked: Vec<(u32, u32)> = Vec::new();
        for id in hits {
            match ranked.last_mut() {
                Some((last, v)) if *last == id => *v += 1,
                _ => ranked.push((id, 1)),
            }
        }
        // stable sort keeps ascending id within equal vote counts
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        Ok(ForestVotes {
            ranked,
            nodes_visited,
        })
    }

    /// Top `num_seeds` ids by vote count (fewer if fewer ids were voted for).
    pub fn query(&self, q: &[f32], num_seeds: usize) -> Result<Vec<u32>> {
        Ok(self.top_voted(&mut VoteTally::default(), q, num_seeds)?.0)
    }

    /// Top `num_seeds` ids by (votes descending, id ascending), computed with a
    /// reusable dense tally. Returns the ids and the tree nodes visited.
    /// Equal to the first `num_seeds` entries of [`Self::votes`].
    pub fn top_voted(
        &self,
        tally: &mut VoteTally,
        q: &[f32],
        num_seeds: usize,
    ) -> Result<(Vec<u32>, usize)> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        if tally.counts.len() != self.num_samples {
            tally.counts = vec![0; self.num_samples];
        }
        tally.touched.clear();
        let mut nodes_visited = 0;
        for tree in &self.trees {
            let (bucket, visited) = tree.route(q);
            nodes_visited += visited;
            for &id in bucket {
                let c = &mut tally.counts[id as usize];
                if *c == 0 {
                    tally.touched.push(id);
                }
                *c += 1;
            }
        }
        let counts = &mut tally.counts;
        let mut keyed: Vec<(std::cmp::Reverse<u32>, u32)> = tally
            .touched
            .iter()
            .map(|&id| (std::cmp::Reverse(std::mem::take(&mut counts[id as usize])), id))
            .collect();
        let m = num_seeds.min(keyed.len());
        if m < keyed.len() && m > 0 {
            keyed.select_nth_unstable(m - 1);
        }
        keyed.truncate(m);
        keyed.sort_unstable();
        Ok((keyed.into_iter().map(|(_, id)| id).collect(), nodes_visited))
    }

    /// Leaf sizes across all trees.
    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.trees
            .iter()
            .flat_map(|t| t.leaves().into_iter().map(|(_, b)| b.len()))
            .collect()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.trees.len() != self.config.num_trees {
            return Err(Error::Integrity("tree count differs from config".into()));
        }
        for t in &self.trees {
            t.validate(self.dim, self.num_samples)?;
        }
        Ok(())
    }
}

/// Free-function form of [`RetrievalForest::query`].
pub fn query_forest(forest: &RetrievalForest, q: &[f32], num_seeds: usize) -> Result<Vec<u32>> {
    forest.query(q, num_seeds)
}

/// Size-weighted information gain of splitting `set` by `theta`:
/// `E(S) - sum_i |S_i|/|S| * E(S_i)` with an empty child contributing 0.
pub fn information_gain<R: AsRef<[f32]>>(
    set: &[R],
    theta: &SplitParams,
    mode: EntropyMode,
    ridge: f64,
) -> Result<f64> {
    let first = set
        .first()
        .ok_or_else(|| Error::invalid("information gain of an empty set"))?;
    theta.validate(first.as_ref().len())?;
    let (left, right): (Vec<&[f32]>, Vec<&[f32]>) = set
        .iter()
        .map(|v| v.as_ref())
        .partition(|v| theta.goes_left(v));
    let n = set.len() as f64;
    let mut gain = entropy(set, mode, ridge)?;
    for child in [&left, &right] {
        if !child.is_empty() {
            gain -= child.len() as f64 / n * entropy(child, mode, ridge)?;
        }
    }
    Ok(gain)
}

/// Draws `count` candidate tests for the samples `ids`. Feature pairs are
/// uniform over ordered distinct pairs; each threshold is uniform over the
/// observed range of its projection on `ids`.
pub fn propose_splits<R: Rng>(
    rng: &mut R,
    ds: &VectorDataset,
    ids: &[u32],
    count: usize,
) -> Result<Vec<SplitParams>> {
    let dim = ds.dim();
    if dim < 2 {
        return Err(Error::invalid("two-feature splits need dimension >= 2"));
    }
    if count == 0 {
        return Err(Error::invalid("candidate count must be >= 1"));
    }
    if ids.is_empty() {
        return Err(Error::invalid("cannot propose splits for an empty node"));
    }
    Ok(draw_splits(rng, dim, count, |pairs| {
        pairs
            .iter()
            .map(|&(a, b)| {
                ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &id| {
                    let x = ds.get(id as usize);
                    let p = x[a] as f64 - x[b] as f64;
                    (lo.min(p), hi.max(p))
                })
            })
            .collect()
    }))
}

/// Shared body of [`propose_splits`]. All feature pairs are drawn first;
/// `ranges` then supplies the node's `(min, max)` projection on each pair, and
/// thresholds are drawn in candidate order.
fn draw_splits<R: Rng>(
    rng: &mut R,
    dim: usize,
    count: usize,
    ranges: impl FnOnce(&[(usize, usize)]) -> Vec<(f64, f64)>,
) -> Vec<SplitParams> {
    let pairs: Vec<(usize, usize)> = (0..count)
        .map(|_| {
            let a = rng.gen_range(0..dim);
            let mut b = rng.gen_range(0..dim - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        })
        .collect();
    let ranges = ranges(&pairs);
    pairs
        .iter()
        .zip(ranges)
        .map(|(&(a, b), (lo, hi))| SplitParams {
            phi: (a as u32, b as u32),
            tau: if lo < hi { rng.gen_range(lo..=hi) } else { lo },
        })
        .collect()
}

/// `(min, max)` of `a[i] - b[i]`. Eight independent lanes keep the loop
/// vectorizable; min and max are order-independent, so the result is exact.
fn difference_range(a: &[f64], b: &[f64]) -> (f64, f64) {
    const L: usize = 8;
    let mut lo = [f64::INFINITY; L];
    let mut hi = [f64::NEG_INFINITY; L];
    let (ca, cb) = (a.chunks_exact(L), b.chunks_exact(L));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..L {
            let p = x[l] - y[l];
            lo[l] = if p < lo[l] { p } else { lo[l] };
            hi[l] = if p > hi[l] { p } else { hi[l] };
        }
    }
    for (x, y) in ra.iter().zip(rb) {
        let p = x - y;
        lo[0] = lo[0].min(p);
        hi[0] = hi[0].max(p);
    }
    (
        lo.iter().copied().fold(f64::INFINITY, f64::min),
        hi.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

/// Rows per cache block when scanning a node; about 64 KiB of row data.
fn block_rows(dim: usize) -> usize {
    (8192 / dim).max(16)
}

/// One node's split decision, recorded for replay checks.
#[derive(Debug, Clone)]
pub struct SplitRecord {
    pub depth: usize,
    pub ids: Vec<u32>,
    pub candidates: Vec<SplitParams>,
    /// Gain per candidate; `None` when a side would hold fewer than `min_leaf`
    /// samples.
    pub gains: Vec<Option<f64>>,
    pub chosen: Option<usize>,
}

struct TreeGrower<'a> {
    ds: &'a VectorDataset,
    config: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    buckets: Vec<u32>,
    parent: Moments,
    /// One accumulator per candidate for the side being summed.
    sides: Vec<Moments>,
    other: Moments,
    scratch: Vec<f64>,
    /// The current node's samples, gathered row-major, their squares, and a
    /// column-major copy.
    rows: Vec<f64>,
    sq: Vec<f64>,
    cols: Vec<f64>,
    sel: Vec<u32>,
    record: Option<Vec<SplitRecord>>,
}

impl<'a> TreeGrower<'a> {
    fn new(ds: &'a VectorDataset, config: &'a ForestConfig, rng: ChaCha8Rng, record: bool) -> Self {
        let dim = ds.dim();
        let mode = config.entropy_mode;
        Self {
            ds,
            config,
            rng,
            nodes: Vec::new(),
            buckets: Vec::new(),
            parent: Moments::new(dim, mode),
            sides: Vec::new(),
            other: Moments::new(dim, mode),
            scratch: Vec::new(),
            rows: Vec::new(),
            sq: Vec::new(),
            cols: Vec::new(),
            sel: Vec::new(),
            record: record.then(Vec::new),
        }
    }

    fn leaf(&mut self, slot: usize, ids: &[u32]) {
        let start = self.buckets.len();
        self.buckets.extend_from_slice(ids);
        let bucket = &mut self.buckets[start..];
        bucket.sort_unstable();
        let mut len = bucket.len();
        // bootstrap samples may repeat an id; keep one copy per bucket
        let mut w = 1;
        for r in 1..len {
            if bucket[r] != bucket[w - 1] {
                bucket[w] = bucket[r];
                w += 1;
            }
        }
        len = w;
        self.buckets.truncate(start + len);
        self.nodes[slot] = Node::Leaf {
            start: start as u32,
            len: len as u32,
        };
    }

    /// Copies the node's samples, in `ids` order, into `rows`, `sq` and
    /// `cols`.
    fn gather(&mut self, ids: &[u32]) {
        let ds = self.ds;
        let (n, dim) = (ids.len(), ds.dim());
        self.rows.clear();
        for &id in ids {
            self.rows.extend(ds.get(id as usize).iter().map(|&v| v as f64));
        }
        self.cols.clear();
        self.cols.resize(n * dim, 0.0);
        const T: usize = 64;
        for first in (0..n).step_by(T) {
            let last = (first + T).min(n);
            for d in 0..dim {
                let col = &mut self.cols[d * n + first..d * n + last];
                for (c, x) in col.iter_mut().zip(self.rows[first * dim..].chunks_exact(dim)) {
                    *c = x[d];
                }
            }
        }
        self.sq.clear();
        if self.config.entropy_mode == EntropyMode::Diagonal {
            self.sq.extend(self.rows.iter().map(|v| v * v));
        }
    }

    /// Gain of every candidate on the gathered node; `None` where a side
    /// would hold fewer than `min_leaf` samples.
    ///
    /// The node is scanned in cache-sized row blocks, each block serving all
    /// candidates. Per candidate, only the smaller side is accumulated and the
    /// other is derived from the parent.
    fn score_all(&mut self, candidates: &[SplitParams], parent_entropy: f64) -> Vec<Option<f64>> {
        let dim = self.ds.dim();
        let n = self.rows.len() / dim;
        let min_leaf = self.config.min_leaf;

        let col = |d: u32| &self.cols[d as usize * n..(d as usize + 1) * n];
        let n_left: Vec<usize> = candidates
            .iter()
            .map(|c| {
                col(c.phi.0)
                    .iter()
                    .zip(col(c.phi.1))
                    .map(|(x, y)| (x - y <= c.tau) as usize)
                    .sum()
            })
            .collect();
        // Some(side to accumulate: true = left) for eligible candidates
        let want: Vec<Option<bool>> = n_left
            .iter()
            .map(|&l| (l >= min_leaf && n - l >= min_leaf).then_some(l <= n - l))
            .collect();

        let mode = self.config.entropy_mode;
        if self.sides.len() < candidates.len() {
            self.sides.resize(candidates.len(), Moments::new(dim, mode));
        }
        for side in &mut self.sides[..candidates.len()] {
            side.reset();
        }
        let block = block_rows(dim);
        for first in (0..n).step_by(block) {
            let last = (first + block).min(n);
            for ((c, w), side) in candidates.iter().zip(&want).zip(&mut self.sides) {
                let Some(w) = *w else { continue };
                let (a, b) = (c.phi.0 as usize, c.phi.1 as usize);
                let ca = &self.cols[a * n + first..a * n + last];
                let cb = &self.cols[b * n + first..b * n + last];
                self.sel.clear();
                self.sel.resize(last - first, 0);
                let mut m = 0;
                for (j, (x, y)) in ca.iter().zip(cb).enumerate() {
                    self.sel[m] = (first + j) as u32;
                    m += ((x - y <= c.tau) == w) as usize;
                }
                side.add_rows(&self.rows, &self.sq, &self.sel[..m]);
            }
        }

        let ridge = self.config.ridge;
        let nf = n as f64;
        want.iter()
            .zip(&self.sides)
            .map(|(w, side)| {
                w.map(|_| {
                    self.parent.minus(side, &mut self.other);
                    let e_side = side.entropy(ridge, &mut self.scratch);
                    let e_other = self.other.entropy(ridge, &mut self.scratch);
                    parent_entropy
                        - side.count as f64 / nf * e_side
                        - self.other.count as f64 / nf * e_other
                })
            })
            .collect()
    }

    fn grow(&mut self, ids: &mut [u32], depth: usize) -> Result<u32> {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { start: 0, len: 0 });
        if depth >= self.config.max_depth || ids.len() < 2 * self.config.min_leaf {
            self.leaf(slot, ids);
            return Ok(slot as u32);
        }

        self.gather(ids);
        let dim = self.ds.dim();
        let (n, cols) = (ids.len(), &self.cols);
        let candidates = draw_splits(
            &mut self.rng,
            dim,
            self.config.candidates_per_node,
            |pairs| {
                pairs
                    .iter()
                    .map(|&(a, b)| difference_range(&cols[a * n..(a + 1) * n], &cols[b * n..(b + 1) * n]))
                    .collect()
            },
        );
        self.parent.reset();
        self.sel.clear();
        self.sel.extend(0..ids.len() as u32);
        self.parent.add_rows(&self.rows, &self.sq, &self.sel);
        let parent_entropy = self.parent.entropy(self.config.ridge, &mut self.scratch);

        let gains = self.score_all(&candidates, parent_entropy);
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in gains.iter().enumerate() {
            if let Some(g) = *g {
                if best.map_or(true, |(_, b)| g > b) {
                    best = Some((i, g));
                }
            }
        }
        let chosen = best.filter(|&(_, g)| g > 0.0).map(|(i, _)| i);
        if let Some(rec) = self.record.as_mut() {
            rec.push(SplitRecord {
                depth,
                ids: ids.to_vec(),
                candidates: candidates.clone(),
                gains,
                chosen,
            });
        }
        let Some(chosen) = chosen else {
            self.leaf(slot, ids);
            return Ok(slot as u32);
        };

        let split = candidates[chosen];
        let ds = self.ds;
        let mut mid = 0;
        for i in 0..ids.len() {
            if split.goes_left(ds.get(ids[i] as usize)) {
                ids.swap(i, mid);
                mid += 1;
            }
        }
        let (l, r) = ids.split_at_mut(mid);
        let left = self.grow(l, depth + 1)?;
        let right = self.grow(r, depth + 1)?;
        self.nodes[slot] = Node::Split { split, left, right };
        Ok(slot as u32)
    }
}

fn check_trainable(ds: &VectorDataset, config: &ForestConfig) -> Result<()> {
    config.validate()?;
    if ds.len() < 2 {
        return Err(Error::TooSmall(format!(
            "forest training needs at least 2 vectors, got {}",
            ds.len()
        )));
    }
    if ds.dim() < 2 {
        return Err(Error::TooSmall(
            "forest training needs vectors of dimension >= 2".into(),
        ));
    }
    if ds.len() > u32::MAX as usize {
        return Err(Error::invalid("dataset exceeds u32 id space"));
    }
    Ok(())
}

/// Grows one tree on `ids` (which may contain repeats under bagging).
pub fn train_tree(
    ds: &VectorDataset,
    ids: &[u32],
    config: &ForestConfig,
    rng: ChaCha8Rng,
) -> Result<Tree> {
    grow_tree(ds, ids, config, rng, false).map(|(t, _)| t)
}

/// [`train_tree`] that also returns every split decision it made.
pub fn train_tree_traced(
    ds: &VectorDataset,
    ids: &[u32],
    config: &ForestConfig,
    rng: ChaCha8Rng,
) -> Result<(Tree, Vec<SplitRecord>)> {
    grow_tree(ds, ids, config, rng, true)
}

fn grow_tree(
    ds: &VectorDataset,
    ids: &[u32],
    config: &ForestConfig,
    rng: ChaCha8Rng,
    record: bool,
) -> Result<(Tree, Vec<SplitRecord>)> {
    config.validate()?;
    if ids.is_empty() {
        return Err(Error::invalid("cannot train a tree on zero samples"));
    }
    let mut work = ids.to_vec();
    let mut grower = TreeGrower::new(ds, config, rng, record);
    grower.grow(&mut work, 0)?;
    let tree = Tree {
        nodes: grower.nodes,
        buckets: grower.buckets,
    };
    Ok((tree, grower.record.unwrap_or_default()))
}

/// Random stream for tree `index`: ChaCha8 keyed by the forest seed, with the
/// tree index as the stream id.
pub fn tree_rng(rng_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(index as u64);
    rng
}

fn train_one(ds: &VectorDataset, config: &ForestConfig, index: usize) -> Result<Tree> {
    let mut rng = tree_rng(config.rng_seed, index);
    let n = ds.len();
    let ids: Vec<u32> = if config.bagging {
        (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
    } else {
        (0..n as u32).collect()
    };
    train_tree(ds, &ids, config, rng)
}

pub fn train_forest(ds: &VectorDataset, config: &ForestConfig) -> Result<RetrievalForest> {
    train_forest_with(ds, config, Exec::default())
}

/// Trains the forest, one independent work item per tree.
pub fn train_forest_with(
    ds: &VectorDataset,
    config: &ForestConfig,
    exec: Exec,
) -> Result<RetrievalForest> {
    check_trainable(ds, config)?;
    let trees = exec
        .map(config.num_trees, |i| train_one(ds, config, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalForest {
        trees,
        config: config.clone(),
        dim: ds.dim(),
        num_samples: ds.len(),
    })
}

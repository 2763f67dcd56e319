//! Multiscale directed k-NN navigation graph.
//!
//! Level 1 holds every sample; each higher level holds a uniform subsample of
//! the level below it, so vertex sets are nested by construction. Each level
//! stores, for every one of its vertices, the exact `k` nearest other vertices
//! *of that level* under the build metric, sorted by `(distance, id)`. Edges are
//! directed and never symmetrized.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{fraction_count, sample_from, Metric, VectorDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;

mod knn;

const ABSENT: u32 = u32::MAX;

/// One level: a sorted vertex subset and fixed-degree adjacency over it.
#[derive(Clone, PartialEq)]
pub struct LevelGraph {
    pub(crate) level: usize,
    pub(crate) vertices: Vec<u32>,
    /// `offsets[i]..offsets[i + 1]` indexes `neighbors` for `vertices[i]`.
    pub(crate) offsets: Vec<u64>,
    pub(crate) neighbors: Vec<u32>,
    /// dataset id -> position in `vertices`, or `ABSENT`
    slot: Vec<u32>,
}

impl fmt::Debug for LevelGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelGraph")
            .field("level", &self.level)
            .field("vertices", &self.vertices.len())
            .field("edges", &self.neighbors.len())
            .finish()
    }
}

impl LevelGraph {
    pub(crate) fn from_parts(
        level: usize,
        num_samples: usize,
        vertices: Vec<u32>,
        offsets: Vec<u64>,
        neighbors: Vec<u32>,
    ) -> Result<Self> {
        let bad = |m: String| Error::Integrity(format!("level {level}: {m}"));
        if vertices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("vertex ids not strictly ascending".into()));
        }
        if vertices.last().is_some_and(|&v| v as usize >= num_samples) {
            return Err(bad("vertex id out of range".into()));
        }
        if offsets.len() != vertices.len() + 1
            || offsets.first() != Some(&0)
            || offsets.windows(2).any(|w| w[0] > w[1])
            || *offsets.last().unwrap() != neighbors.len() as u64
        {
            return Err(bad("malformed adjacency offsets".into()));
        }
        let mut slot = vec![ABSENT; num_samples];
        for (i, &v) in vertices.iter().enumerate() {
            slot[v as usize] = i as u32;
        }
        let g = Self {
            level,
            vertices,
            offsets,
            neighbors,
            slot,
        };
        for (i, &v) in g.vertices.iter().enumerate() {
            for &u in g.adjacency_at(i) {
                if u == v {
                    return Err(bad(format!("self edge at vertex {v}")));
                }
                if !g.contains(u) {
                    return Err(bad(format!("edge {v}->{u} leaves the level")));
                }
            }
        }
        Ok(g)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn vertices(&self) -> &[u32] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    #[inline]
    pub fn contains(&self, id: u32) -> bool {
        self.slot.get(id as usize).is_some_and(|&s| s != ABSENT)
    }

    #[inline]
    fn adjacency_at(&self, pos: usize) -> &[u32] {
        &self.neighbors[self.offsets[pos] as usize..self.offsets[pos + 1] as usize]
    }

    /// Out-neighbors of `id`; empty if `id` is not a vertex of this level.
    #[inline]
    pub fn neighbors(&self, id: u32) -> &[u32] {
        match self.slot.get(id as usize) {
            Some(&s) if s != ABSENT => self.adjacency_at(s as usize),
            _ => &[],
        }
    }

    pub fn out_degree(&self, id: u32) -> usize {
        self.neighbors(id).len()
    }
}


fn check_vertex_set(ds: &VectorDataset, vertices: &[u32]) -> Result<()> {
    if vertices.len() < 2 {
        return Err(Error::TooSmall(format!(
            "a graph level needs at least 2 vertices, got {}",
            vertices.len()
        )));
    }
    if vertices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("vertex set must be strictly ascending"));
    }
    if *vertices.last().unwrap() as usize >= ds.len() {
        return Err(Error::invalid("vertex id out of range"));
    }
    Ok(())
}

/// Exact k-NN adjacency for `vertices` (sorted ascending) under `metric`.
/// Ties are broken by ascending id.
pub fn build_level(
    ds: &VectorDataset,
    vertices: &[u32],
    k: usize,
    metric: Metric,
    level: usize,
    exec: Exec,
) -> Result<LevelGraph> {
    check_vertex_set(ds, vertices)?;
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let degree = k.min(vertices.len() - 1);
    let dim = ds.dim();
    let mut rows = Vec::with_capacity(vertices.len() * dim);
    for &v in vertices {
        rows.extend(ds.get(v as usize).iter().map(|&x| x as f64));
    }
    let lists = knn::all_knn(&rows, dim, vertices, degree, metric, exec);
    let mut offsets = Vec::with_capacity(vertices.len() + 1);
    let mut neighbors = Vec::with_capacity(vertices.len() * degree);
    offsets.push(0);
    for list in lists {
        neighbors.extend_from_slice(&list);
        offsets.push(neighbors.len() as u64);
    }
    LevelGraph::from_parts(level, ds.len(), vertices.to_vec(), offsets, neighbors)
}

/// Nested levels `1..=M`; `levels()[0]` is level 1 (all samples).
#[derive(Clone, PartialEq)]
pub struct MultiscaleGraph {
    pub(crate) levels: Vec<LevelGraph>,
    pub(crate) metric: Metric,
    pub(crate) k: usize,
    pub(crate) fractions: Vec<f64>,
    pub(crate) num_samples: usize,
}

impl fmt::Debug for MultiscaleGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiscaleGraph")
            .field("levels", &self.levels)
            .field("metric", &self.metric)
            .field("k", &self.k)
            .field("fractions", &self.fractions)
            .finish()
    }
}

pub fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.first() != Some(&1.0) {
        return Err(Error::invalid("the first level fraction must be 1.0"));
    }
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::invalid("level fractions must lie in (0, 1]"));
    }
    if fractions.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("level fractions must be strictly decreasing"));
    }
    Ok(())
}

impl MultiscaleGraph {
    /// Number of levels `M`.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[LevelGraph] {
        &self.levels
    }

    /// Level `lv` in `1..=M`.
    pub fn level(&self, lv: usize) -> Result<&LevelGraph> {
        if lv == 0 || lv > self.levels.len() {
            return Err(Error::invalid(format!(
                "level {lv} out of range 1..={}",
                self.levels.len()
            )));
        }
        Ok(&self.levels[lv - 1])
    }

    /// Out-neighbors of `v` at level `lv`; empty when `v` is absent there.
    pub fn neighbors(&self, lv: usize, v: u32) -> Result<&[u32]> {
        Ok(self.level(lv)?.neighbors(v))
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    /// Structural invariants: bottom level complete, nesting, fixed degree.
    pub fn validate(&self) -> Result<()> {
        check_fractions(&self.fractions)?;
        if self.levels.len() != self.fractions.len() {
            return Err(Error::Integrity("level count differs from fractions".into()));
        }
        let bottom = &self.levels[0];
        if bottom.len() != self.num_samples
            || bottom.vertices.iter().enumerate().any(|(i, &v)| v as usize != i)
        {
            return Err(Error::Integrity("bottom level must hold every id".into()));
        }
        for (i, lv) in self.levels.iter().enumerate() {
            if lv.level != i + 1 {
                return Err(Error::Integrity("levels out of order".into()));
            }
            if lv.len() != fraction_count(self.fractions[i], self.num_samples) {
                return Err(Error::Integrity(format!(
                    "level {} size disagrees with its fraction",
                    i + 1
                )));
            }
            let degree = self.k.min(lv.len().saturating_sub(1));
            if lv.offsets.windows(2).any(|w| (w[1] - w[0]) as usize != degree) {
                return Err(Error::Integrity(format!("level {} degree mismatch", i + 1)));
            }
            if i > 0 {
                let below = &self.levels[i - 1];
                if lv.vertices.iter().any(|&v| !below.contains(v)) {
                    return Err(Error::Integrity(format!("level {} not nested", i + 1)));
                }
            }
        }
        Ok(())
    }
}

pub fn build_multiscale(
    ds: &VectorDataset,
    fractions: &[f64],
    k: usize,
    metric: Metric,
    rng_seed: u64,
) -> Result<MultiscaleGraph> {
    build_multiscale_with(ds, fractions, k, metric, rng_seed, Exec::default())
}

/// Vertex sets for every level: `V_1` is all ids, `V_{l+1}` is drawn uniformly
/// from `V_l`.
pub fn level_vertex_sets(n: usize, fractions: &[f64], rng_seed: u64) -> Result<Vec<Vec<u32>>> {
    check_fractions(fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut sets: Vec<Vec<u32>> = vec![(0..n as u32).collect()];
    for (lv, &f) in fractions.iter().enumerate().skip(1) {
        let size = fraction_count(f, n);
        if size < 2 {
            return Err(Error::TooSmall(format!(
                "level {} would hold {size} vertices (fraction {f} of {n})",
                lv + 1
            )));
        }
        let next = sample_from(sets.last().unwrap(), size, &mut rng);
        sets.push(next);
    }
    Ok(sets)
}

pub fn build_multiscale_with(
    ds: &VectorDataset,
    fractions: &[f64],
    k: usize,
    metric: Metric,
    rng_seed: u64,
    exec: Exec,
) -> Result<MultiscaleGraph> {
    if ds.len() < 2 {
        return Err(Error::TooSmall(format!(
            "graph construction needs at least 2 vectors, got {}",
            ds.len()
        )));
    }
    if ds.len() >= ABSENT as usize {
        return Err(Error::invalid("dataset exceeds u32 id space"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let sets = level_vertex_sets(ds.len(), fractions, rng_seed)?;
    let levels = sets
        .iter()
        .enumerate()
        .map(|(i, vs)| build_level(ds, vs, k, metric, i + 1, exec))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiscaleGraph {
        levels,
        metric,
        k,
        fractions: fractions.to_vec(),
        num_samples: ds.len(),
    })
}

//! Exact all-points k-NN with pivot pruning.
//!
//! The level is partitioned around `ceil(2 sqrt(n))` pivots (evenly spaced
//! members, so no randomness is involved). Each point scans pivot groups in
//! order of the triangle-inequality lower bound `d(x, p) - radius(p)` and skips
//! groups whose bound exceeds its current k-th distance; inside a group, members
//! with `|d(x, p) - d(y, p)|` above the k-th distance are skipped unevaluated.
//! Bounds carry a relative slack far above f64 rounding error, so pruning only
//! skips points that cannot enter the result. The output equals a full scan.

use std::cmp::Ordering;

use crate::dataset::Metric;
use crate::exec::Exec;

const LANES: usize = 8;
const CHUNK: usize = 256;
/// Relative slack on every pruning test.
const SLACK: f64 = 1e-9;

/// Ranking cost of a pair: L1 distance, or squared L2 (which orders pairs as
/// L2 does). Same lane split and reduction order as the distance functions in
/// `dataset`, and widening f32 to f64 is exact, so the bits match
/// `Metric::eval` before the square root.
#[inline(always)]
fn pair_cost<const L1: bool>(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0f64; LANES];
    let (ca, ra) = a.as_chunks::<LANES>();
    let (cb, rb) = b.as_chunks::<LANES>();
    for (x, y) in ca.iter().zip(cb) {
        for i in 0..LANES {
            let d = x[i] - y[i];
            acc[i] += if L1 { d.abs() } else { d * d };
        }
    }
    for (i, (x, y)) in ra.iter().zip(rb).enumerate() {
        let d = x - y;
        acc[i] += if L1 { d.abs() } else { d * d };
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Metric distance from a ranking cost; the triangle inequality holds here.
#[inline(always)]
fn metric_distance<const L1: bool>(cost: f64) -> f64 {
    if L1 {
        cost
    } else {
        cost.sqrt()
    }
}

#[inline]
fn closer(a: (f64, u32), b: (f64, u32)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => true,
        Ordering::Equal => a.1 < b.1,
        Ordering::Greater => false,
    }
}

/// Keeps the `k` smallest `(cost, id)` pairs seen, sorted ascending.
/// Returns whether `cand` was kept.
#[inline]
fn push_bounded(best: &mut Vec<(f64, u32)>, k: usize, cand: (f64, u32)) -> bool {
    if best.len() == k {
        if !closer(cand, best[k - 1]) {
            return false;
        }
        best.pop();
    }
    let pos = best.partition_point(|&e| closer(e, cand));
    best.insert(pos, cand);
    true
}

/// `lower` cannot reach `radius` once the slack is taken off.
#[inline(always)]
fn pruned(lower: f64, scale: f64, radius: f64) -> bool {
    lower - SLACK * scale > radius * (1.0 + SLACK)
}

struct Index<'a> {
    dim: usize,
    /// Level rows in input order, widened.
    rows: &'a [f64],
    ids: &'a [u32],
    pivots: Vec<f64>,
    /// Group `g` occupies `start[g]..start[g + 1]` of the grouped arrays.
    start: Vec<usize>,
    radius: Vec<f64>,
    grouped_rows: Vec<f64>,
    /// Input position of each grouped member.
    grouped_pos: Vec<u32>,
    /// Distance of each grouped member to its pivot.
    grouped_dist: Vec<f64>,
    degree: usize,
}

impl<'a> Index<'a> {
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    fn build<const L1: bool>(rows: &'a [f64], dim: usize, ids: &'a [u32], degree: usize) -> Self {
        let n = ids.len();
        let g = ((2.0 * (n as f64).sqrt()).ceil() as usize).clamp(1, n);
        let mut pivots = Vec::with_capacity(g * dim);
        for p in 0..g {
            let i = p * n / g;
            pivots.extend_from_slice(&rows[i * dim..(i + 1) * dim]);
        }
        let mut index = Self {
            dim,
            rows,
            ids,
            pivots,
            start: Vec::new(),
            radius: vec![0.0; g],
            grouped_rows: Vec::with_capacity(rows.len()),
            grouped_pos: Vec::with_capacity(n),
            grouped_dist: Vec::with_capacity(n),
            degree,
        };
        // nearest pivot, ties to the lower pivot index
        let mut owner = Vec::with_capacity(n);
        for i in 0..n {
            let x = index.row(i);
            let (mut best, mut best_cost) = (0, f64::INFINITY);
            for (p, c) in index.pivots.chunks_exact(dim).enumerate() {
                let cost = pair_cost::<L1>(x, c);
                if cost < best_cost {
                    (best, best_cost) = (p, cost);
                }
            }
            owner.push((best as u32, metric_distance::<L1>(best_cost)));
        }
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by_key(|&i| owner[i as usize].0);
        index.start = vec![0; g + 1];
        for &(p, _) in &owner {
            index.start[p as usize + 1] += 1;
        }
        for p in 0..g {
            index.start[p + 1] += index.start[p];
        }
        for &i in &order {
            let (p, d) = owner[i as usize];
            index.radius[p as usize] = index.radius[p as usize].max(d);
            index.grouped_rows.extend_from_slice(&rows[i as usize * dim..(i as usize + 1) * dim]);
            index.grouped_pos.push(i);
            index.grouped_dist.push(d);
        }
        index
    }

    #[inline(always)]
    fn neighbors_of<const L1: bool>(&self, i: usize, lower: &mut Vec<(f64, u32)>) -> Vec<(f64, u32)> {
        let dim = self.dim;
        let x = self.row(i);
        let mut best = Vec::with_capacity(self.degree + 1);
        let mut reach = f64::INFINITY;
        lower.clear();
        for (p, c) in self.pivots.chunks_exact(dim).enumerate() {
            let d = metric_distance::<L1>(pair_cost::<L1>(x, c));
            lower.push((d, p as u32));
        }
        // scan by the group bound; the pivot distance rides along in `.0`
        let bound = |&(d, p): &(f64, u32)| d - self.radius[p as usize];
        lower.sort_unstable_by(|a, b| bound(a).total_cmp(&bound(b)).then(a.1.cmp(&b.1)));
        for &(dp, p) in lower.iter() {
            let p = p as usize;
            if pruned(dp - self.radius[p], dp + self.radius[p], reach) {
                continue;
            }
            for m in self.start[p]..self.start[p + 1] {
                let pos = self.grouped_pos[m] as usize;
                let dm = self.grouped_dist[m];
                if pos == i || pruned((dp - dm).abs(), dp + dm, reach) {
                    continue;
                }
                let cost = pair_cost::<L1>(x, &self.grouped_rows[m * dim..(m + 1) * dim]);
                if push_bounded(&mut best, self.degree, (cost, self.ids[pos]))
                    && best.len() == self.degree
                {
                    reach = metric_distance::<L1>(best[self.degree - 1].0);
                }
            }
        }
        best
    }

    #[inline(always)]
    fn chunk_body(&self, l1: bool, range: std::ops::Range<usize>) -> Vec<Vec<u32>> {
        let mut lower = Vec::new();
        let mut out = Vec::with_capacity(range.len());
        // a plain loop: closures would not inherit the caller's target features
        for i in range {
            let best = if l1 {
                self.neighbors_of::<true>(i, &mut lower)
            } else {
                self.neighbors_of::<false>(i, &mut lower)
            };
            out.push(best.into_iter().map(|(_, id)| id).collect());
        }
        out
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn chunk_avx512(&self, l1: bool, range: std::ops::Range<usize>) -> Vec<Vec<u32>> {
        self.chunk_body(l1, range)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn chunk_avx2(&self, l1: bool, range: std::ops::Range<usize>) -> Vec<Vec<u32>> {
        self.chunk_body(l1, range)
    }

    // Lanes are independent sums in a fixed order, so every path yields the
    // same bits.
    fn chunk(&self, l1: bool, range: std::ops::Range<usize>) -> Vec<Vec<u32>> {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the CPU supports AVX-512F, checked above.
                return unsafe { self.chunk_avx512(l1, range) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports AVX2, checked above.
                return unsafe { self.chunk_avx2(l1, range) };
            }
        }
        self.chunk_body(l1, range)
    }
}

/// Exact `degree` nearest other rows of every row in `rows` (row-major, `dim`
/// wide), as ids from `ids`, sorted by `(distance, id)`. Requires
/// `degree < ids.len()`.
pub(crate) fn all_knn(
    rows: &[f64],
    dim: usize,
    ids: &[u32],
    degree: usize,
    metric: Metric,
    exec: Exec,
) -> Vec<Vec<u32>> {
    let l1 = metric == Metric::L1;
    let index = if l1 {
        Index::build::<true>(rows, dim, ids, degree)
    } else {
        Index::build::<false>(rows, dim, ids, degree)
    };
    let n = ids.len();
    exec.map(n.div_ceil(CHUNK), |c| index.chunk(l1, c * CHUNK..((c + 1) * CHUNK).min(n)))
        .into_iter()
        .flatten()
        .collect()
}

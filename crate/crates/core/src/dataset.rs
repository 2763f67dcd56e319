//! The vector corpus, distance metrics and uniform subsampling.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `N x D` matrix of `f32` components. Ids are `0..N`.
#[derive(Clone, PartialEq)]
pub struct VectorDataset {
    dim: usize,
    data: Vec<f32>,
}

impl fmt::Debug for VectorDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorDataset")
            .field("len", &self.len())
            .field("dim", &self.dim)
            .finish()
    }
}

impl VectorDataset {
    /// Builds a dataset from a flat row-major buffer.
    ///
    /// An empty buffer yields the empty dataset (dimension 0), which loads but is
    /// rejected by every index builder.
    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.is_empty() {
            return Ok(Self { dim, data });
        }
        if dim == 0 {
            return Err(Error::invalid("vector dimension must be at least 1"));
        }
        if data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "buffer length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                index: pos / dim,
                dim: pos % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Ok(Self::empty());
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(dim, data)
    }

    pub fn empty() -> Self {
        Self {
            dim: 0,
            data: Vec::new(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn check_query(&self, q: &[f32]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        Ok(())
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, ids: &[u32]) -> Self {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            data.extend_from_slice(self.get(id as usize));
        }
        Self {
            dim: self.dim,
            data,
        }
    }
}

/// Vector distance. `SquaredL2` ranks identically to `L2` and skips the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    L2,
    SquaredL2,
}

impl Default for Metric {
    fn default() -> Self {
        Metric::L2
    }
}

impl Metric {
    /// Distance without a dimension check; slices must have equal length.
    #[inline]
    pub fn eval(self, a: &[f32], b: &[f32]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::L1 => l1(a, b),
            Metric::L2 => squared_l2(a, b).sqrt(),
            Metric::SquaredL2 => squared_l2(a, b),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Metric::L1 => 1,
            Metric::L2 => 2,
            Metric::SquaredL2 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Metric::L1),
            2 => Some(Metric::L2),
            3 => Some(Metric::SquaredL2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::SquaredL2 => "sql2",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "sql2" | "squared_l2" | "sqeuclidean" => Ok(Metric::SquaredL2),
            other => Err(Error::invalid(format!("unknown metric '{other}'"))),
        }
    }
}

const LANES: usize = 8;

// Eight independent f64 accumulators so the loop vectorizes; the lane order is
// fixed, which keeps results bit-identical across runs and thread counts.
#[inline]
fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            let d = x[i] as f64 - y[i] as f64;
            acc[i] += d * d;
        }
    }
    for (i, (x, y)) in ra.iter().zip(rb).enumerate() {
        let d = *x as f64 - *y as f64;
        acc[i] += d * d;
    }
    reduce(acc)
}

#[inline]
fn l1(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += (x[i] as f64 - y[i] as f64).abs();
        }
    }
    for (i, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[i] += (*x as f64 - *y as f64).abs();
    }
    reduce(acc)
}

#[inline]
fn reduce(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Checked distance between two vectors.
pub fn distance(a: &[f32], b: &[f32], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(metric.eval(a, b))
}

/// `ceil(fraction * n)`, ignoring float noise in the product (0.07 * 100 is 7, not 8).
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    Ok(())
}

/// Draws `count` distinct elements of `pool` uniformly without replacement by a
/// partial Fisher-Yates shuffle. The result is sorted ascending.
pub fn sample_from<R: Rng>(pool: &[u32], count: usize, rng: &mut R) -> Vec<u32> {
    let mut work = pool.to_vec();
    let count = count.min(work.len());
    for i in 0..count {
        let j = rng.gen_range(i..work.len());
        work.swap(i, j);
    }
    work.truncate(count);
    work.sort_unstable();
    work
}

/// `ceil(fraction * N)` distinct ids of `ds`, uniform without replacement,
/// sorted ascending. Uses ChaCha8 seeded from `rng_seed`.
pub fn sample_uniform(ds: &VectorDataset, fraction: f64, rng_seed: u64) -> Result<Vec<u32>> {
    sample_ids(ds.len(), fraction, rng_seed)
}

pub fn sample_ids(n: usize, fraction: f64, rng_seed: u64) -> Result<Vec<u32>> {
    check_fraction(fraction)?;
    let ids: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(sample_from(&ids, fraction_count(fraction, n), &mut rng))
}

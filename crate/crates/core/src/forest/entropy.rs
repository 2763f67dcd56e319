//! Gaussian differential-entropy surrogates used to score splits.
//!
//! `Full` is `log det(Cov + ridge*I)`; `Diagonal` keeps only the variances,
//! `sum_d log(Var_d + ridge)`. Covariances are population (divide by `|S|`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMode {
    Diagonal,
    Full,
}

impl Default for EntropyMode {
    fn default() -> Self {
        EntropyMode::Diagonal
    }
}

impl std::str::FromStr for EntropyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" | "diag" => Ok(EntropyMode::Diagonal),
            "full" => Ok(EntropyMode::Full),
            other => Err(Error::invalid(format!("unknown entropy mode '{other}'"))),
        }
    }
}

/// Entropy of a set of vectors, computed in two passes (mean, then centred
/// second moments).
pub fn entropy<R: AsRef<[f32]>>(set: &[R], mode: EntropyMode, ridge: f64) -> Result<f64> {
    let first = set
        .first()
        .ok_or_else(|| Error::invalid("entropy of an empty set is undefined"))?;
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::invalid("entropy needs vectors of dimension >= 1"));
    }
    for v in set {
        if v.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.as_ref().len(),
            });
        }
    }
    let n = set.len() as f64;
    let mut mean = vec![0f64; dim];
    for v in set {
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += *x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    match mode {
        EntropyMode::Diagonal => {
            let mut var = vec![0f64; dim];
            for v in set {
                for ((s, x), m) in var.iter_mut().zip(v.as_ref()).zip(&mean) {
                    let d = *x as f64 - m;
                    *s += d * d;
                }
            }
            Ok(var.iter().map(|s| (s / n + ridge).ln()).sum())
        }
        EntropyMode::Full => {
            let mut cov = vec![0f64; dim * dim];
            let mut centred = vec![0f64; dim];
            for v in set {
                for ((c, x), m) in centred.iter_mut().zip(v.as_ref()).zip(&mean) {
                    *c = *x as f64 - m;
                }
                for i in 0..dim {
                    for j in 0..=i {
                        cov[i * dim + j] += centred[i] * centred[j];
                    }
                }
            }
            for i in 0..dim {
                for j in 0..=i {
                    cov[i * dim + j] /= n;
                }
                cov[i * dim + i] += ridge;
            }
            Ok(log_det_spd(&mut cov, dim))
        }
    }
}

/// `log det` of a symmetric positive-definite matrix by in-place Cholesky.
/// Reads only the lower triangle. Returns `-inf` if a pivot is not positive.
pub(crate) fn log_det_spd(a: &mut [f64], dim: usize) -> f64 {
    let mut log_det = 0.0;
    for j in 0..dim {
        let mut diag = a[j * dim + j];
        for k in 0..j {
            diag -= a[j * dim + k] * a[j * dim + k];
        }
        if diag <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let l_jj = diag.sqrt();
        a[j * dim + j] = l_jj;
        log_det += 2.0 * l_jj.ln();
        for i in j + 1..dim {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = s / l_jj;
        }
    }
    log_det
}

/// Running first and second moments of a sample set. Child moments are
/// obtained by subtraction from the parent, so only one side of each candidate
/// split has to be accumulated.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub count: usize,
    pub sum: Vec<f64>,
    /// Diagonal: per-dimension sum of squares. Full: lower triangle of the
    /// cross-product matrix, row-major `dim x dim`.
    pub second: Vec<f64>,
    mode: EntropyMode,
}

impl Moments {
    pub fn new(dim: usize, mode: EntropyMode) -> Self {
        let second = match mode {
            EntropyMode::Diagonal => dim,
            EntropyMode::Full => dim * dim,
        };
        Self {
            count: 0,
            sum: vec![0.0; dim],
            second: vec![0.0; second],
            mode,
        }
    }

    pub fn reset(&mut self) {
        self.count = 0;
        self.sum.iter_mut().for_each(|x| *x = 0.0);
        self.second.iter_mut().for_each(|x| *x = 0.0);
    }

    /// Adds rows `sel` of the row-major `rows`, in `sel` order. `sq` holds the
    /// element-wise squares of `rows` and is read in diagonal mode only.
    pub fn add_rows(&mut self, rows: &[f64], sq: &[f64], sel: &[u32]) {
        let dim = self.sum.len();
        self.count += sel.len();
        match self.mode {
            EntropyMode::Diagonal => add_diagonal(&mut self.sum, &mut self.second, rows, sq, sel),
            EntropyMode::Full => {
                for &i in sel {
                    let x = &rows[i as usize * dim..(i as usize + 1) * dim];
                    for a in 0..dim {
                        self.sum[a] += x[a];
                        let row = &mut self.second[a * dim..a * dim + a + 1];
                        for (c, xb) in row.iter_mut().zip(x) {
                            *c += x[a] * xb;
                        }
                    }
                }
            }
        }
    }

    /// `self - part`, the moments of the complement of `part` within `self`.
    pub fn minus(&self, part: &Moments, out: &mut Moments) {
        out.count = self.count - part.count;
        for ((o, a), b) in out.sum.iter_mut().zip(&self.sum).zip(&part.sum) {
            *o = a - b;
        }
        for ((o, a), b) in out.second.iter_mut().zip(&self.second).zip(&part.second) {
            *o = a - b;
        }
    }

    /// Entropy of the accumulated set; 0 for the empty set.
    pub fn entropy(&self, ridge: f64, scratch: &mut Vec<f64>) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let dim = self.sum.len();
        match self.mode {
            EntropyMode::Diagonal => self
                .sum
                .iter()
                .zip(&self.second)
                .map(|(s, q)| {
                    let mean = s / n;
                    ((q / n - mean * mean).max(0.0) + ridge).ln()
                })
                .sum(),
            EntropyMode::Full => {
                scratch.clear();
                scratch.resize(dim * dim, 0.0);
                for i in 0..dim {
                    let mi = self.sum[i] / n;
                    for j in 0..=i {
                        let mj = self.sum[j] / n;
                        scratch[i * dim + j] = self.second[i * dim + j] / n - mi * mj;
                    }
                    scratch[i * dim + i] = scratch[i * dim + i].max(0.0) + ridge;
                }
                log_det_spd(scratch, dim)
            }
        }
    }
}

#[inline(always)]
fn add_diagonal_body(sum: &mut [f64], second: &mut [f64], rows: &[f64], sq: &[f64], sel: &[u32]) {
    let dim = sum.len();
    let second = &mut second[..dim];
    for &i in sel {
        let o = i as usize * dim;
        for (acc, v) in sum.iter_mut().zip(&rows[o..o + dim]) {
            *acc += v;
        }
        for (acc, v) in second.iter_mut().zip(&sq[o..o + dim]) {
            *acc += v;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn add_diagonal_avx2(sum: &mut [f64], second: &mut [f64], rows: &[f64], sq: &[f64], sel: &[u32]) {
    add_diagonal_body(sum, second, rows, sq, sel)
}

// Lanes are independent per-dimension sums, so the wide path produces the
// same bits as the scalar one.
fn add_diagonal(sum: &mut [f64], second: &mut [f64], rows: &[f64], sq: &[f64], sel: &[u32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked above.
        return unsafe { add_diagonal_avx2(sum, second, rows, sq, sel) };
    }
    add_diagonal_body(sum, second, rows, sq, sel)
}

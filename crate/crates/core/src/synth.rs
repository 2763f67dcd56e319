//! Synthetic clustered corpora for tests and benchmarks.
//!
//! Points are drawn from an isotropic-centre Gaussian mixture: cluster centres
//! are `N(0, center_scale^2 I)`, and each point adds per-dimension noise with
//! standard deviation `spread * (d + 1)^-decay`, giving the decaying variance
//! spectrum typical of image descriptors. Queries come from the same mixture on
//! an independent random stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::VectorDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredSpec {
    pub dim: usize,
    pub clusters: usize,
    pub center_scale: f64,
    pub spread: f64,
    pub decay: f64,
    pub seed: u64,
}

impl Default for ClusteredSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            clusters: 100,
            center_scale: 1.0,
            spread: 1.0,
            decay: 0.5,
            seed: 1,
        }
    }
}

impl ClusteredSpec {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.clusters == 0 {
            return Err(Error::invalid("dim and clusters must be >= 1"));
        }
        if !(self.center_scale >= 0.0 && self.spread >= 0.0 && self.decay >= 0.0) {
            return Err(Error::invalid("scales and decay must be non-negative"));
        }
        Ok(())
    }

    fn centres(&self) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        (0..self.clusters * self.dim)
            .map(|_| (self.center_scale * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect()
    }

    fn draw(&self, centres: &[f32], count: usize, stream: u64) -> VectorDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let scales: Vec<f64> = (0..self.dim)
            .map(|d| self.spread * ((d + 1) as f64).powf(-self.decay))
            .collect();
        let mut data = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            let c = rng.gen_range(0..self.clusters);
            let centre = &centres[c * self.dim..(c + 1) * self.dim];
            for (m, s) in centre.iter().zip(&scales) {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push((*m as f64 + s * z) as f32);
            }
        }
        VectorDataset::from_flat(self.dim, data).expect("generated data is finite")
    }

    /// Base set of `n` vectors and `queries` held-out query vectors.
    pub fn generate(&self, n: usize, queries: usize) -> Result<(VectorDataset, VectorDataset)> {
        self.validate()?;
        let centres = self.centres();
        Ok((self.draw(&centres, n, 1), self.draw(&centres, queries, 2)))
    }
}

/// Uniform noise in `[-1, 1)^dim`.
pub fn uniform(n: usize, dim: usize, seed: u64) -> VectorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| rng.gen_range(-1f32..1.)).collect();
    VectorDataset::from_flat(dim, data).expect("generated data is finite")
}

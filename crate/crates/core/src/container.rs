//! The on-disk index: forest, graph, base vectors and JSON metadata in one
//! checksummed file.
//!
//! The envelope kind is `INDX` (see [`crate::codec`]). Its payload is a section
//! table followed by the sections:
//!
//! ```text
//! u32 section_count
//! section_count x { [u8; 4] tag, u64 offset, u64 length, [u8; 32] SHA-256 }
//! section bytes (offsets are relative to the payload start)
//! ```
//!
//! Tags: `META` (UTF-8 JSON, [`IndexMetadata`]), `FRST` (forest payload),
//! `GRPH` (graph payload), `VECS` (`u64 n, u32 dim, n*dim f32`).

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{self, hex, sha256, Reader, Writer, HEADER_LEN, KIND_INDEX};
use crate::dataset::{Metric, VectorDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forest::{train_forest_with, ForestConfig, RetrievalForest};
use crate::navgraph::{build_multiscale_with, MultiscaleGraph};
use crate::search::{SearchParams, Searcher};
use crate::vecs::write_atomic;

const TAG_META: [u8; 4] = *b"META";
const TAG_FOREST: [u8; 4] = *b"FRST";
const TAG_GRAPH: [u8; 4] = *b"GRPH";
const TAG_VECTORS: [u8; 4] = *b"VECS";
const TABLE_ENTRY: usize = 4 + 8 + 8 + 32;

/// Everything needed to build an index from a base set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub forest: ForestConfig,
    pub k: usize,
    pub fractions: Vec<f64>,
    pub build_metric: Metric,
    /// Master seed; the forest and the level sampler derive their streams
    /// from it.
    pub seed: u64,
    pub search: SearchDefaults,
}

/// Search parameters stored with the index and used when a query leaves
/// them unset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchDefaults {
    pub beam: usize,
    pub max_iters: usize,
    pub num_seeds: usize,
    pub top_k: usize,
}

impl Default for SearchDefaults {
    fn default() -> Self {
        let p = SearchParams::default();
        Self {
            beam: p.beam,
            max_iters: p.max_iters,
            num_seeds: p.num_seeds,
            top_k: p.top_k,
        }
    }
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            forest: ForestConfig::default(),
            k: 20,
            fractions: vec![1.0, 0.1],
            build_metric: Metric::L2,
            seed: 42,
            search: SearchDefaults::default(),
        }
    }
}

impl BuildConfig {
    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            rng_seed: self.seed,
            ..self.forest.clone()
        }
    }

    pub fn graph_seed(&self) -> u64 {
        self.seed ^ 0x6a09_e667_f3bc_c908
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMetadata {
    pub format_version: u32,
    pub num_samples: usize,
    pub dim: usize,
    pub build: BuildConfig,
    pub graph_seed: u64,
    pub level_sizes: Vec<usize>,
    pub dataset_digest: String,
    pub forest_digest: String,
    pub graph_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub meta: IndexMetadata,
    pub vectors: VectorDataset,
    pub forest: RetrievalForest,
    pub graph: MultiscaleGraph,
}

/// Timing and shape summary printed by `navg build`.
#[derive(Debug, Clone)]
pub struct BuildStats {
    pub forest_secs: f64,
    pub graph_secs: f64,
    pub leaf_sizes: Vec<usize>,
    pub level_sizes: Vec<usize>,
}

fn section_bytes<F: FnOnce(&mut Writer)>(f: F) -> Vec<u8> {
    let mut w = Writer::default();
    f(&mut w);
    w.buf
}

/// Digest of a dataset's fvecs-independent binary layout.
pub fn dataset_digest(ds: &VectorDataset) -> String {
    hex(&sha256(&section_bytes(|w| codec::encode_vectors_payload(ds, w))))
}

impl Index {
    pub fn build(ds: &VectorDataset, config: &BuildConfig, exec: Exec) -> Result<(Self, BuildStats)> {
        if ds.len() < 2 {
            return Err(Error::TooSmall(format!(
                "index needs at least 2 vectors, got {}",
                ds.len()
            )));
        }
        let t0 = Instant::now();
        let forest = train_forest_with(ds, &config.forest_config(), exec)?;
        let forest_secs = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let graph = build_multiscale_with(
            ds,
            &config.fractions,
            config.k,
            config.build_metric,
            config.graph_seed(),
            exec,
        )?;
        let graph_secs = t1.elapsed().as_secs_f64();
        let index = Self::assemble(ds.clone(), forest, graph, config.clone());
        let stats = BuildStats {
            forest_secs,
            graph_secs,
            leaf_sizes: index.forest.leaf_sizes(),
            level_sizes: index.meta.level_sizes.clone(),
        };
        Ok((index, stats))
    }

    fn assemble(
        vectors: VectorDataset,
        forest: RetrievalForest,
        graph: MultiscaleGraph,
        build: BuildConfig,
    ) -> Self {
        let forest_bytes = section_bytes(|w| codec::encode_forest_payload(&forest, w));
        let graph_bytes = section_bytes(|w| codec::encode_graph_payload(&graph, w));
        let meta = IndexMetadata {
            format_version: codec::VERSION,
            num_samples: vectors.len(),
            dim: vectors.dim(),
            graph_seed: build.graph_seed(),
            build,
            level_sizes: graph.levels().iter().map(|l| l.len()).collect(),
            dataset_digest: dataset_digest(&vectors),
            forest_digest: hex(&sha256(&forest_bytes)),
            graph_digest: hex(&sha256(&graph_bytes)),
        };
        Self {
            meta,
            vectors,
            forest,
            graph,
        }
    }

    pub fn searcher(&self) -> Searcher<'_> {
        Searcher::new(&self.vectors, &self.graph, Some(&self.forest))
            .expect("index parts are consistent by construction")
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec_pretty(&self.meta).expect("metadata serializes");
        let sections: [([u8; 4], Vec<u8>); 4] = [
            (TAG_META, meta),
            (
                TAG_FOREST,
                section_bytes(|w| codec::encode_forest_payload(&self.forest, w)),
            ),
            (
                TAG_GRAPH,
                section_bytes(|w| codec::encode_graph_payload(&self.graph, w)),
            ),
            (
                TAG_VECTORS,
                section_bytes(|w| codec::encode_vectors_payload(&self.vectors, w)),
            ),
        ];
        let mut w = Writer::default();
        w.u32(sections.len() as u32);
        let mut offset = (4 + sections.len() * TABLE_ENTRY) as u64;
        for (tag, bytes) in &sections {
            w.bytes(tag);
            w.u64(offset);
            w.u64(bytes.len() as u64);
            w.bytes(&sha256(bytes));
            offset += bytes.len() as u64;
        }
        for (_, bytes) in &sections {
            w.bytes(bytes);
        }
        codec::wrap(KIND_INDEX, &w.buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let payload = codec::unwrap(bytes, KIND_INDEX)?;
        let base = HEADER_LEN as u64;
        let mut r = Reader::new(payload, base);
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(16));
        for _ in 0..count {
            let at = r.offset();
            let tag = r.tag()?;
            let offset = r.u64()? as usize;
            let len = r.u64()? as usize;
            let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| Error::format(at, "section extends past end of file"))?;
            let body = &payload[offset..end];
            if sha256(body) != digest {
                return Err(Error::Integrity(format!(
                    "section {} checksum mismatch",
                    String::from_utf8_lossy(&tag)
                )));
            }
            table.push((tag, offset, body));
        }
        let find = |tag: [u8; 4]| {
            table
                .iter()
                .find(|(t, _, _)| *t == tag)
                .map(|&(_, off, body)| (off, body))
                .ok_or_else(|| {
                    Error::Integrity(format!(
                        "missing section {}",
                        String::from_utf8_lossy(&tag)
                    ))
                })
        };

        let (_, meta_bytes) = find(TAG_META)?;
        let meta: IndexMetadata = serde_json::from_slice(meta_bytes)
            .map_err(|e| Error::Integrity(format!("metadata: {e}")))?;
        if meta.format_version != codec::VERSION {
            return Err(Error::Integrity(format!(
                "metadata format version {} unsupported",
                meta.format_version
            )));
        }

        let (off, body) = find(TAG_FOREST)?;
        if hex(&sha256(body)) != meta.forest_digest {
            return Err(Error::Integrity("forest digest differs from metadata".into()));
        }
        let mut fr = Reader::new(body, base + off as u64);
        let forest = codec::decode_forest_payload(&mut fr)?;
        fr.finish()?;

        let (off, body) = find(TAG_GRAPH)?;
        if hex(&sha256(body)) != meta.graph_digest {
            return Err(Error::Integrity("graph digest differs from metadata".into()));
        }
        let mut gr = Reader::new(body, base + off as u64);
        let graph = codec::decode_graph_payload(&mut gr)?;
        gr.finish()?;

        let (off, body) = find(TAG_VECTORS)?;
        if hex(&sha256(body)) != meta.dataset_digest {
            return Err(Error::Integrity("vector digest differs from metadata".into()));
        }
        let mut vr = Reader::new(body, base + off as u64);
        let vectors = codec::decode_vectors_payload(&mut vr)?;
        vr.finish()?;

        if vectors.len() != meta.num_samples
            || vectors.dim() != meta.dim
            || forest.num_samples() != meta.num_samples
            || forest.dim() != meta.dim
            || graph.num_samples() != meta.num_samples
        {
            return Err(Error::Integrity("sections disagree on dataset shape".into()));
        }
        Ok(Self {
            meta,
            vectors,
            forest,
            graph,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

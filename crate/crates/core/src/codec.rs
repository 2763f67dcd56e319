//! Binary encoding of forests, graphs and the index container.
//!
//! Every file starts with a 52-byte envelope, all integers little-endian:
//!
//! ```text
//! 0   magic    b"NVG1"
//! 4   u32      format version (1)
//! 8   [u8; 4]  kind: b"FRST" forest, b"GRPH" graph, b"INDX" index
//! 12  u64      payload length in bytes
//! 20  [u8; 32] SHA-256 of the payload
//! 52  payload
//! ```
//!
//! Forest payload:
//!
//! ```text
//! u32 dim, u64 num_samples,
//! u32 num_trees, u32 max_depth, u32 candidates_per_node, u32 min_leaf,
//! u8 entropy_mode (0 diagonal, 1 full), u8 bagging, u16 zero, f64 ridge, u64 rng_seed,
//! u32 tree_count, then per tree:
//!   u32 node_count, u64 bucket_len,
//!   node_count x 28-byte records (preorder, root first):
//!     split: u32 0, u32 phi0, u32 phi1, f64 tau, u32 left, u32 right
//!     leaf:  u32 1, u32 bucket_start, u32 bucket_len, f64 0, u32 0, u32 0
//!   bucket_len x u32 sample ids
//! ```
//!
//! Graph payload:
//!
//! ```text
//! u64 num_samples, u8 metric (1 l1, 2 l2, 3 squared l2), 3 zero bytes,
//! u32 k, u32 M, M x f64 fractions, then per level (bottom first):
//!   u32 level, u64 vertex_count, vertex_count x u32 ids (ascending),
//!   (vertex_count + 1) x u64 adjacency offsets, offsets[last] x u32 neighbor ids
//! ```

use sha2::{Digest, Sha256};

use crate::dataset::{Metric, VectorDataset};
use crate::error::{Error, Result};
use crate::forest::{EntropyMode, ForestConfig, Node, RetrievalForest, SplitParams, Tree};
use crate::navgraph::{LevelGraph, MultiscaleGraph};

pub const MAGIC: &[u8; 4] = b"NVG1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 52;

pub const KIND_FOREST: [u8; 4] = *b"FRST";
pub const KIND_GRAPH: [u8; 4] = *b"GRPH";
pub const KIND_INDEX: [u8; 4] = *b"INDX";

const NODE_SPLIT: u32 = 0;
const NODE_LEAF: u32 = 1;

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    pub fn u32s(&mut self, v: &[u32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.u32(*x);
        }
    }
}

/// Cursor over a byte slice; errors carry absolute file offsets.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], base: u64) -> Self {
        Self { buf, pos: 0, base }
    }

    pub fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.offset(), msg)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| self.err(format!("truncated: need {n} more bytes")))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn tag(&mut self) -> Result<[u8; 4]> {
        Ok(self.take(4)?.try_into().unwrap())
    }

    /// A length field, checked against the bytes that remain.
    pub fn count(&mut self, elem_size: usize) -> Result<usize> {
        let at = self.offset();
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.checked_mul(elem_size as u64).map_or(true, |b| b > remaining) {
            return Err(Error::format(at, format!("count {n} exceeds remaining data")));
        }
        Ok(n as usize)
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn kind_name(kind: &[u8; 4]) -> String {
    String::from_utf8_lossy(kind).into_owned()
}

/// Wraps `payload` in the versioned, checksummed envelope.
pub fn wrap(kind: [u8; 4], payload: &[u8]) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.bytes(&kind);
    w.u64(payload.len() as u64);
    w.bytes(&sha256(payload));
    w.bytes(payload);
    w.buf
}

/// Validates the envelope and returns the payload.
pub fn unwrap(bytes: &[u8], expected: [u8; 4]) -> Result<&[u8]> {
    let mut r = Reader::new(bytes, 0);
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::format(0, "bad magic, not an NVG1 file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported format version {version}")));
    }
    let kind = r.tag()?;
    if kind != expected {
        return Err(Error::WrongKind {
            expected: kind_name(&expected),
            found: kind_name(&kind),
        });
    }
    let len = r.u64()?;
    let digest = r.take(32)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len {
        return Err(Error::format(
            12,
            format!("payload length {len} but {} bytes present", payload.len()),
        ));
    }
    if sha256(payload) != digest {
        return Err(Error::Integrity("payload checksum mismatch".into()));
    }
    Ok(payload)
}

pub(crate) fn encode_forest_payload(f: &RetrievalForest, w: &mut Writer) {
    let c = &f.config;
    w.u32(f.dim as u32);
    w.u64(f.num_samples as u64);
    w.u32(c.num_trees as u32);
    w.u32(c.max_depth as u32);
    w.u32(c.candidates_per_node as u32);
    w.u32(c.min_leaf as u32);
    w.u8(match c.entropy_mode {
        EntropyMode::Diagonal => 0,
        EntropyMode::Full => 1,
    });
    w.u8(c.bagging as u8);
    w.u16(0);
    w.f64(c.ridge);
    w.u64(c.rng_seed);
    w.u32(f.trees.len() as u32);
    for t in &f.trees {
        w.u32(t.nodes.len() as u32);
        w.u64(t.buckets.len() as u64);
        for node in &t.nodes {
            match *node {
                Node::Split { split, left, right } => {
                    w.u32(NODE_SPLIT);
                    w.u32(split.phi.0);
                    w.u32(split.phi.1);
                    w.f64(split.tau);
                    w.u32(left);
                    w.u32(right);
                }
                Node::Leaf { start, len } => {
                    w.u32(NODE_LEAF);
                    w.u32(start);
                    w.u32(len);
                    w.f64(0.0);
                    w.u32(0);
                    w.u32(0);
                }
            }
        }
        w.u32s(&t.buckets);
    }
}

pub(crate) fn decode_forest_payload(r: &mut Reader) -> Result<RetrievalForest> {
    let dim = r.u32()? as usize;
    let num_samples = r.u64()? as usize;
    let num_trees = r.u32()? as usize;
    let max_depth = r.u32()? as usize;
    let candidates_per_node = r.u32()? as usize;
    let min_leaf = r.u32()? as usize;
    let entropy_mode = match r.u8()? {
        0 => EntropyMode::Diagonal,
        1 => EntropyMode::Full,
        m => return Err(r.err(format!("unknown entropy mode {m}"))),
    };
    let bagging = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(r.err(format!("bad bagging flag {b}"))),
    };
    r.u16()?;
    let ridge = r.f64()?;
    let rng_seed = r.u64()?;
    let config = ForestConfig {
        num_trees,
        max_depth,
        candidates_per_node,
        min_leaf,
        entropy_mode,
        ridge,
        bagging,
        rng_seed,
    };
    let tree_count = r.u32()? as usize;
    let mut trees = Vec::with_capacity(tree_count.min(1 << 16));
    for _ in 0..tree_count {
        let node_count = r.u32()? as usize;
        let bucket_len = r.u64()? as usize;
        let mut nodes = Vec::with_capacity(node_count.min(1 << 24));
        for _ in 0..node_count {
            let at = r.offset();
            let tag = r.u32()?;
            let a = r.u32()?;
            let b = r.u32()?;
            let tau = r.f64()?;
            let left = r.u32()?;
            let right = r.u32()?;
            nodes.push(match tag {
                NODE_SPLIT => Node::Split {
                    split: SplitParams { phi: (a, b), tau },
                    left,
                    right,
                },
                NODE_LEAF => Node::Leaf { start: a, len: b },
                t => return Err(Error::format(at, format!("unknown node tag {t}"))),
            });
        }
        let buckets = r.u32s(bucket_len)?;
        trees.push(Tree { nodes, buckets });
    }
    let forest = RetrievalForest {
        trees,
        config,
        dim,
        num_samples,
    };
    forest.validate()?;
    Ok(forest)
}

pub(crate) fn encode_graph_payload(g: &MultiscaleGraph, w: &mut Writer) {
    w.u64(g.num_samples as u64);
    w.u8(g.metric.code());
    w.bytes(&[0, 0, 0]);
    w.u32(g.k as u32);
    w.u32(g.levels.len() as u32);
    for f in &g.fractions {
        w.f64(*f);
    }
    for lv in &g.levels {
        w.u32(lv.level as u32);
        w.u64(lv.vertices.len() as u64);
        w.u32s(&lv.vertices);
        for o in &lv.offsets {
            w.u64(*o);
        }
        w.u32s(&lv.neighbors);
    }
}

pub(crate) fn decode_graph_payload(r: &mut Reader) -> Result<MultiscaleGraph> {
    let num_samples = r.u64()? as usize;
    if num_samples >= u32::MAX as usize {
        return Err(r.err("sample count exceeds u32 id space"));
    }
    let metric = {
        let code = r.u8()?;
        Metric::from_code(code).ok_or_else(|| r.err(format!("unknown metric code {code}")))?
    };
    r.take(3)?;
    let k = r.u32()? as usize;
    let m = r.u32()? as usize;
    let mut fractions = Vec::with_capacity(m.min(64));
    for _ in 0..m {
        fractions.push(r.f64()?);
    }
    let mut levels = Vec::with_capacity(m.min(64));
    for _ in 0..m {
        let level = r.u32()? as usize;
        let count = r.count(4)?;
        let vertices = r.u32s(count)?;
        let mut offsets = Vec::with_capacity(count + 1);
        for _ in 0..=count {
            offsets.push(r.u64()?);
        }
        let edges = *offsets.last().unwrap();
        let remaining = (r.buf.len() - r.pos) as u64;
        if edges.checked_mul(4).map_or(true, |b| b > remaining) {
            return Err(r.err("adjacency exceeds remaining data"));
        }
        let neighbors = r.u32s(edges as usize)?;
        levels.push(LevelGraph::from_parts(
            level,
            num_samples,
            vertices,
            offsets,
            neighbors,
        )?);
    }
    let g = MultiscaleGraph {
        levels,
        metric,
        k,
        fractions,
        num_samples,
    };
    g.validate()?;
    Ok(g)
}

pub(crate) fn encode_vectors_payload(ds: &VectorDataset, w: &mut Writer) {
    w.u64(ds.len() as u64);
    w.u32(ds.dim() as u32);
    w.buf.reserve(ds.as_flat().len() * 4);
    for x in ds.as_flat() {
        w.bytes(&x.to_le_bytes());
    }
}

pub(crate) fn decode_vectors_payload(r: &mut Reader) -> Result<VectorDataset> {
    let n = r.u64()? as usize;
    let dim = r.u32()? as usize;
    let words = n
        .checked_mul(dim)
        .ok_or_else(|| r.err("vector block size overflow"))?;
    let raw = r.take(words.checked_mul(4).ok_or_else(|| r.err("length overflow"))?)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    VectorDataset::from_flat(dim, data)
}

pub fn encode_forest(f: &RetrievalForest) -> Vec<u8> {
    let mut w = Writer::default();
    encode_forest_payload(f, &mut w);
    wrap(KIND_FOREST, &w.buf)
}

pub fn decode_forest(bytes: &[u8]) -> Result<RetrievalForest> {
    let payload = unwrap(bytes, KIND_FOREST)?;
    let mut r = Reader::new(payload, HEADER_LEN as u64);
    let f = decode_forest_payload(&mut r)?;
    r.finish()?;
    Ok(f)
}

pub fn encode_graph(g: &MultiscaleGraph) -> Vec<u8> {
    let mut w = Writer::default();
    encode_graph_payload(g, &mut w);
    wrap(KIND_GRAPH, &w.buf)
}

pub fn decode_graph(bytes: &[u8]) -> Result<MultiscaleGraph> {
    let payload = unwrap(bytes, KIND_GRAPH)?;
    let mut r = Reader::new(payload, HEADER_LEN as u64);
    let g = decode_graph_payload(&mut r)?;
    r.finish()?;
    Ok(g)
}

pub fn save_graph(g: &MultiscaleGraph, path: impl AsRef<std::path::Path>) -> Result<()> {
    crate::vecs::write_atomic(path, &encode_graph(g))
}

pub fn load_graph(path: impl AsRef<std::path::Path>) -> Result<MultiscaleGraph> {
    decode_graph(&std::fs::read(path)?)
}

pub fn save_forest(f: &RetrievalForest, path: impl AsRef<std::path::Path>) -> Result<()> {
    crate::vecs::write_atomic(path, &encode_forest(f))
}

pub fn load_forest(path: impl AsRef<std::path::Path>) -> Result<RetrievalForest> {
    decode_forest(&std::fs::read(path)?)
}

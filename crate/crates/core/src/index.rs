//! Reference sets of embedded training anchors with exact and inverted-file
//! k-NN search.
//!
//! Distances are compared as squared L2 and square-rooted on the way out.
//! Equal distances are ordered by insertion index in both modes, so IVF with
//! every list probed returns exactly the exact-mode result.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::error::{Error, Result};
use crate::store::{EntityId, RelationId};

const INDEX_MAGIC: &[u8; 8] = b"KGRINDEX";
const INDEX_VERSION: u32 = 1;
pub const KMEANS_ITERATIONS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Exact,
    Ivf,
}

impl fmt::Display for IndexMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexMode::Exact => "exact",
            IndexMode::Ivf => "ivf",
        })
    }
}

impl FromStr for IndexMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(IndexMode::Exact),
            "ivf" => Ok(IndexMode::Ivf),
            _ => Err(Error::InvalidConfig(format!("unknown index mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IvfParams {
    pub n_lists: usize,
    pub n_probe: usize,
    pub iterations: usize,
}

impl Default for IvfParams {
    fn default() -> Self {
        Self {
            n_lists: 16,
            n_probe: 4,
            iterations: KMEANS_ITERATIONS,
        }
    }
}

/// What a reference point stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Payload {
    pub relation: RelationId,
    pub head: EntityId,
    /// Index of the source fact in the train split.
    pub source_fact: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub vector: Vec<f32>,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Insertion index of the point.
    pub index: usize,
    pub payload: Payload,
    /// Euclidean (not squared) distance.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    dim: usize,
    mode: IndexMode,
    vectors: Vec<f32>,
    payloads: Vec<Payload>,
    centroids: Vec<f32>,
    lists: Vec<Vec<u32>>,
    n_probe: usize,
}

pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded max-heap keeping the `k` smallest candidates.
struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn push(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(top) = self.heap.peek() {
            if c < *top {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

fn nearest(centroids: &[f32], dim: usize, v: &[f32]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_l2(cent, v);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters are repaired by
/// moving the point of the largest cluster farthest from its centroid.
fn kmeans(vectors: &[f32], dim: usize, k: usize, iterations: usize, seed: u64) -> Vec<f32> {
    let n = vectors.len() / dim;
    let point = |i: usize| &vectors[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<f32> = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_l2(point(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            if d2[pick] == 0.0 {
                // rounding ran off the end; take the last point with mass
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(chosen));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_l2(point(i), &centroids[start..start + dim]));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..iterations {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = nearest(&centroids, dim, point(i)).0;
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(point(i)) {
                *s += *v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let largest = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            if counts[largest] < 2 {
                break;
            }
            let lc = centroids[largest * dim..(largest + 1) * dim].to_vec();
            let far = (0..n)
                .filter(|&i| assign[i] == largest)
                .max_by(|&a, &b| {
                    squared_l2(point(a), &lc)
                        .total_cmp(&squared_l2(point(b), &lc))
                        .then(b.cmp(&a))
                })
                .unwrap();
            centroids[c * dim..(c + 1) * dim].copy_from_slice(point(far));
            assign[far] = c;
            counts[largest] -= 1;
            counts[c] = 1;
        }
    }
    centroids
}

impl ReferenceIndex {
    pub fn build(points: Vec<ReferencePoint>, mode: IndexMode, ivf: IvfParams, seed: u64) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::EmptyIndex);
        };
        let dim = first.vector.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut vectors = Vec::with_capacity(points.len() * dim);
        let mut payloads = Vec::with_capacity(points.len());
        for p in &points {
            if p.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.vector.len(),
                });
            }
            vectors.extend_from_slice(&p.vector);
            payloads.push(p.payload);
        }
        let n = payloads.len();
        let (centroids, lists, n_probe) = match mode {
            IndexMode::Exact => (Vec::new(), Vec::new(), 0),
            IndexMode::Ivf => {
                if ivf.n_lists == 0 || ivf.n_lists > n {
                    return Err(Error::TooManyLists {
                        n_lists: ivf.n_lists,
                        points: n,
                    });
                }
                let centroids = kmeans(&vectors, dim, ivf.n_lists, ivf.iterations, seed);
                let mut lists = vec![Vec::new(); ivf.n_lists];
                for i in 0..n {
                    let (c, _) = nearest(&centroids, dim, &vectors[i * dim..(i + 1) * dim]);
                    lists[c].push(i as u32);
                }
                (centroids, lists, ivf.n_probe.clamp(1, ivf.n_lists))
            }
        };
        Ok(Self {
            dim,
            mode,
            vectors,
            payloads,
            centroids,
            lists,
            n_probe,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn n_probe(&self) -> usize {
        self.n_probe
    }

    pub fn payload(&self, i: usize) -> &Payload {
        &self.payloads[i]
    }

    pub fn payloads(&self) -> &[Payload] {
        &self.payloads
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Inverted lists (empty in exact mode).
    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        Ok(())
    }

    /// The `k` nearest points passing `filter`, ascending by distance.
    /// IVF indexes scan only the default number of probed lists.
    pub fn knn(&self, query: &[f32], k: usize, filter: Option<&dyn Fn(&Payload) -> bool>) -> Result<Vec<Neighbor>> {
        self.knn_with_probe(query, k, filter, self.n_probe)
    }

    pub fn knn_with_probe(
        &self,
        query: &[f32],
        k: usize,
        filter: Option<&dyn Fn(&Payload) -> bool>,
        n_probe: usize,
    ) -> Result<Vec<Neighbor>> {
        self.check_query(query)?;
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        let mut top = TopK::new(k);
        let mut visit = |i: usize| {
            if filter.is_none_or(|f| f(&self.payloads[i])) {
                top.push(Candidate {
                    dist: squared_l2(self.vector(i), query),
                    index: i as u32,
                });
            }
        };
        match self.mode {
            IndexMode::Exact => (0..self.len()).for_each(&mut visit),
            IndexMode::Ivf => {
                for list in self.probe_order(query, n_probe) {
                    self.lists[list].iter().for_each(|&i| visit(i as usize));
                }
            }
        }
        Ok(top
            .into_sorted()
            .into_iter()
            .map(|c| Neighbor {
                index: c.index as usize,
                payload: self.payloads[c.index as usize],
                distance: c.dist.sqrt(),
            })
            .collect())
    }

    /// The `n_probe` lists whose centroids are nearest to `query`.
    fn probe_order(&self, query: &[f32], n_probe: usize) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(c, cent)| (squared_l2(cent, query), c))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().take(n_probe.max(1)).map(|(_, c)| c).collect()
    }

    /// Euclidean distance to every point passing `filter` (exact scan).
    pub fn distances(&self, query: &[f32], filter: Option<&dyn Fn(&Payload) -> bool>) -> Result<Vec<f64>> {
        self.check_query(query)?;
        Ok((0..self.len())
            .filter(|&i| filter.is_none_or(|f| f(&self.payloads[i])))
            .map(|i| squared_l2(self.vector(i), query).sqrt())
            .collect())
    }

    pub fn save(&self, path: &Path, config_hash: u64) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        binio::write_header(&mut w, INDEX_MAGIC, INDEX_VERSION, config_hash)?;
        binio::write_u32(&mut w, self.dim as u32)?;
        binio::write_u8(
            &mut w,
            match self.mode {
                IndexMode::Exact => 0,
                IndexMode::Ivf => 1,
            },
        )?;
        binio::write_u64(&mut w, self.len() as u64)?;
        binio::write_u32(&mut w, self.lists.len() as u32)?;
        binio::write_u32(&mut w, self.n_probe as u32)?;
        binio::write_f32_slice(&mut w, &self.centroids)?;
        if self.mode == IndexMode::Ivf {
            let mut assign = vec![0u32; self.len()];
            for (c, list) in self.lists.iter().enumerate() {
                for &i in list {
                    assign[i as usize] = c as u32;
                }
            }
            binio::write_u32_slice(&mut w, &assign)?;
        }
        let col = |f: fn(&Payload) -> u32| self.payloads.iter().map(f).collect::<Vec<u32>>();
        binio::write_u32_slice(&mut w, &col(|p| p.relation.0))?;
        binio::write_u32_slice(&mut w, &col(|p| p.head.0))?;
        binio::write_u32_slice(&mut w, &col(|p| p.source_fact))?;
        binio::write_f32_slice(&mut w, &self.vectors)?;
        w.flush()?;
        Ok(())
    }

    /// Loads an index; returns it with the config hash in its header.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let display = path.display().to_string();
        let mut r = BufReader::new(File::open(path)?);
        let header = binio::read_header(&mut r, INDEX_MAGIC, &display)?;
        let fmt_err = |message: String| Error::Format {
            path: display.clone(),
            message,
        };
        if header.version != INDEX_VERSION {
            return Err(fmt_err(format!("unsupported index version {}", header.version)));
        }
        let dim = binio::read_u32(&mut r)? as usize;
        let mode = match binio::read_u8(&mut r)? {
            0 => IndexMode::Exact,
            1 => IndexMode::Ivf,
            other => return Err(fmt_err(format!("unknown index mode tag {other}"))),
        };
        let n = binio::read_u64(&mut r)? as usize;
        let n_lists = binio::read_u32(&mut r)? as usize;
        let n_probe = binio::read_u32(&mut r)? as usize;
        let centroids = binio::read_f32_vec(&mut r, n_lists * dim)?;
        let mut lists = vec![Vec::new(); n_lists];
        if mode == IndexMode::Ivf {
            for (i, c) in binio::read_u32_vec(&mut r, n)?.into_iter().enumerate() {
                lists
                    .get_mut(c as usize)
                    .ok_or_else(|| fmt_err(format!("list id {c} out of range")))?
                    .push(i as u32);
            }
        }
        let rel = binio::read_u32_vec(&mut r, n)?;
        let head = binio::read_u32_vec(&mut r, n)?;
        let src = binio::read_u32_vec(&mut r, n)?;
        let payloads = (0..n)
            .map(|i| Payload {
                relation: RelationId(rel[i]),
                head: EntityId(head[i]),
                source_fact: src[i],
            })
            .collect();
        let vectors = binio::read_f32_vec(&mut r, n * dim)?;
        Ok((
            Self {
                dim,
                mode,
                vectors,
                payloads,
                centroids,
                lists,
                n_probe,
            },
            header.config_hash,
        ))
    }
}

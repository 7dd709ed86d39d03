//! K-means codebooks, nearest-centroid quantization and run-length dedup.
//!
//! Training is Lloyd's algorithm from a seeded k-means++ start. A cluster that
//! loses every member takes over the point farthest from its assigned centroid.
//! Codebooks serialize as `"KMB1" | u32 K | u32 D | f32[K*D]` (little-endian).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binio::{put_f32, put_u32, ByteCursor, Truncated};
use crate::featio::FeatureMatrix;

const KMB_MAGIC: &[u8; 4] = b"KMB1";

#[derive(Debug, Error)]
pub enum QuantizerError {
    #[error("need at least k={k} frames, got {frames}")]
    TooFewFrames { frames: usize, k: usize },
    #[error("need at least k={k} distinct frames, got {distinct}")]
    TooFewDistinct { distinct: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("centroids {0} and {1} are identical")]
    DuplicateCentroids(usize, usize),
    #[error("non-finite centroid value at byte offset {offset}")]
    NonFinite { offset: usize },
    #[error("bad magic at byte offset 0: expected \"KMB1\"")]
    BadMagic,
    #[error("truncated codebook at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<Truncated> for QuantizerError {
    fn from(t: Truncated) -> Self {
        QuantizerError::Truncated { offset: t.offset }
    }
}

pub type Result<T> = std::result::Result<T, QuantizerError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainMeta {
    pub iterations_run: usize,
    pub final_inertia: f64,
    /// Inertia after every assignment step, ending with the final centroids.
    pub inertia_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f32>,
    pub train_meta: TrainMeta,
}

/// Token sequence over `[0, K)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiscreteTokenSeq {
    pub tokens: Vec<u32>,
    pub deduped: bool,
}

impl Codebook {
    pub fn new(k: usize, dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if k < 2 {
            return Err(QuantizerError::InvalidK(k));
        }
        if centroids.len() != k * dim || dim == 0 {
            return Err(QuantizerError::DimensionMismatch {
                expected: k * dim,
                found: centroids.len(),
            });
        }
        if let Some(i) = centroids.iter().position(|v| !v.is_finite()) {
            return Err(QuantizerError::NonFinite { offset: 12 + 4 * i });
        }
        let mut seen = HashSet::new();
        for (i, row) in centroids.chunks_exact(dim).enumerate() {
            let key: Vec<u32> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                let j = centroids
                    .chunks_exact(dim)
                    .position(|r| r == row)
                    .expect("present");
                return Err(QuantizerError::DuplicateCentroids(j, i));
            }
        }
        Ok(Self {
            k,
            dim,
            centroids,
            train_meta: TrainMeta::default(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, frame: &[f32]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, cen) in self.centroids.chunks_exact(self.dim).enumerate() {
            let d = sq_dist_f32(frame, cen);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.centroids.len());
        out.extend_from_slice(KMB_MAGIC);
        put_u32(&mut out, self.k as u32);
        put_u32(&mut out, self.dim as u32);
        for &v in &self.centroids {
            put_f32(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != KMB_MAGIC {
            return Err(QuantizerError::BadMagic);
        }
        let k = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        let n = k.saturating_mul(dim);
        if cur.remaining() < n.saturating_mul(4) {
            return Err(QuantizerError::Truncated {
                offset: bytes.len(),
            });
        }
        let mut centroids = Vec::with_capacity(n);
        for _ in 0..n {
            centroids.push(cur.f32()?);
        }
        Self::new(k, dim, centroids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| QuantizerError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| QuantizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn sq_dist_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct(points: &[f64], dim: usize) -> usize {
    points
        .chunks_exact(dim)
        .map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

/// D²-weighted draw of one point index.
fn draw_d2(d2: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = d2.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (i, &w) in d2.iter().enumerate() {
        if w > 0.0 && target < w {
            return i;
        }
        target -= w;
    }
    // Rounding can walk off the end; fall back to the last positive weight.
    d2.iter().rposition(|&w| w > 0.0).expect("distinct >= k")
}

fn kmeans_plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let first = rng.random_range(0..n);
    let mut centroids = row(first).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let c = row(draw_d2(&d2, rng)).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn assign(points: &[f64], dim: usize, centroids: &[f64], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, cen) in centroids.chunks_exact(dim).enumerate() {
            let d = sq_dist(p, cen);
            if d < best.1 {
                best = (c, d);
            }
        }
        labels[i] = best.0;
        dists[i] = best.1;
    }
    dists.iter().sum()
}

/// Result of k-means on raw `n x dim` points, before rounding to `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    pub meta: TrainMeta,
}

/// Lloyd's algorithm on a flat row-major point buffer.
pub fn kmeans_points(points: &[f64], dim: usize, params: &KMeansParams) -> Result<KMeansFit> {
    let k = params.k;
    if k < 2 {
        return Err(QuantizerError::InvalidK(k));
    }
    if dim == 0 || points.len() % dim != 0 {
        return Err(QuantizerError::DimensionMismatch {
            expected: dim,
            found: points.len(),
        });
    }
    let n = points.len() / dim;
    if n < k {
        return Err(QuantizerError::TooFewFrames { frames: n, k });
    }
    let distinct = count_distinct(points, dim);
    if distinct < k {
        return Err(QuantizerError::TooFewDistinct { distinct, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = kmeans_plus_plus(points, dim, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0f64; n];
    let mut history = Vec::new();
    let mut iterations_run = 0;

    for _ in 0..params.max_iters {
        history.push(assign(points, dim, &centroids, &mut labels, &mut dists));
        iterations_run += 1;

        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("some cluster has two members when one is empty");
            sizes[labels[far]] -= 1;
            sizes[empty] = 1;
            labels[far] = empty;
            dists[far] = 0.0;
        }

        let mut sums = vec![0f64; k * dim];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let s = &mut sums[labels[i] * dim..(labels[i] + 1) * dim];
            for (a, &x) in s.iter_mut().zip(p) {
                *a += x;
            }
        }
        let mut shift = 0f64;
        for c in 0..k {
            for j in 0..dim {
                let m = sums[c * dim + j] / sizes[c] as f64;
                shift = shift.max((m - centroids[c * dim + j]).abs());
                centroids[c * dim + j] = m;
            }
        }
        if shift < params.tol {
            break;
        }
    }
    let final_inertia = assign(points, dim, &centroids, &mut labels, &mut dists);
    history.push(final_inertia);
    Ok(KMeansFit {
        centroids,
        labels,
        meta: TrainMeta {
            iterations_run,
            final_inertia,
            inertia_history: history,
        },
    })
}

/// Trains a codebook over every frame of `data`.
pub fn train_kmeans(data: &[FeatureMatrix], params: &KMeansParams) -> Result<Codebook> {
    let dim = data.first().map_or(0, FeatureMatrix::dim);
    for m in data {
        if m.dim() != dim {
            return Err(QuantizerError::DimensionMismatch {
                expected: dim,
                found: m.dim(),
            });
        }
    }
    let frames: usize = data.iter().map(FeatureMatrix::rows).sum();
    if frames < params.k || dim == 0 {
        return Err(QuantizerError::TooFewFrames {
            frames,
            k: params.k,
        });
    }
    let points: Vec<f64> = data
        .iter()
        .flat_map(|m| m.as_slice().iter().map(|&v| v as f64))
        .collect();
    let fit = kmeans_points(&points, dim, params)?;
    let centroids = fit.centroids.iter().map(|&v| v as f32).collect();
    let mut cb = Codebook::new(params.k, dim, centroids)?;
    cb.train_meta = fit.meta;
    Ok(cb)
}

pub fn quantize(cb: &Codebook, m: &FeatureMatrix) -> Result<DiscreteTokenSeq> {
    if m.dim() != cb.dim() {
        return Err(QuantizerError::DimensionMismatch {
            expected: cb.dim(),
            found: m.dim(),
        });
    }
    Ok(DiscreteTokenSeq {
        tokens: m.iter_rows().map(|r| cb.nearest(r) as u32).collect(),
        deduped: false,
    })
}

/// Collapses runs of equal consecutive tokens.
pub fn dedup(seq: &DiscreteTokenSeq) -> DiscreteTokenSeq {
    let mut tokens = seq.tokens.clone();
    tokens.dedup();
    DiscreteTokenSeq {
        tokens,
        deduped: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[[f32; 2]]) -> FeatureMatrix {
        let rows: Vec<Vec<f32>> = rows.iter().map(|r| r.to_vec()).collect();
        FeatureMatrix::from_rows(&rows, 0).unwrap()
    }

    #[test]
    fn four_point_example() {
        let m = matrix(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]);
        let cb = train_kmeans(&[m], &KMeansParams::new(2, 3)).unwrap();
        let mut cents: Vec<Vec<f32>> = (0..2).map(|i| cb.centroid(i).to_vec()).collect();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cents, vec![vec![0.0, 0.5], vec![10.0, 10.5]]);
        assert!((cb.train_meta.final_inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_points_give_zero_inertia() {
        let m = matrix(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.0]]);
        let cb = train_kmeans(&[m], &KMeansParams::new(3, 11)).unwrap();
        assert_eq!(cb.train_meta.final_inertia, 0.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let m = matrix(&[[0.0, 0.3], [2.0, 1.0], [5.0, -1.0], [4.0, 4.0], [0.5, 0.5], [3.0, 3.0]]);
        let a = train_kmeans(std::slice::from_ref(&m), &KMeansParams::new(3, 42)).unwrap();
        let b = train_kmeans(&[m], &KMeansParams::new(3, 42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_errors() {
        let m = matrix(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            train_kmeans(std::slice::from_ref(&m), &KMeansParams::new(3, 0)),
            Err(QuantizerError::TooFewFrames { frames: 2, k: 3 })
        ));
        let same = matrix(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(
            train_kmeans(&[same], &KMeansParams::new(2, 0)),
            Err(QuantizerError::TooFewDistinct { distinct: 1, k: 2 })
        ));
        let other = FeatureMatrix::from_rows(&[vec![1.0, 2.0, 3.0]], 0).unwrap();
        assert!(matches!(
            train_kmeans(&[m, other], &KMeansParams::new(2, 0)),
            Err(QuantizerError::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn quantize_nearest_and_ties() {
        let cb = Codebook::new(2, 2, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        let seq = quantize(&cb, &matrix(&[[1.0, 1.0], [9.0, 9.0], [5.0, 5.0]])).unwrap();
        assert_eq!(seq.tokens, vec![0, 1, 0]);
        assert!(!seq.deduped);
        let wrong = FeatureMatrix::from_rows(&[vec![1.0]], 0).unwrap();
        assert!(quantize(&cb, &wrong).is_err());
    }

    #[test]
    fn dedup_examples() {
        let s = DiscreteTokenSeq {
            tokens: vec![5, 5, 7, 7, 5],
            deduped: false,
        };
        let d = dedup(&s);
        assert_eq!(d.tokens, vec![5, 7, 5]);
        assert!(d.deduped);
        assert_eq!(dedup(&DiscreteTokenSeq::default()).tokens, Vec::<u32>::new());
    }

    #[test]
    fn codebook_rejects_duplicates_and_bad_bytes() {
        assert!(matches!(
            Codebook::new(2, 1, vec![1.0, 1.0]),
            Err(QuantizerError::DuplicateCentroids(0, 1))
        ));
        assert!(matches!(Codebook::new(1, 1, vec![1.0]), Err(QuantizerError::InvalidK(1))));
        let cb = Codebook::new(2, 1, vec![1.0, 2.0]).unwrap();
        let mut bytes = cb.to_bytes();
        assert_eq!(bytes.len(), 20);
        assert_eq!(Codebook::from_bytes(&bytes).unwrap(), cb);
        assert!(matches!(
            Codebook::from_bytes(&bytes[..18]),
            Err(QuantizerError::Truncated { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(Codebook::from_bytes(&bytes), Err(QuantizerError::BadMagic)));
    }
}

//! Harmonic graph detection: spectral clustering of the target embeddings and
//! silhouette scoring. The best-separated graphs form the harmonic set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::GraphDataset;
use crate::encoder::{predict, EncoderParams, LabelDistribution};
use crate::error::{arg, Result};
use crate::linalg::symmetric_eigen;
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seriation::{fix_sign, laplacian, similarity_matrix, SimilarityMatrix};

/// Eigenvectors of the Laplacian for its `k` smallest eigenvalues.
#[derive(Clone, Debug)]
pub struct SpectralEmbedding<T> {
    /// `n x k`, unit columns.
    pub vectors: Matrix<T>,
    pub values: Vec<T>,
}

/// Spectral embedding together with the k-means labels of its rows.
#[derive(Clone, Debug)]
pub struct ClusterAssignment<T> {
    pub labels: Vec<usize>,
    pub embedding: SpectralEmbedding<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SilhouetteScores<T>(pub Vec<T>);

/// Split of the target indices into harmonic and inharmonic graphs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainPartition {
    pub harmonic: Vec<usize>,
    pub inharmonic: Vec<usize>,
    /// Harmonic ratio in per-mille, kept integral so the partition stays `Eq`.
    pub ratio_permille: u32,
}

impl DomainPartition {
    pub fn len(&self) -> usize {
        self.harmonic.len() + self.inharmonic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Membership mask over `0..len()`.
    pub fn harmonic_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.harmonic {
            mask[i] = true;
        }
        mask
    }
}

pub fn spectral_embed<T: Scalar>(s: &SimilarityMatrix<T>, k: usize) -> Result<SpectralEmbedding<T>> {
    let n = s.0.rows();
    if k == 0 || k > n {
        return Err(arg(format!("spectral embedding needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let l = laplacian(s);
    let eig = symmetric_eigen(&l.0)?;
    let mut vectors = Matrix::zeros(n, k);
    for c in 0..k {
        let mut v = eig.vector(c);
        fix_sign(&mut v);
        for (r, x) in v.into_iter().enumerate() {
            vectors[(r, c)] = x;
        }
    }
    Ok(SpectralEmbedding {
        vectors,
        values: eig.values[..k].to_vec(),
    })
}

/// Result of Lloyd's algorithm.
#[derive(Clone, Debug)]
pub struct KMeans<T> {
    pub labels: Vec<usize>,
    pub centroids: Matrix<T>,
    pub inertia: T,
    pub iterations: usize,
}

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<T: Scalar>(p: &[T], centroids: &Matrix<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for c in 0..centroids.rows() {
        let d = sq_dist(p, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means on the rows of `u` with k-means++ seeding drawn from `seed`.
/// Empty clusters are re-seeded at the point farthest from its centroid.
pub fn kmeans_rows<T: Scalar>(u: &Matrix<T>, k: usize, seed: u64) -> Result<KMeans<T>> {
    let n = u.rows();
    if k == 0 || k > n {
        return Err(arg(format!("k-means needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<T> = (0..n).map(|i| sq_dist(u.row(i), u.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: T = d2.iter().copied().sum();
        let next = if total > T::zero() {
            let mut target = T::of(rng.gen::<f64>()) * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > T::zero() {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total mass")
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(u.row(i), u.row(next)));
        }
    }
    let mut centroids = u.select_rows(&chosen);
    let mut labels = vec![0; n];
    let mut iterations = 0;
    for it in 1..=KMEANS_MAX_ITER {
        iterations = it;
        let mut dist = vec![T::zero(); n];
        for i in 0..n {
            let (c, d) = nearest(u.row(i), &centroids);
            labels[i] = c;
            dist[i] = d;
        }
        let mut sums = Matrix::zeros(k, u.cols());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (o, &x) in sums.row_mut(labels[i]).iter_mut().zip(u.row(i)) {
                *o += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).expect("finite").then(b.cmp(&a)))
                    .unwrap_or(0);
                counts[labels[far]] -= 1;
                for (o, &x) in sums.row_mut(labels[far]).iter_mut().zip(u.row(far)) {
                    *o -= x;
                }
                labels[far] = c;
                dist[far] = T::zero();
                counts[c] = 1;
                sums.row_mut(c).copy_from_slice(u.row(far));
            }
        }
        let mut moved = T::zero();
        for c in 0..k {
            let inv = T::one() / T::of_usize(counts[c]);
            let new: Vec<T> = sums.row(c).iter().map(|&x| x * inv).collect();
            moved = moved.max(sq_dist(&new, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&new);
        }
        if moved <= T::of(KMEANS_TOL) {
            break;
        }
    }
    for i in 0..n {
        labels[i] = nearest(u.row(i), &centroids).0;
    }
    let inertia = (0..n).map(|i| sq_dist(u.row(i), centroids.row(labels[i]))).sum();
    Ok(KMeans {
        labels,
        centroids,
        inertia,
        iterations,
    })
}

/// Silhouette coefficient of every point; members of singleton clusters score 0.
pub fn silhouette<T: Scalar>(distances: &Matrix<T>, labels: &[usize]) -> Result<SilhouetteScores<T>> {
    let n = labels.len();
    if distances.shape() != (n, n) {
        return Err(arg("distance matrix does not match the label count"));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &c in labels {
        sizes[c] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(arg("silhouette needs at least 2 clusters"));
    }
    let mut scores = Vec::with_capacity(n);
    let mut sums = vec![T::zero(); k];
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            scores.push(T::zero());
            continue;
        }
        sums.iter_mut().for_each(|s| *s = T::zero());
        for j in 0..n {
            if j != i {
                sums[labels[j]] += distances[(i, j)];
            }
        }
        let a = sums[own] / T::of_usize(sizes[own] - 1);
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / T::of_usize(sizes[c]))
            .fold(T::infinity(), T::min);
        let m = a.max(b);
        scores.push(if m > T::zero() { (b - a) / m } else { T::zero() });
    }
    Ok(SilhouetteScores(scores))
}

/// `1 - S`, the dissimilarity used for silhouettes.
pub fn cosine_distances<T: Scalar>(s: &SimilarityMatrix<T>) -> Matrix<T> {
    let mut d = s.0.map(|v| T::one() - v);
    for i in 0..d.rows() {
        d[(i, i)] = T::zero();
    }
    d
}

/// Indices of the `round(ratio * n)` highest scores (ties by index) and the rest.
pub fn select_harmonic<T: Scalar>(scores: &[T], ratio: f64) -> Result<DomainPartition> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(arg(format!("harmonic ratio must lie in (0, 1), got {ratio}")));
    }
    let n = scores.len();
    let count = ((ratio * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores").then(a.cmp(&b)));
    let mut harmonic = order[..count].to_vec();
    let mut inharmonic = order[count..].to_vec();
    harmonic.sort_unstable();
    inharmonic.sort_unstable();
    Ok(DomainPartition {
        harmonic,
        inharmonic,
        ratio_permille: (ratio * 1000.0).round() as u32,
    })
}

/// Everything computed while partitioning a target set.
#[derive(Clone, Debug)]
pub struct PartitionOutcome<T> {
    pub partition: DomainPartition,
    pub silhouettes: SilhouetteScores<T>,
    pub clusters: Vec<usize>,
    pub embeddings: Matrix<T>,
    pub predictions: LabelDistribution<T>,
}

/// Pooled embeddings and predictions for every graph, in dataset order.
pub fn embed_dataset<T: Scalar>(
    dataset: &GraphDataset<T>,
    params: &EncoderParams<T>,
    chunk: usize,
) -> Result<(Matrix<T>, LabelDistribution<T>)> {
    let chunk = chunk.max(1);
    let mut zs = Vec::new();
    let mut ps = Vec::new();
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for part in idx.chunks(chunk) {
        let (z, p) = predict(&dataset.batch(part), params)?;
        zs.push(z.0);
        ps.push(p.0);
    }
    let z = Matrix::vstack(&zs.iter().collect::<Vec<_>>());
    let p = Matrix::vstack(&ps.iter().collect::<Vec<_>>());
    Ok((z, LabelDistribution(p)))
}

/// Embeds the whole target set with the current encoder, clusters the rows of
/// the Laplacian's `k` smallest eigenvectors and keeps the best-separated
/// `round(ratio * n)` graphs as the harmonic set.
pub fn partition_harmonic<T: Scalar>(
    target: &GraphDataset<T>,
    params: &EncoderParams<T>,
    ratio: f64,
    k: usize,
    seed: u64,
) -> Result<PartitionOutcome<T>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(arg(format!("harmonic ratio must lie in (0, 1), got {ratio}")));
    }
    if target.len() < k.max(2) {
        return Err(arg(format!(
            "target has {} graphs, fewer than the {k} clusters",
            target.len()
        )));
    }
    let (z, predictions) = embed_dataset(target, params, 256)?;
    let s = similarity_matrix(&z)?;
    let spec = spectral_embed(&s, k)?;
    let clusters = kmeans_rows(&spec.vectors, k, seed)?.labels;
    let distances = cosine_distances(&s);
    let silhouettes = match silhouette(&distances, &clusters) {
        Ok(s) => s,
        Err(_) => {
            log::warn!("spectral clustering produced a single cluster; all silhouettes set to 0");
            SilhouetteScores(vec![T::zero(); target.len()])
        }
    };
    let partition = select_harmonic(&silhouettes.0, ratio)?;
    Ok(PartitionOutcome {
        partition,
        silhouettes,
        clusters,
        embeddings: z,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_distances(x: &[f64]) -> Matrix<f64> {
        Matrix::from_fn(x.len(), x.len(), |i, j| (x[i] - x[j]).abs())
    }

    #[test]
    fn silhouette_of_two_pairs() {
        let d = abs_distances(&[0.0, 0.1, 10.0, 10.1]);
        let s = silhouette(&d, &[0, 0, 1, 1]).unwrap();
        assert!((s.0[0] - (10.05 - 0.1) / 10.05).abs() < 1e-12);
        assert!((s.0[0] - 0.990_05).abs() < 1e-4);
    }

    #[test]
    fn silhouette_edge_cases() {
        // a = b for the middle point
        let d = abs_distances(&[0.0, 1.0, 2.0]);
        let s = silhouette(&d, &[0, 0, 1]).unwrap();
        assert_eq!(s.0[1], 0.0);
        // singleton cluster
        assert_eq!(s.0[2], 0.0);
        assert!(silhouette(&d, &[0, 0, 0]).is_err());
    }

    #[test]
    fn kmeans_separates_blobs() {
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let base = if i < 5 { 0.0 } else { 5.0 };
                vec![base + 0.01 * i as f64, base - 0.02 * i as f64]
            })
            .collect();
        let u = Matrix::from_rows(&pts);
        for seed in 0..5 {
            let km = kmeans_rows(&u, 2, seed).unwrap();
            let first = km.labels[0];
            assert!(km.labels[..5].iter().all(|&l| l == first));
            assert!(km.labels[5..].iter().all(|&l| l != first));
        }
        let a = kmeans_rows(&u, 2, 3).unwrap();
        let b = kmeans_rows(&u, 2, 3).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn kmeans_with_k_equal_n() {
        let u = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![7.0]]);
        let km = kmeans_rows(&u, 4, 1).unwrap();
        let mut l = km.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert_eq!(km.inertia, 0.0);
    }

    #[test]
    fn kmeans_handles_duplicate_points() {
        let u = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]);
        let km = kmeans_rows(&u, 2, 0).unwrap();
        assert_eq!(km.labels.len(), 3);
    }

    #[test]
    fn spectral_embedding_of_two_blocks() {
        let s = SimilarityMatrix(Matrix::from_fn(6, 6, |i, j| {
            if i == j {
                1.0f64
            } else if (i < 3) == (j < 3) {
                0.8
            } else {
                0.0
            }
        }));
        let emb = spectral_embed(&s, 2).unwrap();
        assert!(emb.values[0].abs() < 1e-8 && emb.values[1].abs() < 1e-8);
        let rows: Vec<Vec<f64>> = (0..6).map(|r| emb.vectors.row(r).to_vec()).collect();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-8);
        assert!(close(&rows[0], &rows[1]) && close(&rows[1], &rows[2]));
        assert!(close(&rows[3], &rows[4]) && close(&rows[4], &rows[5]));
        assert!(!close(&rows[0], &rows[3]));
    }

    #[test]
    fn spectral_embedding_k1_is_constant() {
        let s = SimilarityMatrix(Matrix::from_fn(5, 5, |i, j| (-(i as f64 - j as f64).abs()).exp()));
        let emb = spectral_embed(&s, 1).unwrap();
        assert!(emb.values[0].abs() < 1e-8);
        let v = emb.vectors.column(0);
        assert!(v.iter().all(|&x| (x - v[0]).abs() < 1e-8 && x > 0.0));
        assert!(spectral_embed(&s, 6).is_err());
    }

    #[test]
    fn harmonic_selection_size_and_ties() {
        let scores = vec![0.3; 10];
        let p = select_harmonic(&scores, 0.4).unwrap();
        assert_eq!(p.harmonic, vec![0, 1, 2, 3]);
        assert_eq!(p.inharmonic.len(), 6);
        let scores = [0.1, 0.9, -0.2, 0.5, 0.9];
        let p = select_harmonic(&scores, 0.4).unwrap();
        assert_eq!(p.harmonic, vec![1, 4]);
        assert!(select_harmonic(&scores, 1.0).is_err());
    }
}

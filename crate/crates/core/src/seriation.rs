//! Spectral seriation over graph embeddings and the seriation ranking loss.
//!
//! Cosine similarities between embeddings form `S`; the Laplacian
//! `L = diag(S 1) - S` is eigendecomposed and the order of the entries of its
//! Fiedler vector is the seriation ranking. The ranking loss asks every row
//! of `S` to rank the batch the same way the seriation places items around
//! the row's anchor. Ranks are piecewise constant, so the backward pass uses
//! blackbox combinatorial differentiation: the gradient with respect to a
//! similarity row is `(rk(x + lambda * g) - rk(x)) / lambda`, where `g` is the
//! loss gradient with respect to that row's rank vector.

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{arg, Error, Result};
use crate::linalg::{spectral_norm_symmetric, symmetric_eigen};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Norm offset that keeps zero embeddings finite under cosine similarity.
pub const NORM_EPS: f64 = 1e-12;

/// Symmetric cosine-similarity matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<T>(pub Matrix<T>);

/// `diag(S 1) - S`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianMatrix<T>(pub Matrix<T>);

/// `ranks[i]` is the position of item `i` in the seriation order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeriationRanking(pub Vec<usize>);

impl SeriationRanking {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let n = self.0.len();
        Self(self.0.iter().map(|&r| n - 1 - r).collect())
    }

    /// Equal to `other` or to its reversal.
    pub fn matches_up_to_reversal(&self, other: &Self) -> bool {
        self == other || *self == other.reversed()
    }

    /// Items listed in seriation order.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0; self.0.len()];
        for (item, &pos) in self.0.iter().enumerate() {
            order[pos] = item;
        }
        order
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.0.len()];
        self.0.iter().all(|&r| r < seen.len() && !std::mem::replace(&mut seen[r], true))
    }
}

/// Upper bound on `||dS||_F` under which the seriation ranking is claimed stable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationBudget<T>(pub T);

/// Cosine similarity between rows of `z`. Needs at least two rows.
pub fn similarity_matrix<T: Scalar>(z: &Matrix<T>) -> Result<SimilarityMatrix<T>> {
    if z.rows() < 2 {
        return Err(arg("similarity needs at least 2 embeddings"));
    }
    let eps = T::of(NORM_EPS);
    let mut normed = z.clone();
    for r in 0..normed.rows() {
        let row = normed.row_mut(r);
        let s = row.iter().map(|&v| v * v).sum::<T>().sqrt() + eps;
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    let mut s = normed.matmul_t(&normed);
    let one = T::one();
    for i in 0..s.rows() {
        for j in 0..i {
            let v = s[(i, j)].max(-one).min(one);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
        s[(i, i)] = one;
    }
    Ok(SimilarityMatrix(s))
}

pub fn laplacian<T: Scalar>(s: &SimilarityMatrix<T>) -> LaplacianMatrix<T> {
    let s = &s.0;
    let mut l = s.map(|v| -v);
    for i in 0..s.rows() {
        l[(i, i)] += s.row(i).iter().copied().sum::<T>();
    }
    LaplacianMatrix(l)
}

/// Ranks of `values` under an ascending sort, ties broken by index.
pub fn ascending_ranks<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values").then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (pos, &item) in order.iter().enumerate() {
        ranks[item] = pos;
    }
    ranks
}

/// Ranks under a descending sort (largest value gets rank 0), ties broken by index.
pub fn descending_ranks<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite values").then(a.cmp(&b)));
    let mut ranks = vec![0; values.len()];
    for (pos, &item) in order.iter().enumerate() {
        ranks[item] = pos;
    }
    ranks
}

/// Fiedler value and sign-fixed Fiedler vector (first entry above 1e-10 in
/// magnitude is positive).
pub fn fiedler<T: Scalar>(l: &LaplacianMatrix<T>) -> Result<(T, Vec<T>)> {
    let n = l.0.rows();
    if n < 2 || !l.0.is_square() {
        return Err(arg("Fiedler vector needs a square Laplacian with n >= 2"));
    }
    let eig = symmetric_eigen(&l.0)?;
    if n > 2 {
        let scale = eig.values[n - 1].abs().max(T::one());
        if (eig.values[2] - eig.values[1]).abs() <= T::of(1e-10) * scale {
            log::warn!("Fiedler eigenvalue is degenerate; ranking uses the solver's first eigenvector");
        }
    }
    let mut v = eig.vector(1);
    fix_sign(&mut v);
    Ok((eig.values[1], v))
}

/// Flips `v` so its first entry with magnitude above 1e-10 is positive.
pub fn fix_sign<T: Scalar>(v: &mut [T]) {
    let tol = T::of(1e-10);
    if let Some(&first) = v.iter().find(|x| x.abs() > tol) {
        if first < T::zero() {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
}

/// Seriation ranking from the ascending order of the Fiedler vector.
pub fn fiedler_ranking<T: Scalar>(l: &LaplacianMatrix<T>) -> Result<SeriationRanking> {
    let (_, v) = fiedler(l)?;
    Ok(SeriationRanking(ascending_ranks(&v)))
}

/// `sum_ij S_ij (R_i - R_j)^2`.
pub fn seriation_objective<T: Scalar>(s: &Matrix<T>, ranks: &[usize]) -> T {
    let n = ranks.len();
    let mut total = T::zero();
    for i in 0..n {
        for j in 0..n {
            let d = T::of(ranks[i] as f64 - ranks[j] as f64);
            total += s[(i, j)] * d * d;
        }
    }
    total
}

/// Largest matrix size accepted by [`brute_force_seriation`].
pub const BRUTE_FORCE_MAX: usize = 8;

/// Exhaustive minimizer of the seriation objective; the lexicographically
/// smallest rank vector wins ties.
pub fn brute_force_seriation<T: Scalar>(s: &SimilarityMatrix<T>) -> Result<SeriationRanking> {
    let n = s.0.rows();
    if n > BRUTE_FORCE_MAX {
        return Err(arg(format!(
            "brute-force seriation refuses n = {n} > {BRUTE_FORCE_MAX}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_val = seriation_objective(&s.0, &perm);
    let tol = T::of(1e-12) * (T::one() + best_val.abs());
    while next_permutation(&mut perm) {
        let v = seriation_objective(&s.0, &perm);
        if v < best_val - tol {
            best_val = v;
            best.clone_from(&perm);
        }
    }
    Ok(SeriationRanking(best))
}

/// Lexicographic successor in place; false after the last permutation.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let Some(i) = (0..p.len() - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..p.len()).rev().find(|&j| p[j] > p[i]).expect("successor exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// `(1 - min_i sum_{t != i} |S_it| / (n - 1)) / 2`, clamped at 0.
pub fn perturbation_budget<T: Scalar>(s: &SimilarityMatrix<T>) -> PerturbationBudget<T> {
    let s = &s.0;
    let n = s.rows();
    if n < 2 {
        return PerturbationBudget(T::of(0.5));
    }
    let min_off = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&t| t != i)
                .map(|t| s[(i, t)].abs())
                .sum::<T>()
        })
        .fold(T::infinity(), T::min);
    let b = (T::one() - min_off / T::of_usize(n - 1)) / T::of(2.0);
    PerturbationBudget(b.max(T::zero()))
}

/// Outcome of [`eigen_perturbation_report`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenPerturbationReport<T> {
    /// `max_i |mu_i - lambda_i| - ||B - A||_2`; must not exceed the slack.
    pub weyl_excess: T,
    /// Largest `lambda_2 - n/(n-1) * min_i L_ii` over the Laplacians of
    /// whichever of A, B have nonnegative off-diagonal entries; `None` if neither does.
    pub fiedler_excess: Option<T>,
}

impl<T: Scalar> EigenPerturbationReport<T> {
    pub fn holds(&self, slack: T) -> bool {
        self.weyl_excess <= slack && self.fiedler_excess.is_none_or(|e| e <= slack)
    }
}

/// Checks Weyl's eigenvalue perturbation bound for the pair and the Fiedler
/// value upper bound for the Laplacians built from A and B (taken as
/// similarity matrices; only applied when their off-diagonal entries are nonnegative).
pub fn eigen_perturbation_report<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<EigenPerturbationReport<T>> {
    if a.shape() != b.shape() {
        return Err(arg("matrices differ in shape"));
    }
    let tol = T::of(1e-10) * (T::one() + a.max_abs().max(b.max_abs()));
    if !a.is_symmetric(tol) || !b.is_symmetric(tol) {
        return Err(arg("eigen perturbation check needs symmetric matrices"));
    }
    let ea = symmetric_eigen(a)?;
    let eb = symmetric_eigen(b)?;
    let norm = spectral_norm_symmetric(&b.sub(a))?;
    let max_gap = ea
        .values
        .iter()
        .zip(&eb.values)
        .map(|(&l, &m)| (m - l).abs())
        .fold(T::zero(), T::max);

    let n = a.rows();
    let mut fiedler_excess: Option<T> = None;
    if n >= 2 {
        for m in [a, b] {
            let nonneg = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] >= T::zero()));
            if !nonneg {
                continue;
            }
            let l = laplacian(&SimilarityMatrix(m.clone()));
            let lam = symmetric_eigen(&l.0)?.values[1];
            let min_diag = (0..n).map(|i| l.0[(i, i)]).fold(T::infinity(), T::min);
            let bound = T::of_usize(n) / T::of_usize(n - 1) * min_diag;
            let e = lam - bound;
            fiedler_excess = Some(fiedler_excess.map_or(e, |x| x.max(e)));
        }
    }
    Ok(EigenPerturbationReport {
        weyl_excess: max_gap - norm,
        fiedler_excess,
    })
}

/// Both bounds hold within 1e-8.
pub fn eigen_perturbation_check<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<bool> {
    Ok(eigen_perturbation_report(a, b)?.holds(T::of(1e-8)))
}

/// Ranks scaled to `(rank + 1) / n`; Spearman similarity is invariant to this.
fn normalized_ranks<T: Scalar>(ranks: &[usize]) -> Vec<T> {
    let n = T::of_usize(ranks.len());
    ranks.iter().map(|&r| T::of_usize(r + 1) / n).collect()
}

fn centered<T: Scalar>(v: &[T]) -> Vec<T> {
    let mean = v.iter().copied().sum::<T>() / T::of_usize(v.len());
    v.iter().map(|&x| x - mean).collect()
}

/// Cosine similarity of centered vectors (Spearman correlation for rank vectors).
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> T {
    let ca = centered(a);
    let cb = centered(b);
    let na = ca.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = cb.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    let rho = ca.iter().zip(&cb).map(|(&x, &y)| x * y).sum::<T>() / (na * nb);
    rho.max(-T::one()).min(T::one())
}

/// d spearman(a, b) / d a.
fn spearman_grad<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    let ca = centered(a);
    let cb = centered(b);
    let na = ca.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = cb.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        return vec![T::zero(); a.len()];
    }
    let rho = ca.iter().zip(&cb).map(|(&x, &y)| x * y).sum::<T>() / (na * nb);
    // centering is absorbed: cb sums to zero and ca is orthogonal to the ones vector
    ca.iter()
        .zip(&cb)
        .map(|(&x, &y)| y / (na * nb) - rho * x / (na * na))
        .collect()
}

/// Target rank vectors: for anchor `i`, `rk(-|R - R[i]|)` in descending order,
/// so the anchor and its seriation neighbours rank first.
pub fn proximity_targets(ranking: &SeriationRanking) -> Vec<Vec<usize>> {
    let r = &ranking.0;
    (0..r.len())
        .map(|i| {
            let closeness: Vec<f64> = r.iter().map(|&x| -(x as f64 - r[i] as f64).abs()).collect();
            descending_ranks(&closeness)
        })
        .collect()
}

/// Blackbox-differentiated seriation ranking loss over a similarity matrix.
pub struct SsrLossOp<T> {
    targets: Vec<Vec<T>>,
    lambda: T,
}

impl<T: Scalar> SsrLossOp<T> {
    pub fn new(ranking: &SeriationRanking, lambda: f64) -> Self {
        Self {
            targets: proximity_targets(ranking).iter().map(|t| normalized_ranks(t)).collect(),
            lambda: T::of(lambda),
        }
    }
}

impl<T: Scalar> CustomOp<T> for SsrLossOp<T> {
    fn forward(&self, s: &Matrix<T>) -> Matrix<T> {
        let n = s.rows();
        let total: T = (0..n)
            .map(|i| spearman(&normalized_ranks::<T>(&descending_ranks(s.row(i))), &self.targets[i]))
            .sum();
        Matrix::filled(1, 1, -total / T::of_usize(n))
    }

    fn backward(&self, s: &Matrix<T>, _output: &Matrix<T>, grad_output: &Matrix<T>) -> Matrix<T> {
        let n = s.rows();
        let upstream = grad_output[(0, 0)];
        let mut grad = Matrix::zeros(n, s.cols());
        for i in 0..n {
            let row = s.row(i);
            let ranks = normalized_ranks::<T>(&descending_ranks(row));
            let coef = -upstream / T::of_usize(n);
            let d_rank: Vec<T> = spearman_grad(&ranks, &self.targets[i])
                .into_iter()
                .map(|g| g * coef)
                .collect();
            let perturbed: Vec<T> = row
                .iter()
                .zip(&d_rank)
                .map(|(&x, &g)| x + self.lambda * g)
                .collect();
            let ranks_p = normalized_ranks::<T>(&descending_ranks(&perturbed));
            for (k, (rp, r)) in ranks_p.iter().zip(&ranks).enumerate() {
                grad[(i, k)] = (*rp - *r) / self.lambda;
            }
        }
        grad
    }
}

/// Records the seriation ranking loss for the similarity variable `s`.
/// The ranking itself is computed from the current value of `s` and held fixed.
pub fn ssr_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, s: Var, lambda: f64) -> Result<(Var, SeriationRanking)> {
    let sv = tape.value(s);
    if sv.rows() < 2 {
        return Err(arg("seriation loss needs a batch of at least 2 graphs"));
    }
    let sim = SimilarityMatrix(sv.clone());
    let ranking = fiedler_ranking(&laplacian(&sim))?;
    let op = SsrLossOp::new(&ranking, lambda);
    Ok((tape.custom(s, Box::new(op)), ranking))
}

/// Cosine similarity of the rows of `z` on the tape.
pub fn similarity_on_tape<T: Scalar>(tape: &mut Tape<T>, z: Var) -> Var {
    let n = tape.row_normalize(z, T::of(NORM_EPS));
    tape.matmul_t(n, n)
}

/// Loss value for a similarity matrix and a seriation ranking of the same batch.
pub fn ssr_loss_value<T: Scalar>(s: &SimilarityMatrix<T>, ranking: &SeriationRanking) -> Result<T> {
    if s.0.rows() < 2 {
        return Err(arg("seriation loss needs a batch of at least 2 graphs"));
    }
    if ranking.len() != s.0.rows() {
        return Err(arg("ranking and similarity matrix cover different batches"));
    }
    Ok(SsrLossOp::new(ranking, 1.0).forward(&s.0)[(0, 0)])
}

/// Loss and its blackbox gradient with respect to the embeddings.
#[derive(Clone, Debug)]
pub struct SsrOutput<T> {
    pub loss: T,
    pub ranking: SeriationRanking,
    pub grad_embeddings: Matrix<T>,
}

/// Similarity, seriation and ranking loss for a batch of embeddings, with the
/// blackbox gradient pushed back to the embeddings.
pub fn ssr_loss<T: Scalar>(z: &Matrix<T>, lambda: f64) -> Result<SsrOutput<T>> {
    if z.rows() < 2 {
        return Err(arg("seriation loss needs a batch of at least 2 graphs"));
    }
    if lambda <= 0.0 {
        return Err(Error::Argument("interpolation strength must be positive".into()));
    }
    let mut tape = Tape::new();
    let zv = tape.param(z.clone());
    let s = similarity_on_tape(&mut tape, zv);
    let (loss, ranking) = ssr_loss_on_tape(&mut tape, s, lambda)?;
    let grads = tape.backward(loss);
    Ok(SsrOutput {
        loss: tape.scalar(loss),
        ranking,
        grad_embeddings: grads.get_or_zeros(zv, z.rows(), z.cols()),
    })
}

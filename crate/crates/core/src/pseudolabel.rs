//! Confidence-filtered pseudo-labels on the harmonic graphs.

use crate::autodiff::{Tape, Var};
use crate::encoder::{argmax, LabelDistribution};
use crate::error::{arg, Result};
use crate::scalar::Scalar;

/// Confident members of the harmonic set with their pseudo-labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidentSet<T> {
    /// Positions into the filtered prediction rows.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub confidences: Vec<T>,
}

impl<T> ConfidentSet<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Which count the pseudo-label loss is averaged over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoLabelNorm {
    /// Number of confident graphs.
    Confident,
    /// Number of harmonic graphs considered.
    Harmonic,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(arg(format!("confidence threshold must lie in (0, 1), got {tau}")))
    }
}

/// Rows whose top probability reaches `tau`, labelled with their argmax.
pub fn confident_filter<T: Scalar>(preds: &LabelDistribution<T>, tau: f64) -> Result<ConfidentSet<T>> {
    check_tau(tau)?;
    let t = T::of(tau);
    let mut out = ConfidentSet {
        indices: Vec::new(),
        labels: Vec::new(),
        confidences: Vec::new(),
    };
    for r in 0..preds.0.rows() {
        let row = preds.0.row(r);
        let y = argmax(row);
        if row[y] >= t {
            out.indices.push(r);
            out.labels.push(y);
            out.confidences.push(row[y]);
        }
    }
    Ok(out)
}

/// Every row labelled with its argmax, no filtering.
pub fn unfiltered<T: Scalar>(preds: &LabelDistribution<T>) -> ConfidentSet<T> {
    let labels = preds.argmax();
    ConfidentSet {
        indices: (0..preds.0.rows()).collect(),
        confidences: labels.iter().enumerate().map(|(r, &y)| preds.0[(r, y)]).collect(),
        labels,
    }
}

fn denominator<T>(set: &ConfidentSet<T>, harmonic_count: usize, norm: PseudoLabelNorm) -> usize {
    match norm {
        PseudoLabelNorm::Confident => set.len(),
        PseudoLabelNorm::Harmonic => harmonic_count.max(set.len()),
    }
}

/// `-(1/N) sum_j log p_j[y_j]` over the confident rows; zero when none are confident.
pub fn pseudo_label_loss<T: Scalar>(
    set: &ConfidentSet<T>,
    preds: &LabelDistribution<T>,
    norm: PseudoLabelNorm,
) -> Result<T> {
    if set.is_empty() {
        return Ok(T::zero());
    }
    if set.indices.iter().any(|&i| i >= preds.0.rows()) {
        return Err(arg("confident index outside the prediction rows"));
    }
    let total: T = set
        .indices
        .iter()
        .zip(&set.labels)
        .map(|(&i, &y)| -preds.0[(i, y)].ln())
        .sum();
    Ok(total / T::of_usize(denominator(set, preds.0.rows(), norm)))
}

/// Loss on the tape from class logits of the same rows `preds` was computed on.
/// Returns `None` for an empty confident set.
pub fn pseudo_label_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    set: &ConfidentSet<T>,
    norm: PseudoLabelNorm,
) -> Option<Var> {
    if set.is_empty() {
        return None;
    }
    let rows = tape.value(logits).rows();
    let picked = tape.gather_rows(logits, &set.indices);
    let lp = tape.log_softmax(picked);
    let ll = tape.pick_per_row(lp, &set.labels);
    let s = tape.sum(ll);
    let n = denominator(set, rows, norm);
    Some(tape.scale(s, -T::one() / T::of_usize(n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    fn dist(rows: &[[f64; 2]]) -> LabelDistribution<f64> {
        LabelDistribution(Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()))
    }

    #[test]
    fn filter_examples() {
        let p = dist(&[[0.96, 0.04], [0.5, 0.5], [0.02, 0.98]]);
        let c = confident_filter(&p, 0.95).unwrap();
        assert_eq!(c.indices, vec![0, 2]);
        assert_eq!(c.labels, vec![0, 1]);
        assert!(confident_filter(&p, 1.0).is_err());
        assert!(confident_filter(&p, 0.0).is_err());
    }

    #[test]
    fn loss_examples() {
        let one = dist(&[[1.0, 0.0]]);
        let c = confident_filter(&one, 0.95).unwrap();
        assert_eq!(pseudo_label_loss(&c, &one, PseudoLabelNorm::Confident).unwrap(), 0.0);
        let half = dist(&[[0.5, 0.5]]);
        let c = confident_filter(&half, 0.4).unwrap();
        let l = pseudo_label_loss(&c, &half, PseudoLabelNorm::Confident).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let empty = confident_filter(&half, 0.95).unwrap();
        assert_eq!(pseudo_label_loss(&empty, &half, PseudoLabelNorm::Confident).unwrap(), 0.0);
    }

    #[test]
    fn harmonic_normalization_divides_by_all_rows() {
        let p = dist(&[[0.99, 0.01], [0.6, 0.4], [0.55, 0.45], [0.5, 0.5]]);
        let c = confident_filter(&p, 0.95).unwrap();
        let a = pseudo_label_loss(&c, &p, PseudoLabelNorm::Confident).unwrap();
        let b = pseudo_label_loss(&c, &p, PseudoLabelNorm::Harmonic).unwrap();
        assert!((a - 4.0 * b).abs() < 1e-15);
    }

    #[test]
    fn tape_loss_matches_value() {
        let logits = Matrix::from_rows(&[vec![4.0f64, -1.0], vec![0.1, 0.0], vec![-3.0, 2.5]]);
        let p = LabelDistribution(crate::autodiff::softmax_rows(&logits));
        let c = confident_filter(&p, 0.9).unwrap();
        assert_eq!(c.len(), 2);
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let v = pseudo_label_loss_on_tape(&mut tape, l, &c, PseudoLabelNorm::Confident).unwrap();
        let expect = pseudo_label_loss(&c, &p, PseudoLabelNorm::Confident).unwrap();
        assert!((tape.scalar(v) - expect).abs() < 1e-12);
    }

    fn simplex_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.001f64..1.0, 3), 1..30).prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn raising_tau_never_grows_the_set(rows in simplex_rows(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let p = LabelDistribution(Matrix::from_rows(&rows));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let small = confident_filter(&p, hi).unwrap();
            let large = confident_filter(&p, lo).unwrap();
            prop_assert!(small.indices.iter().all(|i| large.indices.contains(i)));
        }

        #[test]
        fn loss_is_nonnegative(rows in simplex_rows(), tau in 0.3f64..0.99) {
            let p = LabelDistribution(Matrix::from_rows(&rows));
            let c = confident_filter(&p, tau).unwrap();
            prop_assert!(c.confidences.iter().all(|&x| x >= tau));
            prop_assert!(pseudo_label_loss(&c, &p, PseudoLabelNorm::Confident).unwrap() >= 0.0);
        }

        #[test]
        fn filtering_commutes_with_row_order(rows in simplex_rows(), tau in 0.3f64..0.99, seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let a = confident_filter(&LabelDistribution(Matrix::from_rows(&rows)), tau).unwrap();
            let b = confident_filter(&LabelDistribution(Matrix::from_rows(&shuffled)), tau).unwrap();
            let mut mapped: Vec<(usize, usize)> = b.indices.iter().zip(&b.labels).map(|(&i, &y)| (perm[i], y)).collect();
            mapped.sort_unstable();
            let orig: Vec<(usize, usize)> = a.indices.iter().copied().zip(a.labels.iter().copied()).collect();
            prop_assert_eq!(mapped, orig);
        }
    }
}

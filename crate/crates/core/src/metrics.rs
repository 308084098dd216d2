//! Evaluation metrics for clusterings, networks and parameter estimates.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::ClusterAssignment;

fn n_choose_2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index. Returns 1 when both partitions are identical even
/// in degenerate cases where the chance correction is undefined.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("label vectors of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Shape("empty label vectors".into()));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| n_choose_2(c)).sum();
    let rows: f64 = table.iter().map(|r| n_choose_2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|y| n_choose_2(table.iter().map(|r| r[y]).sum())).sum();
    let expected = rows * cols / n_choose_2(a.len());
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Upper-triangle off-diagonal entries.
fn upper<T: Copy>(m: &DMatrix<T>) -> Vec<T> {
    let q = m.nrows();
    let mut out = Vec::with_capacity(q * q.saturating_sub(1) / 2);
    for a in 0..q {
        for b in (a + 1)..q {
            out.push(m[(a, b)]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)`, sorted, with both anchors.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve of a sequence of estimated supports against the truth, over
/// the off-diagonal upper triangle. AUC by the trapezoid rule.
pub fn roc_auc(truth: &DMatrix<bool>, path: &[DMatrix<bool>]) -> Result<RocCurve> {
    if path.is_empty() {
        return Err(Error::InvalidParameter("empty support path".into()));
    }
    if !truth.is_square() || path.iter().any(|s| s.shape() != truth.shape()) {
        return Err(Error::Shape("supports must be square and of equal size".into()));
    }
    let t = upper(truth);
    let positives = t.iter().filter(|&&b| b).count();
    let negatives = t.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc(format!(
            "true support has {positives} edges and {negatives} non-edges"
        )));
    }
    let mut points = vec![(0.0, 0.0), (1.0, 1.0)];
    for s in path {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&est, &tru) in upper(s).iter().zip(&t) {
            match (est, tru) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                _ => {}
            }
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points.dedup();
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    Ok(RocCurve { points, auc })
}

/// Supports obtained by thresholding `|scores|` at each distinct value,
/// from the largest down.
pub fn threshold_path(scores: &DMatrix<f64>) -> Vec<DMatrix<bool>> {
    let mut cuts: Vec<f64> = upper(&scores.abs()).into_iter().filter(|&v| v > 0.0).collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    cuts.iter()
        .map(|&c| scores.map(|v| v.abs() >= c))
        .chain(std::iter::once(scores.map(|_| false)))
        .map(|mut s| {
            s.fill_diagonal(false);
            s
        })
        .collect()
}

/// Root mean squared difference.
pub fn rmse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() || truth.is_empty() {
        return Err(Error::Shape(format!("{:?} vs {:?}", estimate.shape(), truth.shape())));
    }
    Ok(((estimate - truth).norm_squared() / truth.len() as f64).sqrt())
}

/// F1 score of a selected edge set over the off-diagonal upper triangle;
/// 0 when there are no true positives.
pub fn f1(selected: &DMatrix<bool>, truth: &DMatrix<bool>) -> Result<f64> {
    if selected.shape() != truth.shape() || !truth.is_square() {
        return Err(Error::Shape("supports must be square and of equal size".into()));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &t) in upper(selected).iter().zip(&upper(truth)) {
        match (s, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Move exactly `round(rate * p)` variables, chosen uniformly, to a
/// uniformly chosen different cluster.
pub fn corrupt_clustering(assignment: &ClusterAssignment, rate: f64, rng: &mut Rng) -> Result<ClusterAssignment> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!("error rate must lie in [0, 1], got {rate}")));
    }
    let (p, q) = (assignment.p(), assignment.q());
    let count = (rate * p as f64).round() as usize;
    if count > 0 && q < 2 {
        return Err(Error::InvalidParameter("cannot relabel with a single cluster".into()));
    }
    let mut labels = assignment.labels().to_vec();
    for j in sample(rng, p, count) {
        let shift = rng.random_range(1..q);
        labels[j] = (labels[j] + shift) % q;
    }
    ClusterAssignment::new(labels, q)
}

/// Cluster correspondence from `estimate` to `truth`: `perm[k]` is the true
/// label matched to estimated label `k`, chosen greedily from the largest
/// contingency counts.
pub fn align_clusters(estimate: &ClusterAssignment, truth: &ClusterAssignment) -> Result<Vec<usize>> {
    if estimate.p() != truth.p() || estimate.q() != truth.q() {
        return Err(Error::Shape("clusterings must share p and q".into()));
    }
    let q = truth.q();
    let mut table = vec![vec![0usize; q]; q];
    for (&e, &t) in estimate.labels().iter().zip(truth.labels()) {
        table[e][t] += 1;
    }
    let mut cells: Vec<(usize, usize, usize)> =
        (0..q).flat_map(|e| (0..q).map(move |t| (e, t, 0))).map(|(e, t, _)| (e, t, table[e][t])).collect();
    cells.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut perm = vec![usize::MAX; q];
    let mut used = vec![false; q];
    for (e, t, _) in cells {
        if perm[e] == usize::MAX && !used[t] {
            perm[e] = t;
            used[t] = true;
        }
    }
    Ok(perm)
}

/// Reorder a cluster-level matrix with `perm` from [`align_clusters`].
pub fn permute_square<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>, perm: &[usize]) -> DMatrix<T> {
    let q = m.nrows();
    let mut inv = vec![0; q];
    for (k, &pk) in perm.iter().enumerate() {
        inv[pk] = k;
    }
    DMatrix::from_fn(q, q, |a, b| m[(inv[a], inv[b])])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    /// Oracle: Rand-index pair counting followed by the Hubert-Arabie correction.
    fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut total) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                total += 1.0;
                if sa && sb {
                    both += 1.0;
                }
                if sa {
                    only_a += 1.0;
                }
                if sb {
                    only_b += 1.0;
                }
            }
        }
        let expected = only_a * only_b / total;
        (both - expected) / (0.5 * (only_a + only_b) - expected)
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let v = ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((v - ari_pairs(&[0, 0, 1, 1], &[0, 1, 0, 1])).abs() < 1e-15);
        assert!((v + 0.5).abs() < 1e-15);
        assert!(ari(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn roc_examples() {
        let truth = DMatrix::from_fn(4, 4, |a, b| a != b && (a + b) % 2 == 1);
        let single = roc_auc(&truth, std::slice::from_ref(&truth)).unwrap();
        assert_eq!(single.points, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(single.auc, 1.0);
        let empty = DMatrix::from_element(4, 4, false);
        assert!(matches!(roc_auc(&empty, std::slice::from_ref(&empty)), Err(Error::UndefinedAuc(_))));
        let oracle = threshold_path(&truth.map(|b| if b { 1.0 } else { 0.0 }));
        assert_eq!(roc_auc(&truth, &oracle).unwrap().auc, 1.0);
    }

    #[test]
    fn random_scores_average_half() {
        let mut g = rng::seeded(5);
        let truth = DMatrix::from_fn(12, 12, |a, b| a != b && (a * b) % 3 == 1);
        let truth = DMatrix::from_fn(12, 12, |a, b| truth[(a, b)] || truth[(b, a)]);
        let mut total = 0.0;
        let reps = 300;
        for _ in 0..reps {
            let s = rng::standard_normal_matrix(&mut g, 12, 12);
            let s = &s + s.transpose();
            total += roc_auc(&truth, &threshold_path(&s)).unwrap().auc;
        }
        assert!((total / reps as f64 - 0.5).abs() < 0.03);
    }

    #[test]
    fn rmse_and_f1_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rmse(&m, &m).unwrap(), 0.0);
        assert!(rmse(&m, &DMatrix::zeros(1, 2)).is_err());
        let truth = DMatrix::from_fn(4, 4, |a, b| a != b && a.min(b) == 0);
        assert_eq!(f1(&truth, &truth).unwrap(), 1.0);
        assert_eq!(f1(&DMatrix::from_element(4, 4, false), &truth).unwrap(), 0.0);
        // two true positives, one false positive, one false negative
        let mut sel = DMatrix::from_element(4, 4, false);
        for &(a, b) in &[(0, 1), (0, 2), (1, 2)] {
            sel[(a, b)] = true;
            sel[(b, a)] = true;
        }
        assert!((f1(&sel, &truth).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn corruption_counts() {
        let mut g = rng::seeded(8);
        let c = ClusterAssignment::new((0..100).map(|j| j % 4).collect(), 4).unwrap();
        assert_eq!(corrupt_clustering(&c, 0.0, &mut g).unwrap(), c);
        let bad = corrupt_clustering(&c, 0.1, &mut g).unwrap();
        let diff = c.labels().iter().zip(bad.labels()).filter(|(a, b)| a != b).count();
        assert_eq!(diff, 10);
        let two = ClusterAssignment::new(vec![0, 1, 1, 0], 2).unwrap();
        let flipped = corrupt_clustering(&two, 1.0, &mut g).unwrap();
        assert_eq!(flipped.labels(), &[1, 0, 0, 1]);
    }

    #[test]
    fn alignment_inverts_a_permutation() {
        let truth = ClusterAssignment::new(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let est = truth.permuted(&[2, 0, 1]).unwrap();
        let perm = align_clusters(&est, &truth).unwrap();
        assert_eq!(perm, vec![1, 2, 0]);
    }

    proptest! {
        #[test]
        fn ari_symmetric_and_permutation_invariant(
            a in proptest::collection::vec(0usize..3, 8),
            b in proptest::collection::vec(0usize..4, 8),
        ) {
            let ab = ari(&a, &b).unwrap();
            prop_assert!((ab - ari(&b, &a).unwrap()).abs() < 1e-12);
            let relabel: Vec<usize> = a.iter().map(|&l| (l + 1) % 3).collect();
            prop_assert!((ab - ari(&relabel, &b).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= 1.0 + 1e-12);
        }
    }
}

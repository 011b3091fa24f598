//! Agreement and correlation statistics used to validate the metric against
//! human judgment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::StatsError;

/// Result of a per-item vote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vote<T> {
    Winner(T),
    Tie,
}

impl<T> Vote<T> {
    pub fn winner(self) -> Option<T> {
        match self {
            Vote::Winner(t) => Some(t),
            Vote::Tie => None,
        }
    }
}

/// Modal label per item. A tie for the top count yields [`Vote::Tie`].
pub fn majority_vote<T: Ord + Clone>(labels_per_item: &[Vec<T>]) -> Result<Vec<Vote<T>>, StatsError> {
    labels_per_item
        .iter()
        .enumerate()
        .map(|(i, labels)| {
            if labels.is_empty() {
                return Err(StatsError::Domain(format!("item {i} has no labels")));
            }
            let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
            for l in labels {
                *counts.entry(l).or_default() += 1;
            }
            let top = *counts.values().max().expect("non-empty");
            let mut leaders = counts.iter().filter(|(_, c)| **c == top);
            let (first, _) = leaders.next().expect("non-empty");
            Ok(if leaders.next().is_some() {
                Vote::Tie
            } else {
                Vote::Winner((*first).clone())
            })
        })
        .collect()
}

/// Exact-match fraction between predictions and gold labels.
pub fn component_accuracy<T: PartialEq>(predictions: &[T], gold: &[T]) -> Result<f64, StatsError> {
    if predictions.len() != gold.len() {
        return Err(StatsError::LengthMismatch {
            left: predictions.len(),
            right: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
    /// Tie-corrected Kendall τ-b.
    Kendall,
}

impl CorrelationMethod {
    pub const ALL: [CorrelationMethod; 3] = [
        CorrelationMethod::Pearson,
        CorrelationMethod::Spearman,
        CorrelationMethod::Kendall,
    ];
}

pub fn correlate(x: &[f64], y: &[f64], method: CorrelationMethod) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::Domain("non-finite observation".into()));
    }
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => pearson(&average_ranks(x), &average_ranks(y)),
        CorrelationMethod::Kendall => kendall_tau_b(x, y),
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Undefined("constant input vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Number of tied pairs within runs of equal keys in an already sorted sequence.
fn tied_pairs<K: PartialEq>(sorted: impl Iterator<Item = K>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<K> = None;
    for k in sorted {
        if prev.as_ref() == Some(&k) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(k);
    }
    total + run * (run + 1) / 2
}

/// Sorts `v` by `y` with a merge sort, returning the number of inversions
/// (strictly decreasing pairs).
fn merge_count(v: &mut [(f64, f64)], buf: &mut Vec<(f64, f64)>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j].1 < v[i].1 {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall τ-b in O(n log n) (Knight's algorithm).
fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = n * (n - 1) / 2;
    let tie_x = tied_pairs(pairs.iter().map(|p| p.0));
    let tie_xy = tied_pairs(pairs.iter().copied());

    let mut buf = Vec::with_capacity(pairs.len());
    let discordant = merge_count(&mut pairs, &mut buf);
    let tie_y = tied_pairs(pairs.iter().map(|p| p.1));

    let denom_x = n0 - tie_x;
    let denom_y = n0 - tie_y;
    if denom_x == 0 || denom_y == 0 {
        return Err(StatsError::Undefined(
            "every pair is tied in one of the vectors".into(),
        ));
    }
    // concordant - discordant = n0 - tie_x - tie_y + tie_xy - 2 * discordant
    let numer = n0 as f64 - tie_x as f64 - tie_y as f64 + tie_xy as f64 - 2.0 * discordant as f64;
    let tau = numer / ((denom_x as f64).sqrt() * (denom_y as f64).sqrt());
    Ok(tau.clamp(-1.0, 1.0))
}

/// Items × categories count matrix; each row sums to the number of raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsMatrix {
    rows: Vec<Vec<u32>>,
    raters: u32,
}

impl RatingsMatrix {
    pub fn new(rows: Vec<Vec<u32>>) -> Result<RatingsMatrix, StatsError> {
        let first = rows
            .first()
            .ok_or_else(|| StatsError::Domain("ratings matrix has no items".into()))?;
        let width = first.len();
        let raters: u32 = first.iter().sum();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(StatsError::Domain(format!(
                    "item {i} has {} categories, expected {width}",
                    row.len()
                )));
            }
            let sum: u32 = row.iter().sum();
            if sum != raters {
                return Err(StatsError::Domain(format!(
                    "item {i} has {sum} ratings, expected {raters}"
                )));
            }
        }
        Ok(RatingsMatrix { rows, raters })
    }

    /// Builds the count matrix from per-item label lists.
    pub fn from_labels<T: Ord + Clone>(items: &[Vec<T>]) -> Result<RatingsMatrix, StatsError> {
        let mut categories: Vec<T> = items.iter().flatten().cloned().collect();
        categories.sort();
        categories.dedup();
        let rows = items
            .iter()
            .map(|labels| {
                let mut row = vec![0u32; categories.len()];
                for l in labels {
                    let j = categories.binary_search(l).expect("collected above");
                    row[j] += 1;
                }
                row
            })
            .collect();
        RatingsMatrix::new(rows)
    }

    pub fn items(&self) -> usize {
        self.rows.len()
    }

    pub fn raters(&self) -> u32 {
        self.raters
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }
}

/// Fleiss' κ = (P̄ − P̄e) / (1 − P̄e).
pub fn fleiss_kappa(matrix: &RatingsMatrix) -> Result<f64, StatsError> {
    let items = matrix.items();
    let raters = matrix.raters() as f64;
    if items < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: items,
        });
    }
    if matrix.raters() < 2 {
        return Err(StatsError::Domain("Fleiss' kappa needs at least two raters".into()));
    }
    let width = matrix.rows[0].len();
    let mut totals = vec![0u64; width];
    let mut p_bar = 0.0;
    for row in &matrix.rows {
        let sq: u64 = row.iter().map(|&c| u64::from(c) * u64::from(c)).sum();
        p_bar += (sq as f64 - raters) / (raters * (raters - 1.0));
        for (t, &c) in totals.iter_mut().zip(row) {
            *t += u64::from(c);
        }
    }
    p_bar /= items as f64;
    let all = items as f64 * raters;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / all).powi(2)).sum();
    if (1.0 - p_e).abs() == 0.0 || totals.iter().filter(|&&t| t > 0).count() < 2 {
        return Err(StatsError::UndefinedKappa(
            "all ratings fall in a single category".into(),
        ));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_examples() {
        let v = majority_vote(&[vec!['D', 'D', 'A'], vec!['D', 'A']]).unwrap();
        assert_eq!(v, vec![Vote::Winner('D'), Vote::Tie]);
        let v = majority_vote(&[vec!["yes", "no", "no"]]).unwrap();
        assert_eq!(v, vec![Vote::Winner("no")]);
        assert!(majority_vote::<char>(&[vec![]]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let gold: Vec<u8> = (0..10).collect();
        let mut pred = gold.clone();
        pred[3] = 99;
        assert_eq!(component_accuracy(&pred, &gold), Ok(0.9));
        assert_eq!(component_accuracy(&gold, &gold), Ok(1.0));
        assert!(matches!(
            component_accuracy(&gold[..3], &gold),
            Err(StatsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn correlation_identities() {
        let x = [1.0, 2.0, 3.5, 4.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        for m in CorrelationMethod::ALL {
            assert!((correlate(&x, &x, m).unwrap() - 1.0).abs() < 1e-15, "{m:?}");
            assert!((correlate(&x, &neg, m).unwrap() + 1.0).abs() < 1e-15, "{m:?}");
        }
    }

    #[test]
    fn kendall_hand_case() {
        let tau = correlate(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0], CorrelationMethod::Kendall).unwrap();
        assert!((tau - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kendall_with_ties() {
        // 4 concordant, 0 discordant, one pair tied in x only, one in y only
        let x = [1.0, 1.0, 2.0, 3.0];
        let y = [1.0, 2.0, 2.0, 3.0];
        let tau = correlate(&x, &y, CorrelationMethod::Kendall).unwrap();
        assert!((tau - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        let c = [2.0, 2.0, 2.0];
        let x = [1.0, 2.0, 3.0];
        for m in CorrelationMethod::ALL {
            assert!(matches!(correlate(&c, &x, m), Err(StatsError::Undefined(_))), "{m:?}");
        }
        assert!(matches!(
            correlate(&[1.0], &[1.0], CorrelationMethod::Pearson),
            Err(StatsError::TooFew { .. })
        ));
        assert!(matches!(
            correlate(&[1.0, 2.0], &[1.0], CorrelationMethod::Pearson),
            Err(StatsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn fleiss_examples() {
        let m = RatingsMatrix::new(vec![vec![3, 0], vec![0, 3]]).unwrap();
        assert_eq!(fleiss_kappa(&m), Ok(1.0));
        let m = RatingsMatrix::new(vec![vec![2, 1], vec![1, 2]]).unwrap();
        assert!((fleiss_kappa(&m).unwrap() + 1.0 / 3.0).abs() < 1e-12);
        let m = RatingsMatrix::new(vec![vec![3, 0], vec![3, 0]]).unwrap();
        assert!(matches!(fleiss_kappa(&m), Err(StatsError::UndefinedKappa(_))));
        assert!(RatingsMatrix::new(vec![vec![3, 0], vec![1, 1]]).is_err());
    }

    #[test]
    fn matrix_from_labels() {
        let m = RatingsMatrix::from_labels(&[vec![1, 1, 2], vec![2, 2, 2]]).unwrap();
        assert_eq!(m.rows(), &[vec![2, 1], vec![0, 3]]);
    }
}

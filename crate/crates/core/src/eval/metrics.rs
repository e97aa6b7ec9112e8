use std::cmp::Ordering;
use std::collections::HashSet;

use num_traits::Num;

use crate::error::EvalError;

fn check_lengths(predicted: &[f64], actual: &[f64]) -> Result<(), EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch(predicted.len(), actual.len()));
    }
    if predicted.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(predicted: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    check_lengths(predicted, actual)?;
    let sum: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(sum / predicted.len() as f64)
}

/// Root mean squared error.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    check_lengths(predicted, actual)?;
    let sum: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sum / predicted.len() as f64).sqrt())
}

/// Candidate items of one user, best first. Ties break toward the smaller index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
}

impl RankedList {
    /// Ranks every item not in `exclude` by descending score.
    pub fn from_scores(user: usize, scores: &[f64], exclude: &HashSet<usize>) -> Self {
        let mut items: Vec<usize> = (0..scores.len()).filter(|i| !exclude.contains(i)).collect();
        items.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
            Ordering::Equal => a.cmp(&b),
            other => other,
        });
        Self { user, items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn hits_at(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> usize {
    ranked.iter().take(k).filter(|i| relevant.contains(i)).count()
}

fn count<T: From<i32>>(n: usize) -> T {
    T::from(i32::try_from(n).expect("count fits in i32"))
}

fn check_k(relevant: &HashSet<usize>, k: usize) -> Result<bool, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    Ok(!relevant.is_empty())
}

/// `(hits / k, hits / |relevant|)`; `None` when nothing is relevant.
pub fn precision_recall_at_k<T>(
    ranked: &[usize],
    relevant: &HashSet<usize>,
    k: usize,
) -> Result<Option<(T, T)>, EvalError>
where
    T: Num + Copy + From<i32>,
{
    if !check_k(relevant, k)? {
        return Ok(None);
    }
    let hits: T = count(hits_at(ranked, relevant, k));
    Ok(Some((hits / count(k), hits / count(relevant.len()))))
}

/// Hit-position form: `(1 / min(|relevant|, k)) * Σ_{hit at rank r <= k} P@r`.
pub fn average_precision<T>(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<Option<T>, EvalError>
where
    T: Num + Copy + From<i32>,
{
    if !check_k(relevant, k)? {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = T::zero();
    for (r, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum = sum + count::<T>(hits) / count(r + 1);
        }
    }
    Ok(Some(sum / count(relevant.len().min(k))))
}

/// Threshold form over `n = k` cutoffs, indexed from the strictest:
/// `AP = Σ_{t=0}^{n-1} [R(t) - R(t+1)] * P(t)` with `R(n) = 0`, `P(n) = 1`.
///
/// Threshold `t` keeps the top `k - t` items; recall is normalized by
/// `min(|relevant|, k)` so both forms agree.
pub fn average_precision_thresholds<T>(
    ranked: &[usize],
    relevant: &HashSet<usize>,
    k: usize,
) -> Result<Option<T>, EvalError>
where
    T: Num + Copy + From<i32>,
{
    if !check_k(relevant, k)? {
        return Ok(None);
    }
    let denom: T = count(relevant.len().min(k));
    let recall = |t: usize| -> T {
        if t == k {
            T::zero()
        } else {
            count::<T>(hits_at(ranked, relevant, k - t)) / denom
        }
    };
    let precision = |t: usize| -> T {
        if t == k {
            T::one()
        } else {
            count::<T>(hits_at(ranked, relevant, k - t)) / count(k - t)
        }
    };
    let mut ap = T::zero();
    for t in 0..k {
        ap = ap + (recall(t) - recall(t + 1)) * precision(t);
    }
    Ok(Some(ap))
}

/// Binary-gain NDCG with `1 / log2(r + 1)` discounts.
pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<Option<f64>, EvalError> {
    if !check_k(relevant, k)? {
        return Ok(None);
    }
    let discount = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(r, _)| discount(r + 1))
        .sum();
    let idcg: f64 = (1..=relevant.len().min(k)).map(discount).sum();
    Ok(Some(dcg / idcg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use num_rational::Rational32;

    fn set(items: &[usize]) -> HashSet<usize> {
        items.iter().copied().collect()
    }

    #[test]
    fn error_metrics() {
        assert_eq!(mae(&[1., 2.], &[1., 2.]).unwrap(), 0.0);
        assert_eq!(rmse(&[1., 2.], &[1., 2.]).unwrap(), 0.0);
        assert_abs_diff_eq!(mae(&[1., 2.], &[2., 4.]).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rmse(&[1., 2.], &[2., 4.]).unwrap(), 2.5f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(mae(&[], &[]), Err(EvalError::EmptyInput)));
        assert!(matches!(rmse(&[1.], &[]), Err(EvalError::LengthMismatch(1, 0))));
    }

    #[test]
    fn precision_recall_cases() {
        let (p, _) = precision_recall_at_k::<f64>(&[1, 2, 3], &set(&[1, 2, 3, 9]), 3).unwrap().unwrap();
        assert_eq!(p, 1.0);
        let pr = precision_recall_at_k::<Rational32>(&[0, 5, 1, 6, 7], &set(&[0, 1, 2, 3]), 5).unwrap();
        assert_eq!(pr, Some((Rational32::new(2, 5), Rational32::new(1, 2))));
        assert_eq!(precision_recall_at_k::<f64>(&[0], &set(&[]), 1).unwrap(), None);
        assert!(matches!(precision_recall_at_k::<f64>(&[0], &set(&[0]), 0), Err(EvalError::InvalidK)));
    }

    #[test]
    fn average_precision_cases() {
        assert_eq!(average_precision::<f64>(&[4, 2, 7], &set(&[2, 4]), 3).unwrap(), Some(1.0));
        let ap = average_precision::<Rational32>(&[0, 5, 1], &set(&[0, 1]), 3).unwrap().unwrap();
        assert_eq!(ap, Rational32::new(5, 6));
        assert_eq!(average_precision::<f64>(&[5, 6], &set(&[0]), 2).unwrap(), Some(0.0));
        let thresholds = average_precision_thresholds::<Rational32>(&[0, 5, 1], &set(&[0, 1]), 3).unwrap();
        assert_eq!(thresholds, Some(Rational32::new(5, 6)));
    }

    #[test]
    fn ndcg_cases() {
        assert_eq!(ndcg_at_k(&[3, 1, 0], &set(&[3, 1]), 3).unwrap(), Some(1.0));
        let v = ndcg_at_k(&[0, 1], &set(&[1]), 2).unwrap().unwrap();
        assert_abs_diff_eq!(v, 1.0 / 3f64.log2(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.6309, epsilon = 1e-4);
    }

    #[test]
    fn ranking_masks_and_breaks_ties_by_index() {
        let ranked = RankedList::from_scores(0, &[0.5, 0.9, 0.5, 0.1, 0.9], &set(&[4]));
        assert_eq!(ranked.items, vec![1, 0, 2, 3]);
    }
}

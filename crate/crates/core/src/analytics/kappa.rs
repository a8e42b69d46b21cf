use serde::Serialize;
use thiserror::Error;

/// Score categories 0..=10.
pub const SCORE_CATEGORIES: usize = 11;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KappaError {
    #[error("score vectors differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("no observations")]
    Empty,
    #[error("score {value} outside 0..{k}")]
    OutOfRange { value: u32, k: usize },
    #[error("at least 2 categories are required")]
    TooFewCategories,
    #[error("kappa is undefined: expected weighted disagreement is 0 but observed is not")]
    Undefined,
}

/// Joint counts of two raters over `k` categories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContingencyTable {
    pub k: usize,
    /// `counts[i][j]`: rater A said `i`, rater B said `j`.
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn from_pairs(a: &[u32], b: &[u32], k: usize) -> Result<Self, KappaError> {
        if a.len() != b.len() {
            return Err(KappaError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        if a.is_empty() {
            return Err(KappaError::Empty);
        }
        if k < 2 {
            return Err(KappaError::TooFewCategories);
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (&x, &y) in a.iter().zip(b) {
            for v in [x, y] {
                if v as usize >= k {
                    return Err(KappaError::OutOfRange { value: v, k });
                }
            }
            counts[x as usize][y as usize] += 1;
        }
        Ok(ContingencyTable { k, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Quadratically weighted kappa of this table.
    pub fn quadratic_kappa(&self) -> Result<f64, KappaError> {
        let n = self.total() as f64;
        if n == 0.0 {
            return Err(KappaError::Empty);
        }
        let k = self.k;
        let rows: Vec<f64> = self
            .counts
            .iter()
            .map(|r| r.iter().sum::<u64>() as f64 / n)
            .collect();
        let cols: Vec<f64> = (0..k)
            .map(|j| self.counts.iter().map(|r| r[j]).sum::<u64>() as f64 / n)
            .collect();
        let scale = ((k - 1) * (k - 1)) as f64;
        let (mut observed, mut expected) = (0.0, 0.0);
        for (i, (counts, row)) in self.counts.iter().zip(&rows).enumerate() {
            for (j, (&count, col)) in counts.iter().zip(&cols).enumerate() {
                let w = ((i as f64 - j as f64).powi(2)) / scale;
                observed += count as f64 / n * w;
                expected += row * col * w;
            }
        }
        if observed == 0.0 {
            return Ok(1.0);
        }
        if expected == 0.0 {
            return Err(KappaError::Undefined);
        }
        Ok(1.0 - observed / expected)
    }
}

/// Quadratically weighted Cohen's kappa between two raters.
pub fn qwk(a: &[u32], b: &[u32], k: usize) -> Result<f64, KappaError> {
    ContingencyTable::from_pairs(a, b, k)?.quadratic_kappa()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pairwise form: 1 - mean((a_i - b_i)^2) / mean over all i, j of (a_i - b_j)^2.
    fn oracle(a: &[u32], b: &[u32]) -> f64 {
        let n = a.len() as f64;
        let d = |x: u32, y: u32| (x as f64 - y as f64).powi(2);
        let num: f64 = a.iter().zip(b).map(|(&x, &y)| d(x, y)).sum::<f64>() / n;
        let den: f64 = a
            .iter()
            .flat_map(|&x| b.iter().map(move |&y| d(x, y)))
            .sum::<f64>()
            / (n * n);
        1.0 - num / den
    }

    #[test]
    fn perfect_and_reversed() {
        assert_eq!(qwk(&[3, 7, 7, 0], &[3, 7, 7, 0], 11).unwrap(), 1.0);
        assert!((qwk(&[0, 10], &[10, 0], 11).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            qwk(&[1, 2], &[1], 11),
            Err(KappaError::LengthMismatch { .. })
        ));
        assert!(matches!(qwk(&[], &[], 11), Err(KappaError::Empty)));
        assert!(matches!(
            qwk(&[11], &[1], 11),
            Err(KappaError::OutOfRange { value: 11, .. })
        ));
        assert!(matches!(qwk(&[4, 4, 4], &[4, 4, 4], 11), Ok(v) if v == 1.0));
    }

    #[test]
    fn constant_raters_that_disagree() {
        // expected weighted disagreement equals observed: kappa 0
        assert!(qwk(&[4, 4], &[5, 5], 11).unwrap().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(pairs in proptest::collection::vec((0u32..=10, 0u32..=10), 2..40)) {
            let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            match qwk(&a, &b, 11) {
                Ok(k) => {
                    if a != b {
                        prop_assert!((k - oracle(&a, &b)).abs() < 1e-12);
                    }
                    prop_assert!(k <= 1.0 + 1e-12);
                    prop_assert!((k - qwk(&b, &a, 11).unwrap()).abs() < 1e-12);
                    prop_assert_eq!(k == 1.0, a == b);
                }
                Err(e) => prop_assert_eq!(e, KappaError::Undefined),
            }
        }
    }
}

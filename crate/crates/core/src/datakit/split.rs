use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MIN_PER_CLASS: usize = 10;

/// Per-class partition as indices into that class's original item list.
/// `train` may repeat indices (bootstrap duplicates); `val` and `test`
/// never do, and no index appears in more than one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `(train, val, test)` sizes of a 7:1:2 partition of `total`.
pub fn split_sizes(total: usize) -> (usize, usize, usize) {
    let val = (total as f64 / 10.0).round() as usize;
    let test = (total as f64 / 5.0).round() as usize;
    (total - val - test, val, test)
}

/// Balances every class up to the largest by bootstrap resampling and
/// partitions each class 7:1:2.
///
/// Validation and test items are drawn from the unique originals first;
/// duplicates are drawn only from the class's own training items, so a
/// resampled copy never lands in a different split from its source.
pub fn split_oversample(counts: &[usize], seed: u64) -> Result<Vec<ClassSplit>> {
    if counts.is_empty() {
        return Err(Error::data("no classes to split"));
    }
    if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n < MIN_PER_CLASS) {
        return Err(Error::data(format!(
            "class {c} has {n} items, need at least {MIN_PER_CLASS}"
        )));
    }
    let total = *counts.iter().max().unwrap_or(&0);
    let (n_train, n_val, n_test) = split_sizes(total);
    counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n < n_val + n_test + 1 {
                return Err(Error::data(format!(
                    "class {c} has {n} items, too few to fill {n_val} validation and {n_test} test items"
                )));
            }
            let mut rng = Rng::stream(seed, &[c as u64]);
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let test = order[..n_test].to_vec();
            let val = order[n_test..n_test + n_val].to_vec();
            let uniques = &order[n_test + n_val..];
            let mut train = uniques.to_vec();
            while train.len() < n_train {
                train.push(uniques[rng.below(uniques.len())]);
            }
            Ok(ClassSplit { train, val, test })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn paper_counts_balance() {
        let s = split_oversample(&[3185, 2126], 1).unwrap();
        for c in &s {
            assert_eq!(c.train.len() + c.val.len() + c.test.len(), 3185);
        }
        assert_eq!(split_sizes(3185), (2229, 319, 637));
    }

    #[test]
    fn errors() {
        assert!(split_oversample(&[20, 0], 0).is_err());
        assert!(split_oversample(&[], 0).is_err());
        assert!(split_oversample(&[100, 12], 0).is_err());
    }

    proptest! {
        #[test]
        fn ratio_and_no_leakage(a in 10usize..400, b in 10usize..400, seed in any::<u64>()) {
            let total = a.max(b);
            let (t, v, te) = split_sizes(total);
            prop_assume!(a.min(b) > v + te);
            let s = split_oversample(&[a, b], seed).unwrap();
            for (c, n) in s.iter().zip([a, b]) {
                prop_assert!((c.train.len() as f64 - 0.7 * total as f64).abs() <= 1.0);
                prop_assert!((c.val.len() as f64 - 0.1 * total as f64).abs() <= 1.0);
                prop_assert!((c.test.len() as f64 - 0.2 * total as f64).abs() <= 1.0);
                prop_assert_eq!((c.train.len(), c.val.len(), c.test.len()), (t, v, te));
                let tr: HashSet<_> = c.train.iter().collect();
                let va: HashSet<_> = c.val.iter().collect();
                let ts: HashSet<_> = c.test.iter().collect();
                prop_assert_eq!(va.len(), c.val.len());
                prop_assert_eq!(ts.len(), c.test.len());
                prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&ts) && va.is_disjoint(&ts));
                prop_assert_eq!(tr.len() + va.len() + ts.len(), n);
            }
        }
    }
}

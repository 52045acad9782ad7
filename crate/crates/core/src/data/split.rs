use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Independent seeded train/validation/test partitions. Each "fold" is its own
/// shuffle of all rows, not a slice of one k-fold rotation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.6, 0.2, 0.2);

pub fn make_splits(
    n: usize,
    folds: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitPlan> {
    let (tr, va, te) = fractions;
    if [tr, va, te].iter().any(|f| !(0.0..=1.0).contains(f)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "fractions",
            format!("must be in [0, 1] and sum to 1, got ({tr}, {va}, {te})"),
        ));
    }
    if tr <= 0.0 || te <= 0.0 {
        return Err(Error::config(
            "fractions",
            "train and test fractions must be positive",
        ));
    }
    if n < 5 {
        return Err(Error::config("n", format!("need at least 5 rows, got {n}")));
    }
    if folds == 0 {
        return Err(Error::config("folds", "need at least one fold"));
    }
    let n_train = ((n as f64) * tr).round() as usize;
    let n_val = ((n as f64) * va).round() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let n_val = n_val.min(n - n_train - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::with_capacity(folds);
    for _ in 0..folds {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let test = idx.split_off(n_train + n_val);
        let validation = idx.split_off(n_train);
        plan.push(Fold {
            train: idx,
            validation,
            test,
        });
    }
    Ok(SplitPlan { seed, folds: plan })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_rows_split_six_two_two() {
        let plan = make_splits(10, 5, DEFAULT_FRACTIONS, 3).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for f in &plan.folds {
            assert_eq!((f.train.len(), f.validation.len(), f.test.len()), (6, 2, 2));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(
            make_splits(100, 5, DEFAULT_FRACTIONS, 9).unwrap(),
            make_splits(100, 5, DEFAULT_FRACTIONS, 9).unwrap()
        );
        assert_ne!(
            make_splits(100, 5, DEFAULT_FRACTIONS, 9).unwrap(),
            make_splits(100, 5, DEFAULT_FRACTIONS, 10).unwrap()
        );
    }

    #[test]
    fn invalid_fractions_rejected() {
        assert!(matches!(
            make_splits(10, 5, (0.5, 0.2, 0.2), 0),
            Err(Error::Config { .. })
        ));
        assert!(make_splits(4, 5, DEFAULT_FRACTIONS, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_are_disjoint_and_exhaustive(n in 5usize..400, seed in any::<u64>()) {
            let plan = make_splits(n, 3, DEFAULT_FRACTIONS, seed).unwrap();
            for f in &plan.folds {
                let mut all: Vec<usize> = f.train.iter().chain(&f.validation).chain(&f.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert!((f.train.len() as f64 - 0.6 * n as f64).abs() <= 1.0);
                prop_assert!((f.validation.len() as f64 - 0.2 * n as f64).abs() <= 1.0);
                prop_assert!((f.test.len() as f64 - 0.2 * n as f64).abs() <= 1.0);
            }
        }
    }
}

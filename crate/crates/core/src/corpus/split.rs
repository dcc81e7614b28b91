use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Split;
use crate::error::{Error, Result};

pub type SplitTable = BTreeMap<String, Split>;

/// Shuffles `ids` with `seed` and cuts the order into train/valid/test runs
/// of `round(ratio * len)` ids (the test run takes the remainder).
pub fn assign_splits(ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<SplitTable> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !r.is_finite() || *r < 0.0) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let n = ids.len();
    let n_train = ((tr * n as f64).round() as usize).min(n);
    let n_valid = ((va * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            let split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
            (ids[i].clone(), split)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("env{i}")).collect()
    }

    fn counts(t: &SplitTable) -> [usize; 3] {
        let mut c = [0; 3];
        for s in t.values() {
            c[*s as usize] += 1;
        }
        c
    }

    #[test]
    fn ten_ids_split_eight_one_one_and_stably() {
        let a = assign_splits(&ids(10), (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(counts(&a), [8, 1, 1]);
        assert_eq!(a, assign_splits(&ids(10), (0.8, 0.1, 0.1), 7).unwrap());
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn all_train() {
        let a = assign_splits(&ids(5), (1.0, 0.0, 0.0), 1).unwrap();
        assert!(a.values().all(|&s| s == Split::Train));
    }

    #[test]
    fn duplicates_and_bad_ratios_are_rejected() {
        let mut v = ids(3);
        v.push("env1".into());
        assert!(matches!(assign_splits(&v, (1.0, 0.0, 0.0), 0), Err(Error::DuplicateId(_))));
        assert!(matches!(
            assign_splits(&ids(3), (0.5, 0.1, 0.1), 0),
            Err(Error::InvalidConfig(_))
        ));
    }
}

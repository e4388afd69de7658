//! Katz back-off with absolute discounting.
//!
//! A seen event gets `(count - D) / total`. The freed mass `D * distinct / total`
//! goes to the unseen events of the row in proportion to a lower-order
//! distribution. When a row has seen its whole vocabulary there is nowhere to
//! put the freed mass, so the row falls back to plain relative frequencies.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothingError {
    #[error("discount {0} outside (0, 1)")]
    Discount(f64),
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("event {0} is not in the vocabulary")]
    UnknownEvent(String),
}

pub fn check_discount(discount: f64) -> Result<(), SmoothingError> {
    if discount > 0.0 && discount < 1.0 {
        Ok(())
    } else {
        Err(SmoothingError::Discount(discount))
    }
}

/// One smoothed conditional row: discounted seen events plus the scale
/// applied to the lower-order distribution for everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KatzRow<K: Ord> {
    pub seen: BTreeMap<K, f64>,
    pub alpha: f64,
}

impl<K: Ord> KatzRow<K> {
    pub fn prob<Q: Ord + ?Sized>(&self, event: &Q, lower: f64) -> f64
    where
        K: Borrow<Q>,
    {
        self.seen.get(event).copied().unwrap_or(self.alpha * lower)
    }
}

/// Smooths one row of counts against `lower` (a distribution over the full
/// vocabulary, which is `lower`'s key set).
pub fn katz_row<K: Ord + Clone + std::fmt::Debug>(
    counts: &BTreeMap<K, u64>,
    lower: &BTreeMap<K, f64>,
    discount: f64,
) -> Result<KatzRow<K>, SmoothingError> {
    check_discount(discount)?;
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Ok(KatzRow {
            seen: BTreeMap::new(),
            alpha: 1.0,
        });
    }
    if let Some(k) = counts.keys().find(|k| !lower.contains_key(*k)) {
        return Err(SmoothingError::UnknownEvent(format!("{k:?}")));
    }
    let total = total as f64;
    let unseen_mass: f64 = lower
        .iter()
        .filter(|(k, _)| counts.get(*k).copied().unwrap_or(0) == 0)
        .map(|(_, p)| p)
        .sum();
    let nonzero = counts.iter().filter(|(_, &c)| c > 0);
    if unseen_mass <= 0.0 {
        return Ok(KatzRow {
            seen: nonzero.map(|(k, &c)| (k.clone(), c as f64 / total)).collect(),
            alpha: 0.0,
        });
    }
    let seen: BTreeMap<K, f64> = nonzero
        .map(|(k, &c)| (k.clone(), (c as f64 - discount) / total))
        .collect();
    let freed = discount * seen.len() as f64 / total;
    Ok(KatzRow {
        seen,
        alpha: freed / unseen_mass,
    })
}

pub fn uniform<K: Ord + Clone>(vocab: &BTreeSet<K>) -> BTreeMap<K, f64> {
    let p = 1.0 / vocab.len() as f64;
    vocab.iter().map(|k| (k.clone(), p)).collect()
}

/// Unigram distribution over `vocab`, Katz-smoothed against uniform.
pub fn katz_unigram<K: Ord + Clone + std::fmt::Debug>(
    counts: &BTreeMap<K, u64>,
    vocab: &BTreeSet<K>,
    discount: f64,
) -> Result<BTreeMap<K, f64>, SmoothingError> {
    if vocab.is_empty() {
        return Err(SmoothingError::EmptyVocabulary);
    }
    let lower = uniform(vocab);
    let row = katz_row(counts, &lower, discount)?;
    Ok(lower
        .iter()
        .map(|(k, &p)| (k.clone(), row.prob(k, p)))
        .collect())
}

/// A smoothed conditional distribution `P(event | context)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondTable<C: Ord, K: Ord> {
    /// Lower-order distribution; its keys are the event vocabulary.
    pub backoff: BTreeMap<K, f64>,
    pub rows: BTreeMap<C, KatzRow<K>>,
}

impl<C: Ord, K: Ord> CondTable<C, K> {
    /// Zero for events outside the vocabulary.
    pub fn prob<Q, D>(&self, event: &Q, context: &D) -> f64
    where
        K: Borrow<Q>,
        C: Borrow<D>,
        Q: Ord + ?Sized,
        D: Ord + ?Sized,
    {
        let Some(&lower) = self.backoff.get(event) else {
            return 0.0;
        };
        match self.rows.get(context) {
            Some(row) => row.prob(event, lower),
            None => lower,
        }
    }

    pub fn row_sum<D: Ord + ?Sized>(&self, context: &D) -> f64
    where
        C: Borrow<D>,
    {
        self.backoff.keys().map(|k| self.prob(k, context)).sum()
    }

    pub fn contains_event<Q: Ord + ?Sized>(&self, event: &Q) -> bool
    where
        K: Borrow<Q>,
    {
        self.backoff.contains_key(event)
    }
}

/// Smooths a conditional count table. The lower order is the pooled event
/// unigram, itself smoothed against uniform over `vocab`.
pub fn katz_backoff<C, K>(
    counts: &BTreeMap<C, BTreeMap<K, u64>>,
    vocab: &BTreeSet<K>,
    discount: f64,
) -> Result<CondTable<C, K>, SmoothingError>
where
    C: Ord + Clone,
    K: Ord + Clone + std::fmt::Debug,
{
    let mut pooled: BTreeMap<K, u64> = BTreeMap::new();
    for row in counts.values() {
        for (k, &c) in row {
            *pooled.entry(k.clone()).or_default() += c;
        }
    }
    let backoff = katz_unigram(&pooled, vocab, discount)?;
    katz_backoff_with(counts, backoff, discount)
}

/// Smooths a conditional count table against an explicit lower-order
/// distribution.
pub fn katz_backoff_with<C, K>(
    counts: &BTreeMap<C, BTreeMap<K, u64>>,
    backoff: BTreeMap<K, f64>,
    discount: f64,
) -> Result<CondTable<C, K>, SmoothingError>
where
    C: Ord + Clone,
    K: Ord + Clone + std::fmt::Debug,
{
    check_discount(discount)?;
    if backoff.is_empty() {
        return Err(SmoothingError::EmptyVocabulary);
    }
    let rows = counts
        .iter()
        .filter(|(_, row)| row.values().any(|&c| c > 0))
        .map(|(ctx, row)| Ok((ctx.clone(), katz_row(row, &backoff, discount)?)))
        .collect::<Result<_, SmoothingError>>()?;
    Ok(CondTable { backoff, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[&'static str]) -> BTreeSet<&'static str> {
        items.iter().copied().collect()
    }

    #[test]
    fn hand_computed_row() {
        let counts = BTreeMap::from([("ctx", BTreeMap::from([("a", 2u64), ("b", 1)]))]);
        let table = katz_backoff_with(&counts, uniform(&set(&["a", "b", "c"])), 0.5).unwrap();
        // a: (2-.5)/3, b: (1-.5)/3, freed .5*2/3 all to c.
        assert!((table.prob(&"a", &"ctx") - 0.5).abs() < 1e-15);
        assert!((table.prob(&"b", &"ctx") - 1.0 / 6.0).abs() < 1e-15);
        assert!((table.prob(&"c", &"ctx") - 1.0 / 3.0).abs() < 1e-15);
        assert!((table.row_sum(&"ctx") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_context_is_backoff() {
        let counts = BTreeMap::from([("x", BTreeMap::from([("a", 4u64)]))]);
        let table = katz_backoff(&counts, &set(&["a", "b", "c"]), 0.5).unwrap();
        for k in ["a", "b", "c"] {
            assert_eq!(table.prob(&k, &"never"), table.backoff[k]);
        }
        assert!((table.row_sum(&"never") - 1.0).abs() < 1e-12);
        assert!(table.backoff.values().all(|&p| p > 0.0));
    }

    #[test]
    fn singleton_vocabulary() {
        let counts = BTreeMap::from([("x", BTreeMap::from([("a", 3u64)]))]);
        let table = katz_backoff(&counts, &set(&["a"]), 0.5).unwrap();
        assert_eq!(table.prob(&"a", &"x"), 1.0);
        assert_eq!(table.prob(&"a", &"y"), 1.0);
    }

    #[test]
    fn discount_range_checked() {
        let counts: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
        for d in [0.0, 1.0, -0.1, 1.5] {
            assert_eq!(
                katz_backoff(&counts, &set(&["a"]), d).unwrap_err(),
                SmoothingError::Discount(d)
            );
        }
    }

    #[test]
    fn out_of_vocabulary_count_is_an_error() {
        let counts = BTreeMap::from([("x", BTreeMap::from([("z", 1u64)]))]);
        assert!(katz_backoff_with(&counts, uniform(&set(&["a"])), 0.5).is_err());
    }

    proptest! {
        #[test]
        fn rows_normalize(rows in proptest::collection::vec(proptest::collection::vec(0u64..5, 6), 1..5),
                          d in 0.05f64..0.95) {
            let vocab: BTreeSet<u8> = (0..6).collect();
            let counts: BTreeMap<usize, BTreeMap<u8, u64>> = rows.iter().enumerate()
                .map(|(i, r)| (i, r.iter().enumerate().map(|(k, &c)| (k as u8, c)).collect()))
                .collect();
            let table = katz_backoff(&counts, &vocab, d).unwrap();
            for ctx in 0..rows.len() + 1 {
                prop_assert!((table.row_sum(&ctx) - 1.0).abs() < 1e-9);
                for k in &vocab {
                    prop_assert!(table.prob(k, &ctx) > 0.0);
                }
            }
        }
    }
}

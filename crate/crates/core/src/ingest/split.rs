use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DatasetStore;
use crate::domain::{Decision, PaperRecord};
use crate::error::{Error, Result};
use crate::stats::iteration_rng;

/// A venue-year range contributing a fixed number of papers to the test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub name: String,
    pub min_year: i32,
    pub max_year: i32,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSplitConfig {
    pub pools: Vec<PoolSpec>,
}

impl Default for TestSplitConfig {
    /// 600 papers from 2020–2025 and 598 from 2026.
    fn default() -> Self {
        TestSplitConfig {
            pools: vec![
                PoolSpec {
                    name: "2020-2025".into(),
                    min_year: 2020,
                    max_year: 2025,
                    size: 600,
                },
                PoolSpec {
                    name: "2026".into(),
                    min_year: 2026,
                    max_year: 2026,
                    size: 598,
                },
            ],
        }
    }
}

/// Draws a decision-balanced test split from every record in the store.
///
/// Each pool takes `size / 2` accepted papers and the remainder rejected, by shuffling
/// each class (ordered by paper_id first) with a seeded generator and truncating. Papers
/// with an unknown decision are never drawn. Output is pool by pool, accepted then
/// rejected.
pub fn build_test_split(
    store: &DatasetStore,
    config: &TestSplitConfig,
    seed: u64,
) -> Result<Vec<String>> {
    let mut records: Vec<&PaperRecord> = store.records().collect();
    records.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    let mut out = Vec::new();
    for (p, pool) in config.pools.iter().enumerate() {
        if pool.min_year > pool.max_year {
            return Err(Error::Config(format!(
                "pool `{}`: min_year {} exceeds max_year {}",
                pool.name, pool.min_year, pool.max_year
            )));
        }
        let accepted_n = pool.size / 2;
        let wanted = [
            (Decision::Accepted, accepted_n),
            (Decision::Rejected, pool.size - accepted_n),
        ];
        for (c, (decision, n)) in wanted.into_iter().enumerate() {
            let mut ids: Vec<&str> = records
                .iter()
                .filter(|r| {
                    r.decision == decision
                        && (pool.min_year..=pool.max_year).contains(&r.venue_year)
                })
                .map(|r| r.paper_id.as_str())
                .collect();
            if ids.len() < n {
                let class = if decision == Decision::Accepted {
                    "accepted"
                } else {
                    "rejected"
                };
                return Err(Error::InvalidInput(format!(
                    "pool `{}` needs {n} {class} papers but has {} (shortfall {})",
                    pool.name,
                    ids.len(),
                    n - ids.len()
                )));
            }
            ids.shuffle(&mut iteration_rng(seed, (p * 2 + c) as u64));
            out.extend(ids.into_iter().take(n).map(str::to_string));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::ingest::tests::paper;

    fn store(n_acc: usize, n_rej: usize, year: i32) -> DatasetStore {
        let mut records = Vec::new();
        for i in 0..n_acc {
            records.push(paper(&format!("a{i}"), year, Decision::Accepted));
        }
        for i in 0..n_rej {
            records.push(paper(&format!("r{i}"), year, Decision::Rejected));
        }
        let mut splits = BTreeMap::new();
        splits.insert("all".to_string(), records);
        DatasetStore::from_splits(splits).unwrap()
    }

    fn one_pool(size: usize) -> TestSplitConfig {
        TestSplitConfig {
            pools: vec![PoolSpec {
                name: "p".into(),
                min_year: 2020,
                max_year: 2025,
                size,
            }],
        }
    }

    #[test]
    fn balanced_draw() {
        let s = store(4, 4, 2022);
        let ids = build_test_split(&s, &one_pool(4), 1).unwrap();
        assert_eq!(ids.len(), 4);
        assert_eq!(ids.iter().filter(|i| i.starts_with('a')).count(), 2);
        assert_eq!(ids.iter().filter(|i| i.starts_with('r')).count(), 2);
    }

    #[test]
    fn deterministic_under_seed() {
        let s = store(20, 20, 2022);
        let a = build_test_split(&s, &one_pool(10), 9).unwrap();
        let b = build_test_split(&s, &one_pool(10), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shortfall_is_reported() {
        let s = store(1, 4, 2022);
        let err = build_test_split(&s, &one_pool(4), 1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("shortfall 1"), "{err}");
    }

    #[test]
    fn default_pools_sum_to_1198() {
        let c = TestSplitConfig::default();
        assert_eq!(c.pools.iter().map(|p| p.size).sum::<usize>(), 1198);
        assert_eq!(c.pools[0].size, 600);
        assert_eq!(c.pools[1].size, 598);
    }

    #[test]
    fn years_outside_pool_are_ignored() {
        let s = store(4, 4, 2026);
        assert!(build_test_split(&s, &one_pool(2), 1).is_err());
    }
}

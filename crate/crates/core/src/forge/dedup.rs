use rand::Rng;

use crate::domain::FeedbackUnit;
use crate::error::Result;
use crate::judge::TextVectors;
use crate::stats::keyed_rng;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Clusters `0..n` by the union of pairs with similarity above `threshold` and keeps one
/// randomly drawn member per cluster. Returns the kept indices in ascending order.
pub fn dedup_indices<R, F>(
    n: usize,
    similarity: F,
    threshold: f64,
    rng: &mut R,
) -> Result<Vec<usize>>
where
    R: Rng + ?Sized,
    F: Fn(usize, usize) -> Result<f64>,
{
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if similarity(i, j)? > threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[root]].push(i);
    }
    let mut kept: Vec<usize> = clusters
        .iter()
        .map(|c| c[rng.random_range(0..c.len())])
        .collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Drops near-duplicate units (cosine above `threshold`), keeping a seeded random
/// representative per cluster. `key` (typically the paper id) selects the random stream.
pub fn dedup_units(
    units: &[FeedbackUnit],
    vectors: &TextVectors,
    threshold: f64,
    seed: u64,
    key: &str,
) -> Result<Vec<FeedbackUnit>> {
    let kept = dedup_indices(
        units.len(),
        |i, j| vectors.cosine(&units[i].text, &units[j].text),
        threshold,
        &mut keyed_rng(seed, key),
    )?;
    Ok(kept.into_iter().map(|i| units[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::stats::iteration_rng;

    fn matrix_sim(m: Vec<Vec<f64>>) -> impl Fn(usize, usize) -> Result<f64> {
        move |i, j| Ok(m[i][j])
    }

    #[test]
    fn identical_pair_collapses() {
        let sim = matrix_sim(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(
            dedup_indices(2, sim, 0.5, &mut iteration_rng(0, 0))
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn dissimilar_units_survive() {
        let sim = matrix_sim(vec![
            vec![1.0, 0.5, 0.1],
            vec![0.5, 1.0, 0.2],
            vec![0.1, 0.2, 1.0],
        ]);
        assert_eq!(
            dedup_indices(3, sim, 0.5, &mut iteration_rng(0, 0)).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn chained_cluster_keeps_one() {
        // (a,b) = 0.9, (b,c) = 0.6, (a,c) = 0.4
        let sim = matrix_sim(vec![
            vec![1.0, 0.9, 0.4],
            vec![0.9, 1.0, 0.6],
            vec![0.4, 0.6, 1.0],
        ]);
        for s in 0..20 {
            let kept = dedup_indices(3, &sim, 0.5, &mut iteration_rng(s, 0)).unwrap();
            assert_eq!(kept.len(), 1);
        }
    }

    /// Brute-force oracle: number of connected components by repeated reachability.
    fn component_count(n: usize, adj: &[Vec<bool>]) -> usize {
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(v) = stack.pop() {
                for w in 0..n {
                    if adj[v][w] && !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    proptest! {
        #[test]
        fn survivors_match_component_oracle(
            n in 1usize..=5,
            raw in prop::collection::vec(-1.0f64..1.0, 10),
            seed in any::<u64>(),
        ) {
            // row-major upper triangle of `raw`, mirrored
            let entry = |a: usize, b: usize| a * (n - 1) - a * a.saturating_sub(1) / 2 + b - a - 1;
            let m: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| if i == j { 1.0 } else { raw[entry(i.min(j), i.max(j))] })
                        .collect()
                })
                .collect();
            let adj: Vec<Vec<bool>> = (0..n)
                .map(|i| (0..n).map(|j| i != j && m[i][j] > 0.5).collect())
                .collect();
            let kept = dedup_indices(n, matrix_sim(m.clone()), 0.5, &mut iteration_rng(seed, 0)).unwrap();
            prop_assert_eq!(kept.len(), component_count(n, &adj));
            for (a, &i) in kept.iter().enumerate() {
                for &j in &kept[a + 1..] {
                    prop_assert!(m[i][j] <= 0.5);
                }
            }
        }
    }
}

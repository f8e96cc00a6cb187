use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Mean and 95% percentile interval of a bootstrap distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CIReport {
    pub point_estimate: f64,
    pub lower: f64,
    pub upper: f64,
    #[serde(rename = "B")]
    pub iterations: usize,
    pub seed: u64,
}

impl CIReport {
    pub fn half_width(&self) -> f64 {
        (self.upper - self.lower) / 2.0
    }

    /// Summarises already-drawn iteration values.
    pub fn from_draws(draws: &[f64], seed: u64) -> Result<Self> {
        if draws.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "bootstrap needs at least 2 iterations, got {}",
                draws.len()
            )));
        }
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(CIReport {
            point_estimate: draws.iter().sum::<f64>() / draws.len() as f64,
            lower: percentile(&sorted, 0.025),
            upper: percentile(&sorted, 0.975),
            iterations: draws.len(),
            seed,
        })
    }
}

/// Linear-interpolated quantile of an ascending slice (position `q·(n−1)`).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Generator for one bootstrap iteration: the seed picks the key, the iteration index
/// picks the ChaCha stream, so draws do not depend on scheduling order.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Generator on a stream derived from `key`, so draws do not depend on processing order.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(key.as_bytes());
    let mut stream = [0u8; 8];
    stream.copy_from_slice(&digest[..8]);
    iteration_rng(seed, u64::from_le_bytes(stream))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Number of iterations after which [`cyclic_subset`] has used every position of a group
/// of `n` equally often.
pub fn cycle_length(n: usize, k: usize) -> usize {
    if n <= k || k == 0 {
        1
    } else {
        n / gcd(n, k)
    }
}

/// The `k`-subset of `0..n` used by bootstrap `iteration` for the group named `key`.
///
/// Iterations are grouped into cycles of [`cycle_length`]. Each cycle draws a fresh seeded
/// permutation and walks `k`-wide windows around it, so each iteration is a uniform random
/// `k`-subset and, over a whole cycle, every position appears exactly `k / gcd(n, k)`
/// times. Groups with `n <= k` always return every index. Indices come back ascending.
pub fn cyclic_subset(n: usize, k: usize, seed: u64, key: &str, iteration: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    if n <= k {
        return (0..n).collect();
    }
    let len = cycle_length(n, k);
    let (cycle, offset) = (iteration / len, iteration % len);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut keyed_rng(seed, &format!("{key}|{cycle}")));
    let mut out: Vec<usize> = (0..k).map(|j| perm[(offset * k + j) % n]).collect();
    out.sort_unstable();
    out
}

/// Runs `sampler` once per iteration with an independent seeded generator and reports the
/// mean and 2.5/97.5 percentile bounds.
pub fn percentile_bootstrap<F>(
    sampler: F,
    iterations: usize,
    seed: u64,
    exec: Exec,
) -> Result<CIReport>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync + Send,
{
    if iterations < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 2 iterations, got {iterations}"
        )));
    }
    let draws = exec
        .map_range(iterations, |b| sampler(&mut iteration_rng(seed, b as u64)))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    CIReport::from_draws(&draws, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn cyclic_subsets_balance_over_a_cycle() {
        for n in 1..=9 {
            let k = 5;
            let len = cycle_length(n, k);
            let mut counts = vec![0usize; n];
            for it in 0..len * 3 {
                let s = cyclic_subset(n, k, 4, "p", it);
                assert_eq!(s.len(), n.min(k));
                assert!(s.windows(2).all(|w| w[0] < w[1]));
                for i in s {
                    counts[i] += 1;
                }
            }
            assert!(counts.iter().all(|&c| c == counts[0]), "n={n}: {counts:?}");
        }
    }

    #[test]
    fn constant_sampler() {
        let r = percentile_bootstrap(|_| Ok(0.3), 50, 1, Exec::Parallel).unwrap();
        assert_eq!(r.lower, 0.3);
        assert_eq!(r.upper, 0.3);
        assert!((r.point_estimate - 0.3).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_mode_independent() {
        let sampler = |rng: &mut ChaCha8Rng| Ok(rng.random::<f64>());
        let a = percentile_bootstrap(sampler, 200, 9, Exec::Parallel).unwrap();
        let b = percentile_bootstrap(sampler, 200, 9, Exec::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bernoulli_half_width_matches_binomial_standard_error() {
        // 1.96 * sqrt(0.25 / 100) = 0.098
        let sampler = |rng: &mut ChaCha8Rng| {
            Ok((0..100).filter(|_| rng.random_bool(0.5)).count() as f64 / 100.0)
        };
        let r = percentile_bootstrap(sampler, 1000, 3, Exec::Parallel).unwrap();
        let hw = r.half_width();
        assert!((0.07..=0.13).contains(&hw), "half width {hw}");
    }

    #[test]
    fn rejects_too_few_iterations() {
        assert!(percentile_bootstrap(|_| Ok(1.0), 1, 0, Exec::Sequential).is_err());
    }

    #[test]
    fn sampler_errors_propagate() {
        let r = percentile_bootstrap(
            |_| Err(Error::InvalidInput("boom".into())),
            5,
            0,
            Exec::Sequential,
        );
        assert!(r.is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert!((percentile(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}

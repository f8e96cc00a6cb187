//! Tests used to compare models on human-study ratings: chi-square and Fisher's exact
//! test for binary outcomes, Kruskal–Wallis with pairwise Mann–Whitney U for ordinal ones.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::agreement::ContingencyTable;
use crate::error::{Error, Result};

/// Exact Mann–Whitney enumeration is used when `n1 * n2` is at most this.
const EXACT_U_LIMIT: usize = 400;

/// Relative slack when collecting tables "at least as extreme" by probability.
const FISHER_RELATIVE_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of independence, without continuity correction.
pub fn chi_square_test(table: &ContingencyTable) -> Result<ChiSquareResult> {
    let rows = table.row_sums();
    let cols = table.col_sums();
    if rows.iter().chain(cols.iter()).any(|&m| m == 0) {
        return Err(Error::InvalidInput(
            "chi-square is undefined for a table with an empty row or column".into(),
        ));
    }
    let n = table.total() as f64;
    let mut stat = 0.0;
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            let expected = r as f64 * c as f64 / n;
            let d = table.get(i, j) as f64 - expected;
            stat += d * d / expected;
        }
    }
    let df = (table.rows() - 1) * (table.cols() - 1);
    if df == 0 {
        return Err(Error::InvalidInput(
            "chi-square needs at least a 2x2 table".into(),
        ));
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(ChiSquareResult {
        statistic: stat,
        df,
        p_value: dist.sf(stat).clamp(0.0, 1.0),
    })
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// Two-sided Fisher exact test on a 2×2 table: the summed probability of every table with
/// the same margins whose probability does not exceed that of the observed table.
pub fn fisher_exact(table: &ContingencyTable) -> Result<f64> {
    if table.rows() != 2 || table.cols() != 2 {
        return Err(Error::InvalidInput("fisher_exact needs a 2x2 table".into()));
    }
    let [r1, r2]: [u64; 2] = table.row_sums().try_into().expect("two rows");
    let c1 = table.col_sums()[0];
    let n = r1 + r2;
    let lf = ln_factorials(n);
    let ln_choose = |a: u64, b: u64| lf[a as usize] - lf[b as usize] - lf[(a - b) as usize];
    let denom = ln_choose(n, c1);
    let prob = |a: u64| (ln_choose(r1, a) + ln_choose(r2, c1 - a) - denom).exp();

    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let observed = prob(table.get(0, 0));
    let cutoff = observed * (1.0 + FISHER_RELATIVE_TOLERANCE);
    let p: f64 = (lo..=hi).map(prob).filter(|&p| p <= cutoff).sum();
    Ok(p.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryTests {
    /// `None` when a margin is zero and chi-square is undefined.
    pub chi_square: Option<ChiSquareResult>,
    pub fisher_exact_p: f64,
}

pub fn binary_tests(table: &ContingencyTable) -> Result<BinaryTests> {
    let fisher_exact_p = fisher_exact(table)?;
    let chi_square = match chi_square_test(table) {
        Ok(c) => Some(c),
        Err(Error::InvalidInput(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(BinaryTests {
        chi_square,
        fisher_exact_p,
    })
}

/// Midranks (1-based) of `values`, with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Σ (t³ − t) over tie groups.
fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        sum += t * t * t - t;
        i = j + 1;
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U for the first sample: its rank sum minus `n1(n1+1)/2`.
    pub u: f64,
    pub p_value: f64,
    pub method: UMethod,
}

/// Two-sided Mann–Whitney U test. Exact permutation distribution (with midranks for ties)
/// when `n1·n2 ≤ 400`, otherwise the tie-corrected normal approximation with continuity
/// correction.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput(
            "mann_whitney_u needs two nonempty samples".into(),
        ));
    }
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    if n1 * n2 <= EXACT_U_LIMIT {
        let p_value = exact_u_p_value(&ranks, n1);
        return Ok(MannWhitney {
            u,
            p_value,
            method: UMethod::Exact,
        });
    }
    let n = (n1 + n2) as f64;
    let mean = (n1 * n2) as f64 / 2.0;
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term(&pooled) / (n * (n - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::standard();
        (2.0 * normal.sf(z)).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p_value,
        method: UMethod::Normal,
    })
}

/// Exact two-sided p-value of the rank sum of the first `n1` entries of `ranks`, over all
/// `C(N, n1)` equally likely assignments. Works on doubled midranks so sums are integers.
fn exact_u_p_value(ranks: &[f64], n1: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let n = ranks.len();
    // choose the smaller side; the two-sided statistic is symmetric in the groups
    let (k, observed): (usize, usize) = if n1 <= n - n1 {
        (n1, doubled[..n1].iter().sum())
    } else {
        (n - n1, doubled[n1..].iter().sum())
    };
    let max_sum: usize = {
        let mut d = doubled.clone();
        d.sort_unstable_by(|a, b| b.cmp(a));
        d[..k].iter().sum()
    };
    // ways[j][s]: number of j-subsets of the items seen so far with doubled rank sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; k + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=k).rev() {
            let (lower, upper) = ways.split_at_mut(j);
            let prev = &lower[j - 1];
            let cur = &mut upper[0];
            for s in (r..=max_sum).rev() {
                let add = prev[s - r];
                if add != 0.0 {
                    cur[s] += add;
                }
            }
        }
    }
    // centre of the doubled rank-sum distribution is k(N+1)
    let centre = (k * (n + 1)) as i64;
    let observed_dev = (observed as i64 - centre).abs();
    let total: f64 = ways[k].iter().sum();
    let extreme: f64 = ways[k]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - centre).abs() >= observed_dev)
        .map(|(_, w)| w)
        .sum();
    (extreme / total).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Tie-corrected Kruskal–Wallis H with a chi-square approximation. Returns `p = 1` when
/// every observation is identical.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis> {
    if groups.len() < 2 || groups.iter().any(Vec::is_empty) {
        return Err(Error::InvalidInput(
            "kruskal_wallis needs at least two nonempty groups".into(),
        ));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let ranks = midranks(&pooled);
    let n = pooled.len() as f64;
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let df = groups.len() - 1;
    let correction = 1.0 - tie_term(&pooled) / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(KruskalWallis {
            h: 0.0,
            df,
            p_value: 1.0,
        });
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(KruskalWallis {
        h,
        df,
        p_value: dist.sf(h).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
    Holm,
}

/// Multiple-comparison adjustment of a family of p-values, returned in input order.
pub fn adjust_p_values(p: &[f64], correction: Correction) -> Vec<f64> {
    let m = p.len() as f64;
    match correction {
        Correction::None => p.to_vec(),
        Correction::Bonferroni => p.iter().map(|&x| (x * m).min(1.0)).collect(),
        Correction::Holm => {
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            let mut out = vec![0.0; p.len()];
            let mut running: f64 = 0.0;
            for (rank, &i) in order.iter().enumerate() {
                let adj = ((m - rank as f64) * p[i]).min(1.0);
                running = running.max(adj);
                out[i] = running;
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseU {
    pub left: usize,
    pub right: usize,
    pub test: MannWhitney,
    /// p-value after the requested multiple-comparison correction.
    pub adjusted_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalTests {
    pub kruskal_wallis: KruskalWallis,
    pub pairwise: Vec<PairwiseU>,
    /// Present when the inputs were degenerate (all observations identical).
    pub note: Option<String>,
}

/// Omnibus Kruskal–Wallis plus every pairwise Mann–Whitney U test between groups.
pub fn ordinal_tests(groups: &[Vec<f64>], correction: Correction) -> Result<OrdinalTests> {
    let kruskal_wallis = kruskal_wallis(groups)?;
    let mut tests = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            tests.push((i, j, mann_whitney_u(&groups[i], &groups[j])?));
        }
    }
    let raw: Vec<f64> = tests.iter().map(|t| t.2.p_value).collect();
    let adjusted = adjust_p_values(&raw, correction);
    let first = groups[0][0];
    let note = groups
        .iter()
        .flatten()
        .all(|&v| v == first)
        .then(|| "all observations identical; p = 1 by convention".to_string());
    Ok(OrdinalTests {
        kruskal_wallis,
        pairwise: tests
            .into_iter()
            .zip(adjusted)
            .map(|((left, right, test), adjusted_p)| PairwiseU {
                left,
                right,
                test,
                adjusted_p,
            })
            .collect(),
        note,
    })
}

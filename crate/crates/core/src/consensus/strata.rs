use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cosine cut points, giving seven strata over [-1, 1].
pub const DEFAULT_BOUNDARIES: [f64; 6] = [0.15, 0.25, 0.35, 0.45, 0.55, 0.65];

/// Per-stratum slack allowed when weights are published rounded to three decimals.
pub const ROUNDED_WEIGHT_TOLERANCE: f64 = 0.0005;

/// Agreement of judged match labels with human labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl JudgeMetrics {
    /// From (human, judged) label pairs. Precision or recall with an empty denominator is 0.
    pub fn from_labels(pairs: &[(bool, bool)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("no labeled pairs".into()));
        }
        let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
        for &(human, judged) in pairs {
            match (human, judged) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                (false, false) => tn += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        Ok(JudgeMetrics {
            accuracy: ratio(tp + tn, pairs.len()),
            precision,
            recall,
            f1: f1(precision, recall),
        })
    }
}

pub(crate) fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub lower: f64,
    pub upper: f64,
    pub annotated_pairs: usize,
    /// Share of annotated pairs humans marked as matching.
    pub match_rate: Option<f64>,
    /// Share of all pairs in the target population falling in this stratum.
    pub weight: Option<f64>,
    pub metrics: Option<JudgeMetrics>,
}

/// Cosine strata `[-1, b0), [b0, b1), ..., [b_last, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumTable {
    pub boundaries: Vec<f64>,
    pub strata: Vec<Stratum>,
}

impl Default for StratumTable {
    fn default() -> Self {
        Self::new(&DEFAULT_BOUNDARIES).expect("default boundaries are valid")
    }
}

impl StratumTable {
    pub fn new(boundaries: &[f64]) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1])
            || boundaries.iter().any(|b| !(-1.0 < *b && *b < 1.0))
        {
            return Err(Error::InvalidInput(
                "stratum boundaries must increase strictly inside (-1, 1)".into(),
            ));
        }
        let mut edges = vec![-1.0];
        edges.extend_from_slice(boundaries);
        edges.push(1.0);
        Ok(StratumTable {
            boundaries: boundaries.to_vec(),
            strata: edges
                .windows(2)
                .map(|w| Stratum {
                    lower: w[0],
                    upper: w[1],
                    annotated_pairs: 0,
                    match_rate: None,
                    weight: None,
                    metrics: None,
                })
                .collect(),
        })
    }

    pub fn index_of(&self, cosine: f64) -> usize {
        self.boundaries.iter().filter(|&&b| b <= cosine).count()
    }

    pub fn with_match_rates(mut self, rates: &[f64]) -> Result<Self> {
        self.check_len(rates.len())?;
        for (s, &r) in self.strata.iter_mut().zip(rates) {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidInput(format!(
                    "match rate {r} outside [0, 1]"
                )));
            }
            s.match_rate = Some(r);
        }
        Ok(self)
    }

    /// Match rates from human-annotated (cosine, is_match) pairs.
    pub fn with_annotations(mut self, pairs: &[(f64, bool)]) -> Self {
        let mut counts = vec![(0usize, 0usize); self.strata.len()];
        for &(c, m) in pairs {
            let i = self.index_of(c);
            counts[i].0 += 1;
            counts[i].1 += usize::from(m);
        }
        for (s, (n, m)) in self.strata.iter_mut().zip(counts) {
            s.annotated_pairs = n;
            s.match_rate = (n > 0).then(|| m as f64 / n as f64);
        }
        self
    }

    /// Judge-vs-human metrics per stratum from (cosine, human, judged) triples.
    pub fn with_judge_labels(mut self, pairs: &[(f64, bool, bool)]) -> Result<Self> {
        let mut groups: Vec<Vec<(bool, bool)>> = vec![Vec::new(); self.strata.len()];
        for &(c, h, j) in pairs {
            groups[self.index_of(c)].push((h, j));
        }
        for (s, g) in self.strata.iter_mut().zip(groups) {
            s.metrics = if g.is_empty() {
                None
            } else {
                Some(JudgeMetrics::from_labels(&g)?)
            };
        }
        Ok(self)
    }

    /// Sets stratum weights (`None` for strata outside the retained range).
    pub fn with_weights(mut self, weights: &[Option<f64>]) -> Result<Self> {
        self.check_len(weights.len())?;
        for (s, &w) in self.strata.iter_mut().zip(weights) {
            s.weight = w;
        }
        Ok(self)
    }

    /// Weights from a cosine histogram of the target population, over strata at or above
    /// `threshold`.
    pub fn with_population(self, cosines: &[f64], threshold: f64) -> Result<Self> {
        let mut counts = vec![0usize; self.strata.len()];
        let mut total = 0;
        for &c in cosines.iter().filter(|&&c| c >= threshold) {
            counts[self.index_of(c)] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::InvalidInput(
                "no population pairs at or above the threshold".into(),
            ));
        }
        let weights: Vec<Option<f64>> = counts
            .iter()
            .map(|&n| (n > 0).then(|| n as f64 / total as f64))
            .collect();
        self.with_weights(&weights)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.strata.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} per-stratum values, got {n}",
                self.strata.len()
            )));
        }
        Ok(())
    }
}

/// Lower bound of the lowest stratum whose annotated match rate reaches `cutoff`; all
/// lower strata are excluded from judging. Strata without annotations are skipped.
pub fn calibrate_threshold(table: &StratumTable, cutoff: f64) -> Result<f64> {
    table
        .strata
        .iter()
        .find(|s| s.match_rate.is_some_and(|r| r >= cutoff))
        .map(|s| s.lower)
        .ok_or(Error::NoUsableThreshold(cutoff))
}

/// Weighted sum of per-stratum metrics over strata carrying both a weight and metrics.
///
/// Weights are used as given. Their sum must be 1 within
/// [`ROUNDED_WEIGHT_TOLERANCE`] per retained stratum, which admits weights published at
/// three decimals.
pub fn distribution_weighted(table: &StratumTable) -> Result<JudgeMetrics> {
    let retained: Vec<(f64, JudgeMetrics)> = table
        .strata
        .iter()
        .filter_map(|s| Some((s.weight?, s.metrics?)))
        .collect();
    distribution_weighted_rows(&retained, ROUNDED_WEIGHT_TOLERANCE * retained.len() as f64)
}

/// As [`distribution_weighted`], over explicit (weight, metrics) rows and tolerance.
pub fn distribution_weighted_rows(
    rows: &[(f64, JudgeMetrics)],
    tolerance: f64,
) -> Result<JudgeMetrics> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "no stratum carries both weight and metrics".into(),
        ));
    }
    let total: f64 = rows.iter().map(|(w, _)| w).sum();
    if (total - 1.0).abs() > tolerance {
        return Err(Error::InvalidInput(format!(
            "stratum weights sum to {total}, not 1 (tolerance {tolerance})"
        )));
    }
    let sum = |f: fn(&JudgeMetrics) -> f64| rows.iter().map(|(w, m)| w * f(m)).sum::<f64>();
    Ok(JudgeMetrics {
        accuracy: sum(|m| m.accuracy),
        precision: sum(|m| m.precision),
        recall: sum(|m| m.recall),
        f1: sum(|m| m.f1),
    })
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A rectangular grid of nonnegative counts with a positive total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map(Vec::len).unwrap_or(0);
        if counts.is_empty() || cols == 0 || counts.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput(
                "contingency table must be a nonempty rectangular grid".into(),
            ));
        }
        let t = ContingencyTable { counts };
        if t.total() == 0 {
            return Err(Error::InvalidInput(
                "contingency table has zero total".into(),
            ));
        }
        Ok(t)
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    pub fn cols(&self) -> usize {
        self.counts[0].len()
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.counts[r][c]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols())
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }
}

/// Prevalence- and bias-adjusted kappa for two raters: `2·p_o − 1`.
pub fn pabak(observed_agreement: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&observed_agreement) {
        return Err(Error::InvalidInput(format!(
            "observed agreement {observed_agreement} outside [0, 1]"
        )));
    }
    Ok(2.0 * observed_agreement - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaOutcome {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    /// Set when chance agreement is 1 (a single class on both sides); kappa is reported as 0.
    pub degenerate: bool,
}

/// Cohen's kappa on a square rater-by-rater confusion table.
pub fn cohen_kappa(table: &ContingencyTable) -> Result<KappaOutcome> {
    if table.rows() != table.cols() {
        return Err(Error::InvalidInput(format!(
            "cohen_kappa needs a square table, got {}x{}",
            table.rows(),
            table.cols()
        )));
    }
    let n = table.total() as f64;
    let p_o = (0..table.rows()).map(|i| table.get(i, i)).sum::<u64>() as f64 / n;
    let p_e = table
        .row_sums()
        .iter()
        .zip(table.col_sums())
        .map(|(&r, c)| r as f64 * c as f64)
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(KappaOutcome {
            kappa: 0.0,
            observed_agreement: p_o,
            expected_agreement: p_e,
            degenerate: true,
        });
    }
    Ok(KappaOutcome {
        kappa: (p_o - p_e) / (1.0 - p_e),
        observed_agreement: p_o,
        expected_agreement: p_e,
        degenerate: false,
    })
}

/// Builds the confusion table from paired labels and computes Cohen's kappa.
pub fn kappa_from_pairs<L: Ord + Clone>(pairs: &[(L, L)]) -> Result<KappaOutcome> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no label pairs".into()));
    }
    let mut index = BTreeMap::new();
    for (a, b) in pairs {
        let next = index.len();
        index.entry(a.clone()).or_insert(next);
        let next = index.len();
        index.entry(b.clone()).or_insert(next);
    }
    let k = index.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (a, b) in pairs {
        counts[index[a]][index[b]] += 1;
    }
    cohen_kappa(&ContingencyTable::new(counts)?)
}

/// Krippendorff's alpha with the nominal metric.
///
/// `labels[u][j]` is annotator `j`'s label for unit `u`, `None` when missing. Units with
/// fewer than two labels are not pairable and are ignored.
pub fn krippendorff_alpha<L: Ord + Clone>(labels: &[Vec<Option<L>>]) -> Result<f64> {
    // coincidence matrix o[c][k]
    let mut coincidence: BTreeMap<(L, L), f64> = BTreeMap::new();
    let mut pairable_units = 0usize;
    for unit in labels {
        let values: Vec<&L> = unit.iter().flatten().collect();
        let m = values.len();
        if m < 2 {
            continue;
        }
        pairable_units += 1;
        let w = 1.0 / (m as f64 - 1.0);
        for (i, a) in values.iter().enumerate() {
            for (j, b) in values.iter().enumerate() {
                if i != j {
                    *coincidence.entry(((*a).clone(), (*b).clone())).or_default() += w;
                }
            }
        }
    }
    if pairable_units == 0 {
        return Err(Error::InvalidInput(
            "krippendorff_alpha needs at least one unit with two or more labels".into(),
        ));
    }
    let mut marginals: BTreeMap<L, f64> = BTreeMap::new();
    for ((c, _), v) in &coincidence {
        *marginals.entry(c.clone()).or_default() += v;
    }
    let n: f64 = marginals.values().sum();
    let observed_disagreement: f64 = coincidence
        .iter()
        .filter(|((c, k), _)| c != k)
        .map(|(_, v)| v)
        .sum();
    let mut expected_disagreement = 0.0;
    for (c, nc) in &marginals {
        for (k, nk) in &marginals {
            if c != k {
                expected_disagreement += nc * nk;
            }
        }
    }
    if expected_disagreement == 0.0 {
        return Err(Error::InvalidInput(
            "krippendorff_alpha is undefined when every label takes the same value".into(),
        ));
    }
    Ok(1.0 - (n - 1.0) * observed_disagreement / expected_disagreement)
}

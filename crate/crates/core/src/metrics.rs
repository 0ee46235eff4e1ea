//! Merit-based top-k exposure fairness and NDCG.
//!
//! The exposure of a group in the top-k of a ranking is the summed
//! examination propensity of its members in that prefix, divided by the
//! group size. [`ExposureLedger`] accumulates this per group and tracked
//! prefix over time. Dividing the time-averaged exposure by the group's
//! merit (mean expected relevance of its documents) gives the
//! exposure-per-merit ratio; Unfairness@k is the mean absolute pairwise
//! difference of these ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Corpus, GroupId, PropensityCurve, Ranking};

/// Exposure of `group` within the top-`k` of `ranking`, normalized by group size.
pub fn prefix_exposure(
    ranking: &Ranking,
    corpus: &Corpus,
    curve: PropensityCurve,
    group: GroupId,
    k: usize,
) -> Result<f64> {
    let n = ranking.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("prefix k={k} outside 1..={n}")));
    }
    if group >= corpus.num_groups() {
        return Err(Error::Config(format!("unknown group {group}")));
    }
    let groups = corpus.group_of();
    let sum: f64 = ranking
        .prefix(k)
        .iter()
        .enumerate()
        .filter(|(_, &d)| groups[d] == group)
        .map(|(i, _)| curve.at(i + 1))
        .sum();
    Ok(sum / corpus.group_sizes()[group] as f64)
}

/// Cumulative per-group exposure at a fixed set of prefixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureLedger {
    tracked: Vec<usize>,
    num_groups: usize,
    group_sizes: Vec<usize>,
    /// Row-major `num_groups × tracked.len()`.
    cum: Vec<f64>,
    steps: usize,
    curve: PropensityCurve,
}

impl ExposureLedger {
    /// `tracked` is sorted and deduplicated; every entry must lie in `1..=n`.
    pub fn new(corpus: &Corpus, tracked: &[usize], curve: PropensityCurve) -> Result<Self> {
        let n = corpus.len();
        let mut ks = tracked.to_vec();
        ks.sort_unstable();
        ks.dedup();
        if ks.is_empty() {
            return Err(Error::Config("no tracked prefixes".into()));
        }
        if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
            return Err(Error::Config(format!("tracked prefix {k} outside 1..={n}")));
        }
        Ok(Self {
            cum: vec![0.0; corpus.num_groups() * ks.len()],
            tracked: ks,
            num_groups: corpus.num_groups(),
            group_sizes: corpus.group_sizes().to_vec(),
            steps: 0,
            curve,
        })
    }

    pub fn tracked(&self) -> &[usize] {
        &self.tracked
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn curve(&self) -> PropensityCurve {
        self.curve
    }

    pub fn slot(&self, k: usize) -> Option<usize> {
        self.tracked.binary_search(&k).ok()
    }

    /// Cumulative exposure of `group` at tracked prefix `k`.
    pub fn cum_exposure(&self, group: GroupId, k: usize) -> Option<f64> {
        let s = self.slot(k)?;
        self.cum.get(group * self.tracked.len() + s).copied()
    }

    pub(crate) fn cum_at_slot(&self, group: GroupId, slot: usize) -> f64 {
        self.cum[group * self.tracked.len() + slot]
    }

    /// Adds one ranking's prefix exposures at every tracked prefix.
    pub fn update(&mut self, ranking: &Ranking, group_of: &[GroupId]) -> Result<()> {
        if group_of.len() != ranking.len() {
            return Err(Error::LengthMismatch {
                what: "group labels",
                expected: ranking.len(),
                got: group_of.len(),
            });
        }
        self.update_prefix(ranking.order(), group_of)
    }

    /// Like [`update`](Self::update) but only needs the top positions, at
    /// least up to the largest tracked prefix.
    pub fn update_prefix(&mut self, order: &[usize], group_of: &[GroupId]) -> Result<()> {
        let max_k = *self.tracked.last().expect("non-empty");
        if max_k > order.len() {
            return Err(Error::Config(format!(
                "ranking of length {} shorter than tracked prefix {max_k}",
                order.len()
            )));
        }
        let width = self.tracked.len();
        let mut running = vec![0.0; self.num_groups];
        let mut next = 0;
        for (i, &d) in order[..max_k].iter().enumerate() {
            running[group_of[d]] += self.curve.at(i + 1);
            while next < width && self.tracked[next] == i + 1 {
                for (g, &r) in running.iter().enumerate() {
                    self.cum[g * width + next] += r / self.group_sizes[g] as f64;
                }
                next += 1;
            }
        }
        self.steps += 1;
        Ok(())
    }

    /// Time-averaged exposure divided by merit, per group, at prefix `k`.
    pub fn exposure_per_merit(&self, merits: &MeritTable, k: usize) -> Result<Vec<f64>> {
        let slot = self
            .slot(k)
            .ok_or_else(|| Error::Config(format!("prefix {k} is not tracked")))?;
        if self.steps == 0 {
            return Err(Error::Config("ledger has no steps yet".into()));
        }
        if merits.merit.len() != self.num_groups {
            return Err(Error::LengthMismatch {
                what: "merit table",
                expected: self.num_groups,
                got: merits.merit.len(),
            });
        }
        let tau = self.steps as f64;
        (0..self.num_groups)
            .map(|g| {
                let merit = merits.merit[g];
                if !(merit > 0.0) {
                    return Err(Error::NonPositiveMerit { group: g, merit });
                }
                Ok(self.cum_at_slot(g, slot) / tau / merit)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeritSource {
    True,
    Estimated,
}

/// Mean (true or estimated) relevance of each group's documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeritTable {
    pub merit: Vec<f64>,
    pub source: MeritSource,
}

impl MeritTable {
    pub fn from_relevance(corpus: &Corpus, relevance: &[f64], source: MeritSource) -> Result<Self> {
        if relevance.len() != corpus.len() {
            return Err(Error::LengthMismatch {
                what: "relevance vector",
                expected: corpus.len(),
                got: relevance.len(),
            });
        }
        let mut merit = vec![0.0; corpus.num_groups()];
        for (&g, &r) in corpus.group_of().iter().zip(relevance) {
            merit[g] += r;
        }
        for (m, &size) in merit.iter_mut().zip(corpus.group_sizes()) {
            *m /= size as f64;
        }
        Ok(Self { merit, source })
    }
}

/// Mean absolute pairwise difference, `2/(m(m−1)) Σ_{i<j} |v_i − v_j|`.
/// Zero for fewer than two groups.
pub fn mean_pairwise_disparity(values: &[f64]) -> f64 {
    let m = values.len();
    if m < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += (values[i] - values[j]).abs();
        }
    }
    2.0 * total / (m * (m - 1)) as f64
}

pub fn unfairness_at_k(ledger: &ExposureLedger, merits: &MeritTable, k: usize) -> Result<f64> {
    Ok(mean_pairwise_disparity(&ledger.exposure_per_merit(merits, k)?))
}

/// NDCG of `ranking` against `gains` at cutoff `k` (clamped to `n`), with
/// the `1/log2(1+i)` discount. All-zero gains yield 1.0.
pub fn ndcg_at_k(ranking: &Ranking, gains: &[f64], k: usize) -> Result<f64> {
    Ok(ndcg_at_ks(ranking, gains, &[k])?[0])
}

/// NDCG at several cutoffs sharing one sort of the ideal ordering.
pub fn ndcg_at_ks(ranking: &Ranking, gains: &[f64], ks: &[usize]) -> Result<Vec<f64>> {
    let n = ranking.len();
    if gains.len() != n {
        return Err(Error::LengthMismatch {
            what: "gains",
            expected: n,
            got: gains.len(),
        });
    }
    if let Some(g) = gains.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("or negative gain {g}"),
        });
    }
    let mut ideal = gains.to_vec();
    ideal.sort_unstable_by(|a, b| b.total_cmp(a));
    let discount = |i: usize| 1.0 / (2.0 + i as f64).log2();
    let mut dcg = Vec::with_capacity(n);
    let mut idcg = Vec::with_capacity(n);
    let (mut acc, mut iacc) = (0.0, 0.0);
    for (i, &d) in ranking.order().iter().enumerate() {
        acc += gains[d] * discount(i);
        iacc += ideal[i] * discount(i);
        dcg.push(acc);
        idcg.push(iacc);
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let k = k.clamp(1, n.max(1));
            if n == 0 || idcg[k - 1] <= 0.0 {
                1.0
            } else {
                (dcg[k - 1] / idcg[k - 1]).min(1.0)
            }
        })
        .collect())
}

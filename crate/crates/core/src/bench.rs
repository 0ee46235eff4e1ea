//! Wall-time comparison of the FairCo and MMF fairness controllers.
//!
//! Only the per-step selection of the top `k` is timed. Relevance scores,
//! MMF's per-group queues and the ledgers are prepared outside the timed
//! region, since they belong to estimation and bookkeeping rather than to
//! fairness control.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MeritSource, MeritTable};
use crate::model::{Corpus, PropensityCurve};
use crate::policies::{
    rank_by_scores, FaircoConfig, FaircoController, GroupPriorityQueues, MmfConfig, MmfController,
};
use crate::sim::equal_groups;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub policy: String,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub repetitions: usize,
    pub mean_micros: f64,
    pub median_micros: f64,
}

pub const BENCH_HEADER: &str = "policy,n,k,m,repetitions,mean_micros,median_micros";

impl BenchRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.policy, self.n, self.k, self.m, self.repetitions, self.mean_micros, self.median_micros
        )
    }
}

/// Steps of simulated history given to each controller before timing.
const WARMUP_STEPS: usize = 20;

fn stats(mut samples: Vec<f64>) -> (f64, f64) {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    let median = if samples.len().is_multiple_of(2) {
        (samples[mid - 1] + samples[mid]) / 2.0
    } else {
        samples[mid]
    };
    (mean, median)
}

/// Times one top-`k` fairness-controlled selection per repetition for
/// FairCo and MMF (with every position a fairness pick) at each corpus size.
/// Returns one row per (policy, n), FairCo first.
pub fn benchmark_controllers(
    n_values: &[usize],
    k: usize,
    m: usize,
    repetitions: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    if n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("n values must be strictly increasing".into()));
    }
    let curve = PropensityCurve::LogDiscount;
    let mut fairco_rows = Vec::new();
    let mut mmf_rows = Vec::new();
    for &n in n_values {
        if n < k.max(m) {
            return Err(Error::Config(format!("n = {n} must be at least k = {k} and m = {m}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(n as u64));
        let corpus = Corpus::from_groups(&equal_groups(n, m), m)?;
        let group_of = corpus.group_of();
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let merits = MeritTable::from_relevance(&corpus, &scores, MeritSource::Estimated)?;

        let mut fairco = FaircoController::new(&corpus, FaircoConfig::default(), curve)?;
        let mut mmf = MmfController::new(&corpus, MmfConfig::new(1.0, k, false)?, curve)?;
        for t in 1..=WARMUP_STEPS {
            let noisy: Vec<f64> = scores.iter().map(|s| s + 0.1 * rng.random::<f64>()).collect();
            let ranking = rank_by_scores(&noisy, t)?;
            fairco.observe(&ranking, group_of)?;
            mmf.observe(&ranking, group_of)?;
        }
        let queues = GroupPriorityQueues::build(&scores, &corpus, k)?;

        let warm = (repetitions / 10).max(1);
        let mut fairco_times = Vec::with_capacity(repetitions);
        let mut mmf_times = Vec::with_capacity(repetitions);
        for rep in 0..warm + repetitions {
            let started = Instant::now();
            black_box(fairco.select_top_k(black_box(&scores), group_of, &merits, k)?);
            let fairco_micros = started.elapsed().as_secs_f64() * 1e6;

            let mut q = queues.clone();
            let started = Instant::now();
            black_box(mmf.select(black_box(&mut q), &merits, k, &mut rng)?);
            let mmf_micros = started.elapsed().as_secs_f64() * 1e6;

            if rep >= warm {
                fairco_times.push(fairco_micros);
                mmf_times.push(mmf_micros);
            }
        }
        for (policy, times, rows) in [
            ("fairco", fairco_times, &mut fairco_rows),
            ("mmf", mmf_times, &mut mmf_rows),
        ] {
            let (mean, median) = stats(times);
            rows.push(BenchRow {
                policy: policy.to_string(),
                n,
                k,
                m,
                repetitions,
                mean_micros: mean,
                median_micros: median,
            });
        }
    }
    fairco_rows.extend(mmf_rows);
    Ok(fairco_rows)
}

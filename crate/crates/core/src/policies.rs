//! Ranking policies.
//!
//! * [`rank_naive`] sorts by raw click counts.
//! * [`rank_by_scores`] sorts by any relevance estimate (global IPS
//!   estimates, personalized model scores, or true relevance).
//! * [`FaircoController`] adds a proportional exposure-error term to the
//!   scores before sorting, computed on whole-list exposure.
//! * [`MmfController`] builds the ranking position by position, choosing
//!   each document either greedily by relevance or, with probability λ,
//!   as the best document of the group whose estimated top-k exposure per
//!   merit is currently lowest.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::NaiveCounter;
use crate::metrics::{ExposureLedger, MeritTable};
use crate::model::{Corpus, DocId, GroupId, PropensityCurve, Ranking};

/// Estimated merits below this are treated as "unknown"; the group's
/// exposure-per-merit is then taken as zero.
pub const MERIT_FLOOR: f64 = 1e-6;

fn check_finite(scores: &[f64]) -> Result<()> {
    match scores.iter().position(|s| !s.is_finite()) {
        Some(d) => Err(Error::NonFinite {
            what: format!("score for document {d}"),
        }),
        None => Ok(()),
    }
}

/// Descending by score, ascending doc id on ties.
fn by_score_desc(scores: &[f64]) -> impl Fn(&DocId, &DocId) -> Ordering + '_ {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

pub fn rank_by_scores(scores: &[f64], timestep: usize) -> Result<Ranking> {
    check_finite(scores)?;
    let mut order: Vec<DocId> = (0..scores.len()).collect();
    order.sort_by(by_score_desc(scores));
    Ranking::new(order, timestep)
}

pub fn rank_naive(counter: &NaiveCounter, timestep: usize) -> Result<Ranking> {
    rank_by_scores(counter.click_sum(), timestep)
}

/// Estimated exposure-per-merit of each group at ledger slot `slot`,
/// including `pending[g]` extra cumulative exposure and counting
/// `extra_steps` additional time steps.
fn estimated_exposure_per_merit(
    ledger: &ExposureLedger,
    merits: &MeritTable,
    slot: usize,
    pending: Option<&[f64]>,
    extra_steps: usize,
) -> Vec<f64> {
    let tau = (ledger.steps() + extra_steps).max(1) as f64;
    (0..ledger.num_groups())
        .map(|g| {
            let merit = merits.merit[g];
            if merit < MERIT_FLOOR {
                return 0.0;
            }
            let extra = pending.map_or(0.0, |p| p[g]);
            (ledger.cum_at_slot(g, slot) + extra) / tau / merit
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaircoConfig {
    /// Weight of the exposure-error term.
    pub gain: f64,
}

impl Default for FaircoConfig {
    fn default() -> Self {
        Self { gain: 0.01 }
    }
}

impl FaircoConfig {
    pub fn new(gain: f64) -> Result<Self> {
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(Error::Config(format!("FairCo gain must be positive, got {gain}")));
        }
        Ok(Self { gain })
    }
}

/// Perturbed scores `s(d) + gain·τ·max(0, max_j E(G_j) − E(G(d)))`, where
/// `E` is the estimated whole-list exposure-per-merit and `τ` the number of
/// steps in the ledger.
pub fn fairco_scores(
    scores: &[f64],
    group_of: &[GroupId],
    ledger: &ExposureLedger,
    merits: &MeritTable,
    cfg: &FaircoConfig,
) -> Result<Vec<f64>> {
    check_finite(scores)?;
    if scores.len() != group_of.len() {
        return Err(Error::LengthMismatch {
            what: "scores",
            expected: group_of.len(),
            got: scores.len(),
        });
    }
    if merits.merit.len() != ledger.num_groups() {
        return Err(Error::LengthMismatch {
            what: "merit table",
            expected: ledger.num_groups(),
            got: merits.merit.len(),
        });
    }
    let tau = ledger.steps();
    if tau == 0 {
        return Ok(scores.to_vec());
    }
    let slot = ledger.tracked().len() - 1;
    let exp_mer = estimated_exposure_per_merit(ledger, merits, slot, None, 0);
    let top = exp_mer.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let boost: Vec<f64> = exp_mer
        .iter()
        .map(|e| cfg.gain * tau as f64 * (top - e).max(0.0))
        .collect();
    Ok(scores
        .iter()
        .zip(group_of)
        .map(|(s, &g)| s + boost[g])
        .collect())
}

/// FairCo ranking: sort the perturbed scores.
pub fn rank_fairco(
    scores: &[f64],
    group_of: &[GroupId],
    ledger: &ExposureLedger,
    merits: &MeritTable,
    cfg: &FaircoConfig,
    timestep: usize,
) -> Result<Ranking> {
    rank_by_scores(&fairco_scores(scores, group_of, ledger, merits, cfg)?, timestep)
}

/// FairCo with its own whole-list exposure ledger.
#[derive(Debug, Clone)]
pub struct FaircoController {
    cfg: FaircoConfig,
    ledger: ExposureLedger,
}

impl FaircoController {
    pub fn new(corpus: &Corpus, cfg: FaircoConfig, curve: PropensityCurve) -> Result<Self> {
        Ok(Self {
            cfg,
            ledger: ExposureLedger::new(corpus, &[corpus.len()], curve)?,
        })
    }

    pub fn ledger(&self) -> &ExposureLedger {
        &self.ledger
    }

    pub fn rank(
        &self,
        scores: &[f64],
        group_of: &[GroupId],
        merits: &MeritTable,
        timestep: usize,
    ) -> Result<Ranking> {
        rank_fairco(scores, group_of, &self.ledger, merits, &self.cfg, timestep)
    }

    /// Top-`k` only: perturb every score, then partially select. This is the
    /// per-step fairness-control work measured by the benchmark.
    pub fn select_top_k(
        &self,
        scores: &[f64],
        group_of: &[GroupId],
        merits: &MeritTable,
        k: usize,
    ) -> Result<Vec<DocId>> {
        let perturbed = fairco_scores(scores, group_of, &self.ledger, merits, &self.cfg)?;
        let mut ids: Vec<DocId> = (0..perturbed.len()).collect();
        let k = k.min(ids.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let cmp = by_score_desc(&perturbed);
        if k < ids.len() {
            ids.select_nth_unstable_by(k - 1, &cmp);
            ids.truncate(k);
        }
        ids.sort_by(cmp);
        Ok(ids)
    }

    pub fn observe(&mut self, ranking: &Ranking, group_of: &[GroupId]) -> Result<()> {
        self.ledger.update(ranking, group_of)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmfConfig {
    /// Probability of a fairness-driven pick at each position.
    pub lambda: f64,
    /// Number of top positions whose exposure is controlled.
    pub k: usize,
    /// Whether estimates come from a learned model rather than IPS averages.
    pub use_ltr_model: bool,
}

impl MmfConfig {
    pub fn new(lambda: f64, k: usize, use_ltr_model: bool) -> Result<Self> {
        let cfg = Self {
            lambda,
            k,
            use_ltr_model,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("MMF prefix k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    score: f64,
    doc: DocId,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Higher score first, then lower doc id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.doc.cmp(&self.doc))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One bounded max-queue per group holding that group's (up to) `capacity`
/// best unranked documents by estimated relevance.
#[derive(Debug, Clone)]
pub struct GroupPriorityQueues {
    capacity: usize,
    queues: Vec<BinaryHeap<Entry>>,
    members: Vec<Vec<DocId>>,
    remaining: Vec<usize>,
    placed: Vec<bool>,
    scores: Vec<f64>,
}

fn top_entries(scores: &[f64], docs: impl Iterator<Item = DocId>, capacity: usize) -> BinaryHeap<Entry> {
    let mut worst_first: BinaryHeap<Reverse<Entry>> = BinaryHeap::with_capacity(capacity + 1);
    for doc in docs {
        let e = Entry {
            score: scores[doc],
            doc,
        };
        if worst_first.len() < capacity {
            worst_first.push(Reverse(e));
        } else if let Some(Reverse(min)) = worst_first.peek() {
            if e > *min {
                worst_first.pop();
                worst_first.push(Reverse(e));
            }
        }
    }
    worst_first.into_iter().map(|Reverse(e)| e).collect()
}

impl GroupPriorityQueues {
    pub fn build(scores: &[f64], corpus: &Corpus, capacity: usize) -> Result<Self> {
        check_finite(scores)?;
        if scores.len() != corpus.len() {
            return Err(Error::LengthMismatch {
                what: "estimates",
                expected: corpus.len(),
                got: scores.len(),
            });
        }
        let capacity = capacity.max(1);
        let mut members = vec![Vec::new(); corpus.num_groups()];
        for (d, &g) in corpus.group_of().iter().enumerate() {
            members[g].push(d);
        }
        let queues = members
            .iter()
            .map(|m| top_entries(scores, m.iter().copied(), capacity))
            .collect();
        Ok(Self {
            capacity,
            queues,
            remaining: members.iter().map(Vec::len).collect(),
            members,
            placed: vec![false; scores.len()],
            scores: scores.to_vec(),
        })
    }

    pub fn num_groups(&self) -> usize {
        self.queues.len()
    }

    pub fn queue_len(&self, group: GroupId) -> usize {
        self.queues[group].len()
    }

    /// Whether the group still has unranked documents (queued or not).
    pub fn has_remaining(&self, group: GroupId) -> bool {
        self.remaining[group] > 0
    }

    fn ensure_filled(&mut self, group: GroupId) {
        if self.queues[group].is_empty() && self.remaining[group] > 0 {
            let placed = &self.placed;
            self.queues[group] = top_entries(
                &self.scores,
                self.members[group].iter().copied().filter(|&d| !placed[d]),
                self.capacity,
            );
        }
    }

    pub fn peek(&mut self, group: GroupId) -> Option<(DocId, f64)> {
        self.ensure_filled(group);
        self.queues[group].peek().map(|e| (e.doc, e.score))
    }

    pub fn pop(&mut self, group: GroupId) -> Option<DocId> {
        self.ensure_filled(group);
        let e = self.queues[group].pop()?;
        self.placed[e.doc] = true;
        self.remaining[group] -= 1;
        Some(e.doc)
    }

    /// Group holding the globally best unranked document.
    pub fn best_group(&mut self) -> Option<GroupId> {
        let mut best: Option<(Entry, GroupId)> = None;
        for g in 0..self.queues.len() {
            self.ensure_filled(g);
            if let Some(&e) = self.queues[g].peek() {
                if best.is_none_or(|(b, _)| e > b) {
                    best = Some((e, g));
                }
            }
        }
        best.map(|(_, g)| g)
    }
}

/// Exposure already handed out within the ranking under construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixState {
    /// 1-based position about to be filled.
    pub position: usize,
    /// Per group: summed propensity of this step's documents placed at
    /// positions `1..=min(position − 1, k)`.
    pub placed_exposure: Vec<f64>,
    /// Per group: whether unranked documents remain.
    pub available: Vec<bool>,
}

impl PrefixState {
    pub fn new(num_groups: usize) -> Self {
        Self {
            position: 1,
            placed_exposure: vec![0.0; num_groups],
            available: vec![true; num_groups],
        }
    }

    /// Records that `group` received the current position, then advances.
    /// Exposure beyond the controlled prefix `k` is not accumulated.
    pub fn place(&mut self, group: GroupId, curve: PropensityCurve, k: usize) {
        if self.position <= k {
            self.placed_exposure[group] += curve.at(self.position);
        }
        self.position += 1;
    }
}

/// The group whose estimated exposure-per-merit at the current prefix is
/// lowest among groups with documents left; ties go to the lowest id.
///
/// `ledger` must track prefixes `1..=k` contiguously; positions beyond `k`
/// are evaluated at prefix `k`. The current step counts as one extra time
/// step, with its already-placed documents contributing their exposure.
pub fn mmf_select_group(
    ledger: &ExposureLedger,
    merits: &MeritTable,
    state: &PrefixState,
) -> Result<GroupId> {
    let m = ledger.num_groups();
    if merits.merit.len() != m || state.placed_exposure.len() != m || state.available.len() != m {
        return Err(Error::LengthMismatch {
            what: "group state",
            expected: m,
            got: merits.merit.len(),
        });
    }
    let slot = ledger.tracked().len().min(state.position.max(1)) - 1;
    let pending: Vec<f64> = state
        .placed_exposure
        .iter()
        .zip(ledger.group_sizes())
        .map(|(e, &size)| e / size as f64)
        .collect();
    let exp_mer = estimated_exposure_per_merit(ledger, merits, slot, Some(&pending), 1);
    exp_mer
        .iter()
        .enumerate()
        .filter(|(g, _)| state.available[*g])
        .min_by(|(ga, a), (gb, b)| a.total_cmp(b).then(ga.cmp(gb)))
        .map(|(g, _)| g)
        .ok_or(Error::NoCandidates)
}

/// Per-trial MMF state: configuration plus the exposure ledger over the
/// controlled prefixes `1..=k`.
#[derive(Debug, Clone)]
pub struct MmfController {
    cfg: MmfConfig,
    ledger: ExposureLedger,
    curve: PropensityCurve,
}

impl MmfController {
    pub fn new(corpus: &Corpus, cfg: MmfConfig, curve: PropensityCurve) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.k.min(corpus.len());
        let prefixes: Vec<usize> = (1..=k).collect();
        Ok(Self {
            cfg: MmfConfig { k, ..cfg },
            ledger: ExposureLedger::new(corpus, &prefixes, curve)?,
            curve,
        })
    }

    pub fn config(&self) -> &MmfConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &ExposureLedger {
        &self.ledger
    }

    /// Fills `positions` slots from prebuilt queues.
    pub fn select<R: Rng + ?Sized>(
        &self,
        queues: &mut GroupPriorityQueues,
        merits: &MeritTable,
        positions: usize,
        rng: &mut R,
    ) -> Result<Vec<DocId>> {
        let m = queues.num_groups();
        let mut state = PrefixState::new(m);
        let mut order = Vec::with_capacity(positions);
        for _ in 0..positions {
            let fairness_pick = rng.random::<f64>() < self.cfg.lambda;
            let group = if fairness_pick {
                for (g, a) in state.available.iter_mut().enumerate() {
                    *a = queues.has_remaining(g);
                }
                mmf_select_group(&self.ledger, merits, &state)?
            } else {
                queues.best_group().ok_or(Error::NoCandidates)?
            };
            let doc = queues.pop(group).ok_or(Error::NoCandidates)?;
            order.push(doc);
            state.place(group, self.curve, self.cfg.k);
        }
        Ok(order)
    }

    /// Full ranking of the corpus for one step.
    pub fn rank<R: Rng + ?Sized>(
        &self,
        estimates: &[f64],
        corpus: &Corpus,
        merits: &MeritTable,
        rng: &mut R,
        timestep: usize,
    ) -> Result<Ranking> {
        let mut queues = GroupPriorityQueues::build(estimates, corpus, self.cfg.k)?;
        let order = self.select(&mut queues, merits, corpus.len(), rng)?;
        Ranking::new(order, timestep)
    }

    pub fn observe(&mut self, ranking: &Ranking, group_of: &[GroupId]) -> Result<()> {
        self.ledger.update(ranking, group_of)
    }
}

/// One-shot MMF ranking against an explicit ledger (which must track
/// `1..=cfg.k`).
pub fn mmf_rank<R: Rng + ?Sized>(
    estimates: &[f64],
    corpus: &Corpus,
    ledger: &ExposureLedger,
    merits: &MeritTable,
    cfg: &MmfConfig,
    rng: &mut R,
    timestep: usize,
) -> Result<Ranking> {
    cfg.validate()?;
    let k = cfg.k.min(corpus.len());
    if ledger.tracked() != (1..=k).collect::<Vec<_>>().as_slice() {
        return Err(Error::Config(format!(
            "MMF ledger must track prefixes 1..={k}"
        )));
    }
    let controller = MmfController {
        cfg: MmfConfig { k, ..*cfg },
        ledger: ledger.clone(),
        curve: ledger.curve(),
    };
    controller.rank(estimates, corpus, merits, rng, timestep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MeritSource;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const CURVE: PropensityCurve = PropensityCurve::LogDiscount;

    fn merits(v: &[f64]) -> MeritTable {
        MeritTable {
            merit: v.to_vec(),
            source: MeritSource::Estimated,
        }
    }

    #[test]
    fn naive_ordering() {
        let mut c = NaiveCounter::new(4);
        assert_eq!(rank_naive(&c, 1).unwrap().order(), &[0, 1, 2, 3]);
        let ranking = Ranking::identity(3, 1);
        let rec = crate::model::InteractionRecord {
            timestep: 1,
            ranking,
            relevance: vec![true; 3],
            clicks: vec![true, false, true],
            propensities: vec![1.0; 3],
        };
        c = NaiveCounter::new(3);
        for clicks in [[true, false, true], [true, false, false], [true, true, true]] {
            c.update(&crate::model::InteractionRecord {
                clicks: clicks.to_vec(),
                ..rec.clone()
            })
            .unwrap();
        }
        assert_eq!(c.click_sum(), &[3.0, 1.0, 2.0]);
        assert_eq!(rank_naive(&c, 1).unwrap().order(), &[0, 2, 1]);
    }

    #[test]
    fn score_sorting() {
        assert_eq!(rank_by_scores(&[0.5; 4], 1).unwrap().order(), &[0, 1, 2, 3]);
        assert_eq!(
            rank_by_scores(&[0.0, 1.0, 2.0, 3.0], 1).unwrap().order(),
            &[3, 2, 1, 0]
        );
        assert!(rank_by_scores(&[0.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn fairco_without_history_is_plain_sort() {
        let corpus = Corpus::from_groups(&[0, 1, 0, 1], 2).unwrap();
        let ctl = FaircoController::new(&corpus, FaircoConfig::default(), CURVE).unwrap();
        let scores = [0.1, 0.4, 0.3, 0.2];
        let r = ctl.rank(&scores, corpus.group_of(), &merits(&[0.5, 0.5]), 1).unwrap();
        assert_eq!(r, rank_by_scores(&scores, 1).unwrap());
    }

    #[test]
    fn fairco_equal_exposure_is_plain_sort() {
        // Two groups of one document each, both equally exposed over two steps.
        let corpus = Corpus::from_groups(&[0, 1], 2).unwrap();
        let mut ctl = FaircoController::new(&corpus, FaircoConfig::default(), CURVE).unwrap();
        ctl.observe(&Ranking::new(vec![0, 1], 1).unwrap(), corpus.group_of()).unwrap();
        ctl.observe(&Ranking::new(vec![1, 0], 2).unwrap(), corpus.group_of()).unwrap();
        let scores = [0.2, 0.9];
        let r = ctl.rank(&scores, corpus.group_of(), &merits(&[0.3, 0.3]), 3).unwrap();
        assert_eq!(r.order(), &[1, 0]);
    }

    #[test]
    fn fairco_large_gain_promotes_underexposed_group() {
        let corpus = Corpus::from_groups(&[0, 0, 1, 1], 2).unwrap();
        let mut ctl = FaircoController::new(&corpus, FaircoConfig::new(1e6).unwrap(), CURVE).unwrap();
        ctl.observe(&Ranking::new(vec![0, 1, 2, 3], 1).unwrap(), corpus.group_of()).unwrap();
        let scores = [0.9, 0.8, 0.1, 0.05];
        let r = ctl.rank(&scores, corpus.group_of(), &merits(&[0.5, 0.5]), 2).unwrap();
        assert_eq!(r.order(), &[2, 3, 0, 1]);
        let top = ctl.select_top_k(&scores, corpus.group_of(), &merits(&[0.5, 0.5]), 2).unwrap();
        assert_eq!(top, vec![2, 3]);
    }

    #[test]
    fn fairco_gain_must_be_positive() {
        assert!(FaircoConfig::new(0.0).is_err());
        assert!(FaircoConfig::new(-1.0).is_err());
    }

    #[test]
    fn mmf_config_validation() {
        assert!(MmfConfig::new(1.5, 3, false).is_err());
        assert!(MmfConfig::new(-0.1, 3, false).is_err());
        assert!(MmfConfig::new(0.5, 0, false).is_err());
        assert!(MmfConfig::new(0.5, 3, false).is_ok());
    }

    #[test]
    fn select_group_prefers_underexposed() {
        let corpus = Corpus::from_groups(&[0, 0, 1, 1], 2).unwrap();
        let mut ledger = ExposureLedger::new(&corpus, &[1, 2], CURVE).unwrap();
        ledger.update(&Ranking::new(vec![0, 1, 2, 3], 1).unwrap(), corpus.group_of()).unwrap();
        let g = mmf_select_group(&ledger, &merits(&[0.5, 0.5]), &PrefixState::new(2)).unwrap();
        assert_eq!(g, 1);
    }

    #[test]
    fn select_group_fresh_start_picks_lowest_id() {
        let corpus = Corpus::from_groups(&[1, 0, 1, 0], 2).unwrap();
        let ledger = ExposureLedger::new(&corpus, &[1, 2], CURVE).unwrap();
        let g = mmf_select_group(&ledger, &merits(&[0.0, 0.0]), &PrefixState::new(2)).unwrap();
        assert_eq!(g, 0);
        let mut state = PrefixState::new(2);
        state.available = vec![false, false];
        assert!(matches!(
            mmf_select_group(&ledger, &merits(&[0.0, 0.0]), &state),
            Err(Error::NoCandidates)
        ));
    }

    #[test]
    fn full_fairness_trace_on_four_documents() {
        // Groups {0,1} and {2,3}, equal merits, no history, λ = 1.
        // Pos 1: tie → G0. Pos 2: G0 has 1/2, G1 has 0 → G1.
        // Pos 3: G0 1/2 vs G1 (1/log2 3)/2 ≈ 0.315 → G1. Pos 4: only G0 left.
        let corpus = Corpus::from_groups(&[0, 0, 1, 1], 2).unwrap();
        let ctl = MmfController::new(&corpus, MmfConfig::new(1.0, 4, false).unwrap(), CURVE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = ctl
            .rank(&[0.9, 0.8, 0.7, 0.6], &corpus, &merits(&[1.0, 1.0]), &mut rng, 1)
            .unwrap();
        let groups: Vec<_> = r.order().iter().map(|&d| corpus.group_of()[d]).collect();
        assert_eq!(groups, vec![0, 1, 1, 0]);
        assert_eq!(r.order(), &[0, 2, 3, 1]);
    }

    #[test]
    fn lambda_zero_matches_score_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let groups: Vec<usize> = (0..40).map(|_| rng.random_range(0..3)).collect();
        let corpus = Corpus::from_groups(&groups, 3).unwrap();
        let ctl = MmfController::new(&corpus, MmfConfig::new(0.0, 5, false).unwrap(), CURVE).unwrap();
        for t in 1..50 {
            let scores: Vec<f64> = (0..40).map(|_| (rng.random::<f64>() * 8.0).floor()).collect();
            let r = ctl.rank(&scores, &corpus, &merits(&[0.2, 0.3, 0.1]), &mut rng, t).unwrap();
            assert_eq!(r, rank_by_scores(&scores, t).unwrap());
        }
    }

    #[test]
    fn queues_refill_when_exhausted() {
        let corpus = Corpus::from_groups(&[0, 0, 0, 0, 0, 1], 2).unwrap();
        let scores = [0.5, 0.4, 0.3, 0.2, 0.1, 0.0];
        let mut q = GroupPriorityQueues::build(&scores, &corpus, 2).unwrap();
        assert_eq!(q.queue_len(0), 2);
        let popped: Vec<_> = (0..5).map(|_| q.pop(0).unwrap()).collect();
        assert_eq!(popped, vec![0, 1, 2, 3, 4]);
        assert!(q.pop(0).is_none());
        assert!(!q.has_remaining(0));
        assert_eq!(q.best_group(), Some(1));
    }

    #[test]
    fn mmf_rank_requires_contiguous_ledger() {
        let corpus = Corpus::from_groups(&[0, 1, 0, 1], 2).unwrap();
        let ledger = ExposureLedger::new(&corpus, &[1, 3], CURVE).unwrap();
        let cfg = MmfConfig::new(0.5, 3, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(mmf_rank(&[0.1; 4], &corpus, &ledger, &merits(&[1.0, 1.0]), &cfg, &mut rng, 1).is_err());
        let ledger = ExposureLedger::new(&corpus, &[1, 2, 3], CURVE).unwrap();
        assert!(mmf_rank(&[0.1; 4], &corpus, &ledger, &merits(&[1.0, 1.0]), &cfg, &mut rng, 1).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

        proptest! {
            #[test]
            fn every_policy_returns_a_permutation(
                groups in proptest::collection::vec(0usize..3, 3..25),
                seed in any::<u64>(),
                lambda in 0.0f64..=1.0,
                k in 1usize..8,
            ) {
                let mut groups = groups;
                groups[0] = 0; groups[1] = 1; groups[2] = 2;
                let n = groups.len();
                let corpus = Corpus::from_groups(&groups, 3).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut mmf = MmfController::new(&corpus, MmfConfig::new(lambda, k, false).unwrap(), CURVE).unwrap();
                let mut fairco = FaircoController::new(&corpus, FaircoConfig::default(), CURVE).unwrap();
                for t in 1..6 {
                    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                    let est = merits(&[rng.random(), rng.random(), 0.0]);
                    let a = mmf.rank(&scores, &corpus, &est, &mut rng, t).unwrap();
                    let b = fairco.rank(&scores, corpus.group_of(), &est, t).unwrap();
                    prop_assert!(Ranking::new(a.order().to_vec(), t).is_ok());
                    prop_assert!(Ranking::new(b.order().to_vec(), t).is_ok());
                    prop_assert_eq!(a.len(), n);
                    mmf.observe(&a, corpus.group_of()).unwrap();
                    fairco.observe(&b, corpus.group_of()).unwrap();
                }
            }
        }
    }
}

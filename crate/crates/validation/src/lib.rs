//! Reference oracles for `mmf-core`, used by the acceptance suite.
//!
//! Everything here is recomputed directly from definitions and shares no
//! code paths with `mmf-core` beyond its public types.

use mmf_core::estimation::{
    ips_loss, ips_loss_gradient, skyline_loss, skyline_loss_gradient, MlpGradient, MlpRanker,
};
use mmf_core::metrics::{ExposureLedger, MeritSource, MeritTable};
use mmf_core::model::{Corpus, InteractionRecord, PropensityCurve, Ranking};
use mmf_core::policies::{mmf_select_group, PrefixState};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn log_propensity(rank: usize) -> f64 {
    1.0 / (1.0 + rank as f64).log2()
}

/// `Σ_t Σ_{i ≤ k, G(σ_t(i)) = g} p_i / |g|`, recomputed from scratch.
pub fn brute_force_cum_exposure(rankings: &[Ranking], group_of: &[usize], sizes: &[usize], g: usize, k: usize) -> f64 {
    rankings
        .iter()
        .map(|r| {
            r.order()
                .iter()
                .take(k)
                .enumerate()
                .filter(|(_, &d)| group_of[d] == g)
                .map(|(i, _)| log_propensity(i + 1))
                .sum::<f64>()
        })
        .sum::<f64>()
        / sizes[g] as f64
}

pub fn mean_abs_pairwise(v: &[f64]) -> f64 {
    let m = v.len();
    if m < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            s += (v[i] - v[j]).abs();
        }
    }
    2.0 * s / (m * (m - 1)) as f64
}

pub fn random_groups<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let mut groups: Vec<usize> = (0..n).map(|d| if d < m { d } else { rng.random_range(0..m) }).collect();
    groups.shuffle(rng);
    groups
}

pub fn random_ranking<R: Rng>(n: usize, t: usize, rng: &mut R) -> Ranking {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ranking::new(order, t).unwrap()
}

// ---------------------------------------------------------------------------
// Gradient check

pub struct GradientCheck {
    pub max_rel_error: f64,
    pub components: usize,
}

fn flatten(g: &MlpGradient) -> Vec<f64> {
    g.iter().copied().collect()
}

/// Relative error `|a − n| / max(|a| + |n|, 1e-8)` between analytic and
/// central-difference gradients of `loss` at every parameter.
pub fn check_gradient(
    model: &MlpRanker,
    analytic: &MlpGradient,
    loss: impl Fn(&MlpRanker) -> f64,
    h: f64,
) -> GradientCheck {
    let analytic = flatten(analytic);
    let mut probe = model.clone();
    let count = probe.num_parameters();
    assert_eq!(count, analytic.len());
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let orig = *probe.parameters_mut().nth(i).unwrap();
        *probe.parameters_mut().nth(i).unwrap() = orig + h;
        let up = loss(&probe);
        *probe.parameters_mut().nth(i).unwrap() = orig - h;
        let down = loss(&probe);
        *probe.parameters_mut().nth(i).unwrap() = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    GradientCheck {
        max_rel_error: worst,
        components: count,
    }
}

/// A tiny random model and input whose hidden pre-activations all stay
/// at least `margin` away from the ReLU kink.
pub fn tiny_instance<R: Rng>(rng: &mut R, margin: f64) -> (MlpRanker, Vec<f64>) {
    loop {
        let inputs = rng.random_range(2..=5);
        let hidden = rng.random_range(2..=6);
        let outputs = rng.random_range(2..=5);
        let mut model = MlpRanker::init(inputs, hidden, outputs, rng);
        for b in model.b1.iter_mut().chain(model.b2.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let acts = model.activations(&x).unwrap();
        if acts.hidden_pre.iter().all(|z| z.abs() > margin) {
            return (model, x);
        }
    }
}

/// A click record for a random ranking and random binary relevance.
pub fn random_record<R: Rng>(n: usize, rng: &mut R) -> (InteractionRecord, Vec<bool>) {
    let ranking = random_ranking(n, 1, rng);
    let relevance: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    let record = mmf_core::sim::sample_clicks(&ranking, &relevance, PropensityCurve::LogDiscount, rng).unwrap();
    (record, relevance)
}

/// Worst relative error over `instances` random tiny problems, for the
/// skyline loss and the IPS loss.
pub fn gradient_check_suite<R: Rng>(instances: usize, rng: &mut R) -> (f64, f64) {
    let h = 1e-5;
    let (mut skyline_worst, mut ips_worst) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (model, x) = tiny_instance(rng, 1e-3);
        let (record, relevance) = random_record(model.outputs(), rng);

        let analytic = skyline_loss_gradient(&model, &relevance, &x).unwrap();
        let c = check_gradient(&model, &analytic, |m| skyline_loss(m, &relevance, &x).unwrap(), h);
        skyline_worst = skyline_worst.max(c.max_rel_error);

        let analytic = ips_loss_gradient(&model, &record, &x).unwrap();
        let c = check_gradient(&model, &analytic, |m| ips_loss(m, &record, &x).unwrap(), h);
        ips_worst = ips_worst.max(c.max_rel_error);
    }
    (skyline_worst, ips_worst)
}

// ---------------------------------------------------------------------------
// Unbiasedness of the IPS loss

pub struct Unbiasedness {
    pub loss_mean: f64,
    pub loss_se: f64,
    pub skyline_loss: f64,
    /// Worst |mean − skyline| / SE over gradient components with non-zero variance.
    pub worst_gradient_z: f64,
    /// Worst |mean − skyline| over zero-variance gradient components.
    pub worst_constant_gap: f64,
    pub components: usize,
}

impl Unbiasedness {
    pub fn loss_z(&self) -> f64 {
        (self.loss_mean - self.skyline_loss).abs() / self.loss_se
    }
}

/// Monte-Carlo mean of the IPS loss and gradient over click resamples on a
/// fixed ranking, compared with the skyline loss and gradient.
pub fn ips_unbiasedness<R: Rng>(
    model: &MlpRanker,
    x: &[f64],
    ranking: &Ranking,
    relevance: &[bool],
    samples: usize,
    rng: &mut R,
) -> Unbiasedness {
    let n = relevance.len();
    let positions = ranking.positions();
    let skyline = skyline_loss(model, relevance, x).unwrap();
    let skyline_grad = flatten(&skyline_loss_gradient(model, relevance, x).unwrap());
    let dims = skyline_grad.len();
    let (mut s, mut s2) = (0.0, 0.0);
    let mut gs = vec![0.0; dims];
    let mut gs2 = vec![0.0; dims];
    for _ in 0..samples {
        // Independent click simulation: examined with probability p(rank), clicked if relevant.
        let propensities: Vec<f64> = (0..n).map(|d| log_propensity(positions[d])).collect();
        let clicks: Vec<bool> = (0..n).map(|d| relevance[d] && rng.random::<f64>() < propensities[d]).collect();
        let record = InteractionRecord {
            timestep: 1,
            ranking: ranking.clone(),
            relevance: relevance.to_vec(),
            clicks,
            propensities,
        };
        let l = ips_loss(model, &record, x).unwrap();
        s += l;
        s2 += l * l;
        for (i, v) in ips_loss_gradient(model, &record, x).unwrap().iter().enumerate() {
            gs[i] += v;
            gs2[i] += v * v;
        }
    }
    let k = samples as f64;
    let se = |sum: f64, sq: f64| ((sq / k - (sum / k).powi(2)).max(0.0) / (k - 1.0)).sqrt();
    let mut worst_z: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for i in 0..dims {
        let mean = gs[i] / k;
        let err = se(gs[i], gs2[i]);
        let gap = (mean - skyline_grad[i]).abs();
        if err > 1e-12 {
            worst_z = worst_z.max(gap / err);
        } else {
            worst_gap = worst_gap.max(gap);
        }
    }
    Unbiasedness {
        loss_mean: s / k,
        loss_se: se(s, s2),
        skyline_loss: skyline,
        worst_gradient_z: worst_z,
        worst_constant_gap: worst_gap,
        components: dims,
    }
}

// ---------------------------------------------------------------------------
// Marginal-fairness oracle

pub struct MfInstance {
    pub corpus: Corpus,
    pub ledger: ExposureLedger,
    pub merits: MeritTable,
    pub state: PrefixState,
    pub k: usize,
}

/// A random small instance: warmed ledger over prefixes `1..=k`, random
/// merits and a partially built ranking of the current step.
pub fn random_mf_instance<R: Rng>(rng: &mut R) -> MfInstance {
    let n = rng.random_range(2..=8);
    let m = rng.random_range(2..=3.min(n));
    let k = rng.random_range(1..=n);
    let groups = random_groups(n, m, rng);
    let corpus = Corpus::from_groups(&groups, m).unwrap();
    let tracked: Vec<usize> = (1..=k).collect();
    let mut ledger = ExposureLedger::new(&corpus, &tracked, PropensityCurve::LogDiscount).unwrap();
    let warm = rng.random_range(20..=200);
    for t in 1..=warm {
        ledger.update(&random_ranking(n, t, rng), &groups).unwrap();
    }
    let merits = MeritTable {
        merit: (0..m).map(|_| rng.random_range(0.05..1.0)).collect(),
        source: MeritSource::Estimated,
    };

    // Place a random prefix of this step's ranking.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let placed = rng.random_range(0..n);
    let mut state = PrefixState::new(m);
    for &d in &order[..placed] {
        state.place(groups[d], PropensityCurve::LogDiscount, k);
    }
    for g in 0..m {
        state.available[g] = order[placed..].iter().any(|&d| groups[d] == g);
    }
    MfInstance {
        corpus,
        ledger,
        merits,
        state,
        k,
    }
}

/// Exposure per merit of every group after adding one document of
/// `candidate` at the current position (evaluated at prefix
/// `min(position, k)` with the current step counted).
pub fn post_add_exposure_per_merit(inst: &MfInstance, candidate: Option<usize>) -> Vec<f64> {
    let m = inst.corpus.num_groups();
    let pos = inst.state.position;
    let prefix = pos.min(inst.k);
    let tau = (inst.ledger.steps() + 1) as f64;
    let sizes = inst.corpus.group_sizes();
    (0..m)
        .map(|g| {
            let mut step = inst.state.placed_exposure[g];
            if candidate == Some(g) && pos <= inst.k {
                step += log_propensity(pos);
            }
            let cum = inst.ledger.cum_exposure(g, prefix).unwrap() + step / sizes[g] as f64;
            cum / tau / inst.merits.merit[g]
        })
        .collect()
}

/// The available group whose addition minimizes post-add unfairness
/// (equivalently maximizes marginal fairness); lowest id on ties.
pub fn brute_force_best_group(inst: &MfInstance) -> usize {
    (0..inst.corpus.num_groups())
        .filter(|&g| inst.state.available[g])
        .map(|g| (g, mean_abs_pairwise(&post_add_exposure_per_merit(inst, Some(g)))))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .unwrap()
        .0
}

/// Whether every historical ledger entry at the evaluated prefix exceeds
/// 10× the propensity of the current position.
pub fn ledger_dominates_propensity(inst: &MfInstance) -> bool {
    let prefix = inst.state.position.min(inst.k);
    let p = log_propensity(inst.state.position);
    (0..inst.corpus.num_groups()).all(|g| inst.ledger.cum_exposure(g, prefix).unwrap() > 10.0 * p)
}

/// Whether the lowest available exposure-per-merit is separated from every
/// other group by more than 10× the largest one-position increment.
pub fn well_separated(inst: &MfInstance) -> bool {
    if inst.state.position > inst.k {
        return false;
    }
    let base = post_add_exposure_per_merit(inst, None);
    let tau = (inst.ledger.steps() + 1) as f64;
    let p = log_propensity(inst.state.position);
    let sizes = inst.corpus.group_sizes();
    let m = inst.corpus.num_groups();
    let delta = (0..m)
        .map(|g| p / sizes[g] as f64 / tau / inst.merits.merit[g])
        .fold(0.0, f64::max);
    let avail: Vec<usize> = (0..m).filter(|&g| inst.state.available[g]).collect();
    if avail.len() < 2 {
        return false;
    }
    let min_g = *avail.iter().min_by(|&&a, &&b| base[a].total_cmp(&base[b])).unwrap();
    (0..m).filter(|&g| g != min_g).all(|g| (base[g] - base[min_g]).abs() > 10.0 * delta)
}

pub struct MfOracleReport {
    pub gated_instances: usize,
    pub gated_agreements: usize,
    pub literal_instances: usize,
    pub literal_agreements: usize,
    pub drawn: usize,
}

/// Draws instances until `target` pass both the ledger-size filter and the
/// separation gate; agreement is counted on those. Instances passing only the
/// ledger-size filter are tallied separately.
pub fn marginal_fairness_oracle<R: Rng>(target: usize, rng: &mut R) -> MfOracleReport {
    let mut r = MfOracleReport {
        gated_instances: 0,
        gated_agreements: 0,
        literal_instances: 0,
        literal_agreements: 0,
        drawn: 0,
    };
    while r.gated_instances < target {
        r.drawn += 1;
        let inst = random_mf_instance(rng);
        if !inst.state.available.iter().any(|&a| a) || !ledger_dominates_propensity(&inst) {
            continue;
        }
        let chosen = mmf_select_group(&inst.ledger, &inst.merits, &inst.state).unwrap();
        let agree = chosen == brute_force_best_group(&inst);
        r.literal_instances += 1;
        r.literal_agreements += agree as usize;
        if well_separated(&inst) {
            r.gated_instances += 1;
            r.gated_agreements += agree as usize;
        }
    }
    r
}

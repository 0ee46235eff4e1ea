//! Multi-trial simulation runner.
//!
//! Each trial draws its own corpus (news) or rating matrix (synthetic
//! ratings), then simulates one user per time step: the policy ranks the
//! whole corpus, clicks are sampled from the position-biased click model,
//! estimators and models are updated, and evaluation metrics are computed
//! against the true relevance. Every random stream is derived from
//! `seed + trial`, so identical configurations give identical logs and
//! adding trials never changes earlier ones.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    ips_loss_gradient, sgd_step, skyline_loss_gradient, IpsEstimator, MlpRanker, NaiveCounter,
};
use crate::metrics::{ndcg_at_ks, unfairness_at_k, ExposureLedger, MeritSource, MeritTable};
use crate::model::{Corpus, PropensityCurve, Ranking};
use crate::policies::{
    rank_by_scores, rank_naive, FaircoConfig, FaircoController, MmfConfig, MmfController,
};
use crate::sim::{
    equal_groups, generate_synthetic_rating_matrix, load_groups, load_rating_matrix,
    news_relevance_probability, realize_relevance, sample_clicks, sample_news_corpus,
    sample_news_user, RatingMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    News,
    MovieSynthetic,
    MovieFile,
}

impl Scenario {
    pub fn uses_ratings(self) -> bool {
        !matches!(self, Scenario::News)
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "news" => Ok(Scenario::News),
            "movie-synthetic" => Ok(Scenario::MovieSynthetic),
            "movie-file" => Ok(Scenario::MovieFile),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::News => "news",
            Scenario::MovieSynthetic => "movie-synthetic",
            Scenario::MovieFile => "movie-file",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Sort by raw click counts.
    Naive,
    /// Sort by global IPS estimates.
    DultrGlob,
    /// Sort by a personalized model trained on IPS-weighted clicks.
    Dultr,
    /// Sort by true relevance (news) or a model trained on true relevance (ratings).
    Skyline,
    Fairco,
    Mmf,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Naive,
        PolicyKind::DultrGlob,
        PolicyKind::Dultr,
        PolicyKind::Skyline,
        PolicyKind::Fairco,
        PolicyKind::Mmf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Naive => "naive",
            PolicyKind::DultrGlob => "dultr-glob",
            PolicyKind::Dultr => "dultr",
            PolicyKind::Skyline => "skyline",
            PolicyKind::Fairco => "fairco",
            PolicyKind::Mmf => "mmf",
        }
    }

    /// Whether the policy ranks with the learned model in rating scenarios.
    fn uses_model(self, scenario: Scenario) -> bool {
        scenario.uses_ratings()
            && matches!(
                self,
                PolicyKind::Dultr | PolicyKind::Skyline | PolicyKind::Fairco | PolicyKind::Mmf
            )
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which per-step relevance feeds NDCG.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainMode {
    /// The user's relevance probabilities.
    #[default]
    Probability,
    /// The user's realized binary relevance.
    Realization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewsParams {
    pub num_docs: usize,
    /// Probability that a user is left-leaning.
    pub p_neg: f64,
    /// Users sampled to estimate each article's expected relevance.
    pub merit_samples: usize,
}

impl Default for NewsParams {
    fn default() -> Self {
        Self {
            num_docs: 30,
            p_neg: 0.5,
            merit_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MovieParams {
    pub num_users: usize,
    pub num_docs: usize,
    pub num_groups: usize,
    /// Latent dimension of the synthetic rating matrix.
    pub latent_rank: usize,
    pub sigmoid_slope: f64,
    pub sigmoid_center: f64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub ratings: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub groups: Option<PathBuf>,
}

impl Default for MovieParams {
    fn default() -> Self {
        Self {
            num_users: 10_000,
            num_docs: 100,
            num_groups: 5,
            latent_rank: 10,
            sigmoid_slope: 10.0,
            sigmoid_center: 3.0,
            hidden: 64,
            learning_rate: 0.01,
            ratings: None,
            features: None,
            groups: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub policy: PolicyKind,
    /// MMF fairness-pick probability.
    pub lambda: f64,
    /// Prefix controlled by MMF.
    pub mmf_k: usize,
    pub fairco_gain: f64,
    pub trials: usize,
    pub steps: usize,
    pub seed: u64,
    /// Prefixes at which metrics are logged; defaults to 1..=10, 20, 50 and n.
    pub tracked_ks: Option<Vec<usize>>,
    pub output_dir: Option<PathBuf>,
    pub metric_cadence: usize,
    /// Length of the trailing window for the windowed NDCG summary.
    pub final_window: usize,
    pub ndcg_gains: GainMode,
    /// Record per-step policy wall time (makes logs non-reproducible).
    pub timing: bool,
    pub parallel: bool,
    /// Keep every presented ranking in memory (for inspection and tests).
    #[serde(skip)]
    pub keep_rankings: bool,
    pub news: NewsParams,
    pub movie: MovieParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::News,
            policy: PolicyKind::Mmf,
            lambda: 0.6,
            mmf_k: 10,
            fairco_gain: 0.01,
            trials: 20,
            steps: 6000,
            seed: 0,
            tracked_ks: None,
            output_dir: None,
            metric_cadence: 50,
            final_window: 1000,
            ndcg_gains: GainMode::Probability,
            timing: false,
            parallel: true,
            keep_rankings: false,
            news: NewsParams::default(),
            movie: MovieParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Corpus size implied by the scenario (file scenarios are known only
    /// after loading).
    fn nominal_docs(&self) -> usize {
        match self.scenario {
            Scenario::News => self.news.num_docs,
            _ => self.movie.num_docs,
        }
    }

    pub fn resolved_ks(&self, n: usize) -> Vec<usize> {
        let mut ks = match &self.tracked_ks {
            Some(ks) => ks.clone(),
            None => (1..=10).chain([20, 50, n]).filter(|&k| k <= n).collect(),
        };
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    /// Short run identifier, e.g. `fairco` or `mmf-lambda0.6`.
    pub fn label(&self) -> String {
        match self.policy {
            PolicyKind::Mmf => format!("mmf-lambda{}", self.lambda),
            p => p.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.metric_cadence == 0 {
            return Err(Error::Config("metric_cadence must be at least 1".into()));
        }
        MmfConfig::new(self.lambda, self.mmf_k, false)?;
        FaircoConfig::new(self.fairco_gain)?;
        if !(0.0..=1.0).contains(&self.news.p_neg) {
            return Err(Error::Config(format!("p_neg must lie in [0, 1], got {}", self.news.p_neg)));
        }
        if self.policy == PolicyKind::Dultr && !self.scenario.uses_ratings() {
            return Err(Error::Config(
                "the personalized dultr policy needs user features (a movie scenario)".into(),
            ));
        }
        if self.scenario == Scenario::News && self.news.merit_samples == 0 {
            return Err(Error::Config("merit_samples must be at least 1".into()));
        }
        if self.scenario.uses_ratings() && !(self.movie.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if self.scenario == Scenario::MovieFile
            && (self.movie.ratings.is_none() || self.movie.features.is_none() || self.movie.groups.is_none())
        {
            return Err(Error::Config(
                "movie-file needs ratings, features and groups paths".into(),
            ));
        }
        if self.scenario != Scenario::MovieFile {
            let n = self.nominal_docs();
            if let Some(ks) = &self.tracked_ks {
                if let Some(k) = ks.iter().find(|&&k| k == 0 || k > n) {
                    return Err(Error::Config(format!("tracked prefix {k} outside 1..={n}")));
                }
            }
        }
        Ok(())
    }
}

/// Independent random streams of one trial.
struct TrialRngs {
    world: ChaCha8Rng,
    users: ChaCha8Rng,
    clicks: ChaCha8Rng,
    policy: ChaCha8Rng,
    model: ChaCha8Rng,
}

impl TrialRngs {
    fn new(seed: u64, trial: usize) -> Self {
        let base = seed.wrapping_add(trial as u64);
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(base);
            r.set_stream(s);
            r
        };
        Self {
            world: stream(0),
            users: stream(1),
            clicks: stream(2),
            policy: stream(3),
            model: stream(4),
        }
    }
}

/// Inputs shared by all trials of a run (a loaded rating file).
struct Shared {
    file: Option<(Arc<RatingMatrix>, Vec<usize>)>,
}

enum World {
    News { polarities: Vec<f64>, p_neg: f64 },
    Ratings(Arc<RatingMatrix>),
}

struct Environment {
    corpus: Corpus,
    world: World,
    /// Expected relevance of each document over the user population.
    true_relevance: Vec<f64>,
}

struct User {
    probabilities: Vec<f64>,
    row: Option<usize>,
}

impl Environment {
    fn build(cfg: &ExperimentConfig, shared: &Shared, rng: &mut ChaCha8Rng) -> Result<Self> {
        match cfg.scenario {
            Scenario::News => {
                let corpus = sample_news_corpus(cfg.news.num_docs, rng)?;
                let polarities: Vec<f64> = corpus
                    .docs()
                    .iter()
                    .map(|d| d.polarity.expect("news documents carry polarity"))
                    .collect();
                let mut truth = vec![0.0; polarities.len()];
                for _ in 0..cfg.news.merit_samples {
                    let user = sample_news_user(cfg.news.p_neg, rng);
                    for (t, &p) in truth.iter_mut().zip(&polarities) {
                        *t += news_relevance_probability(&user, p)?;
                    }
                }
                for t in &mut truth {
                    *t /= cfg.news.merit_samples as f64;
                }
                Ok(Self {
                    corpus,
                    world: World::News {
                        polarities,
                        p_neg: cfg.news.p_neg,
                    },
                    true_relevance: truth,
                })
            }
            Scenario::MovieSynthetic => {
                let m = &cfg.movie;
                let matrix = generate_synthetic_rating_matrix(
                    m.num_users,
                    m.num_docs,
                    m.latent_rank,
                    m.sigmoid_slope,
                    m.sigmoid_center,
                    rng,
                )?;
                let corpus = Corpus::from_groups(&equal_groups(m.num_docs, m.num_groups), m.num_groups)?;
                Ok(Self {
                    corpus,
                    true_relevance: matrix.column_means(),
                    world: World::Ratings(Arc::new(matrix)),
                })
            }
            Scenario::MovieFile => {
                let (matrix, groups) = shared
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::Config("rating file not loaded".into()))?;
                let num_groups = groups.iter().max().map_or(0, |g| g + 1);
                Ok(Self {
                    corpus: Corpus::from_groups(groups, num_groups)?,
                    true_relevance: matrix.column_means(),
                    world: World::Ratings(Arc::clone(matrix)),
                })
            }
        }
    }

    fn sample_user(&self, rng: &mut ChaCha8Rng) -> Result<User> {
        match &self.world {
            World::News { polarities, p_neg } => {
                let user = sample_news_user(*p_neg, rng);
                let probabilities = polarities
                    .iter()
                    .map(|&p| news_relevance_probability(&user, p))
                    .collect::<Result<_>>()?;
                Ok(User {
                    probabilities,
                    row: None,
                })
            }
            World::Ratings(matrix) => {
                let row = rng.random_range(0..matrix.num_users());
                Ok(User {
                    probabilities: matrix.row(row).to_vec(),
                    row: Some(row),
                })
            }
        }
    }

    fn features(&self, user: &User) -> Option<&[f64]> {
        match (&self.world, user.row) {
            (World::Ratings(m), Some(r)) => Some(m.features(r)),
            _ => None,
        }
    }
}

/// One logged metrics snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub trial: usize,
    pub step: usize,
    pub policy: String,
    pub lambda: f64,
    /// Running mean of per-step NDCG@k, one entry per tracked k.
    pub ndcg: Vec<f64>,
    /// Unfairness@k against true merits, one entry per tracked k.
    pub unfairness: Vec<f64>,
    pub ips_error: f64,
    pub step_micros: f64,
}

/// Per-cadence metric rows with a fixed column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub ks: Vec<usize>,
    pub rows: Vec<LogRow>,
}

impl TrialLog {
    pub fn header(ks: &[usize]) -> Vec<String> {
        let mut cols: Vec<String> = ["trial", "step", "policy", "lambda"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        cols.extend(ks.iter().map(|k| format!("ndcg@{k}")));
        cols.extend(ks.iter().map(|k| format!("unfairness@{k}")));
        cols.push("ips_error".into());
        cols.push("step_micros".into());
        cols
    }

    pub fn format_row(row: &LogRow) -> String {
        let mut fields = vec![
            row.trial.to_string(),
            row.step.to_string(),
            row.policy.clone(),
            row.lambda.to_string(),
        ];
        fields.extend(row.ndcg.iter().map(f64::to_string));
        fields.extend(row.unfairness.iter().map(f64::to_string));
        fields.push(row.ips_error.to_string());
        fields.push(row.step_micros.to_string());
        fields.join(",")
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Self::header(&self.ks).join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::format_row(row));
            out.push('\n');
        }
        out
    }

    /// Parses a log written by [`to_csv_string`](Self::to_csv_string).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let err = |row: usize, msg: String| Error::Parse {
            file: "<trial log>".into(),
            row,
            msg,
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| err(0, "empty log".into()))?
            .split(',')
            .collect();
        let ks: Vec<usize> = header
            .iter()
            .filter_map(|c| c.strip_prefix("ndcg@"))
            .map(|k| k.parse().map_err(|e| err(0, format!("bad column ndcg@{k}: {e}"))))
            .collect::<Result<_>>()?;
        if header != Self::header(&ks).iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(err(0, "header does not match the trial log schema".into()));
        }
        let nk = ks.len();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(err(i + 1, format!("expected {} fields, found {}", header.len(), f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(i + 1, format!("{s:?}: {e}")));
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(i + 1, format!("{s:?}: {e}")));
            rows.push(LogRow {
                trial: int(f[0])?,
                step: int(f[1])?,
                policy: f[2].to_string(),
                lambda: num(f[3])?,
                ndcg: f[4..4 + nk].iter().map(|s| num(s)).collect::<Result<_>>()?,
                unfairness: f[4 + nk..4 + 2 * nk].iter().map(|s| num(s)).collect::<Result<_>>()?,
                ips_error: num(f[4 + 2 * nk])?,
                step_micros: num(f[5 + 2 * nk])?,
            });
        }
        Ok(Self { ks, rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub rows: Vec<LogRow>,
    /// Final-step values keyed by metric name (see [`Summary`]).
    pub finals: BTreeMap<String, f64>,
    /// Expected relevance of each document in this trial's world.
    pub true_relevance: Vec<f64>,
    pub rankings: Option<Vec<Ranking>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
    /// Per-trial values, in trial order.
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            trials: n,
            values,
        }
    }
}

/// Across-trial statistics of final-step metrics.
///
/// Metric keys: `ndcg@k` (running mean over all steps), `ndcg_window@k`
/// (mean over the trailing window), `unfairness@k` and `ips_error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub scenario: Scenario,
    pub policy: PolicyKind,
    pub lambda: f64,
    pub steps: usize,
    pub window: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl Summary {
    pub fn mean(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).map(|m| m.mean)
    }

    pub fn values(&self, key: &str) -> Option<&[f64]> {
        self.metrics.get(key).map(|m| m.values.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub log: TrialLog,
    pub trials: Vec<TrialResult>,
    pub summary: Summary,
}

/// Mean absolute error between estimated and true expected relevance.
pub fn compute_ips_error(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "relevance estimates",
            expected: truth.len(),
            got: estimates.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    Ok(estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / truth.len() as f64)
}

enum Controller {
    Plain,
    Fairco(FaircoController),
    Mmf(MmfController),
}

fn check_finite(values: &[f64], what: &str, trial: usize, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: format!("{what} in trial {trial} at step {step}"),
        })
    }
}

fn run_trial(cfg: &ExperimentConfig, shared: &Shared, trial: usize) -> Result<TrialResult> {
    let curve = PropensityCurve::LogDiscount;
    let mut rngs = TrialRngs::new(cfg.seed, trial);
    let env = Environment::build(cfg, shared, &mut rngs.world)?;
    let corpus = &env.corpus;
    let n = corpus.len();
    let group_of = corpus.group_of();
    let ks = cfg.resolved_ks(n);
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::Config(format!("tracked prefix {k} outside 1..={n}")));
    }
    let true_merits = MeritTable::from_relevance(corpus, &env.true_relevance, MeritSource::True)?;

    let mut eval_ledger = ExposureLedger::new(corpus, &ks, curve)?;
    let mut ips = IpsEstimator::new(n);
    let mut naive = NaiveCounter::new(n);
    let mut controller = match cfg.policy {
        PolicyKind::Fairco => Controller::Fairco(FaircoController::new(
            corpus,
            FaircoConfig::new(cfg.fairco_gain)?,
            curve,
        )?),
        PolicyKind::Mmf => Controller::Mmf(MmfController::new(
            corpus,
            MmfConfig::new(cfg.lambda, cfg.mmf_k, cfg.policy.uses_model(cfg.scenario))?,
            curve,
        )?),
        _ => Controller::Plain,
    };
    let mut model = match &env.world {
        World::Ratings(m) if cfg.policy.uses_model(cfg.scenario) => Some(MlpRanker::init(
            m.feature_dim(),
            cfg.movie.hidden,
            n,
            &mut rngs.model,
        )),
        _ => None,
    };

    let window = cfg.final_window.clamp(1, cfg.steps);
    let mut ndcg_sum = vec![0.0; ks.len()];
    let mut ndcg_window_sum = vec![0.0; ks.len()];
    let mut rows = Vec::new();
    let mut rankings = cfg.keep_rankings.then(Vec::new);
    let mut policy_micros = 0.0;
    let mut steps_since_row = 0usize;

    for t in 1..=cfg.steps {
        let user = env.sample_user(&mut rngs.users)?;
        let realized = realize_relevance(&user.probabilities, &mut rngs.users);
        let features = env.features(&user);

        let ips_estimates = ips.estimates();
        let model_scores = match (&model, features) {
            (Some(m), Some(x)) => Some(m.forward(x)?),
            _ => None,
        };
        let scores: &[f64] = match cfg.policy {
            PolicyKind::Naive => naive.click_sum(),
            PolicyKind::DultrGlob => &ips_estimates,
            PolicyKind::Skyline => model_scores.as_deref().unwrap_or(&user.probabilities),
            _ => model_scores.as_deref().unwrap_or(&ips_estimates),
        };
        let merits_est = MeritTable::from_relevance(corpus, &ips_estimates, MeritSource::Estimated)?;

        let started = cfg.timing.then(Instant::now);
        let ranking = match &controller {
            Controller::Plain if cfg.policy == PolicyKind::Naive => rank_naive(&naive, t)?,
            Controller::Plain => rank_by_scores(scores, t)?,
            Controller::Fairco(c) => c.rank(scores, group_of, &merits_est, t)?,
            Controller::Mmf(c) => c.rank(scores, corpus, &merits_est, &mut rngs.policy, t)?,
        };
        if let Some(s) = started {
            policy_micros += s.elapsed().as_secs_f64() * 1e6;
        }
        steps_since_row += 1;

        let record = sample_clicks(&ranking, &realized, curve, &mut rngs.clicks)?;
        ips.update(&record)?;
        naive.update(&record)?;
        if let (Some(m), Some(x)) = (model.as_mut(), features) {
            let grad = if cfg.policy == PolicyKind::Skyline {
                skyline_loss_gradient(m, &realized, x)?
            } else {
                ips_loss_gradient(m, &record, x)?
            };
            sgd_step(m, &grad, cfg.movie.learning_rate).map_err(|e| Error::NonFinite {
                what: format!("model update in trial {trial} at step {t}: {e}"),
            })?;
        }
        match &mut controller {
            Controller::Fairco(c) => c.observe(&ranking, group_of)?,
            Controller::Mmf(c) => c.observe(&ranking, group_of)?,
            Controller::Plain => {}
        }
        eval_ledger.update(&ranking, group_of)?;

        let realized_gains: Vec<f64>;
        let gains = match cfg.ndcg_gains {
            GainMode::Probability => &user.probabilities,
            GainMode::Realization => {
                realized_gains = realized.iter().map(|&r| r as u8 as f64).collect();
                &realized_gains
            }
        };
        let ndcg = ndcg_at_ks(&ranking, gains, &ks)?;
        for (s, v) in ndcg_sum.iter_mut().zip(&ndcg) {
            *s += v;
        }
        if t > cfg.steps - window {
            for (s, v) in ndcg_window_sum.iter_mut().zip(&ndcg) {
                *s += v;
            }
        }
        if let Some(r) = rankings.as_mut() {
            r.push(ranking);
        }

        if t % cfg.metric_cadence == 0 || t == cfg.steps {
            let ndcg_mean: Vec<f64> = ndcg_sum.iter().map(|s| s / t as f64).collect();
            let unfairness = ks
                .iter()
                .map(|&k| unfairness_at_k(&eval_ledger, &true_merits, k))
                .collect::<Result<Vec<_>>>()?;
            let estimates = if cfg.policy == PolicyKind::Naive {
                naive.estimates()
            } else {
                ips.estimates()
            };
            let ips_error = compute_ips_error(&estimates, &env.true_relevance)?;
            check_finite(&ndcg_mean, "NDCG", trial, t)?;
            check_finite(&unfairness, "unfairness", trial, t)?;
            check_finite(&[ips_error], "estimator error", trial, t)?;
            rows.push(LogRow {
                trial,
                step: t,
                policy: cfg.policy.name().to_string(),
                lambda: if cfg.policy == PolicyKind::Mmf { cfg.lambda } else { 0.0 },
                ndcg: ndcg_mean,
                unfairness,
                ips_error,
                step_micros: policy_micros / steps_since_row as f64,
            });
            policy_micros = 0.0;
            steps_since_row = 0;
        }
    }

    let last = rows.last().expect("at least one row");
    let mut finals = BTreeMap::new();
    for (i, &k) in ks.iter().enumerate() {
        finals.insert(format!("ndcg@{k}"), last.ndcg[i]);
        finals.insert(format!("ndcg_window@{k}"), ndcg_window_sum[i] / window as f64);
        finals.insert(format!("unfairness@{k}"), last.unfairness[i]);
    }
    finals.insert("ips_error".into(), last.ips_error);
    Ok(TrialResult {
        trial,
        rows,
        finals,
        true_relevance: env.true_relevance,
        rankings,
    })
}

fn summarize(cfg: &ExperimentConfig, trials: &[TrialResult]) -> Summary {
    let mut metrics = BTreeMap::new();
    if let Some(first) = trials.first() {
        for key in first.finals.keys() {
            let values = trials.iter().map(|t| t.finals[key]).collect();
            metrics.insert(key.clone(), MetricSummary::from_values(values));
        }
    }
    Summary {
        label: cfg.label(),
        scenario: cfg.scenario,
        policy: cfg.policy,
        lambda: cfg.lambda,
        steps: cfg.steps,
        window: cfg.final_window.clamp(1, cfg.steps),
        metrics,
    }
}

fn load_shared(cfg: &ExperimentConfig) -> Result<Shared> {
    if cfg.scenario != Scenario::MovieFile {
        return Ok(Shared { file: None });
    }
    let m = &cfg.movie;
    let missing = || Error::Config("movie-file needs ratings, features and groups paths".into());
    let matrix = load_rating_matrix(
        m.ratings.as_deref().ok_or_else(missing)?,
        m.features.as_deref().ok_or_else(missing)?,
    )?;
    let groups = load_groups(m.groups.as_deref().ok_or_else(missing)?, matrix.num_docs())?;
    Ok(Shared {
        file: Some((Arc::new(matrix), groups)),
    })
}

/// Paths of the log and summary a run writes into `dir`.
pub fn output_paths(cfg: &ExperimentConfig, dir: &Path) -> (PathBuf, PathBuf) {
    let label = cfg.label();
    (dir.join(format!("{label}.csv")), dir.join(format!("{label}.summary.json")))
}

/// Runs every trial of `cfg`. When `output_dir` is set the trial log is
/// written as trials complete (in trial order) and the summary JSON at the end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let shared = load_shared(cfg)?;
    let n = match &shared.file {
        Some((m, _)) => m.num_docs(),
        None => cfg.nominal_docs(),
    };
    let ks = cfg.resolved_ks(n);

    let mut writer = match &cfg.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(output_paths(cfg, dir).0)?);
            writeln!(w, "{}", TrialLog::header(&ks).join(","))?;
            Some(w)
        }
        None => None,
    };

    let mut trials: Vec<TrialResult> = Vec::with_capacity(cfg.trials);
    if cfg!(feature = "parallel") && cfg.parallel {
        #[cfg(feature = "parallel")]
        {
            trials = (0..cfg.trials)
                .into_par_iter()
                .map(|i| run_trial(cfg, &shared, i))
                .collect::<Result<Vec<_>>>()?;
        }
        if let Some(w) = writer.as_mut() {
            for t in &trials {
                for row in &t.rows {
                    writeln!(w, "{}", TrialLog::format_row(row))?;
                }
            }
        }
    } else {
        for i in 0..cfg.trials {
            let t = run_trial(cfg, &shared, i)?;
            if let Some(w) = writer.as_mut() {
                for row in &t.rows {
                    writeln!(w, "{}", TrialLog::format_row(row))?;
                }
                w.flush()?;
            }
            trials.push(t);
        }
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }

    let summary = summarize(cfg, &trials);
    if let Some(dir) = &cfg.output_dir {
        let text = serde_json::to_string_pretty(&summary)?;
        std::fs::write(output_paths(cfg, dir).1, text + "\n")?;
    }
    let log = TrialLog {
        ks,
        rows: trials.iter().flat_map(|t| t.rows.iter().cloned()).collect(),
    };
    Ok(ExperimentOutput {
        log,
        trials,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(policy: PolicyKind) -> ExperimentConfig {
        ExperimentConfig {
            policy,
            trials: 2,
            steps: 120,
            metric_cadence: 40,
            parallel: false,
            news: NewsParams {
                merit_samples: 2000,
                ..NewsParams::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn ips_error_examples() {
        assert_eq!(compute_ips_error(&[0.1, 0.2], &[0.1, 0.2]).unwrap(), 0.0);
        assert_eq!(compute_ips_error(&[0.0; 4], &[0.25; 4]).unwrap(), 0.25);
        assert!(compute_ips_error(&[0.0; 3], &[0.25; 4]).is_err());
    }

    #[test]
    fn smoke_single_step() {
        let cfg = ExperimentConfig {
            trials: 1,
            steps: 1,
            keep_rankings: true,
            ..small(PolicyKind::Naive)
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.log.rows.len(), 1);
        let r = &out.trials[0].rankings.as_ref().unwrap()[0];
        assert!(Ranking::new(r.order().to_vec(), 1).is_ok());
        assert_eq!(r.len(), 30);
    }

    #[test]
    fn rows_increase_in_trial_and_step() {
        let out = run_experiment(&small(PolicyKind::Fairco)).unwrap();
        let keys: Vec<_> = out.log.rows.iter().map(|r| (r.trial, r.step)).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(keys.len(), 6);
        assert_eq!(out.log.ks, vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20, 30]);
    }

    #[test]
    fn skyline_news_is_ideal() {
        let out = run_experiment(&small(PolicyKind::Skyline)).unwrap();
        for row in &out.log.rows {
            assert!(row.ndcg.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(PolicyKind::Mmf);
        cfg.lambda = 1.2;
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small(PolicyKind::Dultr);
        assert!(cfg.validate().is_err());
        cfg.scenario = Scenario::MovieSynthetic;
        assert!(cfg.validate().is_ok());
        let mut cfg = small(PolicyKind::Naive);
        cfg.tracked_ks = Some(vec![0, 3]);
        assert!(cfg.validate().is_err());
        cfg.tracked_ks = Some(vec![31]);
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            trials: 0,
            ..small(PolicyKind::Naive)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_config() {
        let cfg = ExperimentConfig::from_toml_str(
            "scenario = \"movie-synthetic\"\npolicy = \"dultr-glob\"\ntrials = 3\n[movie]\nlatent_rank = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario, Scenario::MovieSynthetic);
        assert_eq!(cfg.policy, PolicyKind::DultrGlob);
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.movie.latent_rank, 4);
        assert_eq!(cfg.steps, 6000);
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert!("linprog".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn log_csv_round_trip() {
        let out = run_experiment(&small(PolicyKind::DultrGlob)).unwrap();
        let text = out.log.to_csv_string();
        assert!(text.starts_with("trial,step,policy,lambda,ndcg@1,"));
        assert_eq!(TrialLog::from_csv_str(&text).unwrap(), out.log);
        assert!(TrialLog::from_csv_str("trial,step\n").is_err());
    }
}

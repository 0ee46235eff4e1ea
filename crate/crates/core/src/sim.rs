//! User, relevance and click simulation.
//!
//! Two scenarios are supported: the news scenario, where users carry a
//! polarity preference and an openness and relevance is a Bernoulli draw
//! around the polarity distance, and the rating scenario, where a dense
//! rating matrix normalized to `[0, 1]` supplies per-user relevance
//! probabilities together with user feature vectors.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{polarity_group, Corpus, Document, GroupId, InteractionRecord, PropensityCurve, Ranking};

/// Dimension of user feature vectors fed to the ranking model.
pub const FEATURE_DIM: usize = 50;

const POLARITY_STD: f64 = 0.2;
const OPENNESS_RANGE: (f64, f64) = (0.05, 0.55);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewsUserProfile {
    pub polarity: f64,
    pub openness: f64,
}

/// Draws a user whose polarity comes from a two-component Gaussian mixture
/// (left-leaning with probability `p_neg`) clipped to `[-1, 1]`, and whose
/// openness is uniform on `[0.05, 0.55]`.
pub fn sample_news_user<R: Rng + ?Sized>(p_neg: f64, rng: &mut R) -> NewsUserProfile {
    let center = if rng.random::<f64>() < p_neg { -0.5 } else { 0.5 };
    let z: f64 = StandardNormal.sample(rng);
    let polarity = (center + POLARITY_STD * z).clamp(-1.0, 1.0);
    let openness = rng.random_range(OPENNESS_RANGE.0..OPENNESS_RANGE.1);
    NewsUserProfile { polarity, openness }
}

/// Bernoulli parameter of a user's relevance judgement for a document of
/// polarity `doc_polarity`.
pub fn news_relevance_probability(user: &NewsUserProfile, doc_polarity: f64) -> Result<f64> {
    if !(user.openness > 0.0) {
        return Err(Error::NonPositiveOpenness(user.openness));
    }
    let diff = user.polarity - doc_polarity;
    Ok((-(diff * diff) / (2.0 * user.openness * user.openness)).exp())
}

pub fn news_relevance<R: Rng + ?Sized>(
    user: &NewsUserProfile,
    doc: &Document,
    rng: &mut R,
) -> Result<bool> {
    let polarity = doc
        .polarity
        .ok_or_else(|| Error::Config(format!("document {} has no polarity", doc.id)))?;
    let p = news_relevance_probability(user, polarity)?;
    Ok(rng.random::<f64>() < p)
}

/// Samples `num_docs` articles with polarity uniform on `[-1, 1]`, grouped by
/// sign. Redraws in the (vanishingly rare) case that one side is empty.
pub fn sample_news_corpus<R: Rng + ?Sized>(num_docs: usize, rng: &mut R) -> Result<Corpus> {
    if num_docs < 2 {
        return Err(Error::Config(format!(
            "news corpus needs at least 2 documents, got {num_docs}"
        )));
    }
    loop {
        let docs: Vec<Document> = (0..num_docs)
            .map(|id| {
                let polarity = rng.random_range(-1.0..=1.0);
                Document {
                    id,
                    group: polarity_group(polarity),
                    polarity: Some(polarity),
                    gain_column: None,
                }
            })
            .collect();
        match Corpus::new(docs, 2) {
            Err(Error::EmptyGroup(_)) => continue,
            other => return other,
        }
    }
}

/// Simulates examination and clicks on a presented ranking: every document
/// is examined independently with the propensity of its position and
/// clicked iff examined and relevant.
pub fn sample_clicks<R: Rng + ?Sized>(
    ranking: &Ranking,
    relevance: &[bool],
    curve: PropensityCurve,
    rng: &mut R,
) -> Result<InteractionRecord> {
    let n = ranking.len();
    if relevance.len() != n {
        return Err(Error::LengthMismatch {
            what: "relevance vector",
            expected: n,
            got: relevance.len(),
        });
    }
    let mut clicks = vec![false; n];
    let mut propensities = vec![0.0; n];
    for (i, &d) in ranking.order().iter().enumerate() {
        let p = curve.at(i + 1);
        propensities[d] = p;
        let observed = rng.random::<f64>() < p;
        clicks[d] = observed && relevance[d];
    }
    Ok(InteractionRecord {
        timestep: ranking.timestep(),
        ranking: ranking.clone(),
        relevance: relevance.to_vec(),
        clicks,
        propensities,
    })
}

/// Draws a binary realization of per-document relevance probabilities.
pub fn realize_relevance<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> Vec<bool> {
    probabilities.iter().map(|&p| rng.random::<f64>() < p).collect()
}

/// Dense user-by-document relevance probabilities plus user features.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    num_users: usize,
    num_docs: usize,
    values: Vec<f64>,
    features: Vec<f64>,
    feature_dim: usize,
}

impl RatingMatrix {
    /// Builds a matrix from row-major data, checking shapes and that every
    /// value lies in `[0, 1]`.
    pub fn new(
        num_users: usize,
        num_docs: usize,
        values: Vec<f64>,
        features: Vec<f64>,
        feature_dim: usize,
    ) -> Result<Self> {
        if values.len() != num_users * num_docs {
            return Err(Error::LengthMismatch {
                what: "rating values",
                expected: num_users * num_docs,
                got: values.len(),
            });
        }
        if features.len() != num_users * feature_dim {
            return Err(Error::LengthMismatch {
                what: "user features",
                expected: num_users * feature_dim,
                got: features.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange {
                file: "<memory>".into(),
                row: i / num_docs,
                col: i % num_docs,
                value: values[i],
            });
        }
        Ok(Self {
            num_users,
            num_docs,
            values,
            features,
            feature_dim,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn row(&self, user: usize) -> &[f64] {
        &self.values[user * self.num_docs..(user + 1) * self.num_docs]
    }

    pub fn features(&self, user: usize) -> &[f64] {
        &self.features[user * self.feature_dim..(user + 1) * self.feature_dim]
    }

    /// Expected relevance of each document over the user population.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.num_docs];
        for u in 0..self.num_users {
            for (m, v) in means.iter_mut().zip(self.row(u)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= self.num_users as f64;
        }
        means
    }

    pub fn write_csv(&self, values_path: &Path, features_path: &Path) -> Result<()> {
        write_matrix(values_path, &self.values, self.num_docs)?;
        write_matrix(features_path, &self.features, self.feature_dim)
    }
}

/// Logistic normalization of a star rating: `1 / (1 + exp(-slope * (raw - center)))`.
pub fn sigmoid_normalize(raw: f64, slope: f64, center: f64) -> f64 {
    1.0 / (1.0 + (-slope * (raw - center)).exp())
}

/// Generates a filled low-rank rating matrix as a stand-in for a factorized
/// real rating dataset.
///
/// Latent user and document factors are standard normal; their product is
/// linearly rescaled to the star range `[0.5, 5]` and passed through
/// [`sigmoid_normalize`]. The user factors, zero-padded (or truncated) to
/// [`FEATURE_DIM`], serve as user features.
pub fn generate_synthetic_rating_matrix<R: Rng + ?Sized>(
    num_users: usize,
    num_docs: usize,
    rank: usize,
    slope: f64,
    center: f64,
    rng: &mut R,
) -> Result<RatingMatrix> {
    if rank == 0 || rank > num_users.min(num_docs) {
        return Err(Error::Config(format!(
            "latent rank {rank} must be in 1..={}",
            num_users.min(num_docs)
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let users: Vec<f64> = (0..num_users * rank).map(|_| normal.sample(rng)).collect();
    let items: Vec<f64> = (0..num_docs * rank).map(|_| normal.sample(rng)).collect();

    let mut raw = vec![0.0; num_users * num_docs];
    for u in 0..num_users {
        let uf = &users[u * rank..(u + 1) * rank];
        for d in 0..num_docs {
            let vf = &items[d * rank..(d + 1) * rank];
            raw[u * num_docs + d] = uf.iter().zip(vf).map(|(a, b)| a * b).sum();
        }
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let values = raw
        .iter()
        .map(|&v| sigmoid_normalize(0.5 + 4.5 * (v - lo) / span, slope, center))
        .collect();

    let mut features = vec![0.0; num_users * FEATURE_DIM];
    let copy = rank.min(FEATURE_DIM);
    for u in 0..num_users {
        features[u * FEATURE_DIM..u * FEATURE_DIM + copy]
            .copy_from_slice(&users[u * rank..u * rank + copy]);
    }
    RatingMatrix::new(num_users, num_docs, values, features, FEATURE_DIM)
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let label = file_label(path);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&label, 0, e))?;
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&label, row, e))?;
        let parsed = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    file: label.clone(),
                    row,
                    msg: format!("column {col}: {e} ({field:?})"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(parsed);
    }
    Ok(rows)
}

fn csv_error(file: &str, row: usize, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::Io(io);
        }
        unreachable!()
    }
    let row = e.position().map(|p| p.record() as usize).unwrap_or(row);
    Error::Parse {
        file: file.to_string(),
        row,
        msg: e.to_string(),
    }
}

/// Loads a rating matrix (one row per user, values in `[0, 1]`, no header)
/// and its companion feature file (one row per user).
pub fn load_rating_matrix(values_path: &Path, features_path: &Path) -> Result<RatingMatrix> {
    let label = file_label(values_path);
    let rows = read_rows(values_path)?;
    let num_users = rows.len();
    let num_docs = rows.first().map_or(0, Vec::len);
    let mut values = Vec::with_capacity(num_users * num_docs);
    for (r, row) in rows.into_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange {
                    file: label,
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
        values.extend(row);
    }

    let feature_rows = read_rows(features_path)?;
    if feature_rows.len() != num_users {
        return Err(Error::Parse {
            file: file_label(features_path),
            row: feature_rows.len(),
            msg: format!("expected {num_users} feature rows, found {}", feature_rows.len()),
        });
    }
    let feature_dim = feature_rows.first().map_or(0, Vec::len);
    let features = feature_rows.into_iter().flatten().collect();
    RatingMatrix::new(num_users, num_docs, values, features, feature_dim)
}

/// Loads `doc_id,group_id` lines for a corpus of `num_docs` documents.
pub fn load_groups(path: &Path, num_docs: usize) -> Result<Vec<GroupId>> {
    let label = file_label(path);
    let rows = read_rows(path)?;
    let mut groups = vec![None; num_docs];
    for (r, row) in rows.iter().enumerate() {
        if row.len() != 2 {
            return Err(Error::Parse {
                file: label,
                row: r,
                msg: format!("expected 2 fields, found {}", row.len()),
            });
        }
        let (doc, group) = (row[0], row[1]);
        if doc < 0.0 || doc.fract() != 0.0 || doc as usize >= num_docs {
            return Err(Error::Parse {
                file: label,
                row: r,
                msg: format!("invalid doc id {doc}"),
            });
        }
        if group < 0.0 || group.fract() != 0.0 {
            return Err(Error::Parse {
                file: label,
                row: r,
                msg: format!("invalid group id {group}"),
            });
        }
        groups[doc as usize] = Some(group as GroupId);
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(d, g)| {
            g.ok_or_else(|| Error::Parse {
                file: label.clone(),
                row: rows.len(),
                msg: format!("no group given for doc {d}"),
            })
        })
        .collect()
}

/// Contiguous equal-size blocks: doc `d` goes to group `d * m / n`.
pub fn equal_groups(num_docs: usize, num_groups: usize) -> Vec<GroupId> {
    (0..num_docs).map(|d| d * num_groups / num_docs).collect()
}

pub fn write_groups(path: &Path, groups: &[GroupId]) -> Result<()> {
    let mut out = String::new();
    for (d, g) in groups.iter().enumerate() {
        out.push_str(&format!("{d},{g}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_matrix(path: &Path, data: &[f64], cols: usize) -> Result<()> {
    let mut out = String::with_capacity(data.len() * 12);
    for row in data.chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

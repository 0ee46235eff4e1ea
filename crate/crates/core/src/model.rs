//! Domain types shared by the simulator: documents, groups, rankings,
//! the position-bias curve and per-step interaction records.
//!
//! Ranks are 1-based everywhere (the log discount is defined on ranks);
//! document and group ids are 0-based indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DocId = usize;
pub type GroupId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: DocId,
    pub group: GroupId,
    /// Political polarity in [-1, 1] (news corpora only).
    pub polarity: Option<f64>,
    /// Column of the rating matrix holding this document's gains (rating corpora only).
    pub gain_column: Option<usize>,
}

/// News grouping rule: negative polarity is group 0, non-negative is group 1.
pub fn polarity_group(polarity: f64) -> GroupId {
    if polarity < 0.0 {
        0
    } else {
        1
    }
}

/// The candidate set ranked at every step, with its group partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    docs: Vec<Document>,
    num_groups: usize,
    group_sizes: Vec<usize>,
    group_of: Vec<GroupId>,
}

impl Corpus {
    /// Builds a corpus, checking that ids are `0..n` in order and that every
    /// one of the `num_groups` groups is non-empty.
    pub fn new(docs: Vec<Document>, num_groups: usize) -> Result<Self> {
        if num_groups == 0 {
            return Err(Error::Config("corpus needs at least one group".into()));
        }
        let mut group_sizes = vec![0; num_groups];
        for (i, d) in docs.iter().enumerate() {
            if d.id != i {
                return Err(Error::Config(format!(
                    "document at index {i} has id {}",
                    d.id
                )));
            }
            if d.group >= num_groups {
                return Err(Error::Config(format!(
                    "document {i} has group {} but only {num_groups} groups exist",
                    d.group
                )));
            }
            group_sizes[d.group] += 1;
        }
        if let Some(g) = group_sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyGroup(g));
        }
        let group_of = docs.iter().map(|d| d.group).collect();
        Ok(Self {
            docs,
            num_groups,
            group_sizes,
            group_of,
        })
    }

    /// Convenience constructor from a group label per document.
    pub fn from_groups(groups: &[GroupId], num_groups: usize) -> Result<Self> {
        let docs = groups
            .iter()
            .enumerate()
            .map(|(id, &group)| Document {
                id,
                group,
                polarity: None,
                gain_column: Some(id),
            })
            .collect();
        Self::new(docs, num_groups)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// Group label of every document, indexed by doc id.
    pub fn group_of(&self) -> &[GroupId] {
        &self.group_of
    }

    pub fn members(&self, group: GroupId) -> impl Iterator<Item = DocId> + '_ {
        self.group_of
            .iter()
            .enumerate()
            .filter(move |(_, &g)| g == group)
            .map(|(d, _)| d)
    }
}

/// A full ordering of the corpus presented at one time step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    order: Vec<DocId>,
    timestep: usize,
}

impl Ranking {
    /// Validates that `order` is a bijection over `0..order.len()`.
    pub fn new(order: Vec<DocId>, timestep: usize) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &d in &order {
            if d >= n {
                return Err(Error::InvalidPermutation {
                    n,
                    reason: format!("id {d} out of range"),
                });
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(Error::InvalidPermutation {
                    n,
                    reason: format!("id {d} appears twice"),
                });
            }
        }
        Ok(Self { order, timestep })
    }

    pub fn identity(n: usize, timestep: usize) -> Self {
        Self {
            order: (0..n).collect(),
            timestep,
        }
    }

    pub fn order(&self) -> &[DocId] {
        &self.order
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Top-`k` prefix of the ranking (clamped to its length).
    pub fn prefix(&self, k: usize) -> &[DocId] {
        &self.order[..k.min(self.order.len())]
    }

    /// 1-based position of `doc`.
    pub fn position_of(&self, doc: DocId) -> Result<usize> {
        let n = self.order.len();
        if doc >= n {
            return Err(Error::UnknownDocument { doc, n });
        }
        self.order
            .iter()
            .position(|&d| d == doc)
            .map(|i| i + 1)
            .ok_or(Error::UnknownDocument { doc, n })
    }

    /// 1-based position of every document, indexed by doc id.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (i, &d) in self.order.iter().enumerate() {
            pos[d] = i + 1;
        }
        pos
    }
}

/// Examination probability as a function of rank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityCurve {
    /// `p_i = 1 / log2(1 + i)`, the NDCG discount.
    #[default]
    LogDiscount,
}

impl PropensityCurve {
    pub fn propensity_at(self, rank: usize) -> Result<f64> {
        if rank == 0 {
            return Err(Error::InvalidRank(rank));
        }
        Ok(self.at(rank))
    }

    /// Unchecked variant for hot loops; `rank` must be >= 1.
    #[inline]
    pub(crate) fn at(self, rank: usize) -> f64 {
        debug_assert!(rank >= 1);
        match self {
            PropensityCurve::LogDiscount => 1.0 / (1.0 + rank as f64).log2(),
        }
    }

    /// Propensities for ranks `1..=n`, index 0 holding rank 1.
    pub fn table(self, n: usize) -> Vec<f64> {
        (1..=n).map(|r| self.at(r)).collect()
    }
}

/// Everything observed (and simulated) at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub timestep: usize,
    pub ranking: Ranking,
    /// Realized binary relevance of every document for this user.
    pub relevance: Vec<bool>,
    pub clicks: Vec<bool>,
    /// Propensity of the position each document was shown at, indexed by doc id.
    pub propensities: Vec<f64>,
}

impl InteractionRecord {
    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }
}

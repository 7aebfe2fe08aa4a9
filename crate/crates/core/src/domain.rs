//! Venue model, pair covariates, logged outcomes and the pair partition.
//!
//! Every reviewer-paper pair is addressed by a [`PairId`] and most per-pair
//! data lives in a dense [`PairGrid`]. Ids are opaque strings; their order in
//! the input documents fixes the grid layout and nothing else.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::BidScheme;

/// Probabilities at or below this value are treated as zero support.
pub const SUPPORT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairId {
    pub reviewer: usize,
    pub paper: usize,
}

impl PairId {
    pub fn new(reviewer: usize, paper: usize) -> Self {
        Self { reviewer, paper }
    }
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(r{}, p{})", self.reviewer, self.paper)
    }
}

/// Dense reviewer-major matrix over all reviewer-paper pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGrid<T> {
    reviewers: usize,
    papers: usize,
    cells: Vec<T>,
}

impl<T: Clone> PairGrid<T> {
    pub fn filled(reviewers: usize, papers: usize, value: T) -> Self {
        Self {
            reviewers,
            papers,
            cells: vec![value; reviewers * papers],
        }
    }
}

impl<T> PairGrid<T> {
    pub fn from_fn(reviewers: usize, papers: usize, mut f: impl FnMut(PairId) -> T) -> Self {
        let mut cells = Vec::with_capacity(reviewers * papers);
        for r in 0..reviewers {
            for p in 0..papers {
                cells.push(f(PairId::new(r, p)));
            }
        }
        Self {
            reviewers,
            papers,
            cells,
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let reviewers = rows.len();
        let papers = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == papers), "ragged rows");
        Self {
            reviewers,
            papers,
            cells: rows.into_iter().flatten().collect(),
        }
    }

    pub fn reviewers(&self) -> usize {
        self.reviewers
    }

    pub fn papers(&self) -> usize {
        self.papers
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, pair: PairId) -> usize {
        debug_assert!(pair.reviewer < self.reviewers && pair.paper < self.papers);
        pair.reviewer * self.papers + pair.paper
    }

    pub fn pair_at(&self, index: usize) -> PairId {
        PairId::new(index / self.papers, index % self.papers)
    }

    pub fn get(&self, pair: PairId) -> &T {
        &self.cells[self.index(pair)]
    }

    pub fn get_mut(&mut self, pair: PairId) -> &mut T {
        let i = self.index(pair);
        &mut self.cells[i]
    }

    pub fn set(&mut self, pair: PairId, value: T) {
        let i = self.index(pair);
        self.cells[i] = value;
    }

    pub fn cells(&self) -> &[T] {
        &self.cells
    }

    pub fn pairs(&self) -> impl Iterator<Item = PairId> + '_ {
        (0..self.cells.len()).map(move |i| self.pair_at(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (PairId, &T)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.pair_at(i), v))
    }

    pub fn map<U>(&self, mut f: impl FnMut(PairId, &T) -> U) -> PairGrid<U> {
        PairGrid {
            reviewers: self.reviewers,
            papers: self.papers,
            cells: self.iter().map(|(p, v)| f(p, v)).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &PairGrid<U>) -> bool {
        self.reviewers == other.reviewers && self.papers == other.papers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reviewer {
    pub id: String,
    pub cap: u32,
    /// Whether the reviewer supplied a profile for conflict detection.
    #[serde(default = "default_true")]
    pub profile: bool,
}

fn default_true() -> bool {
    true
}

/// Outcome range, and optionally the finite set of admissible levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub min: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
}

impl OutcomeScale {
    pub fn new(min: f64, max: f64, levels: Option<Vec<f64>>) -> Result<Self> {
        let scale = Self { min, max, levels };
        scale.validate()?;
        Ok(scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::Invalid(format!(
                "outcome scale requires y_min < y_max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if let Some(levels) = &self.levels {
            if levels.is_empty() {
                return Err(Error::Invalid("outcome levels must be nonempty".into()));
            }
            if let Some(l) = levels.iter().find(|&&l| !self.contains(l)) {
                return Err(Error::Invalid(format!(
                    "outcome level {l} outside [{}, {}]",
                    self.min, self.max
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.min && y <= self.max
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn clamp(&self, y: f64) -> f64 {
        y.clamp(self.min, self.max)
    }
}

/// A review venue: who reviews, what is reviewed, and the load constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Venue {
    reviewers: Vec<Reviewer>,
    papers: Vec<String>,
    paper_load: u32,
    conflicts: HashSet<PairId>,
    bid_scheme: BidScheme,
    outcome_scale: Option<OutcomeScale>,
    reviewer_index: HashMap<String, usize>,
    paper_index: HashMap<String, usize>,
}

impl Venue {
    pub fn new(
        reviewers: Vec<Reviewer>,
        papers: Vec<String>,
        paper_load: u32,
        conflicts: impl IntoIterator<Item = (String, String)>,
        bid_scheme: BidScheme,
        outcome_scale: Option<OutcomeScale>,
    ) -> Result<Self> {
        let mut reviewer_index = HashMap::with_capacity(reviewers.len());
        for (i, r) in reviewers.iter().enumerate() {
            if r.cap == 0 {
                return Err(Error::Invalid(format!("reviewer {:?} has zero cap", r.id)));
            }
            if reviewer_index.insert(r.id.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate reviewer id {:?}", r.id)));
            }
        }
        let mut paper_index = HashMap::with_capacity(papers.len());
        for (i, p) in papers.iter().enumerate() {
            if paper_index.insert(p.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate paper id {p:?}")));
            }
        }
        if paper_load == 0 {
            return Err(Error::Invalid("paper load must be positive".into()));
        }
        let mut conflict_set = HashSet::new();
        for (r, p) in conflicts {
            let ri = *reviewer_index
                .get(&r)
                .ok_or_else(|| Error::Invalid(format!("conflict names unknown reviewer {r:?}")))?;
            let pi = *paper_index
                .get(&p)
                .ok_or_else(|| Error::Invalid(format!("conflict names unknown paper {p:?}")))?;
            conflict_set.insert(PairId::new(ri, pi));
        }
        let capacity: u64 = reviewers.iter().map(|r| u64::from(r.cap)).sum();
        let demand = u64::from(paper_load) * papers.len() as u64;
        if capacity < demand {
            return Err(Error::Invalid(format!(
                "total reviewer capacity {capacity} below required {demand} reviews"
            )));
        }
        if let Some(scale) = &outcome_scale {
            scale.validate()?;
        }
        bid_scheme.validate()?;
        Ok(Self {
            reviewers,
            papers,
            paper_load,
            conflicts: conflict_set,
            bid_scheme,
            outcome_scale,
            reviewer_index,
            paper_index,
        })
    }

    pub fn reviewers(&self) -> &[Reviewer] {
        &self.reviewers
    }

    pub fn papers(&self) -> &[String] {
        &self.papers
    }

    pub fn num_reviewers(&self) -> usize {
        self.reviewers.len()
    }

    pub fn num_papers(&self) -> usize {
        self.papers.len()
    }

    pub fn paper_load(&self) -> u32 {
        self.paper_load
    }

    pub fn cap(&self, reviewer: usize) -> u32 {
        self.reviewers[reviewer].cap
    }

    pub fn bid_scheme(&self) -> &BidScheme {
        &self.bid_scheme
    }

    pub fn outcome_scale(&self) -> Option<&OutcomeScale> {
        self.outcome_scale.as_ref()
    }

    pub fn set_outcome_scale(&mut self, scale: OutcomeScale) -> Result<()> {
        scale.validate()?;
        self.outcome_scale = Some(scale);
        Ok(())
    }

    /// Total number of reviews, `paper_load * |papers|`.
    pub fn total_reviews(&self) -> usize {
        self.paper_load as usize * self.papers.len()
    }

    pub fn is_conflict(&self, pair: PairId) -> bool {
        self.conflicts.contains(&pair)
    }

    pub fn conflicts(&self) -> impl Iterator<Item = PairId> + '_ {
        let mut v: Vec<_> = self.conflicts.iter().copied().collect();
        v.sort();
        v.into_iter()
    }

    /// Returns a copy in which every pair flagged by `extra` is also a conflict.
    pub fn with_extra_conflicts(&self, extra: impl IntoIterator<Item = PairId>) -> Venue {
        let mut v = self.clone();
        v.conflicts.extend(extra);
        v
    }

    pub fn reviewer_index(&self, id: &str) -> Option<usize> {
        self.reviewer_index.get(id).copied()
    }

    pub fn paper_index(&self, id: &str) -> Option<usize> {
        self.paper_index.get(id).copied()
    }

    pub fn pair_by_ids(&self, reviewer: &str, paper: &str) -> Option<PairId> {
        Some(PairId::new(
            self.reviewer_index(reviewer)?,
            self.paper_index(paper)?,
        ))
    }

    pub fn pair_ids(&self, pair: PairId) -> (&str, &str) {
        (&self.reviewers[pair.reviewer].id, &self.papers[pair.paper])
    }

    pub fn grid<T: Clone>(&self, value: T) -> PairGrid<T> {
        PairGrid::filled(self.num_reviewers(), self.num_papers(), value)
    }

    /// All pairs that are not conflicts, in grid order.
    pub fn candidate_pairs(&self) -> impl Iterator<Item = PairId> + '_ {
        let papers = self.num_papers();
        (0..self.num_reviewers() * papers)
            .map(move |i| PairId::new(i / papers, i % papers))
            .filter(move |p| !self.is_conflict(*p))
    }
}

/// Observed covariates for one pair. Missing components stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub text: Option<f64>,
    pub subject: Option<f64>,
    pub bid: Option<String>,
}

/// Per-pair covariates over the whole venue.
pub type PairTable = PairGrid<Covariates>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeStatus {
    Observed,
    Attrition,
    AbsentReviewer,
    ManuallyAdded,
    ManuallyRemoved,
}

impl OutcomeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeStatus::Observed => "observed",
            OutcomeStatus::Attrition => "attrition",
            OutcomeStatus::AbsentReviewer => "absent-reviewer",
            OutcomeStatus::ManuallyAdded => "manually-added",
            OutcomeStatus::ManuallyRemoved => "manually-removed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim() {
            "observed" => OutcomeStatus::Observed,
            "attrition" => OutcomeStatus::Attrition,
            "absent-reviewer" => OutcomeStatus::AbsentReviewer,
            "manually-added" => OutcomeStatus::ManuallyAdded,
            "manually-removed" => OutcomeStatus::ManuallyRemoved,
            _ => return None,
        })
    }

    /// Whether the pair was part of the sampled on-policy assignment.
    pub fn was_sampled(self) -> bool {
        !matches!(self, OutcomeStatus::ManuallyAdded)
    }

    pub fn is_missing(self) -> bool {
        matches!(
            self,
            OutcomeStatus::Attrition | OutcomeStatus::AbsentReviewer | OutcomeStatus::ManuallyRemoved
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub pair: PairId,
    pub value: Option<f64>,
    pub status: OutcomeStatus,
}

impl OutcomeRecord {
    pub fn check(&self, scale: Option<&OutcomeScale>) -> std::result::Result<(), String> {
        match self.status {
            OutcomeStatus::Observed => {
                let y = self
                    .value
                    .ok_or_else(|| "status observed requires a value".to_string())?;
                if !y.is_finite() {
                    return Err(format!("non-finite value {y}"));
                }
                if let Some(s) = scale {
                    if !s.contains(y) {
                        return Err(format!("value {y} outside [{}, {}]", s.min, s.max));
                    }
                }
            }
            OutcomeStatus::Attrition
            | OutcomeStatus::AbsentReviewer
            | OutcomeStatus::ManuallyRemoved => {
                if self.value.is_some() {
                    return Err(format!(
                        "status {} must not carry a value",
                        self.status.as_str()
                    ));
                }
            }
            OutcomeStatus::ManuallyAdded => {}
        }
        Ok(())
    }
}

/// Logged outcomes, at most one record per pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeRecords {
    records: Vec<OutcomeRecord>,
    by_pair: HashMap<PairId, usize>,
}

impl OutcomeRecords {
    pub fn new(records: Vec<OutcomeRecord>) -> Result<Self> {
        let mut by_pair = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if let Some(prev) = by_pair.insert(rec.pair, i) {
                let removed = records[prev].status == OutcomeStatus::ManuallyRemoved
                    || rec.status == OutcomeStatus::ManuallyRemoved;
                let msg = if removed {
                    format!("pair {} was manually removed but appears again", rec.pair)
                } else {
                    format!("duplicate record for pair {}", rec.pair)
                };
                return Err(Error::Invalid(msg));
            }
        }
        Ok(Self { records, by_pair })
    }

    pub fn records(&self) -> &[OutcomeRecord] {
        &self.records
    }

    pub fn get(&self, pair: PairId) -> Option<&OutcomeRecord> {
        self.by_pair.get(&pair).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The sampled on-policy assignment implied by the records.
    pub fn sampled_assignment(&self, reviewers: usize, papers: usize) -> PairGrid<bool> {
        let mut z = PairGrid::filled(reviewers, papers, false);
        for rec in &self.records {
            if rec.status.was_sampled() {
                z.set(rec.pair, true);
            }
        }
        z
    }

    /// Observed outcome values; `None` wherever nothing was observed.
    pub fn observed_values(&self, reviewers: usize, papers: usize) -> PairGrid<Option<f64>> {
        let mut y = PairGrid::filled(reviewers, papers, None);
        for rec in &self.records {
            if rec.status == OutcomeStatus::Observed {
                y.set(rec.pair, rec.value);
            }
        }
        y
    }
}

/// Which estimator term a pair contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairClass {
    /// Zero probability under both policies; never summed.
    Excluded,
    /// Supported on-policy with no missing review.
    Supported,
    /// Positive off-policy probability but zero on-policy probability.
    PositivityViolation,
    Attrition,
    Absent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub supported: usize,
    pub observed: usize,
    pub positivity_violations: usize,
    pub attrition: usize,
    pub absent: usize,
    pub ignored: usize,
}

/// Disjoint classification of reviewer-paper pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPartition {
    class: PairGrid<PairClass>,
    assigned: PairGrid<bool>,
    ignored: Vec<PairId>,
}

impl PairPartition {
    pub fn class(&self, pair: PairId) -> PairClass {
        *self.class.get(pair)
    }

    pub fn classes(&self) -> &PairGrid<PairClass> {
        &self.class
    }

    /// The sampled on-policy assignment `Z^A` (manual additions excluded).
    pub fn assigned(&self) -> &PairGrid<bool> {
        &self.assigned
    }

    pub fn is_assigned(&self, pair: PairId) -> bool {
        *self.assigned.get(pair)
    }

    pub fn is_observed(&self, pair: PairId) -> bool {
        self.class(pair) == PairClass::Supported && self.is_assigned(pair)
    }

    pub fn members(&self, class: PairClass) -> Vec<PairId> {
        self.class
            .iter()
            .filter(|(_, c)| **c == class)
            .map(|(p, _)| p)
            .collect()
    }

    pub fn observed(&self) -> Vec<PairId> {
        self.class
            .pairs()
            .filter(|p| self.is_observed(*p))
            .collect()
    }

    /// Manually added pairs, which never enter the estimator as observations.
    pub fn ignored(&self) -> &[PairId] {
        &self.ignored
    }

    pub fn counts(&self) -> PartitionCounts {
        let mut c = PartitionCounts {
            ignored: self.ignored.len(),
            ..Default::default()
        };
        for (pair, class) in self.class.iter() {
            match class {
                PairClass::Supported => {
                    c.supported += 1;
                    if self.is_assigned(pair) {
                        c.observed += 1;
                    }
                }
                PairClass::PositivityViolation => c.positivity_violations += 1,
                PairClass::Attrition => c.attrition += 1,
                PairClass::Absent => c.absent += 1,
                PairClass::Excluded => {}
            }
        }
        c
    }
}

/// Splits pairs into supported, positivity-violation, attrition and absent sets.
///
/// Manually added records are listed in `ignored` and never count as
/// observations; manually removed ones are treated as attrition. A reviewer
/// is absent only when every sampled review of theirs is missing and none of
/// them was removed by hand.
pub fn classify_pairs(
    venue: &Venue,
    p_on: &PairGrid<f64>,
    p_off: &PairGrid<f64>,
    records: &OutcomeRecords,
) -> Result<PairPartition> {
    let (nr, np) = (venue.num_reviewers(), venue.num_papers());
    if p_on.reviewers() != nr || p_on.papers() != np || !p_on.same_shape(p_off) {
        return Err(Error::Invalid(
            "marginal matrices do not match the venue dimensions".into(),
        ));
    }
    let assigned = records.sampled_assignment(nr, np);

    for rec in records.records() {
        if rec.status.was_sampled() && *p_on.get(rec.pair) <= SUPPORT_EPS {
            let (r, p) = venue.pair_ids(rec.pair);
            return Err(Error::Inconsistent(format!(
                "pair ({r}, {p}) has a logged {} record but zero on-policy probability",
                rec.status.as_str()
            )));
        }
    }

    // A reviewer is absent when all sampled reviews are missing and none was removed.
    let mut sampled = vec![0usize; nr];
    let mut missing = vec![0usize; nr];
    let mut removed = vec![false; nr];
    for rec in records.records() {
        if !rec.status.was_sampled() {
            continue;
        }
        let r = rec.pair.reviewer;
        sampled[r] += 1;
        if rec.status.is_missing() {
            missing[r] += 1;
        }
        if rec.status == OutcomeStatus::ManuallyRemoved {
            removed[r] = true;
        }
    }
    let absent: Vec<bool> = (0..nr)
        .map(|r| sampled[r] > 0 && missing[r] == sampled[r] && !removed[r])
        .collect();

    let mut ignored = Vec::new();
    let class = PairGrid::from_fn(nr, np, |pair| {
        let on = *p_on.get(pair);
        let off = *p_off.get(pair);
        let rec = records.get(pair);
        if let Some(r) = rec {
            if r.status == OutcomeStatus::ManuallyAdded {
                ignored.push(pair);
            }
        }
        if on <= SUPPORT_EPS {
            return if off > SUPPORT_EPS {
                PairClass::PositivityViolation
            } else {
                PairClass::Excluded
            };
        }
        match rec {
            Some(r) if r.status.was_sampled() && r.status.is_missing() => {
                if absent[pair.reviewer] {
                    PairClass::Absent
                } else {
                    PairClass::Attrition
                }
            }
            _ => PairClass::Supported,
        }
    });
    Ok(PairPartition {
        class,
        assigned,
        ignored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn venue(nr: usize, np: usize, load: u32, cap: u32) -> Venue {
        Venue::new(
            (0..nr)
                .map(|i| Reviewer {
                    id: format!("r{i}"),
                    cap,
                    profile: true,
                })
                .collect(),
            (0..np).map(|i| format!("p{i}")).collect(),
            load,
            Vec::new(),
            BidScheme::aaai(),
            Some(OutcomeScale::new(1.0, 5.0, None).unwrap()),
        )
        .unwrap()
    }

    fn rec(r: usize, p: usize, value: Option<f64>, status: OutcomeStatus) -> OutcomeRecord {
        OutcomeRecord {
            pair: PairId::new(r, p),
            value,
            status,
        }
    }

    #[test]
    fn smallest_venue_has_four_candidates() {
        let v = venue(2, 2, 1, 1);
        assert_eq!(v.candidate_pairs().count(), 4);
        assert_eq!(v.total_reviews(), 2);
    }

    #[test]
    fn capacity_shortfall_rejected() {
        let err = Venue::new(
            vec![Reviewer {
                id: "a".into(),
                cap: 1,
                profile: true,
            }],
            vec!["p".into()],
            2,
            Vec::new(),
            BidScheme::aaai(),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("capacity"));
    }

    #[test]
    fn duplicate_ids_and_unknown_conflicts_rejected() {
        let r = |id: &str| Reviewer {
            id: id.into(),
            cap: 2,
            profile: true,
        };
        assert!(Venue::new(
            vec![r("a"), r("a")],
            vec!["p".into()],
            1,
            Vec::new(),
            BidScheme::aaai(),
            None
        )
        .is_err());
        assert!(Venue::new(
            vec![r("a")],
            vec!["p".into()],
            1,
            vec![("a".to_string(), "q".to_string())],
            BidScheme::aaai(),
            None
        )
        .is_err());
    }

    #[test]
    fn no_missingness_puts_everything_in_supported() {
        let v = venue(2, 2, 1, 1);
        let p = v.grid(0.5);
        let records = OutcomeRecords::new(vec![
            rec(0, 0, Some(3.0), OutcomeStatus::Observed),
            rec(1, 1, Some(1.0), OutcomeStatus::Observed),
        ])
        .unwrap();
        let part = classify_pairs(&v, &p, &p, &records).unwrap();
        let c = part.counts();
        assert_eq!(c.supported, 4);
        assert_eq!(c.observed, 2);
        assert_eq!(c.positivity_violations + c.attrition + c.absent, 0);
    }

    #[test]
    fn zero_on_policy_positive_off_policy_is_violation() {
        let v = venue(2, 2, 1, 1);
        let mut on = v.grid(0.5);
        on.set(PairId::new(0, 1), 0.0);
        on.set(PairId::new(0, 0), 1.0);
        let mut off = v.grid(0.0);
        off.set(PairId::new(0, 1), 0.4);
        let part = classify_pairs(&v, &on, &off, &OutcomeRecords::default()).unwrap();
        assert_eq!(
            part.class(PairId::new(0, 1)),
            PairClass::PositivityViolation
        );
    }

    #[test]
    fn reviewer_without_reviews_is_absent() {
        let v = venue(2, 2, 2, 2);
        let p = v.grid(1.0);
        let records = OutcomeRecords::new(vec![
            rec(0, 0, None, OutcomeStatus::Attrition),
            rec(0, 1, None, OutcomeStatus::AbsentReviewer),
            rec(1, 0, Some(2.0), OutcomeStatus::Observed),
            rec(1, 1, None, OutcomeStatus::Attrition),
        ])
        .unwrap();
        let part = classify_pairs(&v, &p, &p, &records).unwrap();
        assert_eq!(part.class(PairId::new(0, 0)), PairClass::Absent);
        assert_eq!(part.class(PairId::new(0, 1)), PairClass::Absent);
        assert_eq!(part.class(PairId::new(1, 1)), PairClass::Attrition);
        assert!(part.is_observed(PairId::new(1, 0)));
    }

    #[test]
    fn manual_removal_is_attrition_and_addition_is_ignored() {
        let v = venue(2, 2, 1, 2);
        let p = v.grid(0.5);
        let records = OutcomeRecords::new(vec![
            rec(0, 0, None, OutcomeStatus::ManuallyRemoved),
            rec(1, 0, Some(4.0), OutcomeStatus::ManuallyAdded),
            rec(1, 1, Some(2.0), OutcomeStatus::Observed),
        ])
        .unwrap();
        let part = classify_pairs(&v, &p, &p, &records).unwrap();
        assert_eq!(part.class(PairId::new(0, 0)), PairClass::Attrition);
        assert_eq!(part.ignored(), &[PairId::new(1, 0)]);
        assert!(!part.is_assigned(PairId::new(1, 0)));
        assert!(!part.is_observed(PairId::new(1, 0)));
    }

    #[test]
    fn observation_outside_on_policy_support_is_inconsistent() {
        let v = venue(2, 2, 1, 1);
        let mut on = v.grid(0.5);
        on.set(PairId::new(0, 0), 0.0);
        let records =
            OutcomeRecords::new(vec![rec(0, 0, Some(3.0), OutcomeStatus::Observed)]).unwrap();
        let err = classify_pairs(&v, &on, &on, &records).unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)));
    }

    #[test]
    fn removed_then_rereviewed_is_an_error() {
        let err = OutcomeRecords::new(vec![
            rec(0, 0, None, OutcomeStatus::ManuallyRemoved),
            rec(0, 0, Some(3.0), OutcomeStatus::ManuallyAdded),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("manually removed"));
    }

    #[test]
    fn record_invariants() {
        let scale = OutcomeScale::new(1.0, 5.0, None).unwrap();
        assert!(rec(0, 0, None, OutcomeStatus::Observed)
            .check(Some(&scale))
            .is_err());
        assert!(rec(0, 0, Some(6.0), OutcomeStatus::Observed)
            .check(Some(&scale))
            .is_err());
        assert!(rec(0, 0, Some(2.0), OutcomeStatus::Attrition)
            .check(Some(&scale))
            .is_err());
        assert!(rec(0, 0, Some(2.0), OutcomeStatus::Observed)
            .check(Some(&scale))
            .is_ok());
    }
}

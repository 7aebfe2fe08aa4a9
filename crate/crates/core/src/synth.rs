//! Synthetic venues with known outcomes, for checking estimators end to end.
//!
//! Every pair gets a true outcome that is an increasing, Lipschitz function
//! of its (normalized) covariates. One assignment is drawn from the
//! on-policy, and the logged outcomes are thinned by attrition and absent
//! reviewers.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Covariates, OutcomeRecord, OutcomeRecords, OutcomeScale, OutcomeStatus, PairGrid,
    PairTable, Reviewer, Venue,
};
use crate::error::{Error, Result};
use crate::io;
use crate::lp::{policy_marginals, MarginalMatrix};
use crate::sampler::AssignmentSampler;
use crate::similarity::{bid_value, similarity_matrix, BidScheme, Family, PolicyParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub reviewers: usize,
    pub papers: usize,
    pub paper_load: u32,
    pub cap: u32,
    pub y_min: f64,
    pub y_max: f64,
    /// Include a subject-score covariate.
    pub subject: bool,
    /// Probability that a subject score is hidden.
    pub subject_missing: f64,
    /// Probability that a pair carries a non-default bid.
    pub bid_rate: f64,
    /// Bid scheme name, `tpdp` or `aaai`.
    pub bid_scheme: String,
    pub conflict_rate: f64,
    pub attrition: f64,
    /// Extra attrition for low-quality pairs: the rate for a pair of
    /// normalized quality `u` is `attrition·(1 + bias·(1 − 2u))`, clipped to [0, 1].
    pub attrition_bias: f64,
    /// Fraction of reviewers who submit nothing.
    pub absence: f64,
    pub policy: PolicyParams,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            reviewers: 8,
            papers: 8,
            paper_load: 2,
            cap: 3,
            y_min: 1.0,
            y_max: 5.0,
            subject: false,
            subject_missing: 0.0,
            bid_rate: 0.5,
            bid_scheme: "tpdp".into(),
            conflict_rate: 0.0,
            attrition: 0.0,
            attrition_bias: 0.0,
            absence: 0.0,
            policy: PolicyParams {
                family: Family::TpdpLinear,
                w_text: 0.5,
                lambda_bid: 1.0,
                q: 0.5,
            },
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("subject_missing", self.subject_missing),
            ("bid_rate", self.bid_rate),
            ("conflict_rate", self.conflict_rate),
            ("attrition", self.attrition),
            ("absence", self.absence),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Invalid(format!("{name} = {rate} outside [0, 1]")));
            }
        }
        if self.reviewers == 0 || self.papers == 0 {
            return Err(Error::Invalid("synthetic venue needs reviewers and papers".into()));
        }
        if self.y_min.is_nan() || self.y_max.is_nan() || self.y_min >= self.y_max {
            return Err(Error::Invalid("y_min must be below y_max".into()));
        }
        BidScheme::by_name(&self.bid_scheme)
            .ok_or_else(|| Error::Invalid(format!("unknown bid scheme {:?}", self.bid_scheme)))?;
        self.policy.validate()
    }
}

/// Generated venue with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticVenue {
    pub spec: SyntheticSpec,
    pub venue: Venue,
    pub table: PairTable,
    /// True outcome of every pair.
    pub truth: PairGrid<f64>,
    pub on_policy: MarginalMatrix,
    pub records: OutcomeRecords,
    /// Lipschitz constant of the outcome map under the study distance.
    pub l_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPair {
    pub reviewer: String,
    pub paper: String,
    pub value: f64,
}

/// Contents of `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDoc {
    pub spec: SyntheticSpec,
    pub outcome_function: String,
    pub l_star: f64,
    pub on_policy_mean: f64,
    pub outcomes: Vec<TruthPair>,
}

/// Mean true outcome under a marginal matrix: `Σ P·Y / N`.
pub fn true_mean(truth: &PairGrid<f64>, probs: &PairGrid<f64>, venue: &Venue) -> f64 {
    truth
        .iter()
        .map(|(p, y)| y * probs.get(p))
        .sum::<f64>()
        / venue.total_reviews() as f64
}

pub fn generate_synthetic_venue(spec: &SyntheticSpec) -> Result<SyntheticVenue> {
    spec.validate()?;
    let scheme = BidScheme::by_name(&spec.bid_scheme).expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let reviewers: Vec<Reviewer> = (0..spec.reviewers)
        .map(|i| Reviewer {
            id: format!("r{i:03}"),
            cap: spec.cap,
            profile: true,
        })
        .collect();
    let papers: Vec<String> = (0..spec.papers).map(|i| format!("p{i:03}")).collect();
    let mut conflicts = Vec::new();
    for r in &reviewers {
        for p in &papers {
            if rng.gen::<f64>() < spec.conflict_rate {
                conflicts.push((r.id.clone(), p.clone()));
            }
        }
    }
    let scale = OutcomeScale::new(spec.y_min, spec.y_max, None)?;
    let venue = Venue::new(
        reviewers,
        papers,
        spec.paper_load,
        conflicts,
        scheme.clone(),
        Some(scale.clone()),
    )?;

    let labels: Vec<&str> = scheme
        .entries
        .iter()
        .map(|e| e.label.as_str())
        .filter(|l| *l != scheme.default_label)
        .collect();
    let (b_lo, b_hi) = scheme.range(1.0);
    let dims = 2.0 + f64::from(u8::from(spec.subject));
    let mut table = venue.grid(Covariates::default());
    let mut quality = venue.grid(0.0);
    for pair in venue.grid(()).pairs() {
        let text: f64 = rng.gen();
        let latent_subject: f64 = rng.gen();
        let hidden = rng.gen::<f64>() < spec.subject_missing;
        let bid = (rng.gen::<f64>() < spec.bid_rate)
            .then(|| labels[rng.gen_range(0..labels.len())].to_string());
        let b = bid_value(bid.as_deref(), &scheme, 1.0)?;
        let b_norm = if b_hi > b_lo { (b - b_lo) / (b_hi - b_lo) } else { 0.0 };
        let mut u = text + b_norm;
        if spec.subject {
            u += latent_subject;
        }
        quality.set(pair, u / dims);
        table.set(
            pair,
            Covariates {
                text: Some(text),
                subject: (spec.subject && !hidden).then_some(latent_subject),
                bid,
            },
        );
    }
    let truth = quality.map(|_, &u| spec.y_min + (spec.y_max - spec.y_min) * u);

    let sim = similarity_matrix(&venue, &table, &spec.policy)?;
    let on_policy = policy_marginals(&sim, &venue, &spec.policy)?;
    let mut synth = SyntheticVenue {
        spec: spec.clone(),
        venue,
        table,
        truth,
        on_policy,
        records: OutcomeRecords::default(),
        l_star: spec.y_max - spec.y_min,
    };
    synth.records = synth.draw_records(spec.seed.wrapping_add(1))?;
    Ok(synth)
}

impl SyntheticVenue {
    /// Log one fresh on-policy draw: sample an assignment, then thin its
    /// outcomes by absence and attrition.
    pub fn draw_records(&self, seed: u64) -> Result<OutcomeRecords> {
        let sampler = AssignmentSampler::new(&self.on_policy, &self.venue)?;
        self.draw_with(&sampler, seed)
    }

    pub fn draw_with(&self, sampler: &AssignmentSampler, seed: u64) -> Result<OutcomeRecords> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = sampler.draw(&mut rng)?;
        let absent: Vec<bool> = (0..self.venue.num_reviewers())
            .map(|_| rng.gen::<f64>() < self.spec.absence)
            .collect();
        let width = self.spec.y_max - self.spec.y_min;
        let mut records = Vec::new();
        for (pair, &assigned) in z.iter() {
            if !assigned {
                continue;
            }
            let y = *self.truth.get(pair);
            let u = (y - self.spec.y_min) / width;
            let rate = (self.spec.attrition * (1.0 + self.spec.attrition_bias * (1.0 - 2.0 * u)))
                .clamp(0.0, 1.0);
            let drop = rng.gen::<f64>() < rate;
            let status = if absent[pair.reviewer] {
                OutcomeStatus::AbsentReviewer
            } else if drop {
                OutcomeStatus::Attrition
            } else {
                OutcomeStatus::Observed
            };
            records.push(OutcomeRecord {
                pair,
                value: (status == OutcomeStatus::Observed).then_some(y),
                status,
            });
        }
        OutcomeRecords::new(records)
    }

    pub fn truth_doc(&self) -> TruthDoc {
        TruthDoc {
            spec: self.spec.clone(),
            outcome_function: "y_min + (y_max - y_min) * mean(text, subject, normalized bid)".into(),
            l_star: self.l_star,
            on_policy_mean: true_mean(&self.truth, &self.on_policy.probs, &self.venue),
            outcomes: self
                .truth
                .iter()
                .map(|(p, &value)| {
                    let (r, q) = self.venue.pair_ids(p);
                    TruthPair {
                        reviewer: r.into(),
                        paper: q.into(),
                        value,
                    }
                })
                .collect(),
        }
    }

    pub fn true_mean(&self, probs: &PairGrid<f64>) -> f64 {
        true_mean(&self.truth, probs, &self.venue)
    }

    /// Write `venue.json`, `scores.csv`, `outcomes.csv`, `on_policy.csv`
    /// and, under `truth/`, `truth.json`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        io::write_file(dir.join("venue.json"), io::venue_to_json(&self.venue) + "\n")?;
        io::write_file(dir.join("scores.csv"), io::scores_to_csv(&self.venue, &self.table))?;
        io::write_file(dir.join("outcomes.csv"), io::outcomes_to_csv(&self.venue, &self.records))?;
        io::write_file(
            dir.join("on_policy.csv"),
            io::marginals_to_csv(&self.venue, &self.on_policy.probs),
        )?;
        io::write_json(dir.join("truth").join("truth.json"), &self.truth_doc())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_attrition_means_all_observed() {
        let s = generate_synthetic_venue(&SyntheticSpec::default()).unwrap();
        assert!(s.records.records().iter().all(|r| r.status == OutcomeStatus::Observed));
        assert_eq!(s.records.len(), s.venue.total_reviews());
    }

    #[test]
    fn same_seed_same_files() {
        let spec = SyntheticSpec {
            attrition: 0.2,
            seed: 11,
            ..Default::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic_venue(&spec).unwrap().write_to(a.path()).unwrap();
        generate_synthetic_venue(&spec).unwrap().write_to(b.path()).unwrap();
        for f in ["venue.json", "scores.csv", "outcomes.csv", "on_policy.csv", "truth/truth.json"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let c = tempfile::tempdir().unwrap();
        generate_synthetic_venue(&SyntheticSpec { seed: 12, ..spec })
            .unwrap()
            .write_to(c.path())
            .unwrap();
        assert_ne!(
            std::fs::read(a.path().join("scores.csv")).unwrap(),
            std::fs::read(c.path().join("scores.csv")).unwrap()
        );
    }

    #[test]
    fn written_files_reload() {
        let s = generate_synthetic_venue(&SyntheticSpec {
            attrition: 0.3,
            subject: true,
            subject_missing: 0.2,
            bid_scheme: "aaai".into(),
            policy: PolicyParams {
                family: Family::Aaai22,
                w_text: 0.75,
                lambda_bid: 1.0,
                q: 0.6,
            },
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_to(dir.path()).unwrap();
        let (v, t, o) = io::load_venue(
            dir.path().join("venue.json"),
            dir.path().join("scores.csv"),
            dir.path().join("outcomes.csv"),
        )
        .unwrap();
        assert_eq!(v, s.venue);
        assert_eq!(o.len(), s.records.len());
        for (pair, c) in t.iter() {
            let orig = s.table.get(pair);
            assert_eq!(c.bid, orig.bid);
            assert!((c.text.unwrap() - orig.text.unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn outcomes_within_scale_and_rates_checked() {
        let s = generate_synthetic_venue(&SyntheticSpec::default()).unwrap();
        assert!(s.truth.cells().iter().all(|&y| (1.0..=5.0).contains(&y)));
        assert!(generate_synthetic_venue(&SyntheticSpec {
            attrition: 1.5,
            ..Default::default()
        })
        .is_err());
    }
}

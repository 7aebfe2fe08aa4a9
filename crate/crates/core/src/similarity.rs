//! Composite similarity scores from text, subject-area and bid covariates.

use serde::{Deserialize, Serialize};

use crate::domain::{Covariates, PairGrid, PairTable, Venue};
use crate::error::{Error, Result};

/// Score attached to one bid label: `base + lambda_coef * lambda_bid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidEntry {
    pub label: String,
    pub base: f64,
    #[serde(default)]
    pub lambda_coef: f64,
}

/// Mapping from bid labels to numeric bid scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BidScheme {
    pub name: String,
    pub default_label: String,
    pub entries: Vec<BidEntry>,
}

impl BidScheme {
    /// Five-level scheme with `neutral` as the default.
    pub fn tpdp() -> Self {
        let e = |label: &str, base: f64| BidEntry {
            label: label.into(),
            base,
            lambda_coef: 0.0,
        };
        Self {
            name: "tpdp".into(),
            default_label: "neutral".into(),
            entries: vec![
                e("very low", -1.0),
                e("low", -0.5),
                e("neutral", 0.0),
                e("high", 0.5),
                e("very high", 1.0),
            ],
        }
    }

    /// Scheme whose positive bids scale with `lambda_bid`; `not entered` is the default.
    pub fn aaai() -> Self {
        let e = |label: &str, base: f64, lambda_coef: f64| BidEntry {
            label: label.into(),
            base,
            lambda_coef,
        };
        Self {
            name: "aaai".into(),
            default_label: "not entered".into(),
            entries: vec![
                e("not willing", 0.05, 0.0),
                e("not entered", 1.0, 0.0),
                e("in a pinch", 1.0, 0.5),
                e("willing", 1.0, 1.5),
                e("eager", 1.0, 3.0),
            ],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "aaai" => Some(Self::aaai()),
            "tpdp" => Some(Self::tpdp()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.entries.iter().any(|e| e.label == self.default_label) {
            return Err(Error::Invalid(format!(
                "bid scheme {:?}: default label {:?} not in mapping",
                self.name, self.default_label
            )));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|o| o.label == e.label) {
                return Err(Error::Invalid(format!("duplicate bid label {:?}", e.label)));
            }
            if !(e.base.is_finite() && e.lambda_coef.is_finite()) {
                return Err(Error::Invalid(format!("non-finite bid score for {:?}", e.label)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.iter().any(|e| e.label == label)
    }

    fn entry(&self, label: &str) -> Option<&BidEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    /// Smallest and largest bid score at the given `lambda_bid`.
    pub fn range(&self, lambda_bid: f64) -> (f64, f64) {
        self.entries
            .iter()
            .map(|e| e.base + e.lambda_coef * lambda_bid)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}

impl<'de> Deserialize<'de> for BidScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Full {
            #[serde(default)]
            name: Option<String>,
            default_label: String,
            entries: Vec<BidEntry>,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Named(String),
            Full(Full),
        }
        match Repr::deserialize(d)? {
            Repr::Named(n) => BidScheme::by_name(&n)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown bid scheme {n:?}"))),
            Repr::Full(f) => Ok(BidScheme {
                name: f.name.unwrap_or_else(|| "custom".into()),
                default_label: f.default_label,
                entries: f.entries,
            }),
        }
    }
}

/// Numeric bid score; a missing label takes the scheme default.
pub fn bid_value(label: Option<&str>, scheme: &BidScheme, lambda_bid: f64) -> Result<f64> {
    let label = label.unwrap_or(&scheme.default_label);
    let e = scheme
        .entry(label)
        .ok_or_else(|| Error::Invalid(format!("unknown bid label {label:?}")))?;
    Ok(e.base + e.lambda_coef * lambda_bid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `w T + (1 - w) B`
    TpdpLinear,
    /// Full cascade with missing-data and low-score rules.
    Aaai22,
    /// `(w T + (1 - w) K) * 2^B`
    Neurips16,
    /// `(w T + (1 - w) K)^(1 / B)`
    Aaai21,
}

impl Family {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "tpdp-linear" => Family::TpdpLinear,
            "aaai22" => Family::Aaai22,
            "neurips16" => Family::Neurips16,
            "aaai21" => Family::Aaai21,
            _ => return None,
        })
    }
}

/// Parameters of one assignment policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub family: Family,
    pub w_text: f64,
    #[serde(default = "default_lambda")]
    pub lambda_bid: f64,
    #[serde(default = "default_q")]
    pub q: f64,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_q() -> f64 {
    1.0
}

impl PolicyParams {
    pub fn new(family: Family, w_text: f64, lambda_bid: f64, q: f64) -> Result<Self> {
        let p = Self {
            family,
            w_text,
            lambda_bid,
            q,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::Invalid(format!("q must lie in (0, 1], got {}", self.q)));
        }
        if !(0.0..=1.0).contains(&self.w_text) {
            return Err(Error::Invalid(format!(
                "w_text must lie in [0, 1], got {}",
                self.w_text
            )));
        }
        if !(self.lambda_bid >= 0.0 && self.lambda_bid.is_finite()) {
            return Err(Error::Invalid(format!(
                "lambda_bid must be >= 0, got {}",
                self.lambda_bid
            )));
        }
        Ok(())
    }
}

/// `S = w T + (1 - w) B` under the five-level scheme.
pub fn similarity_tpdp(text: Option<f64>, bid: Option<&str>, w_text: f64) -> Result<f64> {
    similarity_linear(text, bid, &BidScheme::tpdp(), w_text, 0.0)
}

fn similarity_linear(
    text: Option<f64>,
    bid: Option<&str>,
    scheme: &BidScheme,
    w_text: f64,
    lambda_bid: f64,
) -> Result<f64> {
    let t = text.ok_or_else(|| Error::Invalid("linear similarity requires a text score".into()))?;
    let b = bid_value(bid, scheme, lambda_bid)?;
    Ok(w_text * t + (1.0 - w_text) * b)
}

/// Which special-case rules fired while scoring one pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CascadeFlags {
    pub positive_bid_zero_subject: bool,
    pub positive_bid_missing_subject: bool,
    pub low_score_rescue: bool,
    pub profile_reduction: bool,
}

const RESCUE_THRESHOLD: f64 = 0.15;
const NO_PROFILE_FACTOR: f64 = 0.9;

/// Score one pair with the full cascade:
/// base blend with missing-data fallbacks, positive-bid override for a zero
/// subject score, bid exponent, low-score rescue, and the no-profile reduction.
pub fn similarity_aaai(
    cov: &Covariates,
    scheme: &BidScheme,
    w_text: f64,
    lambda_bid: f64,
    profile: bool,
) -> Result<(f64, CascadeFlags)> {
    let mut flags = CascadeFlags::default();
    let bid_label = cov.bid.as_deref().unwrap_or(&scheme.default_label);
    let b = bid_value(Some(bid_label), scheme, lambda_bid)?;
    debug_assert!(b > 0.0, "bid score must be positive for the exponent form");

    let mut base = match (cov.text, cov.subject) {
        (Some(t), Some(k)) => w_text * t + (1.0 - w_text) * k,
        (Some(t), None) => t,
        (None, Some(k)) => k,
        (None, None) => 0.0,
    };
    if matches!(bid_label, "willing" | "eager") {
        match cov.subject {
            Some(0.0) => {
                base = cov.text.unwrap_or(0.0);
                flags.positive_bid_zero_subject = true;
            }
            None => flags.positive_bid_missing_subject = true,
            _ => {}
        }
    }

    let mut s = root(base, b);
    if s < RESCUE_THRESHOLD {
        if let Some(k) = cov.subject {
            s = root(k, b).min(RESCUE_THRESHOLD);
            flags.low_score_rescue = true;
        }
    }
    if !profile {
        s *= NO_PROFILE_FACTOR;
        flags.profile_reduction = true;
    }
    Ok((s, flags))
}

fn root(base: f64, b: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        base.powf(1.0 / b)
    }
}

fn blend_required(cov: &Covariates, w_text: f64, family: &str) -> Result<f64> {
    match (cov.text, cov.subject) {
        (Some(t), Some(k)) => Ok(w_text * t + (1.0 - w_text) * k),
        _ => Err(Error::Invalid(format!(
            "{family} similarity requires both text and subject scores"
        ))),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityDiagnostics {
    pub positive_bid_zero_subject: usize,
    /// Positive-bid pairs with a missing subject score, where the override is skipped.
    pub positive_bid_missing_subject: usize,
    pub low_score_rescue: usize,
    pub profile_reduction: usize,
}

/// Similarity over the venue; conflict pairs carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: PairGrid<Option<f64>>,
    pub diagnostics: SimilarityDiagnostics,
}

impl SimilarityMatrix {
    pub fn from_scores(scores: PairGrid<Option<f64>>) -> Self {
        Self {
            scores,
            diagnostics: SimilarityDiagnostics::default(),
        }
    }

    /// Dense matrix with conflicts removed according to the venue.
    pub fn from_dense(venue: &Venue, rows: Vec<Vec<f64>>) -> Self {
        let dense = PairGrid::from_rows(rows);
        Self::from_scores(dense.map(|p, &s| (!venue.is_conflict(p)).then_some(s)))
    }
}

pub fn similarity_matrix(
    venue: &Venue,
    table: &PairTable,
    params: &PolicyParams,
) -> Result<SimilarityMatrix> {
    params.validate()?;
    let scheme = venue.bid_scheme();
    let mut diag = SimilarityDiagnostics::default();
    let mut scores = venue.grid(None);
    for pair in venue.candidate_pairs() {
        let cov = table.get(pair);
        let s = match params.family {
            Family::TpdpLinear => similarity_linear(
                cov.text,
                cov.bid.as_deref(),
                scheme,
                params.w_text,
                params.lambda_bid,
            ),
            Family::Aaai22 => {
                let profile = venue.reviewers()[pair.reviewer].profile;
                similarity_aaai(cov, scheme, params.w_text, params.lambda_bid, profile).map(
                    |(s, f)| {
                        diag.positive_bid_zero_subject += f.positive_bid_zero_subject as usize;
                        diag.positive_bid_missing_subject +=
                            f.positive_bid_missing_subject as usize;
                        diag.low_score_rescue += f.low_score_rescue as usize;
                        diag.profile_reduction += f.profile_reduction as usize;
                        s
                    },
                )
            }
            Family::Neurips16 => {
                blend_required(cov, params.w_text, "neurips16").and_then(|base| {
                    let b = bid_value(cov.bid.as_deref(), scheme, params.lambda_bid)?;
                    Ok(base * 2f64.powf(b))
                })
            }
            Family::Aaai21 => blend_required(cov, params.w_text, "aaai21").and_then(|base| {
                let b = bid_value(cov.bid.as_deref(), scheme, params.lambda_bid)?;
                Ok(root(base, b))
            }),
        };
        let s = s.map_err(|e| {
            let (r, p) = venue.pair_ids(pair);
            Error::Invalid(format!("pair ({r}, {p}): {e}"))
        })?;
        scores.set(pair, Some(s));
    }
    Ok(SimilarityMatrix {
        scores,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PairId, Reviewer};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cov(t: Option<f64>, k: Option<f64>, bid: &str) -> Covariates {
        Covariates {
            text: t,
            subject: k,
            bid: Some(bid.into()),
        }
    }

    #[test]
    fn bid_values() {
        let a = BidScheme::aaai();
        assert_eq!(bid_value(Some("eager"), &a, 1.0).unwrap(), 4.0);
        assert_eq!(bid_value(None, &a, 1.0).unwrap(), 1.0);
        assert_eq!(bid_value(Some("in a pinch"), &a, 0.0).unwrap(), 1.0);
        assert_eq!(bid_value(Some("not willing"), &a, 7.0).unwrap(), 0.05);
        let t = BidScheme::tpdp();
        assert_eq!(bid_value(Some("very low"), &t, 1.0).unwrap(), -1.0);
        assert_eq!(bid_value(Some("high"), &t, 1.0).unwrap(), 0.5);
        assert_eq!(bid_value(None, &t, 1.0).unwrap(), 0.0);
        let err = bid_value(Some("maybe"), &a, 1.0).unwrap_err();
        assert!(err.to_string().contains("maybe"));
    }

    #[test]
    fn tpdp_linear() {
        assert_abs_diff_eq!(
            similarity_tpdp(Some(0.6), Some("high"), 0.5).unwrap(),
            0.55,
            epsilon = 1e-12
        );
        assert_eq!(similarity_tpdp(Some(0.6), Some("low"), 1.0).unwrap(), 0.6);
        assert_eq!(similarity_tpdp(Some(0.0), Some("very low"), 0.0).unwrap(), -1.0);
        assert!(similarity_tpdp(None, Some("low"), 0.5).is_err());
    }

    #[test]
    fn aaai_cascade_examples() {
        let a = BidScheme::aaai();
        let c = cov(Some(0.8), Some(0.4), "willing");
        let (s, _) = similarity_aaai(&c, &a, 0.75, 1.0, true).unwrap();
        assert_abs_diff_eq!(s, 0.7f64.powf(0.4), epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.867040, epsilon = 1e-6);
        let (s, f) = similarity_aaai(&c, &a, 0.75, 1.0, false).unwrap();
        assert_abs_diff_eq!(s, 0.780336, epsilon = 1e-6);
        assert!(f.profile_reduction);

        let (s, _) = similarity_aaai(&cov(None, None, "not entered"), &a, 0.75, 1.0, true).unwrap();
        assert_eq!(s, 0.0);

        let (s, f) =
            similarity_aaai(&cov(Some(0.04), Some(0.2), "not entered"), &a, 0.75, 1.0, true)
                .unwrap();
        assert_abs_diff_eq!(s, 0.15, epsilon = 1e-12);
        assert!(f.low_score_rescue);
    }

    #[test]
    fn aaai_missing_text_keeps_subject() {
        let a = BidScheme::aaai();
        let c = Covariates {
            text: None,
            subject: Some(0.3),
            bid: Some("eager".into()),
        };
        let (s, _) = similarity_aaai(&c, &a, 0.75, 1.0, true).unwrap();
        assert_abs_diff_eq!(s, 0.3f64.powf(0.25), epsilon = 1e-12);
    }

    #[test]
    fn matrix_families() {
        let venue = Venue::new(
            (0..2)
                .map(|i| Reviewer {
                    id: format!("r{i}"),
                    cap: 1,
                    profile: true,
                })
                .collect(),
            vec!["a".into(), "b".into()],
            1,
            vec![("r1".to_string(), "a".to_string())],
            BidScheme::tpdp(),
            None,
        )
        .unwrap();
        let table = PairGrid::from_fn(2, 2, |p| Covariates {
            text: Some(0.1 * (p.reviewer * 2 + p.paper) as f64),
            subject: Some(0.5),
            bid: Some("very high".into()),
        });
        let tpdp = PolicyParams::new(Family::TpdpLinear, 1.0, 1.0, 1.0).unwrap();
        let m = similarity_matrix(&venue, &table, &tpdp).unwrap();
        assert_eq!(*m.scores.get(PairId::new(0, 1)), Some(0.1));
        assert_eq!(*m.scores.get(PairId::new(1, 0)), None);

        let table = PairGrid::from_fn(2, 2, |_| cov(Some(0.5), Some(0.5), "very high"));
        let n16 = PolicyParams::new(Family::Neurips16, 0.5, 1.0, 1.0).unwrap();
        let m = similarity_matrix(&venue, &table, &n16).unwrap();
        assert_abs_diff_eq!(m.scores.get(PairId::new(0, 0)).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn aaai_all_missing_is_zero_matrix() {
        let venue = Venue::new(
            (0..2)
                .map(|i| Reviewer {
                    id: format!("r{i}"),
                    cap: 1,
                    profile: true,
                })
                .collect(),
            vec!["a".into(), "b".into()],
            1,
            Vec::new(),
            BidScheme::aaai(),
            None,
        )
        .unwrap();
        let table = venue.grid(Covariates::default());
        let p = PolicyParams::new(Family::Aaai22, 0.75, 1.0, 0.52).unwrap();
        let m = similarity_matrix(&venue, &table, &p).unwrap();
        assert!(m.scores.cells().iter().all(|s| *s == Some(0.0)));
    }

    #[test]
    fn params_validation() {
        assert!(PolicyParams::new(Family::Aaai22, 0.5, 1.0, 0.0).is_err());
        assert!(PolicyParams::new(Family::Aaai22, 1.5, 1.0, 0.5).is_err());
        assert!(PolicyParams::new(Family::Aaai22, 0.5, -1.0, 0.5).is_err());
    }

    fn opt_unit() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![1 => Just(None), 4 => (0.0f64..=1.0).prop_map(Some)]
    }

    fn label() -> impl Strategy<Value = &'static str> {
        prop_oneof![
            Just("not willing"),
            Just("not entered"),
            Just("in a pinch"),
            Just("willing"),
            Just("eager")
        ]
    }

    proptest! {
        #[test]
        fn aaai_score_in_unit_interval(
            t in opt_unit(), k in opt_unit(), bid in label(),
            w in 0.0f64..=1.0, lambda in 0.0f64..5.0, profile in any::<bool>()
        ) {
            let (s, _) = similarity_aaai(&cov(t, k, bid), &BidScheme::aaai(), w, lambda, profile).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn aaai_monotone_in_text_without_special_rules(
            t1 in 0.0f64..=1.0, dt in 0.0f64..0.5, k in 0.01f64..=1.0,
            bid in prop_oneof![Just("not entered"), Just("in a pinch"), Just("not willing")],
            w in 0.0f64..=1.0, lambda in 0.0f64..3.0
        ) {
            let a = BidScheme::aaai();
            let t2 = (t1 + dt).min(1.0);
            let (s1, f1) = similarity_aaai(&cov(Some(t1), Some(k), bid), &a, w, lambda, true).unwrap();
            let (s2, f2) = similarity_aaai(&cov(Some(t2), Some(k), bid), &a, w, lambda, true).unwrap();
            prop_assume!(!f1.low_score_rescue && !f2.low_score_rescue);
            prop_assert!(s2 >= s1 - 1e-15);
        }

        #[test]
        fn positive_bids_nondecreasing_in_lambda(l1 in 0.0f64..5.0, dl in 0.0f64..5.0, bid in label()) {
            let a = BidScheme::aaai();
            let v1 = bid_value(Some(bid), &a, l1).unwrap();
            let v2 = bid_value(Some(bid), &a, l1 + dl).unwrap();
            prop_assert!(v2 >= v1);
            if matches!(bid, "not willing" | "not entered") {
                prop_assert_eq!(v1, v2);
            }
        }
    }
}

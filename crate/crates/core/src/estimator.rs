//! Horvitz-Thompson estimation of a policy's mean outcome from logged data,
//! with imputation for unidentified pairs, a covariance-based variance
//! estimate, and Imbens-Manski intervals for partially identified means.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{
    classify_pairs, OutcomeRecords, PairClass, PairGrid, PairId, PairPartition, PairTable,
    PartitionCounts, Venue, SUPPORT_EPS,
};
use crate::error::{Error, Result};
use crate::sampler::CovarianceMatrix;

/// Importance weights `P_B / P_A`, undefined where the on-policy has no mass.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    weights: PairGrid<Option<f64>>,
}

impl WeightTable {
    pub fn get(&self, pair: PairId) -> Option<f64> {
        *self.weights.get(pair)
    }

    pub fn grid(&self) -> &PairGrid<Option<f64>> {
        &self.weights
    }
}

pub fn importance_weights(
    p_on: &PairGrid<f64>,
    p_off: &PairGrid<f64>,
    partition: &PairPartition,
) -> WeightTable {
    let weights = p_on.map(|pair, &a| match partition.class(pair) {
        PairClass::Excluded | PairClass::PositivityViolation => None,
        _ if a > SUPPORT_EPS => Some(*p_off.get(pair) / a),
        _ => None,
    });
    WeightTable { weights }
}

/// Everything the estimators need about one (on-policy, off-policy) study.
#[derive(Debug, Clone)]
pub struct Study {
    venue: Venue,
    table: PairTable,
    records: OutcomeRecords,
    p_on: PairGrid<f64>,
    p_off: PairGrid<f64>,
    partition: PairPartition,
    weights: WeightTable,
    outcomes: PairGrid<Option<f64>>,
}

impl Study {
    pub fn new(
        venue: Venue,
        table: PairTable,
        records: OutcomeRecords,
        p_on: PairGrid<f64>,
        p_off: PairGrid<f64>,
    ) -> Result<Self> {
        if !table.same_shape(&p_on) {
            return Err(Error::Invalid("covariate table does not match the venue".into()));
        }
        let partition = classify_pairs(&venue, &p_on, &p_off, &records)?;
        let weights = importance_weights(&p_on, &p_off, &partition);
        let outcomes = records.observed_values(venue.num_reviewers(), venue.num_papers());
        Ok(Self {
            venue,
            table,
            records,
            p_on,
            p_off,
            partition,
            weights,
            outcomes,
        })
    }

    /// The same logged data evaluated against another off-policy.
    pub fn with_off_policy(&self, p_off: PairGrid<f64>) -> Result<Self> {
        Self::new(
            self.venue.clone(),
            self.table.clone(),
            self.records.clone(),
            self.p_on.clone(),
            p_off,
        )
    }

    pub fn venue(&self) -> &Venue {
        &self.venue
    }

    pub fn table(&self) -> &PairTable {
        &self.table
    }

    pub fn records(&self) -> &OutcomeRecords {
        &self.records
    }

    pub fn p_on(&self) -> &PairGrid<f64> {
        &self.p_on
    }

    pub fn p_off(&self) -> &PairGrid<f64> {
        &self.p_off
    }

    pub fn partition(&self) -> &PairPartition {
        &self.partition
    }

    pub fn weights(&self) -> &WeightTable {
        &self.weights
    }

    pub fn outcome(&self, pair: PairId) -> Option<f64> {
        *self.outcomes.get(pair)
    }

    /// `N`, the number of reviews any policy produces.
    pub fn n_reviews(&self) -> usize {
        self.venue.total_reviews()
    }

    /// Observed pairs `O` with their outcomes.
    pub fn observed(&self) -> Vec<(PairId, f64)> {
        self.partition
            .observed()
            .into_iter()
            .map(|p| (p, self.outcome(p).expect("observed pair carries a value")))
            .collect()
    }

    /// Pairs whose outcome a plan must supply: attrition and positivity violations.
    pub fn plan_targets(&self) -> Vec<PairId> {
        self.partition
            .classes()
            .iter()
            .filter(|(_, c)| matches!(c, PairClass::Attrition | PairClass::PositivityViolation))
            .map(|(p, _)| p)
            .collect()
    }

    /// Weighted mean of observed outcomes, if any observation carries weight.
    pub fn y_bar(&self) -> Option<f64> {
        mean_observed(&self.outcomes, &self.weights, &self.partition).ok()
    }
}

/// `Σ Y Z W / Σ Z W` over observed supported pairs.
pub fn mean_observed(
    outcomes: &PairGrid<Option<f64>>,
    weights: &WeightTable,
    partition: &PairPartition,
) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for pair in partition.observed() {
        let w = weights.get(pair).unwrap_or(0.0);
        let y = outcomes
            .get(pair)
            .ok_or_else(|| Error::Estimation(format!("observed pair {pair} has no value")))?;
        num += y * w;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::Estimation(
            "no observed pair carries positive off-policy weight".into(),
        ));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Lower,
    Upper,
}

/// Where the imputed values of a plan came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlanSource {
    Mean,
    Constant { value: f64 },
    Model { model: String },
    Manski { side: Side },
    Monotone { side: Side },
    Lipschitz { side: Side, l: f64 },
    Custom,
}

/// Imputed outcomes for attrition and positivity-violation pairs, plus the
/// value standing in for every absent-reviewer pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationPlan {
    values: PairGrid<Option<f64>>,
    absent_value: Option<f64>,
    source: PlanSource,
}

impl ImputationPlan {
    /// Plan from a value function over the study's targets. Absent-reviewer
    /// pairs are imputed with the observed weighted mean.
    pub fn from_fn(study: &Study, source: PlanSource, mut value: impl FnMut(PairId) -> f64) -> Self {
        let mut values = study.venue.grid(None);
        for pair in study.plan_targets() {
            values.set(pair, Some(value(pair)));
        }
        Self {
            values,
            absent_value: study.y_bar(),
            source,
        }
    }

    pub fn constant(study: &Study, value: f64, source: PlanSource) -> Self {
        Self::from_fn(study, source, |_| value)
    }

    /// Every target imputed with the observed weighted mean.
    pub fn mean(study: &Study) -> Result<Self> {
        let y_bar = study.y_bar();
        if y_bar.is_none() && !study.plan_targets().is_empty() {
            return Err(Error::Estimation(
                "mean imputation needs an observed pair with positive weight".into(),
            ));
        }
        Ok(Self::constant(study, y_bar.unwrap_or(0.0), PlanSource::Mean))
    }

    pub fn get(&self, pair: PairId) -> Option<f64> {
        *self.values.get(pair)
    }

    pub fn set(&mut self, pair: PairId, value: f64) {
        self.values.set(pair, Some(value));
    }

    pub fn absent_value(&self) -> Option<f64> {
        self.absent_value
    }

    pub fn source(&self) -> &PlanSource {
        &self.source
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub variance: Option<f64>,
    pub n_reviews: usize,
    pub counts: PartitionCounts,
    pub plan: PlanSource,
    pub y_bar: Option<f64>,
}

impl EstimateReport {
    pub fn std_error(&self) -> Option<f64> {
        self.variance.map(f64::sqrt)
    }
}

/// The value each assigned or violating pair contributes, before weighting.
fn contribution(study: &Study, plan: &ImputationPlan, pair: PairId) -> Result<Option<f64>> {
    let class = study.partition.class(pair);
    let missing = |what: &str| {
        let (r, p) = study.venue.pair_ids(pair);
        Error::Estimation(format!("plan has no value for {what} pair ({r}, {p})"))
    };
    Ok(match class {
        PairClass::Excluded => None,
        PairClass::PositivityViolation => Some(plan.get(pair).ok_or_else(|| missing("positivity-violation"))?),
        _ if !study.partition.is_assigned(pair) => None,
        PairClass::Supported => study.outcome(pair),
        PairClass::Attrition => Some(plan.get(pair).ok_or_else(|| missing("attrition"))?),
        PairClass::Absent => Some(plan.absent_value.ok_or_else(|| {
            Error::Estimation(
                "absent-reviewer pairs need the observed mean, but no observed pair carries positive weight"
                    .into(),
            )
        })?),
    })
}

fn check_plan_range(study: &Study, plan: &ImputationPlan) -> Result<()> {
    let Some(scale) = study.venue.outcome_scale() else {
        return Ok(());
    };
    let tol = 1e-9 * scale.width().max(1.0);
    for (pair, v) in plan.values.iter() {
        if let Some(v) = v {
            if *v < scale.min - tol || *v > scale.max + tol {
                let (r, p) = study.venue.pair_ids(pair);
                return Err(Error::Estimation(format!(
                    "imputed value {v} for ({r}, {p}) outside [{}, {}]",
                    scale.min, scale.max
                )));
            }
        }
    }
    Ok(())
}

/// Point estimate of the off-policy mean under an imputation plan.
pub fn ht_estimate(study: &Study, plan: &ImputationPlan) -> Result<EstimateReport> {
    check_plan_range(study, plan)?;
    let mut total = 0.0;
    for pair in study.venue.grid(()).pairs() {
        let Some(y) = contribution(study, plan, pair)? else {
            continue;
        };
        let coef = match study.partition.class(pair) {
            PairClass::PositivityViolation => *study.p_off.get(pair),
            _ => study.weights.get(pair).unwrap_or(0.0),
        };
        total += y * coef;
    }
    Ok(EstimateReport {
        estimate: total / study.n_reviews() as f64,
        variance: None,
        n_reviews: study.n_reviews(),
        counts: study.partition.counts(),
        plan: plan.source.clone(),
        y_bar: study.y_bar(),
    })
}

/// Variance estimate `(1/N²) Σ Cov[Z_i, Z_j] W_i W_j Y'_i Y'_j` over assigned pairs.
pub fn variance_estimate(study: &Study, plan: &ImputationPlan, cov: &CovarianceMatrix) -> Result<f64> {
    let mut terms: Vec<(usize, f64)> = Vec::new();
    for pair in study.partition.assigned().iter().filter(|(_, z)| **z).map(|(p, _)| p) {
        let w = study.weights.get(pair).unwrap_or(0.0);
        if w == 0.0 {
            continue;
        }
        let Some(y) = contribution(study, plan, pair)? else {
            continue;
        };
        let idx = cov.index_of(pair).ok_or_else(|| {
            let (r, p) = study.venue.pair_ids(pair);
            Error::Estimation(format!("covariance has no entry for assigned pair ({r}, {p})"))
        })?;
        terms.push((idx, w * y));
    }
    let mut q = 0.0;
    for &(i, a) in &terms {
        for &(j, b) in &terms {
            q += cov.cov_index(i, j) * a * b;
        }
    }
    let n = study.n_reviews() as f64;
    Ok((q / (n * n)).max(0.0))
}

/// [`ht_estimate`] plus the variance, when a covariance is supplied.
pub fn estimate(study: &Study, plan: &ImputationPlan, cov: Option<&CovarianceMatrix>) -> Result<EstimateReport> {
    let mut report = ht_estimate(study, plan)?;
    if let Some(cov) = cov {
        report.variance = Some(variance_estimate(study, plan, cov)?);
    }
    Ok(report)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Solve `Φ(z + c) − Φ(−z) = α` for `z`, where `c = √N·width/σ`.
///
/// The root lies between the one-sided and two-sided quantiles; `c = ∞`
/// yields the one-sided one.
pub fn im_critical_value(c: f64, alpha: f64) -> f64 {
    let mut lo = normal_quantile(alpha);
    let mut hi = normal_quantile((1.0 + alpha) / 2.0);
    if c.is_infinite() {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid + c) - normal_cdf(-mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub z: f64,
    pub alpha: f64,
}

/// Imbens-Manski interval for a mean identified up to `[lower, upper]`.
///
/// `var_lower` and `var_upper` are asymptotic variances of the √N-scaled
/// endpoint estimators, so each endpoint moves by `z·√(var/N)`.
pub fn imbens_manski_interval(
    lower: f64,
    upper: f64,
    var_lower: f64,
    var_upper: f64,
    n: usize,
    alpha: f64,
) -> Result<Interval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("confidence level {alpha} outside (0, 1)")));
    }
    if !(var_lower >= 0.0 && var_upper >= 0.0) {
        return Err(Error::Invalid("interval variances must be nonnegative".into()));
    }
    if lower > upper + 1e-9 * (1.0 + upper.abs()) {
        return Err(Error::Invalid(format!("lower endpoint {lower} exceeds upper {upper}")));
    }
    let upper = upper.max(lower);
    if var_lower == 0.0 && var_upper == 0.0 {
        return Ok(Interval {
            lo: lower,
            hi: upper,
            z: 0.0,
            alpha,
        });
    }
    let n = n as f64;
    let sigma = var_lower.sqrt().max(var_upper.sqrt());
    let z = im_critical_value(n.sqrt() * (upper - lower) / sigma, alpha);
    Ok(Interval {
        lo: lower - z * (var_lower / n).sqrt(),
        hi: upper + z * (var_upper / n).sqrt(),
        z,
        alpha,
    })
}

/// Interval from two endpoint reports that both carry variances of the
/// estimate itself.
pub fn interval_from_reports(lower: &EstimateReport, upper: &EstimateReport, alpha: f64) -> Result<Option<Interval>> {
    let (Some(vl), Some(vu)) = (lower.variance, upper.variance) else {
        return Ok(None);
    };
    let n = lower.n_reviews;
    let scale = n as f64;
    imbens_manski_interval(lower.estimate, upper.estimate, vl * scale, vu * scale, n, alpha).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{OutcomeRecord, OutcomeStatus, Reviewer};
    use crate::sampler::CovarianceProvenance;
    use crate::similarity::BidScheme;
    use approx::assert_abs_diff_eq;

    fn venue(nr: usize, np: usize) -> Venue {
        Venue::new(
            (0..nr)
                .map(|i| Reviewer {
                    id: format!("r{i}"),
                    cap: 1,
                    profile: true,
                })
                .collect(),
            (0..np).map(|i| format!("p{i}")).collect(),
            1,
            Vec::new(),
            BidScheme::aaai(),
            None,
        )
        .unwrap()
    }

    fn observed(pair: PairId, y: f64) -> OutcomeRecord {
        OutcomeRecord {
            pair,
            value: Some(y),
            status: OutcomeStatus::Observed,
        }
    }

    fn diag_study(sample: bool) -> Study {
        let v = venue(2, 2);
        let p_on = v.grid(0.5);
        let p_off = PairGrid::from_fn(2, 2, |p| if p.reviewer == p.paper { 1.0 } else { 0.0 });
        let recs = if sample {
            vec![observed(PairId::new(0, 0), 3.0), observed(PairId::new(1, 1), 1.0)]
        } else {
            vec![observed(PairId::new(0, 1), 5.0), observed(PairId::new(1, 0), 5.0)]
        };
        let table = v.grid(Default::default());
        Study::new(v, table, OutcomeRecords::new(recs).unwrap(), p_on, p_off).unwrap()
    }

    fn exact_cov() -> CovarianceMatrix {
        let support: Vec<PairId> = (0..4).map(|i| PairId::new(i / 2, i % 2)).collect();
        let same = |a: PairId, b: PairId| (a.reviewer + a.paper) % 2 == (b.reviewer + b.paper) % 2;
        let mut entries = Vec::new();
        for a in 0..4u32 {
            for b in a..4u32 {
                let v = if same(support[a as usize], support[b as usize]) { 0.25 } else { -0.25 };
                entries.push((a, b, v));
            }
        }
        CovarianceMatrix::new(
            support,
            vec![0.5; 4],
            entries,
            CovarianceProvenance {
                samples: 0,
                seed: 0,
                workers: 0,
            },
        )
    }

    #[test]
    fn weights_are_ratios() {
        let s = diag_study(true);
        assert_eq!(s.weights().get(PairId::new(0, 0)), Some(2.0));
        assert_eq!(s.weights().get(PairId::new(0, 1)), Some(0.0));
    }

    #[test]
    fn worked_two_by_two_case() {
        let s = diag_study(true);
        let plan = ImputationPlan::mean(&s).unwrap();
        assert_abs_diff_eq!(ht_estimate(&s, &plan).unwrap().estimate, 4.0, epsilon = 1e-12);
        let other = diag_study(false);
        assert_eq!(other.y_bar(), None);
        let plan = ImputationPlan::mean(&other).unwrap();
        assert_abs_diff_eq!(ht_estimate(&other, &plan).unwrap().estimate, 0.0);
    }

    #[test]
    fn worked_case_variance_is_four() {
        let s = diag_study(true);
        let plan = ImputationPlan::constant(&s, 0.0, PlanSource::Custom);
        let v = variance_estimate(&s, &plan, &exact_cov()).unwrap();
        // Y' = (3, 1), W = 2: a = (6, 2); (36 + 4 + 2·12)·0.25 / 4 = 4.
        assert_abs_diff_eq!(v, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_mean_examples() {
        let v = venue(2, 2);
        let recs = OutcomeRecords::new(vec![
            observed(PairId::new(0, 0), 2.0),
            observed(PairId::new(1, 1), 4.0),
        ])
        .unwrap();
        let p_on = v.grid(0.5);
        let table = v.grid(Default::default());
        let s = Study::new(v.clone(), table.clone(), recs.clone(), p_on.clone(), p_on.clone()).unwrap();
        assert_abs_diff_eq!(s.y_bar().unwrap(), 3.0);
        let p_on = PairGrid::from_rows(vec![vec![0.5, 0.5], vec![0.75, 0.25]]);
        let p_off = PairGrid::from_rows(vec![vec![0.5, 0.5], vec![0.25, 0.75]]);
        let s = Study::new(s.venue().clone(), table, recs, p_on, p_off).unwrap();
        assert_eq!(s.weights().get(PairId::new(1, 1)), Some(3.0));
        assert_abs_diff_eq!(s.y_bar().unwrap(), 3.5);
    }

    #[test]
    fn all_violations_with_y_min_gives_y_min() {
        let v = venue(2, 2);
        let p_on = PairGrid::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p_off = PairGrid::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let recs = OutcomeRecords::new(vec![
            observed(PairId::new(0, 0), 2.0),
            observed(PairId::new(1, 1), 4.0),
        ])
        .unwrap();
        let s = Study::new(v.clone(), v.grid(Default::default()), recs, p_on, p_off).unwrap();
        let plan = ImputationPlan::constant(&s, 1.0, PlanSource::Manski { side: Side::Lower });
        assert_abs_diff_eq!(ht_estimate(&s, &plan).unwrap().estimate, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn plan_missing_a_target_fails() {
        let v = venue(2, 2);
        let p_on = PairGrid::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p_off = PairGrid::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let recs = OutcomeRecords::new(vec![observed(PairId::new(0, 0), 2.0), observed(PairId::new(1, 1), 4.0)]).unwrap();
        let s = Study::new(v.clone(), v.grid(Default::default()), recs, p_on, p_off).unwrap();
        let mut plan = ImputationPlan::constant(&s, 1.0, PlanSource::Custom);
        plan.values.set(PairId::new(0, 1), None);
        assert!(matches!(ht_estimate(&s, &plan), Err(Error::Estimation(_))));
    }

    #[test]
    fn deterministic_on_policy_has_zero_variance() {
        let v = venue(2, 2);
        let p = PairGrid::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let recs = OutcomeRecords::new(vec![observed(PairId::new(0, 0), 2.0), observed(PairId::new(1, 1), 4.0)]).unwrap();
        let s = Study::new(v.clone(), v.grid(Default::default()), recs, p.clone(), p).unwrap();
        let cov = CovarianceMatrix::new(
            vec![PairId::new(0, 0), PairId::new(1, 1)],
            vec![1.0, 1.0],
            vec![(0, 0, 0.0), (1, 1, 0.0)],
            CovarianceProvenance {
                samples: 10,
                seed: 0,
                workers: 1,
            },
        );
        let plan = ImputationPlan::mean(&s).unwrap();
        let r = estimate(&s, &plan, Some(&cov)).unwrap();
        assert_eq!(r.variance, Some(0.0));
        assert_abs_diff_eq!(r.estimate, 3.0);
    }

    #[test]
    fn normal_accuracy() {
        assert_abs_diff_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-10);
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(-3.0), 0.0013498980316300946, epsilon = 1e-13);
        assert_abs_diff_eq!(normal_quantile(0.95), 1.6448536269514722, epsilon = 1e-11);
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-11);
    }

    #[test]
    fn critical_value_limits() {
        assert_abs_diff_eq!(im_critical_value(0.0, 0.95), 1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(im_critical_value(f64::INFINITY, 0.95), 1.644854, epsilon = 1e-6);
        assert_abs_diff_eq!(im_critical_value(100.0, 0.95), 1.644854, epsilon = 1e-6);
        let z = im_critical_value(0.7, 0.95);
        assert_abs_diff_eq!(normal_cdf(z + 0.7) - normal_cdf(-z), 0.95, epsilon = 1e-10);
    }

    #[test]
    fn zero_variance_interval_is_the_bounds() {
        let i = imbens_manski_interval(1.0, 2.0, 0.0, 0.0, 10, 0.95).unwrap();
        assert_eq!((i.lo, i.hi), (1.0, 2.0));
        assert!(imbens_manski_interval(2.0, 1.0, 1.0, 1.0, 10, 0.95).is_err());
    }

    #[test]
    fn point_identified_interval_is_two_sided() {
        let i = imbens_manski_interval(1.0, 1.0, 4.0, 4.0, 4, 0.95).unwrap();
        assert_abs_diff_eq!(i.hi - 1.0, 1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(1.0 - i.lo, 1.959964, epsilon = 1e-6);
    }
}

//! Partial identification of the off-policy mean: Manski bounds, and bounds
//! under monotonicity or Lipschitz smoothness of the covariate-outcome map,
//! computed through surrogate-value linear programs.

use serde::{Deserialize, Serialize};

use crate::domain::{OutcomeScale, PairClass, PairId};
use crate::error::{Error, Result};
use crate::estimator::{
    estimate, interval_from_reports, EstimateReport, ImputationPlan, Interval, PlanSource, Side,
    Study,
};
use crate::lp::{solve_lp, Cmp, LinearProgram, Sense, SolveTolerance};
use crate::sampler::CovarianceMatrix;
use crate::similarity::bid_value;

/// Which covariates make up the feature vector of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub text: bool,
    pub subject: bool,
    pub bid: bool,
    /// Bid scaling used to turn labels into numbers.
    pub bid_lambda: f64,
}

impl FeatureSpec {
    /// Text and bid always; subject score only if some pair has one.
    pub fn for_study(study: &Study) -> Self {
        let subject = study.table().cells().iter().any(|c| c.subject.is_some());
        Self {
            text: true,
            subject,
            bid: true,
            bid_lambda: 1.0,
        }
    }

    pub fn dims(&self) -> usize {
        usize::from(self.text) + usize::from(self.subject) + usize::from(self.bid)
    }

    /// Feature vector of a pair; missing covariates stay `None`. A missing
    /// bid takes the scheme's default label.
    pub fn features(&self, study: &Study, pair: PairId) -> Result<Vec<Option<f64>>> {
        let c = study.table().get(pair);
        let mut x = Vec::with_capacity(self.dims());
        if self.text {
            x.push(c.text);
        }
        if self.subject {
            x.push(c.subject);
        }
        if self.bid {
            x.push(Some(bid_value(
                c.bid.as_deref(),
                study.venue().bid_scheme(),
                self.bid_lambda,
            )?));
        }
        Ok(x)
    }
}

/// Per-dimension normalization for [`covariate_distance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    /// `(min, max)` of each dimension.
    pub ranges: Vec<(f64, f64)>,
}

impl DistanceSpec {
    /// Ranges spanning the present values of `points`.
    pub fn from_points(dims: usize, points: &[Vec<Option<f64>>]) -> Self {
        let ranges = (0..dims)
            .map(|k| {
                let present = points.iter().filter_map(|x| x[k]);
                let (lo, hi) = present.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
                if lo.is_finite() {
                    (lo, hi)
                } else {
                    (0.0, 1.0)
                }
            })
            .collect();
        Self { ranges }
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }

    fn width(&self, k: usize) -> f64 {
        let (lo, hi) = self.ranges[k];
        if hi > lo {
            hi - lo
        } else {
            1.0
        }
    }
}

/// Mean normalized absolute difference; a component missing on either
/// side contributes 1.
pub fn covariate_distance(x: &[Option<f64>], y: &[Option<f64>], spec: &DistanceSpec) -> f64 {
    let c = spec.dims();
    if c == 0 {
        return 0.0;
    }
    let total: f64 = (0..c)
        .map(|k| match (x[k], y[k]) {
            (Some(a), Some(b)) => ((a - b).abs() / spec.width(k)).min(1.0),
            _ => 1.0,
        })
        .sum();
    total / c as f64
}

/// `x` dominates `y`: at least as large everywhere, larger somewhere, with
/// every component present.
pub fn dominates(x: &[Option<f64>], y: &[Option<f64>]) -> bool {
    let mut strict = false;
    for (a, b) in x.iter().zip(y) {
        match (a, b) {
            (Some(a), Some(b)) if a >= b => strict |= a > b,
            _ => return false,
        }
    }
    strict
}

/// Transitively reduced dominance relation over a point set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DominanceGraph {
    /// Edges `(i, j)` meaning point `i` dominates point `j`.
    pub edges: Vec<(usize, usize)>,
    /// Number of dominance relations before reduction.
    pub relations: usize,
}

pub fn dominance_graph(points: &[Vec<Option<f64>>]) -> DominanceGraph {
    let n = points.len();
    let words = n.div_ceil(64);
    let mut below = vec![vec![0u64; words]; n];
    let mut above = vec![vec![0u64; words]; n];
    let mut relations = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && dominates(&points[i], &points[j]) {
                below[i][j / 64] |= 1 << (j % 64);
                above[j][i / 64] |= 1 << (i % 64);
                relations.push((i, j));
            }
        }
    }
    let count = relations.len();
    let edges = relations
        .into_iter()
        .filter(|&(i, j)| below[i].iter().zip(&above[j]).all(|(a, b)| a & b == 0))
        .collect();
    DominanceGraph {
        edges,
        relations: count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Manski,
    Monotone,
    Lipschitz,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "manski" => Some(Method::Manski),
            "mono" | "monotone" => Some(Method::Monotone),
            "lip" | "lipschitz" => Some(Method::Lipschitz),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Manski => "manski",
            Method::Monotone => "mono",
            Method::Lipschitz => "lip",
        }
    }
}

pub const BIG_PSI: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    /// Leave absent-reviewer surrogates out of the secondary objective.
    pub exclude_absent: bool,
    /// Solve one LP with the primary objective scaled by this factor instead
    /// of two sequential LPs.
    pub big_psi: Option<f64>,
    pub alpha: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            exclude_absent: false,
            big_psi: None,
            alpha: 0.95,
        }
    }
}

/// Surrogate outcomes for every pair the program constrains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSolution {
    pub side: Side,
    pub pairs: Vec<PairId>,
    pub values: Vec<f64>,
    /// `Σ |T − Y|` over observed pairs.
    pub primary: f64,
    /// Weighted sum of surrogates over unidentified pairs.
    pub secondary: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCounts {
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub method: Method,
    pub l: Option<f64>,
    pub lower: EstimateReport,
    pub upper: EstimateReport,
    pub interval: Option<Interval>,
    pub constraints: ConstraintCounts,
    pub surrogates: Option<[SurrogateSolution; 2]>,
    pub exclude_absent: bool,
}

fn require_scale(study: &Study) -> Result<OutcomeScale> {
    study
        .venue()
        .outcome_scale()
        .cloned()
        .ok_or_else(|| Error::Invalid("bounds need an outcome scale on the venue".into()))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    study: &Study,
    method: Method,
    l: Option<f64>,
    plans: [ImputationPlan; 2],
    cov: Option<&CovarianceMatrix>,
    config: &BoundConfig,
    constraints: ConstraintCounts,
    surrogates: Option<[SurrogateSolution; 2]>,
) -> Result<BoundsResult> {
    let [lo_plan, hi_plan] = plans;
    let lower = estimate(study, &lo_plan, cov)?;
    let upper = estimate(study, &hi_plan, cov)?;
    let interval = interval_from_reports(&lower, &upper, config.alpha)?;
    Ok(BoundsResult {
        method,
        l,
        lower,
        upper,
        interval,
        constraints,
        surrogates,
        exclude_absent: config.exclude_absent,
    })
}

/// Bounds from imputing the scale extremes for every unidentified pair.
pub fn manski_bounds(study: &Study, cov: Option<&CovarianceMatrix>, config: &BoundConfig) -> Result<BoundsResult> {
    let scale = require_scale(study)?;
    let plans = [
        ImputationPlan::constant(study, scale.min, PlanSource::Manski { side: Side::Lower }),
        ImputationPlan::constant(study, scale.max, PlanSource::Manski { side: Side::Upper }),
    ];
    finish(study, Method::Manski, None, plans, cov, config, ConstraintCounts::default(), None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Observed(f64),
    Attrition,
    Absent,
    Violation,
}

/// The constrained universe `U`: observed, attrition, absent and
/// positivity-violation pairs, with features and objective coefficients.
#[derive(Debug, Clone)]
pub struct Universe {
    pub pairs: Vec<PairId>,
    pub points: Vec<Vec<Option<f64>>>,
    pub distance: DistanceSpec,
    roles: Vec<Role>,
    coef: Vec<f64>,
}

impl Universe {
    pub fn new(study: &Study, features: &FeatureSpec, exclude_absent: bool) -> Result<Self> {
        let part = study.partition();
        let mut pairs = Vec::new();
        let mut roles = Vec::new();
        let mut coef = Vec::new();
        for (pair, class) in part.classes().iter() {
            let w = study.weights().get(pair).unwrap_or(0.0);
            let z = if part.is_assigned(pair) { 1.0 } else { 0.0 };
            let (role, c) = match class {
                PairClass::Supported if part.is_assigned(pair) => {
                    (Role::Observed(study.outcome(pair).expect("observed value")), 0.0)
                }
                PairClass::Attrition => (Role::Attrition, z * w),
                PairClass::Absent => (Role::Absent, if exclude_absent { 0.0 } else { z * w }),
                PairClass::PositivityViolation => (Role::Violation, *study.p_off().get(pair)),
                _ => continue,
            };
            pairs.push(pair);
            roles.push(role);
            coef.push(c);
        }
        let points = pairs
            .iter()
            .map(|&p| features.features(study, p))
            .collect::<Result<Vec<_>>>()?;
        let distance = DistanceSpec::from_points(features.dims(), &points);
        Ok(Self {
            pairs,
            points,
            distance,
            roles,
            coef,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| matches!(self.roles[i], Role::Observed(_)))
            .collect()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        covariate_distance(&self.points[i], &self.points[j], &self.distance)
    }

    pub fn outcome(&self, i: usize) -> Option<f64> {
        match self.roles[i] {
            Role::Observed(y) => Some(y),
            _ => None,
        }
    }

    pub fn objective_coef(&self, i: usize) -> f64 {
        self.coef[i]
    }
}

/// Difference constraints `T_a − T_b ≤ c` over universe indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceConstraints {
    pub rows: Vec<(usize, usize, f64)>,
    pub counts: ConstraintCounts,
}

pub fn monotone_constraints(universe: &Universe) -> DifferenceConstraints {
    let dag = dominance_graph(&universe.points);
    DifferenceConstraints {
        rows: dag.edges.iter().map(|&(i, j)| (j, i, 0.0)).collect(),
        counts: ConstraintCounts {
            before: dag.relations,
            after: dag.edges.len(),
        },
    }
}

/// `|T_i − T_j| ≤ L·d` for every pair in the universe the box does not
/// already imply.
pub fn lipschitz_constraints(universe: &Universe, l: f64, width: f64) -> DifferenceConstraints {
    let n = universe.len();
    let mut rows = Vec::new();
    let mut before = 0;
    for i in 0..n {
        for j in i + 1..n {
            before += 1;
            let bound = l * universe.distance(i, j);
            if bound < width {
                rows.push((i, j, bound));
                rows.push((j, i, bound));
            }
        }
    }
    DifferenceConstraints {
        counts: ConstraintCounts {
            before,
            after: rows.len() / 2,
        },
        rows,
    }
}

struct SurrogateProgram<'a> {
    universe: &'a Universe,
    rows: &'a DifferenceConstraints,
    scale: &'a OutcomeScale,
}

impl SurrogateProgram<'_> {
    /// Variables `T_0..T_n`, then one slack pair per observed pair.
    fn base(&self, sense: Sense, t_obj: impl Fn(usize) -> f64, e_obj: f64) -> (LinearProgram, Vec<usize>) {
        let n = self.universe.len();
        let mut lp = LinearProgram::new(sense);
        for i in 0..n {
            lp.add_var(t_obj(i), self.scale.min, self.scale.max);
        }
        let mut slacks = Vec::new();
        let span = self.scale.width() + self.scale.max.abs().max(self.scale.min.abs());
        for i in 0..n {
            if let Some(y) = self.universe.outcome(i) {
                let up = lp.add_var(e_obj, 0.0, span);
                let down = lp.add_var(e_obj, 0.0, span);
                lp.add_constraint(vec![(i, 1.0), (up, -1.0), (down, 1.0)], Cmp::Eq, y);
                slacks.push(up);
                slacks.push(down);
            }
        }
        for &(a, b, c) in &self.rows.rows {
            lp.add_constraint(vec![(a, 1.0), (b, -1.0)], Cmp::Le, c);
        }
        (lp, slacks)
    }

    fn secondary(&self, t: &[f64]) -> f64 {
        (0..self.universe.len()).map(|i| self.universe.coef[i] * t[i]).sum()
    }

    fn primary(&self, t: &[f64]) -> f64 {
        (0..self.universe.len())
            .filter_map(|i| self.universe.outcome(i).map(|y| (t[i] - y).abs()))
            .sum()
    }

    fn solve(&self, side: Side, big_psi: Option<f64>) -> Result<SurrogateSolution> {
        let n = self.universe.len();
        let sign = match side {
            Side::Lower => 1.0,
            Side::Upper => -1.0,
        };
        let tol = SolveTolerance {
            objective: 1e-8,
            feasibility: 1e-8,
        };
        let values = if let Some(psi) = big_psi {
            let (lp, _) = self.base(Sense::Minimize, |i| sign * self.universe.coef[i], psi);
            solve_lp(&lp, tol)?.values
        } else {
            let (lp, slacks) = self.base(Sense::Minimize, |_| 0.0, 1.0);
            let best = solve_lp(&lp, tol)?.objective;
            let sense = match side {
                Side::Lower => Sense::Minimize,
                Side::Upper => Sense::Maximize,
            };
            let (base, _) = self.base(sense, |i| self.universe.coef[i], 0.0);
            let mut pinned = None;
            for slack in [1e-12, 1e-10, 1e-8] {
                let mut lp = base.clone();
                let pin = best + slack * (1.0 + best);
                lp.add_constraint(slacks.iter().map(|&s| (s, 1.0)).collect(), Cmp::Le, pin);
                match solve_lp(&lp, tol) {
                    Err(Error::Infeasible { .. }) => continue,
                    other => {
                        pinned = Some(other?.values);
                        break;
                    }
                }
            }
            pinned.ok_or_else(|| {
                Error::Solver("secondary stage infeasible with the primary optimum pinned".into())
            })?
        };
        let t: Vec<f64> = values[..n].iter().map(|&v| self.scale.clamp(v)).collect();
        self.verify(&t)?;
        Ok(SurrogateSolution {
            side,
            pairs: self.universe.pairs.clone(),
            primary: self.primary(&t),
            secondary: self.secondary(&t),
            values: t,
        })
    }

    /// Re-check the constraint set directly, without trusting the solver.
    fn verify(&self, t: &[f64]) -> Result<()> {
        const TOL: f64 = 1e-8;
        for &(a, b, c) in &self.rows.rows {
            let excess = t[a] - t[b] - c;
            if excess > TOL * (1.0 + c.abs()) {
                return Err(Error::Solver(format!(
                    "surrogate constraint T[{a}] - T[{b}] <= {c} violated by {excess:e}"
                )));
            }
        }
        Ok(())
    }
}

fn surrogate_bounds(
    study: &Study,
    universe: &Universe,
    rows: &DifferenceConstraints,
    method: Method,
    l: Option<f64>,
    cov: Option<&CovarianceMatrix>,
    config: &BoundConfig,
) -> Result<BoundsResult> {
    let scale = require_scale(study)?;
    let program = SurrogateProgram {
        universe,
        rows,
        scale: &scale,
    };
    let lower = program.solve(Side::Lower, config.big_psi)?;
    let upper = program.solve(Side::Upper, config.big_psi)?;
    let plan_for = |sol: &SurrogateSolution| {
        let source = match method {
            Method::Monotone => PlanSource::Monotone { side: sol.side },
            _ => PlanSource::Lipschitz {
                side: sol.side,
                l: l.unwrap_or(f64::NAN),
            },
        };
        let mut plan = ImputationPlan::constant(study, scale.min, source);
        for (k, &pair) in sol.pairs.iter().enumerate() {
            if matches!(universe.roles[k], Role::Attrition | Role::Violation) {
                plan.set(pair, sol.values[k]);
            }
        }
        plan
    };
    let plans = [plan_for(&lower), plan_for(&upper)];
    finish(study, method, l, plans, cov, config, rows.counts, Some([lower, upper]))
}

/// Bounds assuming outcomes are nondecreasing under covariate dominance.
pub fn monotonicity_bounds(
    study: &Study,
    features: &FeatureSpec,
    cov: Option<&CovarianceMatrix>,
    config: &BoundConfig,
) -> Result<BoundsResult> {
    let universe = Universe::new(study, features, config.exclude_absent)?;
    let rows = monotone_constraints(&universe);
    surrogate_bounds(study, &universe, &rows, Method::Monotone, None, cov, config)
}

/// Bounds assuming `|Y_i − Y_j| ≤ L·d(X_i, X_j)`.
pub fn lipschitz_bounds(
    study: &Study,
    features: &FeatureSpec,
    l: f64,
    cov: Option<&CovarianceMatrix>,
    config: &BoundConfig,
) -> Result<BoundsResult> {
    if l.is_nan() || l <= 0.0 {
        return Err(Error::Invalid(format!("Lipschitz constant must be positive, got {l}")));
    }
    let scale = require_scale(study)?;
    let universe = Universe::new(study, features, config.exclude_absent)?;
    let rows = lipschitz_constraints(&universe, l, scale.width());
    surrogate_bounds(study, &universe, &rows, Method::Lipschitz, Some(l), cov, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `(target fraction, smallest admissible L)`.
    pub constants: Vec<(f64, f64)>,
    /// Observed pairs at distance 0 with different outcomes.
    pub hard_violations: usize,
    /// Observed pairs at positive distance.
    pub pairs: usize,
}

pub const DEFAULT_VIOLATION_TARGETS: [f64; 3] = [0.10, 0.05, 0.01];

/// Smallest `L` on a grid such that at most a fraction `f` of observed pairs
/// violate the Lipschitz condition, for each target `f`.
///
/// The default grid is 0 together with every observed ratio `|ΔY|/d`.
pub fn calibrate_lipschitz(
    observed: &[(Vec<Option<f64>>, f64)],
    spec: &DistanceSpec,
    targets: &[f64],
    grid: Option<&[f64]>,
) -> Result<Calibration> {
    if observed.len() < 2 {
        return Err(Error::Invalid("calibration needs at least two observed pairs".into()));
    }
    let mut ratios = Vec::new();
    let mut hard = 0;
    for i in 0..observed.len() {
        for j in i + 1..observed.len() {
            let d = covariate_distance(&observed[i].0, &observed[j].0, spec);
            let dy = (observed[i].1 - observed[j].1).abs();
            if d > 0.0 {
                ratios.push(dy / d);
            } else if dy > 0.0 {
                hard += 1;
            }
        }
    }
    if ratios.is_empty() {
        return Err(Error::Invalid("all observed pairs are at distance zero".into()));
    }
    ratios.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => std::iter::once(0.0).chain(ratios.iter().copied()).collect(),
    };
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let total = ratios.len() as f64;
    let violating = |l: f64| (ratios.len() - ratios.partition_point(|&r| r <= l)) as f64 / total;
    let constants = targets
        .iter()
        .map(|&f| {
            let l = candidates
                .iter()
                .copied()
                .find(|&l| violating(l) <= f)
                .ok_or_else(|| Error::Invalid(format!("no grid value reaches violation fraction {f}")))?;
            Ok((f, l))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration {
        constants,
        hard_violations: hard,
        pairs: ratios.len(),
    })
}

/// Calibrate on the observed pairs of a study, with the study's distance.
pub fn calibrate_study(study: &Study, features: &FeatureSpec, targets: &[f64]) -> Result<Calibration> {
    let universe = Universe::new(study, features, false)?;
    let observed: Vec<(Vec<Option<f64>>, f64)> = universe
        .observed_indices()
        .into_iter()
        .map(|i| (universe.points[i].clone(), universe.outcome(i).expect("observed")))
        .collect();
    calibrate_lipschitz(&observed, &universe.distance, targets, None)
}

/// Smallest positive distance between universe members, if any.
pub fn min_positive_distance(universe: &Universe) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..universe.len() {
        for j in i + 1..universe.len() {
            let d = universe.distance(i, j);
            if d > 0.0 {
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
    }
    best
}

/// Bounds for a named method, with `l` required for Lipschitz.
pub fn bounds_for(
    study: &Study,
    method: Method,
    l: Option<f64>,
    cov: Option<&CovarianceMatrix>,
    config: &BoundConfig,
) -> Result<BoundsResult> {
    let features = FeatureSpec::for_study(study);
    match method {
        Method::Manski => manski_bounds(study, cov, config),
        Method::Monotone => monotonicity_bounds(study, &features, cov, config),
        Method::Lipschitz => {
            let l = l.ok_or_else(|| Error::Invalid("Lipschitz bounds need L".into()))?;
            lipschitz_bounds(study, &features, l, cov, config)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{OutcomeRecord, OutcomeRecords, OutcomeStatus, PairGrid, Reviewer, Venue};
    use crate::similarity::BidScheme;
    use approx::assert_abs_diff_eq;

    fn p(x: &[f64]) -> Vec<Option<f64>> {
        x.iter().map(|&v| Some(v)).collect()
    }

    #[test]
    fn distance_examples() {
        let spec = DistanceSpec {
            ranges: vec![(0.0, 1.0); 3],
        };
        assert_eq!(covariate_distance(&p(&[0.2, 0.3, 0.4]), &p(&[0.2, 0.3, 0.4]), &spec), 0.0);
        assert_abs_diff_eq!(
            covariate_distance(&p(&[0.3, 0.5, 1.0]), &p(&[0.2, 0.5, 1.0]), &spec),
            0.1 / 3.0,
            epsilon = 1e-15
        );
        let x = vec![None, Some(0.5), Some(1.0)];
        assert_abs_diff_eq!(covariate_distance(&x, &p(&[0.2, 0.5, 1.0]), &spec), 1.0 / 3.0);
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&p(&[0.9, 0.5]), &p(&[0.3, 0.5])));
        assert!(!dominates(&p(&[0.9, 0.2]), &p(&[0.3, 0.5])));
        assert!(!dominates(&p(&[0.3, 0.5]), &p(&[0.3, 0.5])));
        assert!(!dominates(&[Some(0.9), None], &p(&[0.3, 0.5])));
        let g = dominance_graph(&[p(&[3.0]), p(&[2.0]), p(&[1.0])]);
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.relations, 3);
    }

    fn line_venue(nr: usize) -> Venue {
        Venue::new(
            (0..nr)
                .map(|i| Reviewer {
                    id: format!("r{i}"),
                    cap: 1,
                    profile: true,
                })
                .collect(),
            vec!["p".into()],
            1,
            Vec::new(),
            BidScheme::tpdp(),
            Some(OutcomeScale::new(1.0, 5.0, None).unwrap()),
        )
        .unwrap()
    }

    /// Two reviewers for one paper: reviewer 0 observed with `y`, reviewer 1
    /// never sampled but favored by the off-policy.
    fn two_pair_study(t_obs: f64, t_new: f64, y: f64) -> Study {
        let v = line_venue(2);
        let mut table = v.grid(crate::domain::Covariates::default());
        table.get_mut(PairId::new(0, 0)).text = Some(t_obs);
        table.get_mut(PairId::new(1, 0)).text = Some(t_new);
        let p_on = PairGrid::from_rows(vec![vec![1.0], vec![0.0]]);
        let p_off = PairGrid::from_rows(vec![vec![0.0], vec![1.0]]);
        let recs = OutcomeRecords::new(vec![OutcomeRecord {
            pair: PairId::new(0, 0),
            value: Some(y),
            status: OutcomeStatus::Observed,
        }])
        .unwrap();
        Study::new(v, table, recs, p_on, p_off).unwrap()
    }

    fn text_only() -> FeatureSpec {
        FeatureSpec {
            text: true,
            subject: false,
            bid: false,
            bid_lambda: 1.0,
        }
    }

    #[test]
    fn monotone_two_variable_case() {
        let s = two_pair_study(0.3, 0.9, 3.0);
        let r = monotonicity_bounds(&s, &text_only(), None, &BoundConfig::default()).unwrap();
        assert_abs_diff_eq!(r.lower.estimate, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.upper.estimate, 5.0, epsilon = 1e-9);
        assert_eq!(r.constraints, ConstraintCounts { before: 1, after: 1 });
    }

    #[test]
    fn lipschitz_one_constraint_case() {
        // Text values 0 and 1 normalize to distance 1 over one dimension;
        // scale the constant so L·d = 1.
        let s = two_pair_study(0.0, 1.0, 3.0);
        let r = lipschitz_bounds(&s, &text_only(), 1.0, None, &BoundConfig::default()).unwrap();
        assert_abs_diff_eq!(r.lower.estimate, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.upper.estimate, 4.0, epsilon = 1e-9);
        let r = lipschitz_bounds(&s, &text_only(), 4.0, None, &BoundConfig::default()).unwrap();
        assert_eq!(r.constraints, ConstraintCounts { before: 1, after: 0 });
        assert_abs_diff_eq!(r.lower.estimate, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.upper.estimate, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_distance_pins_surrogate() {
        let s = two_pair_study(0.5, 0.5, 3.0);
        let r = lipschitz_bounds(&s, &text_only(), 10.0, None, &BoundConfig::default()).unwrap();
        assert_abs_diff_eq!(r.lower.estimate, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.upper.estimate, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn big_psi_matches_lexicographic() {
        let s = two_pair_study(0.3, 0.9, 3.0);
        let cfg = BoundConfig {
            big_psi: Some(BIG_PSI),
            ..Default::default()
        };
        let r = monotonicity_bounds(&s, &text_only(), None, &cfg).unwrap();
        assert_abs_diff_eq!(r.lower.estimate, 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.upper.estimate, 5.0, epsilon = 1e-6);
    }

    #[test]
    fn manski_with_one_violation() {
        let s = two_pair_study(0.3, 0.9, 3.0);
        let r = manski_bounds(&s, None, &BoundConfig::default()).unwrap();
        assert_eq!((r.lower.estimate, r.upper.estimate), (1.0, 5.0));
        assert!(r.interval.is_none());
    }

    #[test]
    fn calibration_examples() {
        let spec = DistanceSpec {
            ranges: vec![(0.0, 1.0)],
        };
        let obs = vec![(p(&[0.0]), 1.0), (p(&[0.1]), 2.0)];
        let c = calibrate_lipschitz(&obs, &spec, &[0.05], None).unwrap();
        assert_abs_diff_eq!(c.constants[0].1, 10.0, epsilon = 1e-9);
        let flat = vec![(p(&[0.0]), 2.0), (p(&[0.1]), 2.0), (p(&[0.7]), 2.0)];
        let c = calibrate_lipschitz(&flat, &spec, &[0.0, 0.1], None).unwrap();
        assert_eq!(c.constants, vec![(0.0, 0.0), (0.1, 0.0)]);
        let same = vec![(p(&[0.4]), 1.0), (p(&[0.4]), 2.0)];
        assert!(calibrate_lipschitz(&same, &spec, &[0.05], None).is_err());
        let mixed = vec![(p(&[0.4]), 1.0), (p(&[0.4]), 2.0), (p(&[0.5]), 2.0)];
        let c = calibrate_lipschitz(&mixed, &spec, &[0.0], None).unwrap();
        assert_eq!(c.hard_violations, 1);
        assert_eq!(c.pairs, 2);
    }
}

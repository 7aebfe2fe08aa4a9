//! Batch analyses over a study: policy sweeps, cost of randomization,
//! bad-policy comparisons, and plot-ready report files.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    bounds_for, calibrate_study, BoundConfig, BoundsResult, FeatureSpec, Method,
};
use crate::domain::{OutcomeRecords, PairGrid, PairTable, PartitionCounts, Venue};
use crate::error::{Error, Result};
use crate::estimator::{estimate, normal_quantile, EstimateReport, ImputationPlan, Study};
use crate::io::{self, fmt_float};
use crate::lp::{
    extreme_assignment, perturb_aaai, perturb_tpdp, policy_marginals, randomized_assignment,
    NoiseMatrix, Sense, DEFAULT_NOISE_WEIGHT, DEFAULT_PENALTY_TOLERANCE,
};
use crate::sampler::{CovarianceMatrix, CovarianceProvenance};
use crate::similarity::{similarity_matrix, PolicyParams, SimilarityMatrix};

pub const SAMPLER_NOTE: &str = "variances and interval widths depend on the joint law of the \
assignment sampler; they are reproducible against this implementation's sampler only";

/// Policy parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    WText,
    LambdaBid,
    Q,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "w_text" => SweepParam::WText,
            "lambda_bid" => SweepParam::LambdaBid,
            "q" => SweepParam::Q,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::WText => "w_text",
            SweepParam::LambdaBid => "lambda_bid",
            SweepParam::Q => "q",
        }
    }

    pub fn apply(self, base: &PolicyParams, value: f64) -> PolicyParams {
        let mut p = *base;
        match self {
            SweepParam::WText => p.w_text = value,
            SweepParam::LambdaBid => p.lambda_bid = value,
            SweepParam::Q => p.q = value,
        }
        p
    }
}

/// Estimator or bound reported in a results row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    Mean,
    Manski,
    Mono,
    Lip,
}

impl EvalMethod {
    pub const ALL: [EvalMethod; 4] = [EvalMethod::Mean, EvalMethod::Manski, EvalMethod::Mono, EvalMethod::Lip];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "mean" => EvalMethod::Mean,
            "manski" => EvalMethod::Manski,
            "mono" => EvalMethod::Mono,
            "lip" => EvalMethod::Lip,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMethod::Mean => "mean",
            EvalMethod::Manski => "manski",
            EvalMethod::Mono => "mono",
            EvalMethod::Lip => "lip",
        }
    }

    fn bound_method(self) -> Option<Method> {
        match self {
            EvalMethod::Mean => None,
            EvalMethod::Manski => Some(Method::Manski),
            EvalMethod::Mono => Some(Method::Monotone),
            EvalMethod::Lip => Some(Method::Lipschitz),
        }
    }
}

/// Perturbation applied to off-policy similarities to break LP ties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TieBreak {
    None,
    /// Mix in a fixed noise matrix with weight `lambda`.
    Tpdp { seed: u64, lambda: f64 },
    /// Penalize pairs outside the on-policy support.
    Aaai { tolerance: f64 },
}

impl TieBreak {
    pub fn tpdp(seed: u64) -> Self {
        TieBreak::Tpdp {
            seed,
            lambda: DEFAULT_NOISE_WEIGHT,
        }
    }

    pub fn aaai() -> Self {
        TieBreak::Aaai {
            tolerance: DEFAULT_PENALTY_TOLERANCE,
        }
    }
}

/// Per-cell record of the support penalty that was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub value: f64,
    pub epsilon: f64,
    pub gap: f64,
    pub breached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: PolicyParams,
    pub param: SweepParam,
    pub grid: Vec<f64>,
    #[serde(default = "all_methods")]
    pub methods: Vec<EvalMethod>,
    #[serde(default = "default_tie_break")]
    pub tie_break: TieBreak,
    /// Lipschitz constant; calibrated on the observed data when absent.
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default = "default_calibration_target")]
    pub calibration_target: f64,
    #[serde(default)]
    pub bounds: BoundConfig,
}

fn all_methods() -> Vec<EvalMethod> {
    EvalMethod::ALL.to_vec()
}

fn default_tie_break() -> TieBreak {
    TieBreak::tpdp(0)
}

fn default_calibration_target() -> f64 {
    0.05
}

impl SweepSpec {
    pub fn new(base: PolicyParams, param: SweepParam, grid: Vec<f64>) -> Self {
        Self {
            base,
            param,
            grid,
            methods: all_methods(),
            tie_break: default_tie_break(),
            lipschitz: None,
            calibration_target: default_calibration_target(),
            bounds: BoundConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Invalid("sweep grid is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Invalid("sweep has no methods".into()));
        }
        self.base.validate()?;
        for &v in &self.grid {
            self.param.apply(&self.base, v).validate()?;
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Invalid(format!("Lipschitz constant must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

/// Logged data a sweep evaluates against.
#[derive(Debug, Clone, Copy)]
pub struct StudyData<'a> {
    pub venue: &'a Venue,
    pub table: &'a PairTable,
    pub records: &'a OutcomeRecords,
    pub p_on: &'a PairGrid<f64>,
    pub cov: Option<&'a CovarianceMatrix>,
}

impl StudyData<'_> {
    pub fn on_policy_study(&self) -> Result<Study> {
        Study::new(
            self.venue.clone(),
            self.table.clone(),
            self.records.clone(),
            self.p_on.clone(),
            self.p_on.clone(),
        )
    }
}

/// One plot-ready result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub param: String,
    pub value: String,
    pub method: String,
    pub point: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub counts: Option<PartitionCounts>,
    pub error: Option<String>,
}

impl ReportRow {
    fn failed(param: &str, value: &str, method: &str, err: &Error) -> Self {
        Self {
            param: param.into(),
            value: value.into(),
            method: method.into(),
            point: None,
            lo: None,
            hi: None,
            ci_lo: None,
            ci_hi: None,
            counts: None,
            error: Some(err.to_string()),
        }
    }

    fn from_estimate(param: &str, value: &str, report: &EstimateReport, alpha: f64) -> Self {
        let z = normal_quantile(0.5 + alpha / 2.0);
        let half = report.std_error().map(|s| z * s);
        Self {
            param: param.into(),
            value: value.into(),
            method: EvalMethod::Mean.as_str().into(),
            point: Some(report.estimate),
            lo: Some(report.estimate),
            hi: Some(report.estimate),
            ci_lo: half.map(|h| report.estimate - h),
            ci_hi: half.map(|h| report.estimate + h),
            counts: Some(report.counts),
            error: None,
        }
    }

    fn from_bounds(param: &str, value: &str, method: EvalMethod, b: &BoundsResult) -> Self {
        Self {
            param: param.into(),
            value: value.into(),
            method: method.as_str().into(),
            point: None,
            lo: Some(b.lower.estimate),
            hi: Some(b.upper.estimate),
            ci_lo: b.interval.map(|i| i.lo),
            ci_hi: b.interval.map(|i| i.hi),
            counts: Some(b.lower.counts),
            error: None,
        }
    }

    /// `lo ≤ point ≤ hi` and `ci_lo ≤ lo`, `hi ≤ ci_hi`, up to `tol`.
    pub fn is_ordered(&self, tol: f64) -> bool {
        let le = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => a <= b + tol,
            _ => true,
        };
        le(self.lo, self.point)
            && le(self.point, self.hi)
            && le(self.lo, self.hi)
            && le(self.ci_lo, self.lo)
            && le(self.hi, self.ci_hi)
    }
}

/// Rows of every requested method for one off-policy.
pub fn evaluate_methods(
    study: &Study,
    methods: &[EvalMethod],
    lipschitz: Option<f64>,
    cov: Option<&CovarianceMatrix>,
    config: &BoundConfig,
    param: &str,
    value: &str,
) -> Vec<ReportRow> {
    methods
        .iter()
        .map(|&m| {
            let row = match m.bound_method() {
                None => ImputationPlan::mean(study)
                    .and_then(|plan| estimate(study, &plan, cov))
                    .map(|r| ReportRow::from_estimate(param, value, &r, config.alpha)),
                Some(method) => bounds_for(study, method, lipschitz, cov, config)
                    .map(|b| ReportRow::from_bounds(param, value, m, &b)),
            };
            row.unwrap_or_else(|e| ReportRow::failed(param, value, m.as_str(), &e))
        })
        .collect()
}

/// Sweep results with the run's side records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub rows: Vec<ReportRow>,
    pub lipschitz: Option<f64>,
    pub perturbations: Vec<PerturbationRecord>,
}

/// Epsilon, gap and breach flag of an AAAI-style perturbation.
type PenaltyOutcome = (f64, f64, bool);

fn off_policy_marginals(
    data: &StudyData,
    params: &PolicyParams,
    tie_break: &TieBreak,
    noise: Option<&NoiseMatrix>,
) -> Result<(PairGrid<f64>, Option<PenaltyOutcome>)> {
    let sim = similarity_matrix(data.venue, data.table, params)?;
    match tie_break {
        TieBreak::None => Ok((policy_marginals(&sim, data.venue, params)?.probs, None)),
        TieBreak::Tpdp { lambda, .. } => {
            let noise = noise.expect("noise generated for tpdp tie-breaking");
            let sim = perturb_tpdp(&sim, noise, *lambda);
            Ok((policy_marginals(&sim, data.venue, params)?.probs, None))
        }
        TieBreak::Aaai { tolerance } => {
            let support = data.p_on.map(|_, &p| p > 0.0);
            let pen = perturb_aaai(&sim, data.venue, params.q, &support, *tolerance)?;
            let m = policy_marginals(&pen.scores, data.venue, params)?;
            Ok((m.probs, Some((pen.epsilon, pen.gap, pen.breached))))
        }
    }
}

/// Resolve the Lipschitz constant a run uses, calibrating when unset.
pub fn resolve_lipschitz(study: &Study, given: Option<f64>, target: f64) -> Result<f64> {
    if let Some(l) = given {
        return Ok(l);
    }
    let cal = calibrate_study(study, &FeatureSpec::for_study(study), &[target])?;
    let l = cal.constants[0].1;
    Ok(if l > 0.0 { l } else { f64::MIN_POSITIVE })
}

/// Run `f` over `0..n` on up to `threads` workers; results come back in index order.
pub fn par_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, n.max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|x| x.expect("every cell filled"))
        .collect()
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Evaluate every grid value with every method; failing cells are recorded
/// in their rows and the sweep carries on.
pub fn run_sweep(spec: &SweepSpec, data: &StudyData, threads: usize) -> Result<SweepOutput> {
    spec.validate()?;
    let base = data.on_policy_study()?;
    let needs_l = spec.methods.contains(&EvalMethod::Lip);
    let lipschitz = if needs_l {
        match resolve_lipschitz(&base, spec.lipschitz, spec.calibration_target) {
            Ok(l) => Some(Ok(l)),
            Err(e) => Some(Err(e.to_string())),
        }
    } else {
        spec.lipschitz.map(Ok)
    };
    let noise = match spec.tie_break {
        TieBreak::Tpdp { seed, .. } => Some(NoiseMatrix::generate(data.venue, seed)),
        _ => None,
    };
    let param = spec.param.as_str();
    let cells = par_map(spec.grid.len(), threads, |i| {
        let v = spec.grid[i];
        let value = fmt_float(v);
        let params = spec.param.apply(&spec.base, v);
        let fail = |e: &Error| -> Vec<ReportRow> {
            spec.methods
                .iter()
                .map(|m| ReportRow::failed(param, &value, m.as_str(), e))
                .collect()
        };
        let (p_off, pert) = match off_policy_marginals(data, &params, &spec.tie_break, noise.as_ref()) {
            Ok(x) => x,
            Err(e) => return (fail(&e), None),
        };
        let study = match base.with_off_policy(p_off) {
            Ok(s) => s,
            Err(e) => return (fail(&e), None),
        };
        let l = match &lipschitz {
            Some(Ok(l)) => Some(*l),
            _ => None,
        };
        let mut rows = evaluate_methods(&study, &spec.methods, l, data.cov, &spec.bounds, param, &value);
        if let Some(Err(msg)) = &lipschitz {
            for r in rows.iter_mut().filter(|r| r.method == EvalMethod::Lip.as_str()) {
                r.error = Some(format!("Lipschitz calibration failed: {msg}"));
            }
        }
        let pert = pert.map(|(epsilon, gap, breached)| PerturbationRecord {
            value: v,
            epsilon,
            gap,
            breached,
        });
        (rows, pert)
    });
    let mut rows = Vec::new();
    let mut perturbations = Vec::new();
    for (r, p) in cells {
        rows.extend(r);
        perturbations.extend(p);
    }
    Ok(SweepOutput {
        rows,
        lipschitz: lipschitz.and_then(|l| l.ok()),
        perturbations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub q: f64,
    pub objective: Option<f64>,
    pub ratio: Option<f64>,
    pub error: Option<String>,
}

/// Expected total similarity at each `q`, relative to the deterministic optimum.
pub fn cost_of_randomization(sim: &SimilarityMatrix, venue: &Venue, q_grid: &[f64]) -> Result<Vec<CostRow>> {
    if let Some(q) = q_grid.iter().find(|&&q| !(q > 0.0 && q <= 1.0)) {
        return Err(Error::Invalid(format!("q = {q} outside (0, 1]")));
    }
    let full = randomized_assignment(sim, venue, 1.0)?.objective;
    let mut grid = q_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    Ok(grid
        .into_iter()
        .map(|q| match randomized_assignment(sim, venue, q) {
            Ok(m) => CostRow {
                q,
                objective: Some(m.objective),
                ratio: (full != 0.0).then(|| m.objective / full),
                error: None,
            },
            Err(e) => CostRow {
                q,
                objective: None,
                ratio: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

pub fn cost_to_csv(rows: &[CostRow]) -> String {
    let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
    let mut out = String::from("q,objective,ratio,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(r.q),
            opt(r.objective),
            opt(r.ratio),
            csv_field(r.error.as_deref().unwrap_or(""))
        ));
    }
    out
}

/// One deterministic policy with every method's bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub policy: String,
    pub similarity: f64,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadPolicyReport {
    pub lipschitz: Option<f64>,
    pub policies: Vec<PolicyComparison>,
}

impl BadPolicyReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.policies.iter().flat_map(|p| p.rows.iter().cloned()).collect()
    }

    pub fn get(&self, policy: &str, method: EvalMethod) -> Option<&ReportRow> {
        self.policies
            .iter()
            .find(|p| p.policy == policy)?
            .rows
            .iter()
            .find(|r| r.method == method.as_str())
    }
}

/// Compare the max- and min-similarity deterministic policies, with
/// candidates restricted to pairs the on-policy can assign.
pub fn bad_policy_analysis(
    data: &StudyData,
    params: &PolicyParams,
    lipschitz: Option<f64>,
    calibration_target: f64,
    config: &BoundConfig,
) -> Result<BadPolicyReport> {
    let base = data.on_policy_study()?;
    let l = resolve_lipschitz(&base, lipschitz, calibration_target).ok();
    let off_support = data.p_on.iter().filter(|(_, &p)| p <= 0.0).map(|(pair, _)| pair);
    let restricted = data.venue.with_extra_conflicts(off_support);
    let sim = similarity_matrix(&restricted, data.table, params)?;
    let mut policies = Vec::new();
    for (name, sense) in [("max", Sense::Maximize), ("min", Sense::Minimize)] {
        let a = extreme_assignment(&sim, &restricted, sense)?;
        let p_off = a.assigned.map(|_, &z| if z { 1.0 } else { 0.0 });
        let study = base.with_off_policy(p_off)?;
        let rows = evaluate_methods(&study, &EvalMethod::ALL, l, data.cov, config, "policy", name);
        policies.push(PolicyComparison {
            policy: name.into(),
            similarity: a.objective,
            rows,
        });
    }
    Ok(BadPolicyReport {
        lipschitz: l,
        policies,
    })
}

pub const REPORT_HEADER: &str = "param,value,method,point,lo,hi,ci_lo,ci_hi";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Plot-ready CSV in grid order.
pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&r.param),
            csv_field(&r.value),
            csv_field(&r.method),
            opt(r.point),
            opt(r.lo),
            opt(r.hi),
            opt(r.ci_lo),
            opt(r.ci_hi)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub value: String,
    pub method: String,
    pub error: String,
}

/// Companion record written next to every report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub tie_break: Option<TieBreak>,
    pub perturbations: Vec<PerturbationRecord>,
    pub covariance: Option<CovarianceProvenance>,
    pub lipschitz: Option<f64>,
    pub rows: usize,
    pub errors: Vec<CellError>,
    pub sampler_note: String,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, rows: &[ReportRow]) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            tie_break: None,
            perturbations: Vec::new(),
            covariance: None,
            lipschitz: None,
            rows: rows.len(),
            errors: rows
                .iter()
                .filter_map(|r| {
                    r.error.as_ref().map(|e| CellError {
                        value: r.value.clone(),
                        method: r.method.clone(),
                        error: e.clone(),
                    })
                })
                .collect(),
            sampler_note: SAMPLER_NOTE.into(),
        }
    }
}

/// Write `<stem>.csv` and `<stem>.manifest.json` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, stem: &str, rows: &[ReportRow], manifest: &Manifest) -> Result<()> {
    let dir = dir.as_ref();
    io::write_file(dir.join(format!("{stem}.csv")), rows_to_csv(rows))?;
    io::write_json(dir.join(format!("{stem}.manifest.json")), manifest)
}

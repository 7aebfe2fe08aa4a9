//! `review-ope` command-line driver.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use review_ope::analysis::{
    bad_policy_analysis, cost_of_randomization, cost_to_csv, default_threads, resolve_lipschitz,
    run_sweep, write_report, EvalMethod, Manifest, ReportRow, StudyData, SweepParam, SweepSpec,
    TieBreak,
};
use review_ope::bounds::{bounds_for, BoundConfig, FeatureSpec, Method, BIG_PSI};
use review_ope::domain::{OutcomeRecords, PairGrid, PairTable, Venue};
use review_ope::estimator::{estimate, EstimateReport, ImputationPlan, Study};
use review_ope::io;
use review_ope::lp::{perturb_aaai, perturb_tpdp, policy_marginals, MarginalMatrix, NoiseMatrix};
use review_ope::models::{
    evaluate_imputers, fit_imputer, model_plan, BidEncoding, FitConfig, ImputerKind,
    TrainedImputer, TrainingSet,
};
use review_ope::sampler::{estimate_covariance, CovarianceMatrix};
use review_ope::similarity::{similarity_matrix, Family, PolicyParams};
use review_ope::synth::{generate_synthetic_venue, SyntheticSpec};
use review_ope::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "review-ope", version, about = "Off-policy evaluation of randomized reviewer assignments")]
struct Cli {
    /// Root random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with default settings (policy, sweep, synth, bounds, fit).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check input documents and print a summary.
    Validate(ValidateArgs),
    /// Solve the capped assignment LP and write marginals.
    Assign(AssignArgs),
    /// Estimate the on-policy covariance by repeated sampling.
    Sample(SampleArgs),
    /// Point estimate or bounds for an off-policy.
    Estimate(EstimateArgs),
    /// Partial-identification bounds for an off-policy.
    Bounds(BoundsArgs),
    /// Fit or evaluate imputation models.
    Models(ModelsArgs),
    /// Evaluate a grid of off-policies.
    Sweep(SweepArgs),
    /// Cost-of-randomization curve.
    Cost(CostArgs),
    /// Compare max- and min-similarity policies.
    Power(PowerArgs),
    /// Generate a synthetic venue with known outcomes.
    Synth(SynthArgs),
    /// Rewrite a saved results file as a plot-ready CSV and manifest.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct VenueArgs {
    #[arg(long)]
    venue: PathBuf,
    #[arg(long)]
    scores: PathBuf,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[command(flatten)]
    venue: VenueArgs,
    #[arg(long)]
    outcomes: PathBuf,
    #[arg(long)]
    on_policy: PathBuf,
    /// Covariance file written by `sample`.
    #[arg(long)]
    cov: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct PolicyArgs {
    /// JSON policy file with `family`, `w_text`, `lambda_bid`, `q`.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    w_text: Option<f64>,
    #[arg(long)]
    lambda_bid: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    venue: PathBuf,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    outcomes: Option<PathBuf>,
    /// Marginal files to check for feasibility.
    #[arg(long)]
    marginals: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct AssignArgs {
    #[command(flatten)]
    venue: VenueArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Tie-breaking perturbation: none, tpdp or aaai.
    #[arg(long, default_value = "none")]
    tie_break: String,
    /// On-policy marginals defining the support for `--tie-break aaai`.
    #[arg(long)]
    support: Option<PathBuf>,
    #[arg(long, default_value = "marginals.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    venue: PathBuf,
    #[arg(long)]
    marginals: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value = "cov.bin")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long)]
    off_policy: PathBuf,
    /// mean, model, manski, mono or lip.
    #[arg(long, default_value = "mean")]
    impute: String,
    /// Model file for `--impute model`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "L")]
    l: Option<f64>,
    #[arg(long)]
    calibrate: Option<String>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long)]
    off_policy: PathBuf,
    /// manski, mono or lip.
    #[arg(long)]
    method: String,
    #[arg(long = "L")]
    l: Option<f64>,
    /// Calibrate L at a violation fraction, written `f=0.05`.
    #[arg(long)]
    calibrate: Option<String>,
    /// Leave absent-reviewer surrogates out of the bound objective.
    #[arg(long)]
    exclude_absent: bool,
    /// Solve one weighted LP instead of two sequential ones.
    #[arg(long)]
    big_psi: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value = "bounds.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ModelsArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Fit one model kind: clf-logistic or cf-knn.
    #[arg(long)]
    fit: Option<String>,
    /// Evaluate these kinds by held-out MAE instead of fitting.
    #[arg(long, value_delimiter = ',')]
    evaluate: Vec<String>,
    /// numeric or one-hot.
    #[arg(long)]
    bid_encoding: Option<String>,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.75)]
    split: f64,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// JSON sweep specification.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    /// w_text, lambda_bid or q.
    #[arg(long)]
    param: Option<String>,
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long = "L")]
    l: Option<f64>,
    /// Tie-breaking perturbation: none, tpdp or aaai.
    #[arg(long)]
    tie_break: Option<String>,
    #[arg(long, default_value = "sweep")]
    name: String,
}

#[derive(Args, Debug)]
struct CostArgs {
    #[command(flatten)]
    venue: VenueArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    q_grid: Vec<f64>,
    #[arg(long, default_value = "cost.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PowerArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long = "L")]
    l: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    calibration_target: f64,
    #[arg(long, default_value = "power")]
    name: String,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON synthetic specification; `--seed` overrides its seed.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    reviewers: Option<usize>,
    #[arg(long)]
    papers: Option<usize>,
    #[arg(long)]
    attrition: Option<f64>,
    #[arg(long)]
    absence: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Results JSON written by `sweep` or `power`.
    #[arg(long)]
    input: PathBuf,
    /// Only `csv` is supported.
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, default_value = "report")]
    name: String,
}

/// Settings file passed with `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Config {
    policy: Option<PolicyParams>,
    sweep: Option<SweepSpec>,
    synth: Option<SyntheticSpec>,
    bounds: Option<BoundConfig>,
    fit: Option<FitConfig>,
}

/// Saved rows of a `sweep` or `power` run.
#[derive(Debug, Serialize, Deserialize)]
struct ResultsDoc {
    manifest: Manifest,
    rows: Vec<ReportRow>,
}

struct Ctx {
    seed: u64,
    threads: usize,
    out_dir: PathBuf,
    config: Config,
}

impl Ctx {
    fn out(&self, path: &Path) -> PathBuf {
        self.out_dir.join(path)
    }

    fn bound_config(&self) -> BoundConfig {
        self.config.bounds.unwrap_or_default()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) => match err.kind() {
            ErrorKind::Validation => 2,
            ErrorKind::Solver => 3,
            ErrorKind::Inconsistent => 4,
            ErrorKind::Other => 1,
        },
        None => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => io::read_json(path)?,
        None => Config::default(),
    };
    let ctx = Ctx {
        seed: cli.seed,
        threads: cli.threads.unwrap_or_else(default_threads).max(1),
        out_dir: cli.out_dir,
        config,
    };
    match cli.command {
        Command::Validate(a) => validate(&ctx, a),
        Command::Assign(a) => assign(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Estimate(a) => estimate_cmd(&ctx, a),
        Command::Bounds(a) => bounds_cmd(&ctx, a),
        Command::Models(a) => models_cmd(&ctx, a),
        Command::Sweep(a) => sweep_cmd(&ctx, a),
        Command::Cost(a) => cost_cmd(&ctx, a),
        Command::Power(a) => power_cmd(&ctx, a),
        Command::Synth(a) => synth_cmd(&ctx, a),
        Command::Report(a) => report_cmd(&ctx, a),
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn policy_from(ctx: &Ctx, args: &PolicyArgs) -> anyhow::Result<PolicyParams> {
    let mut p = match &args.policy {
        Some(path) => io::read_json::<PolicyParams>(path)?,
        None => ctx.config.policy.unwrap_or(PolicyParams {
            family: Family::TpdpLinear,
            w_text: 0.5,
            lambda_bid: 1.0,
            q: 1.0,
        }),
    };
    if let Some(f) = &args.family {
        p.family = Family::parse(f).ok_or_else(|| Error::Invalid(format!("unknown family {f:?}")))?;
    }
    if let Some(w) = args.w_text {
        p.w_text = w;
    }
    if let Some(l) = args.lambda_bid {
        p.lambda_bid = l;
    }
    if let Some(q) = args.q {
        p.q = q;
    }
    p.validate()?;
    Ok(p)
}

fn parse_tie_break(name: &str, seed: u64) -> anyhow::Result<TieBreak> {
    Ok(match name {
        "none" => TieBreak::None,
        "tpdp" => TieBreak::tpdp(seed),
        "aaai" => TieBreak::aaai(),
        _ => return Err(Error::Invalid(format!("unknown tie-break {name:?}")).into()),
    })
}

fn parse_calibrate(s: &str) -> anyhow::Result<f64> {
    let v = s.strip_prefix("f=").unwrap_or(s);
    let f: f64 = v
        .parse()
        .map_err(|_| Error::Invalid(format!("bad calibration target {s:?}")))?;
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Invalid(format!("calibration target {f} outside [0, 1]")).into());
    }
    Ok(f)
}

struct Loaded {
    venue: Venue,
    table: PairTable,
    records: OutcomeRecords,
    p_on: PairGrid<f64>,
    cov: Option<CovarianceMatrix>,
}

impl Loaded {
    fn data(&self) -> StudyData<'_> {
        StudyData {
            venue: &self.venue,
            table: &self.table,
            records: &self.records,
            p_on: &self.p_on,
            cov: self.cov.as_ref(),
        }
    }

    fn study(&self, p_off: PairGrid<f64>) -> review_ope::Result<Study> {
        Study::new(
            self.venue.clone(),
            self.table.clone(),
            self.records.clone(),
            self.p_on.clone(),
            p_off,
        )
    }
}

fn load_study(a: &StudyArgs) -> anyhow::Result<Loaded> {
    let (venue, table, records) = io::load_venue(&a.venue.venue, &a.venue.scores, &a.outcomes)?;
    let p_on = io::read_marginals(&venue, &a.on_policy)?;
    let cov = a.cov.as_ref().map(|p| io::load_covariance(&venue, p)).transpose()?;
    Ok(Loaded {
        venue,
        table,
        records,
        p_on,
        cov,
    })
}

#[derive(Serialize)]
struct ValidateSummary {
    reviewers: usize,
    papers: usize,
    paper_load: u32,
    conflicts: usize,
    candidate_pairs: usize,
    scored_pairs: Option<usize>,
    missing_text: Option<usize>,
    missing_subject: Option<usize>,
    records: Option<usize>,
    marginals_checked: usize,
}

fn validate(_ctx: &Ctx, a: ValidateArgs) -> anyhow::Result<()> {
    let venue = io::read_venue(&a.venue)?;
    let table = a.scores.as_ref().map(|p| io::read_scores(&venue, p)).transpose()?;
    let records = a.outcomes.as_ref().map(|p| io::read_outcomes(&venue, p)).transpose()?;
    for path in &a.marginals {
        let probs = io::read_marginals(&venue, path)?;
        let v = MarginalMatrix::from_probs(probs).violations(&venue, 1e-9);
        if !v.is_empty() {
            return Err(Error::Inconsistent(format!("{}: {}", path.display(), v.join("; "))).into());
        }
    }
    let count = |f: &dyn Fn(&review_ope::domain::Covariates) -> bool| {
        table.as_ref().map(|t| t.cells().iter().filter(|c| f(c)).count())
    };
    print_json(&ValidateSummary {
        reviewers: venue.num_reviewers(),
        papers: venue.num_papers(),
        paper_load: venue.paper_load(),
        conflicts: venue.conflicts().count(),
        candidate_pairs: venue.candidate_pairs().count(),
        scored_pairs: count(&|c| c.text.is_some() || c.subject.is_some() || c.bid.is_some()),
        missing_text: count(&|c| c.text.is_none()),
        missing_subject: count(&|c| c.subject.is_none()),
        records: records.map(|r| r.len()),
        marginals_checked: a.marginals.len(),
    })
}

#[derive(Serialize)]
struct AssignSummary {
    policy: PolicyParams,
    objective: f64,
    tie_break: TieBreak,
    support_penalty: Option<f64>,
    out: PathBuf,
}

fn assign(ctx: &Ctx, a: AssignArgs) -> anyhow::Result<()> {
    let venue = io::read_venue(&a.venue.venue)?;
    let table = io::read_scores(&venue, &a.venue.scores)?;
    let params = policy_from(ctx, &a.policy)?;
    let tie = parse_tie_break(&a.tie_break, ctx.seed)?;
    let sim = similarity_matrix(&venue, &table, &params)?;
    let mut penalty = None;
    let m = match tie {
        TieBreak::None => policy_marginals(&sim, &venue, &params)?,
        TieBreak::Tpdp { seed, lambda } => {
            let noise = NoiseMatrix::generate(&venue, seed);
            policy_marginals(&perturb_tpdp(&sim, &noise, lambda), &venue, &params)?
        }
        TieBreak::Aaai { tolerance } => {
            let path = a
                .support
                .as_ref()
                .ok_or_else(|| anyhow!("--tie-break aaai needs --support"))?;
            let support = io::read_marginals(&venue, path)?.map(|_, &p| p > 0.0);
            let pen = perturb_aaai(&sim, &venue, params.q, &support, tolerance)?;
            penalty = Some(pen.epsilon);
            if pen.breached {
                eprintln!("warning: support penalty {} exceeded the tolerance", pen.epsilon);
            }
            policy_marginals(&pen.scores, &venue, &params)?
        }
    };
    let out = ctx.out(&a.out);
    io::write_file(&out, io::marginals_to_csv(&venue, &m.probs))?;
    print_json(&AssignSummary {
        policy: params,
        objective: m.objective,
        tie_break: tie,
        support_penalty: penalty,
        out,
    })
}

fn sample(ctx: &Ctx, a: SampleArgs) -> anyhow::Result<()> {
    let venue = io::read_venue(&a.venue)?;
    let probs = io::read_marginals(&venue, &a.marginals)?;
    let m = MarginalMatrix::from_probs(probs);
    let acc = estimate_covariance(&m, &venue, a.n, ctx.seed, ctx.threads)?;
    let cov = acc.finish();
    let out = ctx.out(&a.out);
    io::save_covariance(&venue, &cov, &out)?;
    print_json(&serde_json::json!({
        "samples": a.n,
        "seed": ctx.seed,
        "workers": ctx.threads,
        "support": cov.support().len(),
        "out": out,
    }))
}

#[derive(Serialize)]
struct EstimateOutput {
    impute: String,
    #[serde(flatten)]
    report: EstimateReport,
    std_error: Option<f64>,
    cold_start: Option<usize>,
}

fn lipschitz_arg(study: &Study, l: Option<f64>, calibrate: Option<&str>) -> anyhow::Result<Option<f64>> {
    match (l, calibrate) {
        (Some(_), Some(_)) => bail!(Error::Invalid("give either --L or --calibrate".into())),
        (Some(l), None) => Ok(Some(l)),
        (None, Some(c)) => Ok(Some(resolve_lipschitz(study, None, parse_calibrate(c)?)?)),
        (None, None) => Ok(None),
    }
}

fn estimate_cmd(ctx: &Ctx, a: EstimateArgs) -> anyhow::Result<()> {
    let loaded = load_study(&a.study)?;
    let p_off = io::read_marginals(&loaded.venue, &a.off_policy)?;
    let study = loaded.study(p_off)?;
    let cov = loaded.cov.as_ref();
    let out = ctx.out(&a.out);
    match a.impute.as_str() {
        "mean" | "model" => {
            let (plan, cold) = if a.impute == "mean" {
                (ImputationPlan::mean(&study)?, None)
            } else {
                let path = a.model.as_ref().ok_or_else(|| anyhow!("--impute model needs --model"))?;
                let model: TrainedImputer = io::read_json(path)?;
                let (plan, cold) = model_plan(&study, &model)?;
                (plan, Some(cold))
            };
            let report = estimate(&study, &plan, cov)?;
            let doc = EstimateOutput {
                impute: a.impute.clone(),
                std_error: report.std_error(),
                report,
                cold_start: cold,
            };
            io::write_json(&out, &doc)?;
            print_json(&doc)
        }
        other => {
            let method = Method::parse(other)
                .ok_or_else(|| Error::Invalid(format!("unknown imputation {other:?}")))?;
            let l = lipschitz_arg(&study, a.l, a.calibrate.as_deref())?;
            let result = bounds_for(&study, method, l, cov, &ctx.bound_config())?;
            io::write_json(&out, &result)?;
            print_json(&result)
        }
    }
}

fn bounds_cmd(ctx: &Ctx, a: BoundsArgs) -> anyhow::Result<()> {
    let loaded = load_study(&a.study)?;
    let p_off = io::read_marginals(&loaded.venue, &a.off_policy)?;
    let study = loaded.study(p_off)?;
    let method = Method::parse(&a.method)
        .ok_or_else(|| Error::Invalid(format!("unknown bound method {:?}", a.method)))?;
    let mut cfg = ctx.bound_config();
    cfg.exclude_absent |= a.exclude_absent;
    if a.big_psi {
        cfg.big_psi = Some(BIG_PSI);
    }
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    let l = lipschitz_arg(&study, a.l, a.calibrate.as_deref())?;
    let result = bounds_for(&study, method, l, loaded.cov.as_ref(), &cfg)?;
    let out = ctx.out(&a.out);
    io::write_json(&out, &result)?;
    print_json(&result)
}

fn models_cmd(ctx: &Ctx, a: ModelsArgs) -> anyhow::Result<()> {
    let loaded = load_study(&a.study)?;
    let study = loaded.study(loaded.p_on.clone())?;
    let data = TrainingSet::from_study(&study)?;
    let mut cfg = ctx.config.fit.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    cfg.folds = a.folds;
    if let Some(enc) = &a.bid_encoding {
        cfg.bid_encoding = match enc.as_str() {
            "numeric" => BidEncoding::Numeric,
            "one-hot" => BidEncoding::OneHot,
            _ => bail!(Error::Invalid(format!("unknown bid encoding {enc:?}"))),
        };
    }
    if a.no_standardize {
        cfg.standardize = false;
    }
    let kind = |s: &str| -> anyhow::Result<ImputerKind> {
        Ok(ImputerKind::parse(s).ok_or_else(|| Error::Invalid(format!("unknown model kind {s:?}")))?)
    };
    let out = ctx.out(&a.out);
    if !a.evaluate.is_empty() {
        let kinds = a.evaluate.iter().map(|s| kind(s)).collect::<anyhow::Result<Vec<_>>>()?;
        let report = evaluate_imputers(&kinds, &data, a.split, a.repeats, &cfg)?;
        io::write_json(&out, &report)?;
        return print_json(&report);
    }
    let k = kind(a.fit.as_deref().ok_or_else(|| anyhow!("give --fit <kind> or --evaluate <kinds>"))?)?;
    let model = fit_imputer(k, &data, &cfg)?;
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    io::write_json(&out, &model)?;
    print_json(&serde_json::json!({
        "kind": model.kind.as_str(),
        "cv": model.cv,
        "out": out,
    }))
}

fn sweep_cmd(ctx: &Ctx, a: SweepArgs) -> anyhow::Result<()> {
    let loaded = load_study(&a.study)?;
    let mut spec = match (&a.spec, &ctx.config.sweep) {
        (Some(path), _) => io::read_json::<SweepSpec>(path)?,
        (None, Some(s)) => s.clone(),
        (None, None) => SweepSpec::new(policy_from(ctx, &PolicyArgs::default())?, SweepParam::Q, Vec::new()),
    };
    let flags_policy = a.policy.policy.is_some()
        || a.policy.family.is_some()
        || a.policy.w_text.is_some()
        || a.policy.lambda_bid.is_some()
        || a.policy.q.is_some();
    if flags_policy {
        spec.base = policy_from(ctx, &a.policy)?;
    }
    if let Some(p) = &a.param {
        spec.param = SweepParam::parse(p).ok_or_else(|| Error::Invalid(format!("unknown sweep parameter {p:?}")))?;
    }
    if !a.grid.is_empty() {
        spec.grid = a.grid.clone();
    }
    if !a.methods.is_empty() {
        spec.methods = a
            .methods
            .iter()
            .map(|m| EvalMethod::parse(m).ok_or_else(|| Error::Invalid(format!("unknown method {m:?}"))))
            .collect::<Result<_, _>>()?;
    }
    if a.l.is_some() {
        spec.lipschitz = a.l;
    }
    if let Some(t) = &a.tie_break {
        spec.tie_break = parse_tie_break(t, ctx.seed)?;
    } else if let TieBreak::Tpdp { lambda, .. } = spec.tie_break {
        if a.spec.is_none() {
            spec.tie_break = TieBreak::Tpdp { seed: ctx.seed, lambda };
        }
    }
    if ctx.config.bounds.is_some() {
        spec.bounds = ctx.bound_config();
    }
    let out = run_sweep(&spec, &loaded.data(), ctx.threads)?;
    let mut manifest = Manifest::new("sweep", ctx.seed, &out.rows);
    manifest.tie_break = Some(spec.tie_break);
    manifest.perturbations = out.perturbations.clone();
    manifest.covariance = loaded.cov.as_ref().map(|c| c.provenance());
    manifest.lipschitz = out.lipschitz;
    finish_results(ctx, &a.name, manifest, out.rows)
}

fn finish_results(ctx: &Ctx, name: &str, manifest: Manifest, rows: Vec<ReportRow>) -> anyhow::Result<()> {
    write_report(&ctx.out_dir, name, &rows, &manifest)?;
    let doc = ResultsDoc { manifest, rows };
    io::write_json(ctx.out_dir.join(format!("{name}.json")), &doc)?;
    for r in doc.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "warning: {}={} {}: {}",
            r.param,
            r.value,
            r.method,
            r.error.as_deref().unwrap_or_default()
        );
    }
    print_json(&serde_json::json!({
        "rows": doc.rows.len(),
        "errors": doc.manifest.errors.len(),
        "csv": ctx.out_dir.join(format!("{name}.csv")),
    }))
}

fn cost_cmd(ctx: &Ctx, a: CostArgs) -> anyhow::Result<()> {
    let venue = io::read_venue(&a.venue.venue)?;
    let table = io::read_scores(&venue, &a.venue.scores)?;
    let params = policy_from(ctx, &a.policy)?;
    let sim = similarity_matrix(&venue, &table, &params)?;
    let rows = cost_of_randomization(&sim, &venue, &a.q_grid)?;
    let out = ctx.out(&a.out);
    io::write_file(&out, cost_to_csv(&rows))?;
    print_json(&rows)
}

fn power_cmd(ctx: &Ctx, a: PowerArgs) -> anyhow::Result<()> {
    let loaded = load_study(&a.study)?;
    let params = policy_from(ctx, &a.policy)?;
    let report = bad_policy_analysis(&loaded.data(), &params, a.l, a.calibration_target, &ctx.bound_config())?;
    let rows = report.rows();
    let mut manifest = Manifest::new("power", ctx.seed, &rows);
    manifest.covariance = loaded.cov.as_ref().map(|c| c.provenance());
    manifest.lipschitz = report.lipschitz;
    finish_results(ctx, &a.name, manifest, rows)
}

fn synth_cmd(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    let mut spec = match (&a.spec, &ctx.config.synth) {
        (Some(path), _) => io::read_json::<SyntheticSpec>(path)?,
        (None, Some(s)) => s.clone(),
        (None, None) => SyntheticSpec::default(),
    };
    spec.seed = ctx.seed;
    if let Some(r) = a.reviewers {
        spec.reviewers = r;
    }
    if let Some(p) = a.papers {
        spec.papers = p;
    }
    if let Some(x) = a.attrition {
        spec.attrition = x;
    }
    if let Some(x) = a.absence {
        spec.absence = x;
    }
    let s = generate_synthetic_venue(&spec)?;
    s.write_to(&ctx.out_dir)?;
    let features = FeatureSpec::for_study(&Study::new(
        s.venue.clone(),
        s.table.clone(),
        s.records.clone(),
        s.on_policy.probs.clone(),
        s.on_policy.probs.clone(),
    )?);
    print_json(&serde_json::json!({
        "out_dir": ctx.out_dir,
        "l_star": s.l_star,
        "feature_dims": features.dims(),
        "records": s.records.len(),
        "on_policy_mean": s.true_mean(&s.on_policy.probs),
    }))
}

fn report_cmd(ctx: &Ctx, a: ReportArgs) -> anyhow::Result<()> {
    if a.format != "csv" {
        bail!(Error::Invalid(format!("unsupported report format {:?}", a.format)));
    }
    let doc: ResultsDoc = io::read_json(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    write_report(&ctx.out_dir, &a.name, &doc.rows, &doc.manifest)?;
    print_json(&serde_json::json!({
        "rows": doc.rows.len(),
        "csv": ctx.out_dir.join(format!("{}.csv", a.name)),
    }))
}

//! Learned imputation models: multinomial logistic classification on pair
//! covariates, and item-based nearest-neighbour collaborative filtering.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Covariates, OutcomeScale, PairId};
use crate::error::{Error, Result};
use crate::estimator::{normal_quantile, ImputationPlan, PlanSource, Study};
use crate::similarity::{bid_value, BidScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputerKind {
    ClfLogistic,
    CfKnn,
}

impl ImputerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "clf-logistic" => Some(ImputerKind::ClfLogistic),
            "cf-knn" => Some(ImputerKind::CfKnn),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ImputerKind::ClfLogistic => "clf-logistic",
            ImputerKind::CfKnn => "cf-knn",
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            ImputerKind::ClfLogistic => vec![0.01, 0.1, 1.0, 10.0],
            ImputerKind::CfKnn => vec![1.0, 3.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BidEncoding {
    Numeric,
    OneHot,
}

/// One labelled pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub reviewer: String,
    pub paper: String,
    pub covariates: Covariates,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub rows: Vec<TrainingRow>,
    pub scheme: BidScheme,
    pub scale: OutcomeScale,
}

impl TrainingSet {
    /// Observed pairs of a study.
    pub fn from_study(study: &Study) -> Result<Self> {
        let scale = study
            .venue()
            .outcome_scale()
            .cloned()
            .ok_or_else(|| Error::Invalid("models need an outcome scale on the venue".into()))?;
        let rows = study
            .observed()
            .into_iter()
            .map(|(pair, y)| target_row(study, pair, y))
            .collect();
        Ok(Self {
            rows,
            scheme: study.venue().bid_scheme().clone(),
            scale,
        })
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            scheme: self.scheme.clone(),
            scale: self.scale.clone(),
        }
    }

    fn mean(&self) -> f64 {
        self.rows.iter().map(|r| r.y).sum::<f64>() / self.rows.len().max(1) as f64
    }
}

fn target_row(study: &Study, pair: PairId, y: f64) -> TrainingRow {
    let (r, p) = study.venue().pair_ids(pair);
    TrainingRow {
        reviewer: r.to_string(),
        paper: p.to_string(),
        covariates: study.table().get(pair).clone(),
        y,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub folds: usize,
    pub seed: u64,
    /// Penalties for the classifier, neighbour counts for filtering.
    pub grid: Option<Vec<f64>>,
    pub bid_encoding: BidEncoding,
    pub standardize: bool,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            seed: 0,
            grid: None,
            bid_encoding: BidEncoding::Numeric,
            standardize: true,
            max_iter: 10_000,
            tolerance: 1e-6,
        }
    }
}

/// Feature construction recorded with a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub bid_encoding: BidEncoding,
    pub standardize: bool,
    pub bid_labels: Vec<String>,
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Preprocessing {
    fn raw(&self, c: &Covariates, scheme: &BidScheme) -> Result<Vec<f64>> {
        let mut x = vec![
            c.text.unwrap_or(0.0),
            f64::from(u8::from(c.text.is_none())),
            c.subject.unwrap_or(0.0),
            f64::from(u8::from(c.subject.is_none())),
        ];
        match self.bid_encoding {
            BidEncoding::Numeric => x.push(bid_value(c.bid.as_deref(), scheme, 1.0)?),
            BidEncoding::OneHot => {
                let label = c.bid.as_deref().unwrap_or(&scheme.default_label);
                x.extend(self.bid_labels.iter().map(|l| f64::from(u8::from(l == label))));
            }
        }
        Ok(x)
    }

    fn fit(config: &FitConfig, data: &TrainingSet) -> Result<(Self, Vec<Vec<f64>>)> {
        let bid_labels: Vec<String> = data.scheme.entries.iter().map(|e| e.label.clone()).collect();
        let mut feature_names: Vec<String> =
            ["text", "text_missing", "subject", "subject_missing"].map(String::from).to_vec();
        match config.bid_encoding {
            BidEncoding::Numeric => feature_names.push("bid".into()),
            BidEncoding::OneHot => feature_names.extend(bid_labels.iter().map(|l| format!("bid={l}"))),
        }
        let mut pre = Self {
            bid_encoding: config.bid_encoding,
            standardize: config.standardize,
            bid_labels,
            means: vec![0.0; feature_names.len()],
            scales: vec![1.0; feature_names.len()],
            feature_names,
        };
        let raw = data
            .rows
            .iter()
            .map(|r| pre.raw(&r.covariates, &data.scheme))
            .collect::<Result<Vec<_>>>()?;
        if config.standardize && !raw.is_empty() {
            let n = raw.len() as f64;
            for k in 0..pre.means.len() {
                let mean = raw.iter().map(|x| x[k]).sum::<f64>() / n;
                let var = raw.iter().map(|x| (x[k] - mean).powi(2)).sum::<f64>() / n;
                pre.means[k] = mean;
                pre.scales[k] = if var > 1e-24 { var.sqrt() } else { 1.0 };
            }
        }
        let xs = raw.iter().map(|x| pre.finish(x)).collect();
        Ok((pre, xs))
    }

    fn finish(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn transform(&self, c: &Covariates, scheme: &BidScheme) -> Result<Vec<f64>> {
        Ok(self.finish(&self.raw(c, scheme)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum ModelParams {
    Constant {
        value: f64,
    },
    Logistic {
        penalty: f64,
        classes: Vec<f64>,
        /// One row per class: feature coefficients followed by the intercept.
        weights: Vec<Vec<f64>>,
        iterations: usize,
        converged: bool,
    },
    Knn {
        k: usize,
        /// Training ratings as `(reviewer, paper, value)`.
        ratings: Vec<(String, String, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: usize,
    /// `(grid value, mean absolute error)` in grid order.
    pub scores: Vec<(f64, f64)>,
    pub selected: f64,
    pub baseline_mae: f64,
    pub tie_break: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedImputer {
    pub kind: ImputerKind,
    pub scale: OutcomeScale,
    pub scheme: BidScheme,
    pub preprocessing: Option<Preprocessing>,
    pub params: ModelParams,
    /// Value used for cold-start targets.
    pub fallback: f64,
    pub cv: Option<CvSummary>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// A target pair: ids for filtering, covariates for classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub reviewer: String,
    pub paper: String,
    pub covariates: Covariates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Imputed {
    pub value: f64,
    pub cold_start: bool,
}

fn softmax_into(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

fn logits(weights: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .map(|w| {
            let d = x.len();
            w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d]
        })
        .collect()
}

struct LogisticFit {
    weights: Vec<Vec<f64>>,
    iterations: usize,
    converged: bool,
}

/// Batch gradient descent on the L2-penalized mean cross-entropy.
fn train_logistic(xs: &[Vec<f64>], labels: &[usize], classes: usize, penalty: f64, config: &FitConfig) -> LogisticFit {
    let n = xs.len() as f64;
    let d = xs.first().map_or(0, Vec::len);
    let mut w = vec![vec![0.0; d + 1]; classes];
    let max_norm = xs
        .iter()
        .map(|x| 1.0 + x.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / (0.5 * max_norm + penalty);
    let mut grad = vec![vec![0.0; d + 1]; classes];
    for iter in 0..config.max_iter {
        for g in grad.iter_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for (x, &label) in xs.iter().zip(labels) {
            let mut p = logits(&w, x);
            softmax_into(&mut p);
            for (c, g) in grad.iter_mut().enumerate() {
                let r = p[c] - f64::from(u8::from(c == label));
                for k in 0..d {
                    g[k] += r * x[k];
                }
                g[d] += r;
            }
        }
        let mut norm = 0.0;
        for (g, wc) in grad.iter_mut().zip(&w) {
            for k in 0..=d {
                g[k] /= n;
                if k < d {
                    g[k] += penalty * wc[k];
                }
                norm += g[k] * g[k];
            }
        }
        if norm.sqrt() < config.tolerance {
            return LogisticFit {
                weights: w,
                iterations: iter,
                converged: true,
            };
        }
        for (wc, g) in w.iter_mut().zip(&grad) {
            for k in 0..=d {
                wc[k] -= step * g[k];
            }
        }
    }
    LogisticFit {
        weights: w,
        iterations: config.max_iter,
        converged: false,
    }
}

fn distinct_levels(data: &TrainingSet) -> Vec<f64> {
    let mut levels: Vec<f64> = data.rows.iter().map(|r| r.y).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
}

fn fit_at(kind: ImputerKind, data: &TrainingSet, value: f64, config: &FitConfig) -> Result<TrainedImputer> {
    let fallback = data.mean();
    let mut warnings = Vec::new();
    let (preprocessing, params) = match kind {
        ImputerKind::ClfLogistic => {
            let (pre, xs) = Preprocessing::fit(config, data)?;
            let classes = distinct_levels(data);
            let params = if classes.len() < 2 {
                warnings.push("training outcomes have a single level; using a constant predictor".into());
                ModelParams::Constant {
                    value: classes.first().copied().unwrap_or(fallback),
                }
            } else {
                let labels: Vec<usize> = data
                    .rows
                    .iter()
                    .map(|r| classes.partition_point(|&c| c < r.y))
                    .collect();
                let fit = train_logistic(&xs, &labels, classes.len(), value, config);
                if !fit.converged {
                    warnings.push(format!(
                        "gradient descent stopped after {} iterations without reaching tolerance",
                        fit.iterations
                    ));
                }
                ModelParams::Logistic {
                    penalty: value,
                    classes,
                    weights: fit.weights,
                    iterations: fit.iterations,
                    converged: fit.converged,
                }
            };
            (Some(pre), params)
        }
        ImputerKind::CfKnn => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::Invalid(format!("neighbour count must be a positive integer, got {value}")));
            }
            let ratings = data
                .rows
                .iter()
                .map(|r| (r.reviewer.clone(), r.paper.clone(), r.y))
                .collect();
            (None, ModelParams::Knn { k: value as usize, ratings })
        }
    };
    Ok(TrainedImputer {
        kind,
        scale: data.scale.clone(),
        scheme: data.scheme.clone(),
        preprocessing,
        params,
        fallback,
        cv: None,
        seed: config.seed,
        warnings,
    })
}

fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, i) in idx.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    out
}

fn mae(model: &TrainedImputer, data: &TrainingSet) -> Result<f64> {
    let targets: Vec<Target> = data
        .rows
        .iter()
        .map(|r| Target {
            reviewer: r.reviewer.clone(),
            paper: r.paper.clone(),
            covariates: r.covariates.clone(),
        })
        .collect();
    let pred = impute_with_model(model, &targets, None)?;
    Ok(pred
        .iter()
        .zip(&data.rows)
        .map(|(p, r)| (p.value - r.y).abs())
        .sum::<f64>()
        / data.rows.len().max(1) as f64)
}

fn baseline_mae(train: &TrainingSet, test: &TrainingSet) -> f64 {
    let m = train.mean();
    test.rows.iter().map(|r| (r.y - m).abs()).sum::<f64>() / test.rows.len().max(1) as f64
}

/// Select the grid value with the lowest mean fold MAE, ties going to the
/// larger value, then refit on all data.
pub fn fit_imputer(kind: ImputerKind, data: &TrainingSet, config: &FitConfig) -> Result<TrainedImputer> {
    if config.folds < 2 {
        return Err(Error::Invalid("cross-validation needs at least 2 folds".into()));
    }
    if data.rows.len() < config.folds {
        return Err(Error::Invalid(format!(
            "{} observed pairs are fewer than {} folds",
            data.rows.len(),
            config.folds
        )));
    }
    let grid = config.grid.clone().unwrap_or_else(|| kind.default_grid());
    if grid.is_empty() {
        return Err(Error::Invalid("hyperparameter grid is empty".into()));
    }
    let folds = fold_assignment(data.rows.len(), config.folds, config.seed);
    let splits: Vec<(TrainingSet, TrainingSet)> = (0..config.folds)
        .map(|f| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            (data.subset(&train), data.subset(&folds[f]))
        })
        .collect();
    let scores: Vec<Result<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = grid
            .iter()
            .map(|&g| {
                let splits = &splits;
                s.spawn(move || -> Result<f64> {
                    let mut total = 0.0;
                    for (train, test) in splits {
                        total += mae(&fit_at(kind, train, g, config)?, test)?;
                    }
                    Ok(total / splits.len() as f64)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("cross-validation worker panicked")).collect()
    });
    let scores: Vec<(f64, f64)> = grid
        .iter()
        .copied()
        .zip(scores)
        .map(|(g, s)| s.map(|s| (g, s)))
        .collect::<Result<_>>()?;
    let best = scores
        .iter()
        .copied()
        .reduce(|a, b| {
            if b.1 < a.1 || (b.1 == a.1 && b.0 > a.0) {
                b
            } else {
                a
            }
        })
        .expect("grid is nonempty");
    let baseline = splits.iter().map(|(tr, te)| baseline_mae(tr, te)).sum::<f64>() / splits.len() as f64;
    let mut model = fit_at(kind, data, best.0, config)?;
    model.cv = Some(CvSummary {
        folds: config.folds,
        scores,
        selected: best.0,
        baseline_mae: baseline,
        tie_break: "largest-value".into(),
    });
    Ok(model)
}

fn cosine(a: &HashMap<&str, f64>, b: &HashMap<&str, f64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut dot = 0.0;
    let (mut na, mut nb) = (0.0, 0.0);
    for (r, x) in small {
        if let Some(y) = large.get(r) {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Predict each target, clamped to the outcome scale. Filtering targets
/// whose reviewer rated nothing fall back to `fallback` (or the training
/// mean) and are flagged.
pub fn impute_with_model(model: &TrainedImputer, targets: &[Target], fallback: Option<f64>) -> Result<Vec<Imputed>> {
    let fallback = model.scale.clamp(fallback.unwrap_or(model.fallback));
    let warm = |v: f64| Imputed {
        value: model.scale.clamp(v),
        cold_start: false,
    };
    match &model.params {
        ModelParams::Constant { value } => Ok(targets.iter().map(|_| warm(*value)).collect()),
        ModelParams::Logistic { classes, weights, .. } => {
            let pre = model
                .preprocessing
                .as_ref()
                .ok_or_else(|| Error::Invalid("classifier model lacks preprocessing".into()))?;
            targets
                .iter()
                .map(|t| {
                    let x = pre.transform(&t.covariates, &model.scheme)?;
                    let z = logits(weights, &x);
                    let best = (0..z.len()).fold(0, |b, c| if z[c] > z[b] { c } else { b });
                    Ok(warm(classes[best]))
                })
                .collect()
        }
        ModelParams::Knn { k, ratings } => {
            let mut by_paper: HashMap<&str, HashMap<&str, f64>> = HashMap::new();
            let mut by_reviewer: HashMap<&str, Vec<(&str, f64)>> = HashMap::new();
            for (r, p, y) in ratings {
                by_paper.entry(p).or_default().insert(r, *y);
                by_reviewer.entry(r).or_default().push((p, *y));
            }
            let empty = HashMap::new();
            Ok(targets
                .iter()
                .map(|t| {
                    let Some(rated) = by_reviewer.get(t.reviewer.as_str()) else {
                        return Imputed {
                            value: fallback,
                            cold_start: true,
                        };
                    };
                    let column = by_paper.get(t.paper.as_str()).unwrap_or(&empty);
                    let mut neighbours: Vec<(f64, &str, f64)> = rated
                        .iter()
                        .filter(|(p, _)| *p != t.paper)
                        .map(|&(p, y)| (cosine(column, &by_paper[p]), p, y))
                        .collect();
                    if neighbours.is_empty() {
                        let own = rated.iter().find(|(p, _)| *p == t.paper).map(|x| x.1);
                        return own.map_or(
                            Imputed {
                                value: fallback,
                                cold_start: true,
                            },
                            warm,
                        );
                    }
                    neighbours.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
                    neighbours.truncate(*k);
                    let weight: f64 = neighbours.iter().map(|n| n.0.max(0.0)).sum();
                    let value = if weight > 0.0 {
                        neighbours.iter().map(|n| n.0.max(0.0) * n.2).sum::<f64>() / weight
                    } else {
                        neighbours.iter().map(|n| n.2).sum::<f64>() / neighbours.len() as f64
                    };
                    warm(value)
                })
                .collect())
        }
    }
}

/// Plan imputing the model's predictions for every plan target of a study.
/// Returns the plan and the number of cold-start targets.
pub fn model_plan(study: &Study, model: &TrainedImputer) -> Result<(ImputationPlan, usize)> {
    let pairs = study.plan_targets();
    let targets: Vec<Target> = pairs
        .iter()
        .map(|&p| {
            let (r, q) = study.venue().pair_ids(p);
            Target {
                reviewer: r.to_string(),
                paper: q.to_string(),
                covariates: study.table().get(p).clone(),
            }
        })
        .collect();
    let values = impute_with_model(model, &targets, study.y_bar())?;
    let cold = values.iter().filter(|v| v.cold_start).count();
    let lookup: HashMap<PairId, f64> = pairs.iter().copied().zip(values.iter().map(|v| v.value)).collect();
    let plan = ImputationPlan::from_fn(
        study,
        PlanSource::Model {
            model: model.kind.as_str().into(),
        },
        |p| lookup[&p],
    );
    Ok((plan, cold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub model: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub per_repeat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub split: f64,
    pub repeats: usize,
    pub seed: u64,
    pub rows: Vec<MaeRow>,
}

fn summarize(name: &str, maes: Vec<f64>) -> MaeRow {
    let n = maes.len() as f64;
    let mean = maes.iter().sum::<f64>() / n;
    let sd = if maes.len() > 1 {
        (maes.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let half = normal_quantile(0.975) * sd / n.sqrt();
    MaeRow {
        model: name.into(),
        mean,
        lo: mean - half,
        hi: mean + half,
        per_repeat: maes,
    }
}

/// Held-out MAE of each model over random train/test splits, plus a
/// predict-the-training-mean baseline row.
pub fn evaluate_imputers(
    kinds: &[ImputerKind],
    data: &TrainingSet,
    split: f64,
    repeats: usize,
    config: &FitConfig,
) -> Result<MaeReport> {
    if !(split > 0.0 && split < 1.0) || repeats == 0 {
        return Err(Error::Invalid("split must lie in (0, 1) and repeats be positive".into()));
    }
    let n = data.rows.len();
    let n_train = ((n as f64) * split).round() as usize;
    if n_train < config.folds || n_train >= n {
        return Err(Error::Invalid(format!("{n} observed pairs are too few for a {split} split")));
    }
    let mut per_model = vec![Vec::with_capacity(repeats); kinds.len()];
    let mut baseline = Vec::with_capacity(repeats);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for rep in 0..repeats {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let train = data.subset(&idx[..n_train]);
        let test = data.subset(&idx[n_train..]);
        let cfg = FitConfig {
            seed: config.seed.wrapping_add(rep as u64 + 1),
            ..config.clone()
        };
        for (k, &kind) in kinds.iter().enumerate() {
            let model = fit_imputer(kind, &train, &cfg)?;
            per_model[k].push(mae(&model, &test)?);
        }
        baseline.push(baseline_mae(&train, &test));
    }
    let mut rows: Vec<MaeRow> = kinds
        .iter()
        .zip(per_model)
        .map(|(k, m)| summarize(k.as_str(), m))
        .collect();
    rows.push(summarize("mean-baseline", baseline));
    Ok(MaeReport {
        split,
        repeats,
        seed: config.seed,
        rows,
    })
}

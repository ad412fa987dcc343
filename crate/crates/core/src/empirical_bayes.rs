//! Prior adaptation.
//!
//! Two criteria are supported. The information-based criterion scores a prior
//! by the cross-validated sum of the factual bias (squared error of the
//! posterior mean on held-out factual outcomes) and the counterfactual
//! variance (posterior variance of the unobserved outcome, noise included).
//! The likelihood-based baseline maximizes the log evidence of the training
//! outcomes.
//!
//! Smoothness levels are searched over a discrete grid; for every grid entry
//! the continuous hyperparameters are tuned by Nelder–Mead in an
//! unconstrained log/tanh parameterization.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FactualData, SplitPlan};
use crate::error::{Error, Result};
use crate::gp_engine::{fit_posterior, FittedModel, PriorStructure, StructureKind, NOISE_FLOOR};
use crate::kernels::{LmcKernelSpec, ScalarKernelSpec, Smoothness, DEFAULT_EPSILON};
use crate::optimize::NelderMead;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    InformationBased,
    LikelihoodBased,
}

/// One entry of the smoothness grid: a single level (Type-I) or a `(nu0, nu1)` pair (Type-II).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SmoothnessCandidate {
    Single(Smoothness),
    Pair(Smoothness, Smoothness),
}

impl SmoothnessCandidate {
    pub fn full_grid(structure: StructureKind) -> Vec<SmoothnessCandidate> {
        match structure {
            StructureKind::TypeI => Smoothness::ALL.into_iter().map(SmoothnessCandidate::Single).collect(),
            StructureKind::TypeII => Smoothness::ALL
                .into_iter()
                .flat_map(|a| Smoothness::ALL.into_iter().map(move |b| SmoothnessCandidate::Pair(a, b)))
                .collect(),
        }
    }

    /// Smoothness assigned to arm `w`; a single level applies to both arms.
    pub fn for_arm(self, w: u8) -> Smoothness {
        match self {
            SmoothnessCandidate::Single(s) => s,
            SmoothnessCandidate::Pair(a, b) => {
                if w == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthScaleMode {
    /// One length-scale per kernel shared by all feature dimensions.
    Shared,
    /// One length-scale per feature dimension (ARD).
    Ard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EbConfig {
    pub criterion: Criterion,
    /// `None` means the full grid for the structure.
    pub smoothness_grid: Option<Vec<SmoothnessCandidate>>,
    /// Evaluation budget of the inner simplex search.
    pub max_evals: usize,
    /// Likelihood pre-fit budget used to warm-start the information-based search (0 disables it).
    pub warm_start_evals: usize,
    /// Cross-validation fold count; equal to the training size for leave-one-out.
    pub folds: usize,
    pub seed: u64,
    pub length_scales: LengthScaleMode,
    pub epsilon: f64,
}

impl Default for EbConfig {
    fn default() -> Self {
        EbConfig {
            criterion: Criterion::InformationBased,
            smoothness_grid: None,
            max_evals: 60,
            warm_start_evals: 60,
            folds: 10,
            seed: 0,
            length_scales: LengthScaleMode::Shared,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl EbConfig {
    /// Validated grid for `structure`, sorted lexicographically.
    pub fn resolved_grid(&self, structure: StructureKind) -> Result<Vec<SmoothnessCandidate>> {
        if self.max_evals < 1 {
            return Err(Error::config("eb.max_evals must be >= 1"));
        }
        if self.folds < 2 {
            return Err(Error::config("eb.folds must be >= 2"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("eb.epsilon must be positive"));
        }
        let mut grid = match &self.smoothness_grid {
            None => SmoothnessCandidate::full_grid(structure),
            Some(g) if g.is_empty() => return Err(Error::config("eb.smoothness_grid must be nonempty")),
            Some(g) => g.clone(),
        };
        for c in &grid {
            let ok = matches!(
                (structure, c),
                (StructureKind::TypeI, SmoothnessCandidate::Single(_)) | (StructureKind::TypeII, SmoothnessCandidate::Pair(..))
            );
            if !ok {
                return Err(Error::config(format!(
                    "smoothness candidate {c:?} does not fit a {structure:?} prior (Type-I takes single levels, Type-II pairs)"
                )));
            }
        }
        grid.sort();
        grid.dedup();
        Ok(grid)
    }
}

/// The two terms of the information-based objective on one evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub factual_bias: f64,
    pub counterfactual_variance: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.factual_bias + self.counterfactual_variance
    }
}

fn flip(tasks: &[u8]) -> Vec<u8> {
    tasks.iter().map(|&t| 1 - t).collect()
}

fn terms_from_model(model: &FittedModel, eval: &FactualData) -> Result<ObjectiveTerms> {
    let means = model.mean_at(&eval.features, &eval.treatments)?;
    let factual_bias = means.iter().zip(&eval.outcomes).map(|(m, y)| (y - m).powi(2)).sum();
    let cf_tasks = flip(&eval.treatments);
    let (_, vars) = model.moments_at(&eval.features, &cf_tasks)?;
    let counterfactual_variance = vars.iter().zip(&cf_tasks).map(|(v, &t)| v + model.prior().noise(t)).sum();
    Ok(ObjectiveTerms {
        factual_bias,
        counterfactual_variance,
    })
}

/// Fit on `train`, then score the factual bias and counterfactual variance on `eval`.
pub fn information_objective(prior: &PriorStructure, train: &FactualData, eval: &FactualData) -> Result<ObjectiveTerms> {
    if eval.is_empty() {
        return Err(Error::config("information objective needs a nonempty evaluation set"));
    }
    let model = fit_posterior(prior, train)?;
    terms_from_model(&model, eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub n_eval: usize,
    pub factual_bias: f64,
    pub counterfactual_variance: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRisk {
    /// Per-subject average of the fold totals (fold-size-weighted mean of the per-fold averages).
    pub risk: f64,
    pub folds: Vec<FoldRow>,
}

struct Fold {
    label: usize,
    fit: FactualData,
    eval: FactualData,
}

fn prepare_folds(data: &FactualData, split: &SplitPlan, structure: StructureKind) -> Result<Vec<Fold>> {
    split.validate(data.len())?;
    (1..=split.n_folds)
        .map(|j| {
            let fit = data.subset(&split.fold_complement(j));
            let eval = data.subset(&split.fold_members(j));
            if fit.is_empty() {
                return Err(Error::config(format!("fold {j} leaves no training subjects")));
            }
            if structure == StructureKind::TypeII {
                let counts = fit.arm_counts();
                if counts[0] == 0 || counts[1] == 0 {
                    return Err(Error::config(format!(
                        "fold {j} leaves the {} arm empty in its training part",
                        if counts[0] == 0 { "control" } else { "treated" }
                    )));
                }
            }
            Ok(Fold { label: j, fit, eval })
        })
        .collect()
}

fn cv_on_folds(prior: &PriorStructure, folds: &[Fold]) -> Result<CvRisk> {
    let mut rows = Vec::with_capacity(folds.len());
    for f in folds {
        let t = information_objective(prior, &f.fit, &f.eval)?;
        rows.push(FoldRow {
            fold: f.label,
            n_eval: f.eval.len(),
            factual_bias: t.factual_bias,
            counterfactual_variance: t.counterfactual_variance,
            total: t.total(),
        });
    }
    let n: usize = rows.iter().map(|r| r.n_eval).sum();
    let risk = rows.iter().map(|r| r.total).sum::<f64>() / n as f64;
    Ok(CvRisk { risk, folds: rows })
}

/// Cross-validated information risk of a fixed prior over the folds of `split`.
pub fn cross_validated_risk(prior: &PriorStructure, data: &FactualData, split: &SplitPlan) -> Result<CvRisk> {
    let folds = prepare_folds(data, split, prior.kind())?;
    cv_on_folds(prior, &folds)
}

/// Maps an unconstrained vector onto a prior for one smoothness candidate.
#[derive(Debug, Clone)]
struct Parameterization {
    structure: StructureKind,
    candidate: SmoothnessCandidate,
    mode: LengthScaleMode,
    d: usize,
    epsilon: f64,
}

const LN_LS_BOUNDS: (f64, f64) = (-6.907_755_278_982_137, 6.907_755_278_982_137);
const LN_VAR_BOUNDS: (f64, f64) = (-18.0, 18.0);

fn bounded_exp(v: f64, (lo, hi): (f64, f64)) -> f64 {
    v.clamp(lo, hi).exp()
}

impl Parameterization {
    fn n_ls(&self) -> usize {
        match self.mode {
            LengthScaleMode::Shared => 1,
            LengthScaleMode::Ard => self.d,
        }
    }

    fn length_scales(&self, theta: &[f64]) -> Vec<f64> {
        match self.mode {
            LengthScaleMode::Shared => vec![bounded_exp(theta[0], LN_LS_BOUNDS); self.d],
            LengthScaleMode::Ard => theta.iter().map(|&t| bounded_exp(t, LN_LS_BOUNDS)).collect(),
        }
    }

    fn decode(&self, theta: &[f64]) -> Result<PriorStructure> {
        let k = self.n_ls();
        match self.structure {
            StructureKind::TypeII => {
                let k0 = ScalarKernelSpec::matern(self.candidate.for_arm(0), self.length_scales(&theta[..k]), 1.0)?;
                let k1 = ScalarKernelSpec::matern(self.candidate.for_arm(1), self.length_scales(&theta[k..2 * k]), 1.0)?;
                let r = &theta[2 * k..];
                let kernel = LmcKernelSpec::new(
                    k0,
                    k1,
                    bounded_exp(r[0], LN_VAR_BOUNDS),
                    bounded_exp(r[1], LN_VAR_BOUNDS),
                    r[2].tanh(),
                    r[3].tanh(),
                    self.epsilon,
                )?;
                Ok(PriorStructure::TypeII {
                    kernel,
                    noise0: bounded_exp(r[4], LN_VAR_BOUNDS).max(NOISE_FLOOR),
                    noise1: bounded_exp(r[5], LN_VAR_BOUNDS).max(NOISE_FLOOR),
                })
            }
            StructureKind::TypeI => {
                let mut ls = self.length_scales(&theta[..k]);
                let r = &theta[k..];
                ls.push(bounded_exp(r[0], LN_LS_BOUNDS));
                let kernel = ScalarKernelSpec::matern(self.candidate.for_arm(0), ls, bounded_exp(r[1], LN_VAR_BOUNDS))?;
                Ok(PriorStructure::TypeI {
                    kernel,
                    noise: bounded_exp(r[2], LN_VAR_BOUNDS).max(NOISE_FLOOR),
                })
            }
        }
    }

    /// Starting point from data scales: length-scale sqrt(d) times the mean
    /// feature spread, 90% of the outcome variance as signal and 10% as noise.
    fn initial(&self, train: &FactualData) -> Vec<f64> {
        let n = train.len() as f64;
        let spread = train
            .features
            .column_iter()
            .map(|c| {
                let m = c.sum() / n;
                (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
            })
            .sum::<f64>()
            / self.d as f64;
        let ls = ((self.d as f64).sqrt() * spread).max(1e-2).ln();
        let var = |ys: &[f64]| -> Option<f64> {
            if ys.len() < 2 {
                return None;
            }
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64;
            (v > 1e-12).then_some(v)
        };
        let v_all = var(&train.outcomes).unwrap_or(1.0);
        let arm = |w: u8| {
            let ys: Vec<f64> = train.outcomes.iter().zip(&train.treatments).filter(|(_, &t)| t == w).map(|(y, _)| *y).collect();
            var(&ys).unwrap_or(v_all)
        };
        let k = self.n_ls();
        match self.structure {
            StructureKind::TypeII => {
                let (v0, v1) = (arm(0), arm(1));
                let mut th = vec![ls; 2 * k];
                th.extend([
                    0.5 * (0.9 * v0).ln(),
                    (0.9 * v1).ln(),
                    0.0,
                    0.0,
                    (0.1 * v0).ln(),
                    (0.1 * v1).ln(),
                ]);
                th
            }
            StructureKind::TypeI => {
                let mut th = vec![ls; k];
                th.extend([0.0, (0.9 * v_all).ln(), (0.1 * v_all).ln()]);
                th
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub smoothness: SmoothnessCandidate,
    /// Tuned prior for this candidate; absent if every evaluation failed.
    pub prior: Option<PriorStructure>,
    /// Minimized objective: cross-validated risk (information) or negative log evidence (likelihood).
    pub objective: Option<f64>,
    pub log_evidence: Option<f64>,
    pub folds: Vec<FoldRow>,
    pub evaluations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub structure: StructureKind,
    pub criterion: Criterion,
    pub selected_index: usize,
    pub selected: PriorStructure,
    pub candidates: Vec<CandidateReport>,
    /// Seconds spent per candidate; kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_clock_secs: Vec<f64>,
}

impl PartialEq for FitReport {
    /// Timings are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.structure == other.structure
            && self.criterion == other.criterion
            && self.selected_index == other.selected_index
            && self.selected == other.selected
            && self.candidates == other.candidates
    }
}

impl FitReport {
    pub fn selected_smoothness(&self) -> SmoothnessCandidate {
        self.candidates[self.selected_index].smoothness
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub report: FitReport,
    /// The selected prior conditioned on the full training set.
    pub model: FittedModel,
}

fn tune_candidate(
    param: &Parameterization,
    config: &EbConfig,
    train: &FactualData,
    folds: Option<&[Fold]>,
) -> CandidateReport {
    let neg_lml = |th: &[f64]| -> f64 {
        param
            .decode(th)
            .and_then(|p| fit_posterior(&p, train))
            .map(|m| -m.log_marginal_likelihood())
            .unwrap_or(f64::INFINITY)
    };
    let mut theta = param.initial(train);
    let mut evaluations = 0;

    let best = match (config.criterion, folds) {
        (Criterion::LikelihoodBased, _) | (_, None) => {
            let m = NelderMead::new(config.max_evals).minimize(neg_lml, &theta);
            evaluations += m.evaluations;
            theta = m.x;
            m.value
        }
        (Criterion::InformationBased, Some(folds)) => {
            if config.warm_start_evals > 0 {
                let m = NelderMead::new(config.warm_start_evals).minimize(neg_lml, &theta);
                evaluations += m.evaluations;
                if m.value.is_finite() {
                    theta = m.x;
                }
            }
            let risk = |th: &[f64]| -> f64 {
                param
                    .decode(th)
                    .and_then(|p| cv_on_folds(&p, folds))
                    .map(|r| r.risk)
                    .unwrap_or(f64::INFINITY)
            };
            let m = NelderMead::new(config.max_evals).minimize(risk, &theta);
            evaluations += m.evaluations;
            theta = m.x;
            m.value
        }
    };

    let failed = |msg: String| CandidateReport {
        smoothness: param.candidate,
        prior: None,
        objective: None,
        log_evidence: None,
        folds: Vec::new(),
        evaluations,
        error: Some(msg),
    };
    if !best.is_finite() {
        return failed("no hyperparameter setting could be fitted".into());
    }
    let prior = match param.decode(&theta) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    let log_evidence = fit_posterior(&prior, train).map(|m| m.log_marginal_likelihood()).ok();
    let (objective, fold_rows) = match (config.criterion, folds) {
        (Criterion::InformationBased, Some(folds)) => match cv_on_folds(&prior, folds) {
            Ok(r) => (r.risk, r.folds),
            Err(e) => return failed(e.to_string()),
        },
        _ => (best, Vec::new()),
    };
    CandidateReport {
        smoothness: param.candidate,
        prior: Some(prior),
        objective: Some(objective),
        log_evidence,
        folds: fold_rows,
        evaluations,
        error: None,
    }
}

/// Tune every grid candidate on the training rows of `split` and keep the best.
///
/// Ties go to the lexicographically smallest candidate.
pub fn select_hyperparameters(
    data: &FactualData,
    split: &SplitPlan,
    config: &EbConfig,
    structure: StructureKind,
) -> Result<Selection> {
    let grid = config.resolved_grid(structure)?;
    split.validate(data.len())?;
    let train = data.subset(&split.train_idx);
    if train.is_empty() {
        return Err(Error::config("empty training set"));
    }
    let folds = match config.criterion {
        Criterion::InformationBased => Some(prepare_folds(data, split, structure)?),
        Criterion::LikelihoodBased => None,
    };

    let results: Vec<(CandidateReport, f64)> = grid
        .par_iter()
        .map(|&candidate| {
            let start = Instant::now();
            let param = Parameterization {
                structure,
                candidate,
                mode: config.length_scales,
                d: data.dim(),
                epsilon: config.epsilon,
            };
            let report = tune_candidate(&param, config, &train, folds.as_deref());
            (report, start.elapsed().as_secs_f64())
        })
        .collect();
    let (candidates, wall_clock_secs): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let mut selected_index: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(v) = c.objective {
            if selected_index.map_or(true, |b| v < candidates[b].objective.unwrap()) {
                selected_index = Some(i);
            }
        }
    }
    let Some(selected_index) = selected_index else {
        let msgs: Vec<String> = candidates
            .iter()
            .map(|c| format!("{:?}: {}", c.smoothness, c.error.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(Error::numerical(format!("all smoothness candidates failed: {}", msgs.join("; "))));
    };
    let selected = candidates[selected_index].prior.clone().unwrap();
    let model = fit_posterior(&selected, &train)?;
    Ok(Selection {
        report: FitReport {
            structure,
            criterion: config.criterion,
            selected_index,
            selected,
            candidates,
            wall_clock_secs,
        },
        model,
    })
}

//! The estimator roster: GP-family estimators plus trivial baselines, all
//! behind one fit/predict interface.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{FactualData, SplitPlan, Standardizer};
use crate::empirical_bayes::{select_hyperparameters, Criterion, EbConfig, FitReport};
use crate::error::{Error, Result};
use crate::gp_engine::{FittedModel, PosteriorSummary, StructureKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Type-II multi-task GP.
    Mtgp,
    /// Type-I GP over the augmented input `(x, w)`.
    TypeIGp,
    /// One single-task GP per arm, tuned by marginal likelihood.
    IndependentGps,
    ZeroEffect,
    /// Difference of the arm means of the training outcomes.
    MeanEffect,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub id: String,
    pub kind: EstimatorKind,
    #[serde(default)]
    pub eb: EbConfig,
    /// Standardize features with statistics of the training rows.
    #[serde(default = "yes")]
    pub standardize: bool,
}

impl EstimatorSpec {
    pub fn new(id: &str, kind: EstimatorKind, eb: EbConfig) -> Self {
        EstimatorSpec {
            id: id.to_string(),
            kind,
            eb,
            standardize: true,
        }
    }

    /// The full comparison roster, sharing `eb` apart from the criterion.
    pub fn roster(eb: &EbConfig) -> Vec<EstimatorSpec> {
        let with = |c: Criterion| EbConfig {
            criterion: c,
            ..eb.clone()
        };
        vec![
            EstimatorSpec::new("mtgp_info", EstimatorKind::Mtgp, with(Criterion::InformationBased)),
            EstimatorSpec::new("mtgp_lik", EstimatorKind::Mtgp, with(Criterion::LikelihoodBased)),
            EstimatorSpec::new("gp_type1_lik", EstimatorKind::TypeIGp, with(Criterion::LikelihoodBased)),
            EstimatorSpec::new("independent_gps", EstimatorKind::IndependentGps, with(Criterion::LikelihoodBased)),
            EstimatorSpec::new("zero_effect", EstimatorKind::ZeroEffect, eb.clone()),
            EstimatorSpec::new("mean_effect", EstimatorKind::MeanEffect, eb.clone()),
        ]
    }
}

#[derive(Debug, Clone)]
pub enum FittedEstimator {
    Gp {
        standardizer: Standardizer,
        model: FittedModel,
        report: Option<FitReport>,
    },
    Independent {
        standardizer: Standardizer,
        models: [FittedModel; 2],
        reports: Option<[FitReport; 2]>,
    },
    Constant(f64),
}

impl FittedEstimator {
    /// Point estimate of the ITE at each query row.
    pub fn predict_ite(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            FittedEstimator::Gp { standardizer, model, .. } => Ok(model.predict(&standardizer.transform(x)?)?.ite_mean),
            FittedEstimator::Independent { standardizer, models, .. } => {
                let xs = standardizer.transform(x)?;
                let m = xs.nrows();
                let f0 = models[0].mean_at(&xs, &vec![0; m])?;
                let f1 = models[1].mean_at(&xs, &vec![1; m])?;
                Ok(f1.iter().zip(&f0).map(|(a, b)| a - b).collect())
            }
            FittedEstimator::Constant(c) => Ok(vec![*c; x.nrows()]),
        }
    }

    /// Joint posterior, for the estimators that have one.
    pub fn posterior(&self, x: &DMatrix<f64>) -> Result<Option<PosteriorSummary>> {
        match self {
            FittedEstimator::Gp { standardizer, model, .. } => Ok(Some(model.predict(&standardizer.transform(x)?)?)),
            _ => Ok(None),
        }
    }

    /// Posterior mean of the factual outcome `f_{w_i}(x_i)`; `None` for constant baselines.
    pub fn predict_factual(&self, x: &DMatrix<f64>, treatments: &[u8]) -> Result<Option<Vec<f64>>> {
        if x.nrows() != treatments.len() {
            return Err(Error::shape(format!("{} feature rows but {} treatments", x.nrows(), treatments.len())));
        }
        match self {
            FittedEstimator::Gp { standardizer, model, .. } => Ok(Some(model.mean_at(&standardizer.transform(x)?, treatments)?)),
            FittedEstimator::Independent { standardizer, models, .. } => {
                let xs = standardizer.transform(x)?;
                let m = xs.nrows();
                let f0 = models[0].mean_at(&xs, &vec![0; m])?;
                let f1 = models[1].mean_at(&xs, &vec![1; m])?;
                Ok(Some(treatments.iter().enumerate().map(|(i, &w)| if w == 0 { f0[i] } else { f1[i] }).collect()))
            }
            FittedEstimator::Constant(_) => Ok(None),
        }
    }

    pub fn report(&self) -> Option<&FitReport> {
        match self {
            FittedEstimator::Gp { report, .. } => report.as_ref(),
            _ => None,
        }
    }
}

pub const ESTIMATOR_FORMAT_VERSION: u32 = 1;

/// Serializable form of a fitted estimator. GP models are refitted from their
/// stored prior and training data on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedEstimator {
    pub format_version: u32,
    pub id: String,
    pub fit: SavedFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SavedFit {
    Gp { standardizer: Standardizer, model: FittedModel },
    Independent { standardizer: Standardizer, models: [FittedModel; 2] },
    Constant { value: f64 },
}

impl SavedEstimator {
    pub fn new(id: &str, fit: &FittedEstimator) -> Self {
        let fit = match fit {
            FittedEstimator::Gp { standardizer, model, .. } => SavedFit::Gp {
                standardizer: standardizer.clone(),
                model: model.clone(),
            },
            FittedEstimator::Independent { standardizer, models, .. } => SavedFit::Independent {
                standardizer: standardizer.clone(),
                models: models.clone(),
            },
            FittedEstimator::Constant(v) => SavedFit::Constant { value: *v },
        };
        SavedEstimator {
            format_version: ESTIMATOR_FORMAT_VERSION,
            id: id.to_string(),
            fit,
        }
    }

    pub fn from_json(text: &str) -> Result<SavedEstimator> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn from_value(v: serde_json::Value) -> Result<SavedEstimator> {
        match v.get("format_version").and_then(|f| f.as_u64()) {
            Some(f) if f == ESTIMATOR_FORMAT_VERSION as u64 => {}
            other => {
                return Err(Error::config(format!(
                    "estimator artifact version {other:?} unsupported (expected {ESTIMATOR_FORMAT_VERSION})"
                )))
            }
        }
        Ok(serde_json::from_value(v)?)
    }

    /// Predictor without fit reports.
    pub fn estimator(&self) -> FittedEstimator {
        match &self.fit {
            SavedFit::Gp { standardizer, model } => FittedEstimator::Gp {
                standardizer: standardizer.clone(),
                model: model.clone(),
                report: None,
            },
            SavedFit::Independent { standardizer, models } => FittedEstimator::Independent {
                standardizer: standardizer.clone(),
                models: models.clone(),
                reports: None,
            },
            SavedFit::Constant { value } => FittedEstimator::Constant(*value),
        }
    }
}

fn standardized(spec: &EstimatorSpec, data: &FactualData, train_idx: &[usize]) -> Result<(Standardizer, FactualData)> {
    let st = if spec.standardize {
        Standardizer::fit(&data.subset(train_idx).features)
    } else {
        Standardizer::identity(data.dim())
    };
    let fd = FactualData::new(st.transform(&data.features)?, data.treatments.clone(), data.outcomes.clone())?;
    Ok((st, fd))
}

/// Fit `spec` on the training rows of `split`.
pub fn fit_estimator(spec: &EstimatorSpec, data: &FactualData, split: &SplitPlan) -> Result<FittedEstimator> {
    split.validate(data.len())?;
    match spec.kind {
        EstimatorKind::ZeroEffect => Ok(FittedEstimator::Constant(0.0)),
        EstimatorKind::MeanEffect => {
            let mut sum = [0.0; 2];
            let mut cnt = [0usize; 2];
            for &i in &split.train_idx {
                let w = data.treatments[i] as usize;
                sum[w] += data.outcomes[i];
                cnt[w] += 1;
            }
            if cnt.contains(&0) {
                return Err(Error::numerical("mean-effect baseline needs both arms in the training set"));
            }
            Ok(FittedEstimator::Constant(sum[1] / cnt[1] as f64 - sum[0] / cnt[0] as f64))
        }
        EstimatorKind::Mtgp | EstimatorKind::TypeIGp => {
            let kind = if spec.kind == EstimatorKind::Mtgp {
                StructureKind::TypeII
            } else {
                StructureKind::TypeI
            };
            let (standardizer, fd) = standardized(spec, data, &split.train_idx)?;
            let sel = select_hyperparameters(&fd, split, &spec.eb, kind)?;
            Ok(FittedEstimator::Gp {
                standardizer,
                model: sel.model,
                report: Some(sel.report),
            })
        }
        EstimatorKind::IndependentGps => {
            let (standardizer, fd) = standardized(spec, data, &split.train_idx)?;
            // A single-arm fit has no counterfactual to score, so each arm is tuned by likelihood.
            let eb = EbConfig {
                criterion: Criterion::LikelihoodBased,
                ..spec.eb.clone()
            };
            let mut fits = Vec::with_capacity(2);
            for arm in 0..2u8 {
                let idx: Vec<usize> = split.train_idx.iter().copied().filter(|&i| fd.treatments[i] == arm).collect();
                if idx.len() < 2 {
                    return Err(Error::numerical(format!("arm {arm} has fewer than 2 training subjects")));
                }
                let sub = fd.subset(&idx);
                let plan = SplitPlan::k_fold((0..idx.len()).collect(), &sub.treatments, 2, split.seed)?;
                fits.push(select_hyperparameters(&sub, &plan, &eb, StructureKind::TypeI)?);
            }
            let s1 = fits.pop().unwrap();
            let s0 = fits.pop().unwrap();
            Ok(FittedEstimator::Independent {
                standardizer,
                models: [s0.model, s1.model],
                reports: Some([s0.report, s1.report]),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical_bayes::SmoothnessCandidate;
    use crate::kernels::Smoothness;

    fn data() -> FactualData {
        let n = 24;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64);
        let w: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let y = (0..n).map(|i| (4.0 * i as f64 / n as f64).sin() + 2.0 * w[i] as f64).collect();
        FactualData::new(x, w, y).unwrap()
    }

    fn small_eb(criterion: Criterion, grid: SmoothnessCandidate) -> EbConfig {
        EbConfig {
            criterion,
            smoothness_grid: Some(vec![grid]),
            max_evals: 30,
            warm_start_evals: 20,
            folds: 3,
            ..EbConfig::default()
        }
    }

    #[test]
    fn baselines() {
        let d = data();
        let split = SplitPlan::k_fold((0..d.len()).collect(), &d.treatments, 3, 0).unwrap();
        let zero = fit_estimator(&EstimatorSpec::new("z", EstimatorKind::ZeroEffect, EbConfig::default()), &d, &split).unwrap();
        assert_eq!(zero.predict_ite(&d.features).unwrap(), vec![0.0; d.len()]);
        let mean = fit_estimator(&EstimatorSpec::new("m", EstimatorKind::MeanEffect, EbConfig::default()), &d, &split).unwrap();
        let (mut s, mut c) = ([0.0; 2], [0.0; 2]);
        for i in 0..d.len() {
            s[d.treatments[i] as usize] += d.outcomes[i];
            c[d.treatments[i] as usize] += 1.0;
        }
        assert_eq!(mean.predict_ite(&d.features).unwrap()[0], s[1] / c[1] - s[0] / c[0]);
    }

    #[test]
    fn gp_estimators_recover_the_offset() {
        let d = data();
        let split = SplitPlan::k_fold((0..d.len()).collect(), &d.treatments, 3, 0).unwrap();
        let pair = SmoothnessCandidate::Pair(Smoothness::FiveHalves, Smoothness::FiveHalves);
        let single = SmoothnessCandidate::Single(Smoothness::FiveHalves);
        for spec in [
            EstimatorSpec::new("a", EstimatorKind::Mtgp, small_eb(Criterion::InformationBased, pair)),
            EstimatorSpec::new("b", EstimatorKind::Mtgp, small_eb(Criterion::LikelihoodBased, pair)),
            EstimatorSpec::new("c", EstimatorKind::TypeIGp, small_eb(Criterion::LikelihoodBased, single)),
            EstimatorSpec::new("d", EstimatorKind::IndependentGps, small_eb(Criterion::LikelihoodBased, single)),
        ] {
            let fit = fit_estimator(&spec, &d, &split).unwrap();
            let ite = fit.predict_ite(&d.features).unwrap();
            let mean = ite.iter().sum::<f64>() / ite.len() as f64;
            assert!((mean - 2.0).abs() < 0.5, "{}: {mean}", spec.id);
        }
    }

    #[test]
    fn saved_estimator_round_trip() {
        let d = data();
        let split = SplitPlan::k_fold((0..d.len()).collect(), &d.treatments, 3, 0).unwrap();
        let spec = EstimatorSpec::new(
            "a",
            EstimatorKind::Mtgp,
            small_eb(Criterion::LikelihoodBased, SmoothnessCandidate::Pair(Smoothness::Half, Smoothness::FiveHalves)),
        );
        let fit = fit_estimator(&spec, &d, &split).unwrap();
        let text = serde_json::to_string(&SavedEstimator::new("a", &fit)).unwrap();
        let back = SavedEstimator::from_json(&text).unwrap().estimator();
        assert_eq!(back.predict_ite(&d.features).unwrap(), fit.predict_ite(&d.features).unwrap());
        assert_eq!(
            back.predict_factual(&d.features, &d.treatments).unwrap(),
            fit.predict_factual(&d.features, &d.treatments).unwrap()
        );
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":7", 1);
        assert!(SavedEstimator::from_json(&bumped).unwrap_err().is_config());
        let wide = DMatrix::zeros(2, 3);
        assert!(matches!(back.predict_ite(&wide), Err(Error::Shape(_))));
    }

    #[test]
    fn roster_ids_and_json() {
        let r = EstimatorSpec::roster(&EbConfig::default());
        let ids: Vec<&str> = r.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["mtgp_info", "mtgp_lik", "gp_type1_lik", "independent_gps", "zero_effect", "mean_effect"]);
        let back: EstimatorSpec = serde_json::from_str(r#"{"id":"x","kind":"type_i_gp"}"#).unwrap();
        assert!(back.standardize);
        assert_eq!(back.kind, EstimatorKind::TypeIGp);
    }
}

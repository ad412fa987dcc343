//! Effect-estimation error, the Gaussian KL surrogate, and empirical
//! convergence rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SplitPlan;
use crate::error::{Error, Result};
use crate::estimators::{fit_estimator, EstimatorSpec};
use crate::gp_engine::PosteriorSummary;
use crate::seed;
use crate::synthgen::{GeneratorConfig, SurfaceSpec, SyntheticModel};

/// Mean squared difference between predicted and true effects.
pub fn pehe(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "PEHE needs equal lengths, got {} predictions and {} true effects",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::shape("PEHE of an empty set"));
    }
    Ok(predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / predicted.len() as f64)
}

pub fn sqrt_pehe(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    pehe(predicted, truth).map(f64::sqrt)
}

/// Mean of `|E[T(x)] - T(x)|^2 / (2 (s0 + s1))` over the query points.
pub fn expected_kl_risk(posterior: &PosteriorSummary, truth: &[f64], noise0: f64, noise1: f64) -> Result<f64> {
    if !(noise0 > 0.0 && noise1 > 0.0) {
        return Err(Error::config(format!("noise variances must be positive, got {noise0} and {noise1}")));
    }
    Ok(pehe(&posterior.ite_mean, truth)? / (2.0 * (noise0 + noise1)))
}

/// Exponent of the optimal rate for arms of regularity `a0`, `a1` depending on
/// `p0`, `p1` features: the slower of the two decays.
pub fn optimal_rate_oracle(a0: f64, a1: f64, p0: f64, p1: f64) -> Result<f64> {
    for (name, v) in [("alpha0", a0), ("alpha1", a1), ("p0", p0), ("p1", p1)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::config(format!("{name} must be positive, got {v}")));
        }
    }
    Ok((-2.0 * a0 / (2.0 * a0 + p0)).max(-2.0 * a1 / (2.0 * a1 + p1)))
}

/// Oracle exponent of a generator whose surfaces are both GP draws.
pub fn generator_oracle(cfg: &GeneratorConfig) -> Option<f64> {
    match (&cfg.surface0, &cfg.surface1) {
        (SurfaceSpec::GpDraw { nu: n0, .. }, SurfaceSpec::GpDraw { nu: n1, .. }) => optimal_rate_oracle(
            n0.value(),
            n1.value(),
            cfg.relevant_dims0.len() as f64,
            cfg.relevant_dims1.len() as f64,
        )
        .ok(),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// `None` with fewer than three points.
    pub slope_se: Option<f64>,
}

/// Ordinary least squares of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::shape("line fit needs two or more paired points"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::shape("line fit needs distinct abscissae"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = (n > 2).then(|| {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    });
    Ok(LineFit {
        slope,
        intercept,
        slope_se,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateStudyConfig {
    pub generator: GeneratorConfig,
    pub estimator: EstimatorSpec,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    #[serde(default = "default_query")]
    pub query_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_query() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub n: usize,
    pub replicate: usize,
    pub pehe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudyResult {
    pub estimator: String,
    pub sizes: Vec<usize>,
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: Option<f64>,
    pub oracle_exponent: Option<f64>,
    /// Set when the risk sits at the floating-point floor, so the slope is meaningless.
    pub degenerate: bool,
    pub replicate_seeds: Vec<u64>,
    pub records: Vec<RateRecord>,
}

/// Below this median PEHE the study is reported as degenerate.
pub const PEHE_FLOOR: f64 = 1e-20;

/// Measure how out-of-sample PEHE decays with the sample size.
///
/// Replicate `r` fixes the response surfaces and a query set of `query_size`
/// points; every sample size draws its own training set from that model.
pub fn run_rate_study(cfg: &RateStudyConfig) -> Result<RateStudyResult> {
    if cfg.sizes.len() < 2 || cfg.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("rate study needs two or more strictly increasing sizes"));
    }
    if cfg.replicates < 3 {
        return Err(Error::config("rate study needs at least 3 replicates"));
    }
    if cfg.query_size < 500 {
        return Err(Error::config("rate study needs a query set of at least 500 points"));
    }
    cfg.generator.validate()?;
    let replicate_seeds: Vec<u64> = (0..cfg.replicates).map(|r| seed::derive(cfg.seed, &[seed::tag("replicate"), r as u64])).collect();
    let models: Vec<SyntheticModel> = replicate_seeds
        .iter()
        .map(|&s| {
            SyntheticModel::from_config(&GeneratorConfig {
                seed: s,
                ..cfg.generator.clone()
            })
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = cfg.sizes.iter().flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r))).collect();
    let records: Vec<RateRecord> = jobs
        .par_iter()
        .map(|&(n, r)| {
            let s = replicate_seeds[r];
            let run = || -> Result<f64> {
                let model = &models[r];
                let ds = model.sample(n, seed::derive(s, &[seed::tag("sample"), n as u64]), None)?;
                let data = ds.factual();
                let folds = cfg.estimator.eb.folds.min(n);
                let split = SplitPlan::k_fold((0..n).collect(), &data.treatments, folds, seed::derive(s, &[seed::tag("folds"), n as u64]))?;
                let fit = fit_estimator(&cfg.estimator, &data, &split)?;
                let xq = model.sample_features(cfg.query_size, seed::derive(s, &[seed::tag("query")]));
                pehe(&fit.predict_ite(&xq)?, &model.true_ite(&xq))
            };
            match run() {
                Ok(p) => RateRecord {
                    n,
                    replicate: r,
                    pehe: Some(p),
                    error: None,
                },
                Err(e) => RateRecord {
                    n,
                    replicate: r,
                    pehe: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let failures = records.iter().filter(|r| r.pehe.is_none()).count();
    if failures * 5 > records.len() {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::numerical(format!(
            "{failures} of {} rate-study fits failed (first error: {first})",
            records.len()
        )));
    }
    let mut points = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let mut vals: Vec<f64> = records.iter().filter(|r| r.n == n).filter_map(|r| r.pehe).collect();
        if vals.is_empty() {
            return Err(Error::numerical(format!("every replicate failed at n = {n}")));
        }
        vals.sort_by(f64::total_cmp);
        points.push(RatePoint {
            n,
            median: quantile(&vals, 0.5),
            q1: quantile(&vals, 0.25),
            q3: quantile(&vals, 0.75),
            successes: vals.len(),
        });
    }
    let degenerate = points.iter().any(|p| p.median <= PEHE_FLOOR);
    let lx: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.median.max(f64::MIN_POSITIVE).ln()).collect();
    let fit = ols(&lx, &ly)?;
    Ok(RateStudyResult {
        estimator: cfg.estimator.id.clone(),
        sizes: cfg.sizes.clone(),
        points,
        slope: fit.slope,
        intercept: fit.intercept,
        slope_se: fit.slope_se,
        oracle_exponent: generator_oracle(&cfg.generator),
        degenerate,
        replicate_seeds,
        records,
    })
}

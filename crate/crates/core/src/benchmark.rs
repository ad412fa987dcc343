//! Monte-Carlo comparison of the estimator roster over replicated datasets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::make_split;
use crate::empirical_bayes::EbConfig;
use crate::error::{Error, Result};
use crate::estimators::{fit_estimator, EstimatorSpec};
use crate::metrics::sqrt_pehe;
use crate::seed;
use crate::synthgen::{GeneratorConfig, IhdpAnalogConfig, SyntheticModel};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Generator { config: GeneratorConfig },
    IhdpAnalog { config: IhdpAnalogConfig },
}

// Hand-written so that `config` is read straight from the input once `source`
// is known; the derived internally tagged form buffers it and loses field paths.
impl<'de> Deserialize<'de> for DataSource {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        deserializer.deserialize_map(DataSourceVisitor)
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum SourceKind {
    Generator,
    IhdpAnalog,
}

struct DataSourceVisitor;

impl<'de> serde::de::Visitor<'de> for DataSourceVisitor {
    type Value = DataSource;

    fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str("a data source table with `source` and `config`")
    }

    fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> std::result::Result<DataSource, A::Error> {
        use serde::de::Error as _;
        let mut kind: Option<SourceKind> = None;
        let mut parsed: Option<DataSource> = None;
        let mut buffered: Option<serde_json::Value> = None;
        while let Some(key) = map.next_key::<String>()? {
            match key.as_str() {
                "source" if kind.is_none() => kind = Some(map.next_value()?),
                "config" if parsed.is_none() && buffered.is_none() => match kind {
                    Some(SourceKind::Generator) => parsed = Some(DataSource::Generator { config: map.next_value()? }),
                    Some(SourceKind::IhdpAnalog) => parsed = Some(DataSource::IhdpAnalog { config: map.next_value()? }),
                    None => buffered = Some(map.next_value()?),
                },
                "source" | "config" => return Err(A::Error::custom(format!("duplicate field `{key}`"))),
                other => return Err(A::Error::unknown_field(other, &["source", "config"])),
            }
        }
        if let Some(p) = parsed {
            return Ok(p);
        }
        let kind = kind.ok_or_else(|| A::Error::missing_field("source"))?;
        match (kind, buffered) {
            (SourceKind::Generator, None) => Err(A::Error::missing_field("config")),
            (SourceKind::Generator, Some(v)) => serde_json::from_value(v).map(|config| DataSource::Generator { config }).map_err(A::Error::custom),
            (SourceKind::IhdpAnalog, None) => Ok(DataSource::IhdpAnalog { config: IhdpAnalogConfig::default() }),
            (SourceKind::IhdpAnalog, Some(v)) => serde_json::from_value(v).map(|config| DataSource::IhdpAnalog { config }).map_err(A::Error::custom),
        }
    }
}

impl DataSource {
    fn n(&self) -> usize {
        match self {
            DataSource::Generator { config } => config.n,
            DataSource::IhdpAnalog { config } => config.n,
        }
    }

    /// The model of replicate seed `s`.
    pub fn model(&self, s: u64) -> Result<SyntheticModel> {
        match self {
            DataSource::Generator { config } => SyntheticModel::from_config(&GeneratorConfig { seed: s, ..config.clone() }),
            DataSource::IhdpAnalog { config } => IhdpAnalogConfig { seed: s, ..config.clone() }.model(),
        }
    }
}

fn default_replicates() -> usize {
    50
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub data: DataSource,
    /// Defaults to the full roster built from `eb`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<EstimatorSpec>>,
    #[serde(default)]
    pub eb: EbConfig,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Train / validation / test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub seed: u64,
}

impl BenchmarkConfig {
    pub fn roster(&self) -> Vec<EstimatorSpec> {
        self.estimators.clone().unwrap_or_else(|| EstimatorSpec::roster(&self.eb))
    }
}

/// Mean with a 95% normal-approximation interval; the interval is absent for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub sd: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Interval {
    pub fn from_values(v: &[f64]) -> Option<Interval> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        if v.len() < 2 {
            return Some(Interval {
                mean,
                sd: None,
                lower: None,
                upper: None,
            });
        }
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let half = 1.96 * sd / n.sqrt();
        Some(Interval {
            mean,
            sd: Some(sd),
            lower: Some(mean - half),
            upper: Some(mean + half),
        })
    }

    /// True when both intervals exist and do not overlap.
    pub fn separated_from(&self, other: &Interval) -> bool {
        match (self.lower, self.upper, other.lower, other.upper) {
            (Some(l1), Some(u1), Some(l2), Some(u2)) => u1 < l2 || u2 < l1,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub replicate: usize,
    pub estimator: String,
    /// Root PEHE over the training rows.
    pub in_sample: Option<f64>,
    /// Root PEHE over every row of the replicate.
    pub full_sample: Option<f64>,
    /// Root PEHE over the held-out test rows.
    pub out_of_sample: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_smoothness: Option<crate::empirical_bayes::SmoothnessCandidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub successes: usize,
    pub failures: usize,
    pub in_sample: Option<Interval>,
    pub full_sample: Option<Interval>,
    pub out_of_sample: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub replicates: usize,
    pub replicate_seeds: Vec<u64>,
    pub summaries: Vec<EstimatorSummary>,
    pub records: Vec<BenchRecord>,
}

impl BenchmarkReport {
    pub fn summary(&self, id: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == id)
    }

    /// Plain-text table, one row per estimator.
    pub fn table(&self) -> String {
        let fmt = |i: &Option<Interval>| match i {
            None => "n/a".to_string(),
            Some(Interval {
                mean,
                lower: Some(l),
                upper: Some(u),
                ..
            }) => format!("{mean:.3} [{l:.3}, {u:.3}]"),
            Some(i) => format!("{:.3}", i.mean),
        };
        let mut out = format!("{:<18} {:>26} {:>26} {:>8}\n", "estimator", "in-sample sqrt(PEHE)", "out-of-sample sqrt(PEHE)", "fails");
        for s in &self.summaries {
            out.push_str(&format!(
                "{:<18} {:>26} {:>26} {:>8}\n",
                s.estimator,
                fmt(&s.in_sample),
                fmt(&s.out_of_sample),
                s.failures
            ));
        }
        out
    }
}

fn score(pred: &[f64], truth: &[f64], idx: &[usize]) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
    let t: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
    sqrt_pehe(&p, &t).ok()
}

/// Run every estimator on every replicate. Failures are recorded per estimator.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cfg.replicates < 1 {
        return Err(Error::config("benchmark needs at least one replicate"));
    }
    let roster = cfg.roster();
    if roster.is_empty() {
        return Err(Error::config("benchmark roster is empty"));
    }
    let mut ids: Vec<&str> = roster.iter().map(|e| e.id.as_str()).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("estimator ids must be unique"));
    }
    // surface configuration errors before any work is scheduled
    cfg.data.model(cfg.seed)?;
    let n = cfg.data.n();
    let replicate_seeds: Vec<u64> = (0..cfg.replicates).map(|r| seed::derive(cfg.seed, &[seed::tag("replicate"), r as u64])).collect();

    let datasets = replicate_seeds
        .par_iter()
        .map(|&s| {
            let ds = cfg.data.model(s)?.sample(n, s, None)?;
            let split = make_split(&ds, (cfg.split[0], cfg.split[1], cfg.split[2]), cfg.eb.folds, s)?;
            Ok((ds, split))
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..cfg.replicates).flat_map(|r| (0..roster.len()).map(move |e| (r, e))).collect();
    let records: Vec<BenchRecord> = jobs
        .par_iter()
        .map(|&(r, e)| {
            let (ds, split) = &datasets[r];
            let spec = &roster[e];
            let truth = ds.true_ite().expect("synthetic data carries true effects");
            let outcome = fit_estimator(spec, &ds.factual(), split).and_then(|fit| {
                let pred = fit.predict_ite(ds.features())?;
                Ok((pred, fit.report().map(|r| r.selected_smoothness())))
            });
            match outcome {
                Ok((pred, selected)) => {
                    let all: Vec<usize> = (0..ds.len()).collect();
                    BenchRecord {
                        replicate: r,
                        estimator: spec.id.clone(),
                        in_sample: score(&pred, truth, &split.train_idx),
                        full_sample: score(&pred, truth, &all),
                        out_of_sample: score(&pred, truth, &split.test_idx),
                        selected_smoothness: selected,
                        error: None,
                    }
                }
                Err(err) => BenchRecord {
                    replicate: r,
                    estimator: spec.id.clone(),
                    in_sample: None,
                    full_sample: None,
                    out_of_sample: None,
                    selected_smoothness: None,
                    error: Some(err.to_string()),
                },
            }
        })
        .collect();

    let summaries = roster
        .iter()
        .map(|spec| {
            let mine: Vec<&BenchRecord> = records.iter().filter(|r| r.estimator == spec.id).collect();
            let col = |f: fn(&BenchRecord) -> Option<f64>| Interval::from_values(&mine.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            EstimatorSummary {
                estimator: spec.id.clone(),
                successes: mine.iter().filter(|r| r.error.is_none()).count(),
                failures: mine.iter().filter(|r| r.error.is_some()).count(),
                in_sample: col(|r| r.in_sample),
                full_sample: col(|r| r.full_sample),
                out_of_sample: col(|r| r.out_of_sample),
            }
        })
        .collect();
    Ok(BenchmarkReport {
        replicates: cfg.replicates,
        replicate_seeds,
        summaries,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorKind;
    use crate::synthgen::{PropensitySpec, SurfaceSpec};

    fn constant_effect() -> DataSource {
        DataSource::Generator {
            config: GeneratorConfig {
                n: 60,
                d: 2,
                surface0: SurfaceSpec::Linear {
                    weights: vec![1.0],
                    intercept: 0.0,
                },
                surface1: SurfaceSpec::Linear {
                    weights: vec![1.0],
                    intercept: 2.0,
                },
                relevant_dims0: vec![1],
                relevant_dims1: vec![1],
                noise0: 0.0,
                noise1: 0.0,
                propensity: PropensitySpec::Constant { gamma: 0.5 },
                overlap_clamp: [0.1, 0.9],
                seed: 0,
                treatment_seed: None,
            },
        }
    }

    #[test]
    fn zero_effect_baseline_scores_two() {
        let cfg = BenchmarkConfig {
            data: constant_effect(),
            estimators: Some(vec![EstimatorSpec::new("zero_effect", EstimatorKind::ZeroEffect, EbConfig::default())]),
            eb: EbConfig {
                folds: 3,
                ..EbConfig::default()
            },
            replicates: 4,
            split: default_split(),
            seed: 2,
        };
        let rep = run_benchmark(&cfg).unwrap();
        assert_eq!(rep.records.len(), 4);
        for r in &rep.records {
            assert_eq!((r.in_sample, r.full_sample, r.out_of_sample), (Some(2.0), Some(2.0), Some(2.0)));
        }
        let s = rep.summary("zero_effect").unwrap();
        assert_eq!(s.out_of_sample.unwrap().mean, 2.0);
        assert_eq!(s.out_of_sample.unwrap().sd, Some(0.0));
        assert_eq!(rep, run_benchmark(&cfg).unwrap());
    }

    #[test]
    fn single_replicate_has_no_interval() {
        let cfg = BenchmarkConfig {
            data: constant_effect(),
            estimators: Some(vec![EstimatorSpec::new("mean_effect", EstimatorKind::MeanEffect, EbConfig::default())]),
            eb: EbConfig {
                folds: 3,
                ..EbConfig::default()
            },
            replicates: 1,
            split: default_split(),
            seed: 2,
        };
        let rep = run_benchmark(&cfg).unwrap();
        let i = rep.summaries[0].out_of_sample.unwrap();
        assert!(i.lower.is_none() && i.upper.is_none() && i.sd.is_none());
        assert!(rep.table().contains("mean_effect"));
    }

    #[test]
    fn interval_arithmetic() {
        let i = Interval::from_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((i.sd.unwrap() - sd).abs() < 1e-12);
        assert!((i.upper.unwrap() - (2.5 + 1.96 * sd / 2.0)).abs() < 1e-12);
        let far = Interval::from_values(&[10.0, 11.0]).unwrap();
        assert!(i.separated_from(&far));
        assert!(!i.separated_from(&i));
        assert!(Interval::from_values(&[]).is_none());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = EstimatorSpec::new("a", EstimatorKind::ZeroEffect, EbConfig::default());
        let cfg = BenchmarkConfig {
            data: constant_effect(),
            estimators: Some(vec![e.clone(), e]),
            eb: EbConfig::default(),
            replicates: 1,
            split: default_split(),
            seed: 0,
        };
        assert!(run_benchmark(&cfg).unwrap_err().is_config());
    }

    #[test]
    fn data_source_accepts_either_key_order() {
        let src = constant_effect();
        let text = serde_json::to_string(&src).unwrap();
        assert!(text.starts_with("{\"source\""));
        assert_eq!(serde_json::from_str::<DataSource>(&text).unwrap(), src);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let config = v["config"].take();
        let flipped = serde_json::json!({ "config": config, "source": "generator" });
        assert_eq!(serde_json::from_value::<DataSource>(flipped).unwrap(), src);

        let ihdp: DataSource = serde_json::from_str(r#"{"source": "ihdp_analog"}"#).unwrap();
        assert_eq!(ihdp, DataSource::IhdpAnalog { config: IhdpAnalogConfig::default() });
        assert!(serde_json::from_str::<DataSource>(r#"{"source": "generator"}"#).is_err());
        assert!(serde_json::from_str::<DataSource>(r#"{"source": "ihdp_analog", "extra": 1}"#).is_err());
    }
}

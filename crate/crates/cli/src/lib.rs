//! Subcommand implementations behind the `causalgp` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use causalgp::benchmark::{run_benchmark, BenchmarkConfig, DataSource};
use causalgp::dataset::{load_csv, make_split, write_csv, ObservationalDataset};
use causalgp::estimators::{fit_estimator, EstimatorSpec, FittedEstimator, SavedEstimator};
use causalgp::metrics::{pehe, run_rate_study, RateStudyConfig};
use causalgp::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Parser)]
#[command(name = "causalgp", version, about = "Treatment-effect estimation with Gaussian process priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    Generate(CommonArgs),
    /// Tune and fit an estimator; writes the model artifact and fit report.
    Fit(CommonArgs),
    /// Score a saved model on a dataset.
    Evaluate(CommonArgs),
    /// Measure the decay of out-of-sample PEHE with the sample size.
    RateStudy(CommonArgs),
    /// Compare the estimator roster over replicated datasets.
    Benchmark(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file (TOML if the extension is .toml, JSON otherwise).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 lets the runtime choose).
    #[arg(long, env = "CAUSALGP_THREADS")]
    pub threads: Option<usize>,
    /// Multiplies the replicate count of rate-study and benchmark runs.
    #[arg(long)]
    pub scale: Option<f64>,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Generate(a) | Command::Fit(a) | Command::Evaluate(a) | Command::RateStudy(a) | Command::Benchmark(a) => a,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Fit(_) => "fit",
            Command::Evaluate(_) => "evaluate",
            Command::RateStudy(_) => "rate-study",
            Command::Benchmark(_) => "benchmark",
        }
    }
}

/// Process exit code for an error: 2 configuration, 3 numerical, 4 IO.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 4,
        Error::Numerical { .. } => 3,
        _ => 2,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub data: DataSource,
}

fn default_fractions() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    /// Defaults to `estimator.eb.folds`.
    #[serde(default)]
    pub folds: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: default_fractions(),
            folds: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// CSV path, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parse a configuration; errors carry the path of the offending field.
pub fn parse_config<T: DeserializeOwned>(text: &str, toml_syntax: bool) -> Result<T> {
    if toml_syntax {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::config(format!("at `{}`: {}", e.path(), e.inner().message())))
    } else {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::config(format!("at `{}`: {}", e.path(), e.inner())))
    }
}

fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let toml_syntax = path.extension().is_some_and(|e| e == "toml");
    parse_config(&read_text(path)?, toml_syntax)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// SHA-256 of the compact JSON form of a resolved configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let text = serde_json::to_string(cfg).expect("configurations serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    write_text(path, &text)
}

fn scaled(replicates: usize, scale: Option<f64>) -> Result<usize> {
    match scale {
        None => Ok(replicates),
        Some(s) if s > 0.0 && s.is_finite() => Ok(((replicates as f64 * s).round() as usize).max(1)),
        Some(s) => Err(Error::config(format!("--scale must be positive, got {s}"))),
    }
}

fn set_data_seed(data: &mut DataSource, seed: u64) {
    match data {
        DataSource::Generator { config } => config.seed = seed,
        DataSource::IhdpAnalog { config } => config.seed = seed,
    }
}

fn data_seed(data: &DataSource) -> u64 {
    match data {
        DataSource::Generator { config } => config.seed,
        DataSource::IhdpAnalog { config } => config.seed,
    }
}

fn draw(data: &DataSource) -> Result<ObservationalDataset> {
    match data {
        DataSource::Generator { config } => causalgp::synthgen::generate(config),
        DataSource::IhdpAnalog { config } => causalgp::synthgen::ihdp_analog(config),
    }
}

struct Outcome {
    config: Value,
    hash: String,
    seed: u64,
    outputs: Vec<String>,
}

/// Run one subcommand, writing its outputs and a manifest into `--out`.
pub fn run(cli: &Cli) -> Result<()> {
    let args = cli.command.args();
    if let Some(k) = args.threads {
        // a pool configured earlier in the process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let out = &args.out;

    let outcome = match &cli.command {
        Command::Generate(a) => generate(a, out)?,
        Command::Fit(a) => fit(a, out)?,
        Command::Evaluate(a) => evaluate(a, out)?,
        Command::RateStudy(a) => rate_study(a, out)?,
        Command::Benchmark(a) => benchmark(a, out)?,
    };
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": cli.command.name(),
            "config_hash": outcome.hash,
            "seed": outcome.seed,
            "config": outcome.config,
            "outputs": outcome.outputs,
            "runtime": {
                "started_unix_secs": started,
                "wall_clock_secs": clock.elapsed().as_secs_f64(),
            },
        }),
    )
}

fn generate(a: &CommonArgs, out: &Path) -> Result<Outcome> {
    let mut cfg: GenerateConfig = load_config(&a.config)?;
    if let Some(s) = a.seed {
        set_data_seed(&mut cfg.data, s);
    }
    let ds = draw(&cfg.data)?;
    write_csv(&ds, out.join("dataset.csv"))?;
    Ok(Outcome {
        hash: config_hash(&cfg),
        seed: data_seed(&cfg.data),
        config: serde_json::to_value(&cfg)?,
        outputs: vec!["dataset.csv".into()],
    })
}

fn fit(a: &CommonArgs, out: &Path) -> Result<Outcome> {
    let mut cfg: FitConfig = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = match (&cfg.dataset, &cfg.data) {
        (Some(p), None) => load_csv(resolve(&a.config, p))?,
        (None, Some(d)) => draw(d)?,
        _ => return Err(Error::config("fit needs exactly one of `dataset` (CSV path) or `data` (generator)")),
    };
    let folds = cfg.split.folds.unwrap_or(cfg.estimator.eb.folds);
    cfg.estimator.eb.folds = folds;
    let [ft, fv, fs] = cfg.split.fractions;
    let split = make_split(&ds, (ft, fv, fs), folds, cfg.seed)?;
    let fitted: FittedEstimator = fit_estimator(&cfg.estimator, &ds.factual(), &split)?;

    let hash = config_hash(&cfg);
    let reports = match &fitted {
        FittedEstimator::Gp { report, .. } => json!([report]),
        FittedEstimator::Independent { reports, .. } => json!(reports),
        FittedEstimator::Constant(_) => json!([]),
    };
    write_json(
        &out.join("model.json"),
        &json!({
            "config_hash": hash,
            "seed": cfg.seed,
            "estimator": SavedEstimator::new(&cfg.estimator.id, &fitted),
        }),
    )?;
    write_json(
        &out.join("fit_report.json"),
        &json!({ "config_hash": hash, "seed": cfg.seed, "estimator": cfg.estimator.id, "reports": reports }),
    )?;
    write_json(&out.join("split.json"), &json!({ "config_hash": hash, "seed": cfg.seed, "split": split }))?;
    Ok(Outcome {
        seed: cfg.seed,
        config: serde_json::to_value(&cfg)?,
        hash,
        outputs: vec!["model.json".into(), "fit_report.json".into(), "split.json".into()],
    })
}

fn evaluate(a: &CommonArgs, out: &Path) -> Result<Outcome> {
    let cfg: EvaluateConfig = load_config(&a.config)?;
    let model_path = resolve(&a.config, &cfg.model);
    let wrapper: Value = serde_json::from_str(&read_text(&model_path)?)?;
    let saved = SavedEstimator::from_value(wrapper.get("estimator").cloned().ok_or_else(|| Error::config("model file has no `estimator` entry"))?)?;
    let seed = a.seed.or_else(|| wrapper.get("seed").and_then(Value::as_u64)).unwrap_or(0);
    let ds = load_csv(resolve(&a.config, &cfg.dataset))?;
    let est = saved.estimator();

    let factual_rmse = est
        .predict_factual(ds.features(), ds.treatments())?
        .map(|f| pehe(&f, ds.outcomes()).map(f64::sqrt))
        .transpose()?;
    let pehe_value = match ds.true_ite() {
        Some(t) => Some(pehe(&est.predict_ite(ds.features())?, t)?),
        None => None,
    };
    let hash = config_hash(&cfg);
    write_json(
        &out.join("evaluation.json"),
        &json!({
            "config_hash": hash,
            "seed": seed,
            "estimator": saved.id,
            "n": ds.len(),
            "factual_rmse": factual_rmse,
            "pehe": pehe_value,
            "sqrt_pehe": pehe_value.map(f64::sqrt),
        }),
    )?;
    Ok(Outcome {
        config: serde_json::to_value(&cfg)?,
        hash,
        seed,
        outputs: vec!["evaluation.json".into()],
    })
}

fn rate_study(a: &CommonArgs, out: &Path) -> Result<Outcome> {
    let mut cfg: RateStudyConfig = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.replicates = scaled(cfg.replicates, a.scale)?;
    let result = run_rate_study(&cfg)?;
    let hash = config_hash(&cfg);
    write_json(&out.join("rate_study.json"), &json!({ "config_hash": hash, "seed": cfg.seed, "result": result }))?;
    let mut csv = String::from("n,replicate,pehe\n");
    for r in &result.records {
        csv.push_str(&format!("{},{},{}\n", r.n, r.replicate, r.pehe.map(|p| p.to_string()).unwrap_or_default()));
    }
    write_text(&out.join("rate_study.csv"), &csv)?;
    Ok(Outcome {
        seed: cfg.seed,
        config: serde_json::to_value(&cfg)?,
        hash,
        outputs: vec!["rate_study.json".into(), "rate_study.csv".into()],
    })
}

fn benchmark(a: &CommonArgs, out: &Path) -> Result<Outcome> {
    let mut cfg: BenchmarkConfig = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.replicates = scaled(cfg.replicates, a.scale)?;
    let report = run_benchmark(&cfg)?;
    let hash = config_hash(&cfg);
    write_json(&out.join("benchmark.json"), &json!({ "config_hash": hash, "seed": cfg.seed, "report": report }))?;
    write_text(&out.join("benchmark.txt"), &report.table())?;
    Ok(Outcome {
        seed: cfg.seed,
        config: serde_json::to_value(&cfg)?,
        hash,
        outputs: vec!["benchmark.json".into(), "benchmark.txt".into()],
    })
}

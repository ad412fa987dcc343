//! Observational data: features, binary treatment assignments and factual
//! outcomes, plus the hidden potential-outcome fields that only synthetic data
//! carries.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// One row per subject.
///
/// `counterfactuals` and `true_ite` are never exposed through [`FactualData`],
/// which is the only view estimators receive.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    features: DMatrix<f64>,
    treatments: Vec<u8>,
    outcomes: Vec<f64>,
    counterfactuals: Option<Vec<f64>>,
    true_ite: Option<Vec<f64>>,
}

/// The estimator-facing part of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FactualData {
    pub features: DMatrix<f64>,
    pub treatments: Vec<u8>,
    pub outcomes: Vec<f64>,
}

impl FactualData {
    pub fn new(features: DMatrix<f64>, treatments: Vec<u8>, outcomes: Vec<f64>) -> Result<Self> {
        check_core(&features, &treatments, &outcomes)?;
        Ok(FactualData {
            features,
            treatments,
            outcomes,
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> FactualData {
        FactualData {
            features: self.features.select_rows(idx.iter()),
            treatments: idx.iter().map(|&i| self.treatments[i]).collect(),
            outcomes: idx.iter().map(|&i| self.outcomes[i]).collect(),
        }
    }

    /// Number of subjects in each arm.
    pub fn arm_counts(&self) -> [usize; 2] {
        let treated = self.treatments.iter().filter(|&&w| w == 1).count();
        [self.len() - treated, treated]
    }
}

fn check_core(features: &DMatrix<f64>, treatments: &[u8], outcomes: &[f64]) -> Result<()> {
    let n = features.nrows();
    if n == 0 || features.ncols() == 0 {
        return Err(Error::validation(None, "dataset needs n >= 1 and d >= 1"));
    }
    if treatments.len() != n || outcomes.len() != n {
        return Err(Error::shape(format!(
            "features have {n} rows but treatments/outcomes have {}/{}",
            treatments.len(),
            outcomes.len()
        )));
    }
    for i in 0..n {
        if treatments[i] > 1 {
            return Err(Error::validation(Some(i + 1), format!("treatment {} not in {{0,1}}", treatments[i])));
        }
        if !outcomes[i].is_finite() || features.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(Some(i + 1), "non-finite value"));
        }
    }
    Ok(())
}

impl ObservationalDataset {
    pub fn new(
        features: DMatrix<f64>,
        treatments: Vec<u8>,
        outcomes: Vec<f64>,
        counterfactuals: Option<Vec<f64>>,
        true_ite: Option<Vec<f64>>,
    ) -> Result<Self> {
        check_core(&features, &treatments, &outcomes)?;
        let n = outcomes.len();
        for (name, col) in [("y_cf", &counterfactuals), ("ite", &true_ite)] {
            if let Some(v) = col {
                if v.len() != n {
                    return Err(Error::shape(format!("{name} has length {} but n = {n}", v.len())));
                }
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::validation(Some(i + 1), format!("non-finite {name}")));
                }
            }
        }
        Ok(ObservationalDataset {
            features,
            treatments,
            outcomes,
            counterfactuals,
            true_ite,
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn treatments(&self) -> &[u8] {
        &self.treatments
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn counterfactuals(&self) -> Option<&[f64]> {
        self.counterfactuals.as_deref()
    }

    pub fn true_ite(&self) -> Option<&[f64]> {
        self.true_ite.as_deref()
    }

    /// Estimator-facing view; hidden fields are dropped.
    pub fn factual(&self) -> FactualData {
        FactualData {
            features: self.features.clone(),
            treatments: self.treatments.clone(),
            outcomes: self.outcomes.clone(),
        }
    }

    pub fn without_hidden(&self) -> ObservationalDataset {
        ObservationalDataset {
            counterfactuals: None,
            true_ite: None,
            ..self.clone()
        }
    }

    pub fn subset(&self, idx: &[usize]) -> ObservationalDataset {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        ObservationalDataset {
            features: self.features.select_rows(idx.iter()),
            treatments: idx.iter().map(|&i| self.treatments[i]).collect(),
            outcomes: pick(&self.outcomes),
            counterfactuals: self.counterfactuals.as_ref().map(pick),
            true_ite: self.true_ite.as_ref().map(pick),
        }
    }

    /// Potential outcome under arm `w` for subject `i`, if known.
    pub fn potential_outcome(&self, i: usize, w: u8) -> Option<f64> {
        if self.treatments[i] == w {
            Some(self.outcomes[i])
        } else {
            self.counterfactuals.as_ref().map(|c| c[i])
        }
    }
}

const MANDATORY: [&str; 2] = ["w", "y"];

/// Read a dataset from CSV with header `x1..xd,w,y[,y_cf][,ite]` (any column order).
pub fn load_csv(path: impl AsRef<Path>) -> Result<ObservationalDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<ObservationalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();

    let mut positions: HashMap<String, usize> = HashMap::new();
    for (k, name) in header.iter().enumerate() {
        let name = name.to_string();
        let known = matches!(name.as_str(), "w" | "y" | "y_cf" | "ite")
            || name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()).is_some_and(|j| j >= 1);
        if !known {
            return Err(Error::Parse {
                row: 0,
                column: name,
                message: "unrecognized column".into(),
            });
        }
        if positions.insert(name.clone(), k).is_some() {
            return Err(Error::Parse {
                row: 0,
                column: name,
                message: "duplicate column".into(),
            });
        }
    }
    for col in MANDATORY.iter().copied().chain(std::iter::once("x1")) {
        if !positions.contains_key(col) {
            return Err(Error::Parse {
                row: 0,
                column: col.into(),
                message: "missing mandatory column".into(),
            });
        }
    }
    let d = positions.keys().filter(|k| k.starts_with('x')).count();
    let feature_cols: Vec<usize> = (1..=d)
        .map(|j| {
            positions.get(&format!("x{j}")).copied().ok_or_else(|| Error::Parse {
                row: 0,
                column: format!("x{j}"),
                message: "feature columns must be x1..xd without gaps".into(),
            })
        })
        .collect::<Result<_>>()?;

    let mut data = Vec::new();
    let mut treatments = Vec::new();
    let mut outcomes = Vec::new();
    let mut y_cf = positions.contains_key("y_cf").then(Vec::new);
    let mut ite = positions.contains_key("ite").then(Vec::new);

    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let cell = |name: &str, k: usize| -> Result<f64> {
            let raw = &record[k];
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: name.to_string(),
                message: format!("non-numeric value `{raw}`"),
            })
        };
        for (j, &k) in feature_cols.iter().enumerate() {
            data.push(cell(&format!("x{}", j + 1), k)?);
        }
        let w = cell("w", positions["w"])?;
        if w != 0.0 && w != 1.0 {
            return Err(Error::validation(Some(row), format!("treatment value {w} not in {{0,1}}")));
        }
        treatments.push(w as u8);
        outcomes.push(cell("y", positions["y"])?);
        if let Some(v) = y_cf.as_mut() {
            v.push(cell("y_cf", positions["y_cf"])?);
        }
        if let Some(v) = ite.as_mut() {
            v.push(cell("ite", positions["ite"])?);
        }
    }
    let n = outcomes.len();
    let features = DMatrix::from_row_slice(n, d, &data);
    ObservationalDataset::new(features, treatments, outcomes, y_cf, ite)
}

pub fn write_csv(ds: &ObservationalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_csv_to(ds, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<W: std::io::Write>(ds: &ObservationalDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Serde(e.to_string());
    let mut header: Vec<String> = (1..=ds.dim()).map(|j| format!("x{j}")).collect();
    header.extend(["w".to_string(), "y".to_string()]);
    if ds.counterfactuals.is_some() {
        header.push("y_cf".into());
    }
    if ds.true_ite.is_some() {
        header.push("ite".into());
    }
    wtr.write_record(&header).map_err(io_err)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.treatments[i].to_string());
        rec.push(ds.outcomes[i].to_string());
        if let Some(c) = &ds.counterfactuals {
            rec.push(c[i].to_string());
        }
        if let Some(t) = &ds.true_ite {
            rec.push(t[i].to_string());
        }
        wtr.write_record(&rec).map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::Serde(e.to_string()))
}

/// Per-column affine standardization fitted on a subset of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Standardizer {
            means: vec![0.0; d],
            scales: vec![1.0; d],
        }
    }

    /// Zero mean, unit (population) variance per column; constant columns keep scale 1.
    pub fn fit(features: &DMatrix<f64>) -> Self {
        let n = features.nrows().max(1) as f64;
        let mut means = Vec::with_capacity(features.ncols());
        let mut scales = Vec::with_capacity(features.ncols());
        for col in features.column_iter() {
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            means.push(m);
            scales.push(if v > 1e-24 { v.sqrt() } else { 1.0 });
        }
        Standardizer { means, scales }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "standardizer fitted on d = {} but input has d = {}",
                self.dim(),
                features.ncols()
            )));
        }
        let mut out = features.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.iter_mut().for_each(|x| *x = (*x - self.means[j]) / self.scales[j]);
        }
        Ok(out)
    }
}

/// Train/validation/test partition plus cross-validation folds over the training rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Fold label in `1..=n_folds` for each entry of `train_idx`.
    pub folds: Vec<usize>,
    pub n_folds: usize,
    pub seed: u64,
}

impl SplitPlan {
    /// Stratified fold assignment over a given set of training rows; no validation or test rows.
    pub fn k_fold(train_idx: Vec<usize>, treatments: &[u8], n_folds: usize, seed: u64) -> Result<SplitPlan> {
        if n_folds < 2 {
            return Err(Error::config(format!("fold count must be >= 2, got {n_folds}")));
        }
        if n_folds > train_idx.len() {
            return Err(Error::config(format!(
                "fold count {n_folds} exceeds the {} training subjects",
                train_idx.len()
            )));
        }
        let mut rng = seed::rng(seed, &[seed::tag("folds")]);
        let mut order = Vec::with_capacity(train_idx.len());
        for arm in 0..2u8 {
            let mut members: Vec<usize> = train_idx.iter().copied().filter(|&i| treatments[i] == arm).collect();
            members.shuffle(&mut rng);
            order.extend(members);
        }
        let label: HashMap<usize, usize> = order.iter().enumerate().map(|(k, &i)| (i, k % n_folds + 1)).collect();
        let folds = train_idx.iter().map(|i| label[i]).collect();
        Ok(SplitPlan {
            train_idx,
            valid_idx: Vec::new(),
            test_idx: Vec::new(),
            folds,
            n_folds,
            seed,
        })
    }

    /// Dataset rows of fold `j` (1-based).
    pub fn fold_members(&self, j: usize) -> Vec<usize> {
        self.train_idx.iter().zip(&self.folds).filter(|(_, &f)| f == j).map(|(&i, _)| i).collect()
    }

    /// Training rows outside fold `j`.
    pub fn fold_complement(&self, j: usize) -> Vec<usize> {
        self.train_idx.iter().zip(&self.folds).filter(|(_, &f)| f != j).map(|(&i, _)| i).collect()
    }

    /// Check the structural invariants against a dataset of `n` rows.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train_idx.iter().chain(&self.valid_idx).chain(&self.test_idx) {
            if i >= n {
                return Err(Error::config(format!("split index {i} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::config(format!("split index {i} appears twice")));
            }
        }
        if self.folds.len() != self.train_idx.len() {
            return Err(Error::config("fold labels must align with training indices"));
        }
        for j in 1..=self.n_folds {
            if !self.folds.contains(&j) {
                return Err(Error::config(format!("fold {j} is empty")));
            }
        }
        if let Some(&bad) = self.folds.iter().find(|&&f| f == 0 || f > self.n_folds) {
            return Err(Error::config(format!("fold label {bad} outside 1..={}", self.n_folds)));
        }
        Ok(())
    }
}

/// Seeded train/validation/test split stratified by treatment arm, with
/// `n_folds` stratified folds over the training rows.
pub fn make_split(ds: &ObservationalDataset, fractions: (f64, f64, f64), n_folds: usize, seed: u64) -> Result<SplitPlan> {
    let (ft, fv, fs) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fs <= 0.0 || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions must be positive and sum to 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let n = ds.len();
    let n_train = ((ft * n as f64).round() as usize).min(n);
    let n_valid = ((fv * n as f64).round() as usize).min(n - n_train);
    if n_folds < 2 || n_folds > n_train {
        return Err(Error::config(format!(
            "fold count {n_folds} must lie in 2..={n_train} (training subjects)"
        )));
    }

    // Interleave the shuffled arms by relative position so every prefix is
    // close to the overall treated fraction.
    let mut rng = seed::rng(seed, &[seed::tag("split")]);
    let mut keyed: Vec<(f64, u8, usize)> = Vec::with_capacity(n);
    for arm in 0..2u8 {
        let mut members: Vec<usize> = (0..n).filter(|&i| ds.treatments[i] == arm).collect();
        members.shuffle(&mut rng);
        let m = members.len() as f64;
        keyed.extend(members.into_iter().enumerate().map(|(k, i)| ((k as f64 + 0.5) / m, arm, i)));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();

    let train_idx = order[..n_train].to_vec();
    let valid_idx = order[n_train..n_train + n_valid].to_vec();
    let test_idx = order[n_train + n_valid..].to_vec();
    let mut plan = SplitPlan::k_fold(train_idx, &ds.treatments, n_folds, seed)?;
    plan.valid_idx = valid_idx;
    plan.test_idx = test_idx;
    Ok(plan)
}

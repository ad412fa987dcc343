//! Exact Gaussian process inference for the two prior structures:
//! Type-I (treatment appended to the inputs, one scalar kernel) and Type-II
//! (two-output LMC kernel, one output per arm).
//!
//! Outcomes are centered before fitting (per arm for Type-II, globally for
//! Type-I) and the offsets are added back to every posterior mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::FactualData;
use crate::error::{Error, FactorDiagnostics, Result};
use crate::kernels::{LmcGram, LmcKernelSpec, ScalarKernelSpec, ScaledPoints};

/// Lower bound on every observation-noise variance.
pub const NOISE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "structure", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorStructure {
    /// `kernel` acts on `(x, w)`; its last length-scale belongs to the treatment coordinate.
    TypeI { kernel: ScalarKernelSpec, noise: f64 },
    TypeII {
        kernel: LmcKernelSpec,
        noise0: f64,
        noise1: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    TypeI,
    TypeII,
}

impl PriorStructure {
    pub fn kind(&self) -> StructureKind {
        match self {
            PriorStructure::TypeI { .. } => StructureKind::TypeI,
            PriorStructure::TypeII { .. } => StructureKind::TypeII,
        }
    }

    /// Feature dimension `d` (excluding the treatment coordinate).
    pub fn dim(&self) -> usize {
        match self {
            PriorStructure::TypeI { kernel, .. } => kernel.dim() - 1,
            PriorStructure::TypeII { kernel, .. } => kernel.dim(),
        }
    }

    pub fn noise(&self, task: u8) -> f64 {
        match self {
            PriorStructure::TypeI { noise, .. } => *noise,
            PriorStructure::TypeII { noise0, noise1, .. } => {
                if task == 0 {
                    *noise0
                } else {
                    *noise1
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let noises: &[f64] = match self {
            PriorStructure::TypeI { kernel, noise } => {
                if kernel.dim() < 2 {
                    return Err(Error::config("Type-I kernel needs d + 1 >= 2 length-scales"));
                }
                &[*noise][..]
            }
            PriorStructure::TypeII { noise0, noise1, .. } => &[*noise0, *noise1][..],
        };
        for &s in noises {
            if !(s.is_finite() && s >= NOISE_FLOOR * (1.0 - 1e-12)) {
                return Err(Error::config(format!("noise variance {s} below the floor {NOISE_FLOOR}")));
            }
        }
        Ok(())
    }

    /// Prior covariance matrix of `(f0(x), f1(x))` at a single point.
    pub fn prior_task_cov(&self) -> [[f64; 2]; 2] {
        match self {
            PriorStructure::TypeI { kernel, .. } => {
                let ls = kernel.length_scales();
                let lw = ls[ls.len() - 1];
                let v = kernel.variance();
                let c = kernel.profile(1.0 / (lw * lw));
                [[v, c], [c, v]]
            }
            PriorStructure::TypeII { kernel, .. } => {
                let (a, b) = (kernel.coefficient_a(), kernel.coefficient_b());
                let (v0, v1) = (kernel.k0().variance(), kernel.k1().variance());
                let m = a * v0 + b * v1;
                [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
            }
        }
    }

    fn encode(&self, x: &DMatrix<f64>, tasks: &[u8]) -> Result<Encoded> {
        if x.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "prior expects d = {} features but data has d = {}",
                self.dim(),
                x.ncols()
            )));
        }
        if tasks.len() != x.nrows() {
            return Err(Error::shape("task labels must match the number of points"));
        }
        match self {
            PriorStructure::TypeI { kernel, .. } => {
                let mut aug = x.clone().insert_column(x.ncols(), 0.0);
                for (i, &t) in tasks.iter().enumerate() {
                    aug[(i, x.ncols())] = t as f64;
                }
                Ok(Encoded {
                    first: kernel.scale_points(&aug)?,
                    second: None,
                    tasks: tasks.to_vec(),
                })
            }
            PriorStructure::TypeII { kernel, .. } => Ok(Encoded {
                first: kernel.k0().scale_points(x)?,
                second: Some(kernel.k1().scale_points(x)?),
                tasks: tasks.to_vec(),
            }),
        }
    }
}

/// Points prepared for covariance evaluation under one prior.
#[derive(Debug, Clone)]
struct Encoded {
    first: ScaledPoints,
    second: Option<ScaledPoints>,
    tasks: Vec<u8>,
}

enum CovEval<'a> {
    TypeI(&'a ScalarKernelSpec),
    TypeII(LmcGram<'a>),
}

impl<'a> CovEval<'a> {
    fn new(prior: &'a PriorStructure) -> Self {
        match prior {
            PriorStructure::TypeI { kernel, .. } => CovEval::TypeI(kernel),
            PriorStructure::TypeII { kernel, .. } => CovEval::TypeII(LmcGram::new(kernel)),
        }
    }

    #[inline]
    fn cov(&self, e: &Encoded, i: usize, f: &Encoded, j: usize) -> f64 {
        match self {
            CovEval::TypeI(k) => k.profile(e.first.sq_dist(i, &f.first, j)),
            CovEval::TypeII(g) => {
                let (s, t) = (e.second.as_ref().unwrap(), f.second.as_ref().unwrap());
                g.entry(e.first.sq_dist(i, &f.first, j), s.sq_dist(i, t, j), e.tasks[i], f.tasks[j])
            }
        }
    }

    fn gram_sym(&self, e: &Encoded) -> DMatrix<f64> {
        let n = e.tasks.len();
        let mut g = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = self.cov(e, i, e, j);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    fn cross(&self, e: &Encoded, f: &Encoded) -> DMatrix<f64> {
        DMatrix::from_fn(e.tasks.len(), f.tasks.len(), |i, j| self.cov(e, i, f, j))
    }
}

/// Prior covariance between two labelled point sets (`x` rows with task labels).
pub fn prior_cross_cov(prior: &PriorStructure, x: &DMatrix<f64>, tasks: &[u8], x2: &DMatrix<f64>, tasks2: &[u8]) -> Result<DMatrix<f64>> {
    let (e, f) = (prior.encode(x, tasks)?, prior.encode(x2, tasks2)?);
    Ok(CovEval::new(prior).cross(&e, &f))
}

/// Lower Cholesky factor of `m + jitter I`, escalating jitter by 10x from
/// `1e-10 * trace/n` up to `1e-4 * trace/n`.
pub fn jittered_cholesky(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    if let Some(c) = m.clone().cholesky() {
        return Ok((c.unpack(), 0.0));
    }
    let scale = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    while jitter <= 1e-4 * scale * (1.0 + 1e-9) {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = shifted.cholesky() {
            return Ok((c.unpack(), jitter));
        }
        jitter *= 10.0;
    }
    let diag = m.diagonal();
    Err(Error::Numerical {
        message: format!("covariance matrix of size {n} not factorizable after maximal jitter"),
        diagnostics: Some(Box::new(FactorDiagnostics {
            size: n,
            trace: m.trace(),
            min_diagonal: diag.min(),
            max_diagonal: diag.max(),
            last_jitter: jitter / 10.0,
        })),
    })
}

/// Posterior over `(f0, f1)` at a set of query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean0: Vec<f64>,
    pub mean1: Vec<f64>,
    pub var0: Vec<f64>,
    pub var1: Vec<f64>,
    pub cov01: Vec<f64>,
    pub ite_mean: Vec<f64>,
    pub ite_var: Vec<f64>,
}

impl PosteriorSummary {
    pub fn len(&self) -> usize {
        self.ite_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ite_mean.is_empty()
    }

    /// Assemble from per-arm moments; ITE moments use `v = [-1, 1]`.
    pub fn from_moments(mean0: Vec<f64>, mean1: Vec<f64>, var0: Vec<f64>, var1: Vec<f64>, cov01: Vec<f64>) -> Self {
        let ite_mean = mean1.iter().zip(&mean0).map(|(a, b)| a - b).collect();
        let ite_var = (0..mean0.len()).map(|i| (var0[i] + var1[i] - 2.0 * cov01[i]).max(0.0)).collect();
        PosteriorSummary {
            mean0,
            mean1,
            var0,
            var1,
            cov01,
            ite_mean,
            ite_var,
        }
    }
}

/// A conditioned GP: immutable, reusable for any number of predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "ModelArtifact", try_from = "ModelArtifact")]
pub struct FittedModel {
    prior: PriorStructure,
    features: DMatrix<f64>,
    tasks: Vec<u8>,
    outcomes: Vec<f64>,
    offsets: [f64; 2],
    encoded: Encoded,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    log_marginal_likelihood: f64,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk form of a fitted model. The factor is recomputed on load, which is
/// deterministic, so predictions reproduce exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub prior: PriorStructure,
    pub features: Vec<Vec<f64>>,
    pub treatments: Vec<u8>,
    pub outcomes: Vec<f64>,
}

impl From<FittedModel> for ModelArtifact {
    fn from(m: FittedModel) -> Self {
        ModelArtifact {
            format_version: MODEL_FORMAT_VERSION,
            prior: m.prior,
            features: m.features.row_iter().map(|r| r.iter().copied().collect()).collect(),
            treatments: m.tasks,
            outcomes: m.outcomes,
        }
    }
}

impl TryFrom<ModelArtifact> for FittedModel {
    type Error = Error;
    fn try_from(a: ModelArtifact) -> Result<Self> {
        if a.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::config(format!(
                "model artifact version {} unsupported (expected {MODEL_FORMAT_VERSION})",
                a.format_version
            )));
        }
        let d = a.features.first().map_or(0, Vec::len);
        if a.features.iter().any(|r| r.len() != d) {
            return Err(Error::shape("ragged feature rows in model artifact"));
        }
        let flat: Vec<f64> = a.features.concat();
        let data = FactualData::new(DMatrix::from_row_slice(a.features.len(), d, &flat), a.treatments, a.outcomes)?;
        fit_posterior(&a.prior, &data)
    }
}

fn centering_offsets(kind: StructureKind, tasks: &[u8], y: &[f64]) -> [f64; 2] {
    let global = y.iter().sum::<f64>() / y.len() as f64;
    match kind {
        StructureKind::TypeI => [global, global],
        StructureKind::TypeII => {
            let mut out = [global; 2];
            for (arm, slot) in out.iter_mut().enumerate() {
                let vals: Vec<f64> = tasks.iter().zip(y).filter(|(&t, _)| t as usize == arm).map(|(_, &v)| v).collect();
                if !vals.is_empty() {
                    *slot = vals.iter().sum::<f64>() / vals.len() as f64;
                }
            }
            out
        }
    }
}

/// Condition `prior` on the factual observations in `data`.
pub fn fit_posterior(prior: &PriorStructure, data: &FactualData) -> Result<FittedModel> {
    prior.validate()?;
    if data.is_empty() {
        return Err(Error::config("cannot fit a GP to an empty dataset"));
    }
    let encoded = prior.encode(&data.features, &data.treatments)?;
    let mut k = CovEval::new(prior).gram_sym(&encoded);
    for (i, &t) in data.treatments.iter().enumerate() {
        k[(i, i)] += prior.noise(t);
    }
    let (chol, jitter) = jittered_cholesky(&k)?;
    let offsets = centering_offsets(prior.kind(), &data.treatments, &data.outcomes);
    let centered = DVector::from_iterator(
        data.len(),
        data.outcomes.iter().zip(&data.treatments).map(|(y, &t)| y - offsets[t as usize]),
    );
    let z = chol
        .solve_lower_triangular(&centered)
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    let alpha = chol
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
    let n = data.len() as f64;
    let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let lml = -0.5 * z.norm_squared() - 0.5 * log_det - 0.5 * n * LN_2PI;
    if !lml.is_finite() {
        return Err(Error::numerical("non-finite log marginal likelihood"));
    }
    Ok(FittedModel {
        prior: prior.clone(),
        features: data.features.clone(),
        tasks: data.treatments.clone(),
        outcomes: data.outcomes.clone(),
        offsets,
        encoded,
        chol,
        alpha,
        jitter,
        log_marginal_likelihood: lml,
    })
}

/// Log evidence of the (centered) factual outcomes under `prior`.
pub fn log_marginal_likelihood(prior: &PriorStructure, data: &FactualData) -> Result<f64> {
    fit_posterior(prior, data).map(|m| m.log_marginal_likelihood)
}

impl FittedModel {
    pub fn prior(&self) -> &PriorStructure {
        &self.prior
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn n_train(&self) -> usize {
        self.tasks.len()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn offsets(&self) -> [f64; 2] {
        self.offsets
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    fn cross_to(&self, x: &DMatrix<f64>, tasks: &[u8]) -> Result<DMatrix<f64>> {
        let q = self.prior.encode(x, tasks)?;
        Ok(CovEval::new(&self.prior).cross(&self.encoded, &q))
    }

    /// Posterior mean of `f_{tasks[i]}(x_i)` for each query row.
    pub fn mean_at(&self, x: &DMatrix<f64>, tasks: &[u8]) -> Result<Vec<f64>> {
        let kq = self.cross_to(x, tasks)?;
        let m = kq.tr_mul(&self.alpha);
        Ok(m.iter().zip(tasks).map(|(v, &t)| v + self.offsets[t as usize]).collect())
    }

    /// Posterior mean and variance of `f_{tasks[i]}(x_i)` for each query row.
    pub fn moments_at(&self, x: &DMatrix<f64>, tasks: &[u8]) -> Result<(Vec<f64>, Vec<f64>)> {
        let kq = self.cross_to(x, tasks)?;
        let mean = kq.tr_mul(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&kq)
            .ok_or_else(|| Error::numerical("singular Cholesky factor"))?;
        let prior = self.prior.prior_task_cov();
        let means = mean.iter().zip(tasks).map(|(m, &t)| m + self.offsets[t as usize]).collect();
        let vars = v
            .column_iter()
            .zip(tasks)
            .map(|(col, &t)| (prior[t as usize][t as usize] - col.norm_squared()).max(0.0))
            .collect();
        Ok((means, vars))
    }

    /// Full posterior over both arms and the ITE at each query row.
    pub fn predict(&self, xq: &DMatrix<f64>) -> Result<PosteriorSummary> {
        let m = xq.nrows();
        let k0 = self.cross_to(xq, &vec![0; m])?;
        let k1 = self.cross_to(xq, &vec![1; m])?;
        let v0 = self.chol.solve_lower_triangular(&k0).ok_or_else(|| Error::numerical("singular factor"))?;
        let v1 = self.chol.solve_lower_triangular(&k1).ok_or_else(|| Error::numerical("singular factor"))?;
        let prior = self.prior.prior_task_cov();
        let mean0 = k0.tr_mul(&self.alpha).iter().map(|v| v + self.offsets[0]).collect();
        let mean1 = k1.tr_mul(&self.alpha).iter().map(|v| v + self.offsets[1]).collect();
        let var0 = v0.column_iter().map(|c| (prior[0][0] - c.norm_squared()).max(0.0)).collect();
        let var1 = v1.column_iter().map(|c| (prior[1][1] - c.norm_squared()).max(0.0)).collect();
        let cov01 = v0.column_iter().zip(v1.column_iter()).map(|(a, b)| prior[0][1] - a.dot(&b)).collect();
        Ok(PosteriorSummary::from_moments(mean0, mean1, var0, var1, cov01))
    }
}

//! Semi-synthetic causal data with known potential outcomes.
//!
//! Features are drawn first, then both noisy potential outcomes for every
//! subject, and only then the treatment assignment from the (clamped)
//! propensity. Assignment therefore depends on the features alone and
//! re-drawing it never changes a potential outcome.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationalDataset;
use crate::error::{Error, Result};
use crate::kernels::{ScalarKernelSpec, Smoothness};
use crate::seed;

pub const DEFAULT_RESOLUTION: usize = 64;
const MAX_LATTICE_POINTS: usize = 1_000_000;

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

/// How a response surface is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    /// A Matérn GP sample path drawn on a lattice over the relevant dimensions.
    GpDraw {
        nu: Smoothness,
        length_scale: f64,
        variance: f64,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
    /// `sum_k coeffs[k] * s^k` where `s` is the mean of the relevant coordinates.
    Polynomial { coeffs: Vec<f64> },
    /// `intercept + sum_j weights[j] * x[dims[j]]`.
    Linear {
        weights: Vec<f64>,
        #[serde(default)]
        intercept: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PropensitySpec {
    Constant { gamma: f64 },
    /// `sigmoid(steepness * (weights . x + bias))`; steepness 0 is a randomized trial.
    Logistic { weights: Vec<f64>, bias: f64, steepness: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n: usize,
    pub d: usize,
    pub surface0: SurfaceSpec,
    pub surface1: SurfaceSpec,
    /// 1-based feature indices each surface depends on.
    pub relevant_dims0: Vec<usize>,
    pub relevant_dims1: Vec<usize>,
    pub noise0: f64,
    pub noise1: f64,
    pub propensity: PropensitySpec,
    pub overlap_clamp: [f64; 2],
    pub seed: u64,
    /// Separate seed for the treatment assignment only; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment_seed: Option<u64>,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.d < 1 {
            return Err(Error::config("generator needs n >= 1 and d >= 1"));
        }
        let [lo, hi] = self.overlap_clamp;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::config(format!("overlap_clamp must satisfy 0 < min <= max < 1, got [{lo}, {hi}]")));
        }
        for (name, dims, s) in [("relevant_dims0", &self.relevant_dims0, &self.surface0), ("relevant_dims1", &self.relevant_dims1, &self.surface1)] {
            if dims.is_empty() || dims.iter().any(|&j| j == 0 || j > self.d) {
                return Err(Error::config(format!("{name} must be a nonempty subset of 1..={}", self.d)));
            }
            let mut sorted = dims.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != dims.len() {
                return Err(Error::config(format!("{name} has duplicates")));
            }
            match s {
                SurfaceSpec::Linear { weights, .. } if weights.len() != dims.len() => {
                    return Err(Error::config(format!("linear surface over {name} needs {} weights", dims.len())));
                }
                SurfaceSpec::GpDraw {
                    length_scale,
                    variance,
                    resolution,
                    ..
                } => {
                    if !(*length_scale > 0.0) || !(*variance >= 0.0) || *resolution < 2 {
                        return Err(Error::config(format!(
                            "GP surface over {name} needs length_scale > 0, variance >= 0, resolution >= 2"
                        )));
                    }
                }
                _ => {}
            }
        }
        for s in [self.noise0, self.noise1] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config("noise variances must be >= 0"));
            }
        }
        match &self.propensity {
            PropensitySpec::Constant { gamma } if !(0.0..=1.0).contains(gamma) => {
                Err(Error::config("constant propensity must lie in [0, 1]"))
            }
            PropensitySpec::Logistic { weights, .. } if weights.len() != self.d => {
                Err(Error::config(format!("logistic propensity needs {} weights", self.d)))
            }
            _ => Ok(()),
        }
    }
}

/// A GP sample path stored on a regular lattice over `[0,1]^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSurface {
    resolution: usize,
    /// 0-based feature indices.
    dims: Vec<usize>,
    /// Row-major over the lattice, first dim slowest.
    values: Vec<f64>,
}

impl LatticeSurface {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Multilinear interpolation; coordinates are clamped to `[0, 1]`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let m = self.resolution;
        let k = self.dims.len();
        let mut base = vec![0usize; k];
        let mut frac = vec![0f64; k];
        for (a, &j) in self.dims.iter().enumerate() {
            let t = x[j].clamp(0.0, 1.0) * (m - 1) as f64;
            let cell = (t.floor() as usize).min(m - 2);
            base[a] = cell;
            frac[a] = t - cell as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << k) {
            let mut idx = 0usize;
            let mut w = 1.0;
            for a in 0..k {
                let bit = (corner >> a) & 1;
                idx = idx * m + base[a] + bit;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }
}

/// In-place k-dimensional FFT over a cube of side `side`.
fn fft_nd(data: &mut [Complex<f64>], side: usize, k: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_forward(side);
    let total = data.len();
    let mut line = vec![Complex::new(0.0, 0.0); side];
    for axis in 0..k {
        let stride = side.pow((k - 1 - axis) as u32);
        for start in 0..total {
            // first element of each line along `axis`
            if (start / stride) % side != 0 {
                continue;
            }
            for (t, slot) in line.iter_mut().enumerate() {
                *slot = data[start + t * stride];
            }
            fft.process(&mut line);
            for (t, v) in line.iter().enumerate() {
                data[start + t * stride] = *v;
            }
        }
    }
}

/// Draw a Matérn GP sample on a `resolution^|dims|` lattice over `[0,1]^|dims|`
/// by circulant embedding; off-lattice values are interpolated multilinearly.
pub fn gp_draw_surface(
    nu: Smoothness,
    length_scale: f64,
    variance: f64,
    dims: &[usize],
    resolution: usize,
    seed: u64,
) -> Result<LatticeSurface> {
    let k = dims.len();
    if k == 0 {
        return Err(Error::config("GP surface needs at least one relevant dimension"));
    }
    if resolution < 2 {
        return Err(Error::config("lattice resolution must be >= 2"));
    }
    let points = (resolution as f64).powi(k as i32);
    if points > MAX_LATTICE_POINTS as f64 {
        return Err(Error::config(format!(
            "lattice of {resolution}^{k} points exceeds the cap of {MAX_LATTICE_POINTS}"
        )));
    }
    let m = resolution;
    let n_lattice = m.pow(k as u32);
    if variance == 0.0 {
        return Ok(LatticeSurface {
            resolution,
            dims: dims.to_vec(),
            values: vec![0.0; n_lattice],
        });
    }
    let kernel = ScalarKernelSpec::matern(nu, vec![length_scale], variance)?;
    let h = 1.0 / (m - 1) as f64;
    let mut planner = FftPlanner::new();

    // Grow the periodic embedding until its spectrum is (numerically) nonnegative.
    let mut pad = 1;
    let (side, spectrum) = loop {
        let side = 2 * (m - 1) * pad;
        let total = side.pow(k as u32);
        let mut c = vec![Complex::new(0.0, 0.0); total];
        for (flat, slot) in c.iter_mut().enumerate() {
            let mut rem = flat;
            let mut r2 = 0.0;
            for _ in 0..k {
                let i = rem % side;
                rem /= side;
                let dist = i.min(side - i) as f64 * h;
                r2 += dist * dist;
            }
            *slot = Complex::new(kernel.profile(r2 / (length_scale * length_scale)), 0.0);
        }
        fft_nd(&mut c, side, k, &mut planner);
        let max = c.iter().map(|z| z.re).fold(f64::MIN, f64::max);
        let min = c.iter().map(|z| z.re).fold(f64::MAX, f64::min);
        if min >= -1e-10 * max || pad >= 4 || (2 * (m - 1) * pad * 2).pow(k as u32) > 16 * MAX_LATTICE_POINTS {
            break (side, c.into_iter().map(|z| z.re.max(0.0)).collect::<Vec<f64>>());
        }
        pad *= 2;
    };

    let total = spectrum.len();
    let mut rng = seed::rng(seed, &[seed::tag("gp_surface")]);
    let mut field: Vec<Complex<f64>> = spectrum
        .iter()
        .map(|&lam| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Complex::new(a, b) * (lam / total as f64).sqrt()
        })
        .collect();
    fft_nd(&mut field, side, k, &mut planner);

    let mut values = Vec::with_capacity(n_lattice);
    for flat in 0..n_lattice {
        // lattice index (first dim slowest) -> embedding index
        let mut rem = flat;
        let mut idx = 0usize;
        let mut mult = 1usize;
        for _ in 0..k {
            let i = rem % m;
            rem /= m;
            idx += i * mult;
            mult *= side;
        }
        values.push(field[idx].re);
    }
    Ok(LatticeSurface {
        resolution,
        dims: dims.to_vec(),
        values,
    })
}

/// A materialized response surface.
#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    Lattice(LatticeSurface),
    Polynomial { coeffs: Vec<f64>, dims: Vec<usize> },
    Linear { weights: Vec<f64>, intercept: f64, dims: Vec<usize> },
    /// `exp(sum_j weights[j] * (x[dims[j]] + shift))`.
    ExpLinear { weights: Vec<f64>, shift: f64, dims: Vec<usize> },
}

impl Surface {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Surface::Lattice(l) => l.eval(x),
            Surface::Polynomial { coeffs, dims } => {
                let s = dims.iter().map(|&j| x[j]).sum::<f64>() / dims.len() as f64;
                coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
            }
            Surface::Linear { weights, intercept, dims } => intercept + dims.iter().zip(weights).map(|(&j, w)| w * x[j]).sum::<f64>(),
            Surface::ExpLinear { weights, shift, dims } => dims.iter().zip(weights).map(|(&j, w)| w * (x[j] + shift)).sum::<f64>().exp(),
        }
    }

    fn build(spec: &SurfaceSpec, dims_1based: &[usize], seed: u64) -> Result<Surface> {
        let dims: Vec<usize> = dims_1based.iter().map(|j| j - 1).collect();
        Ok(match spec {
            SurfaceSpec::GpDraw {
                nu,
                length_scale,
                variance,
                resolution,
            } => Surface::Lattice(gp_draw_surface(*nu, *length_scale, *variance, &dims, *resolution, seed)?),
            SurfaceSpec::Polynomial { coeffs } => Surface::Polynomial {
                coeffs: coeffs.clone(),
                dims,
            },
            SurfaceSpec::Linear { weights, intercept } => Surface::Linear {
                weights: weights.clone(),
                intercept: *intercept,
                dims,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Propensity {
    Constant(f64),
    Logistic { weights: Vec<f64>, bias: f64, steepness: f64 },
}

impl Propensity {
    pub fn raw(&self, x: &[f64]) -> f64 {
        match self {
            Propensity::Constant(g) => *g,
            Propensity::Logistic { weights, bias, steepness } => {
                let z = weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias;
                1.0 / (1.0 + (-steepness * z).exp())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSampler {
    Uniform,
    /// Leading `continuous` columns Uniform[0,1], the rest Bernoulli with the given rates.
    Mixed { continuous: usize, rates: Vec<f64> },
}

/// A fully specified generative model: surfaces, propensity, noise and feature law.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub d: usize,
    pub surfaces: [Surface; 2],
    pub noise: [f64; 2],
    pub propensity: Propensity,
    pub clamp: [f64; 2],
    pub features: FeatureSampler,
}

impl SyntheticModel {
    pub fn from_config(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let s0 = Surface::build(&cfg.surface0, &cfg.relevant_dims0, seed::derive(cfg.seed, &[seed::tag("surface"), 0]))?;
        let s1 = Surface::build(&cfg.surface1, &cfg.relevant_dims1, seed::derive(cfg.seed, &[seed::tag("surface"), 1]))?;
        let propensity = match &cfg.propensity {
            PropensitySpec::Constant { gamma } => Propensity::Constant(*gamma),
            PropensitySpec::Logistic { weights, bias, steepness } => Propensity::Logistic {
                weights: weights.clone(),
                bias: *bias,
                steepness: *steepness,
            },
        };
        Ok(SyntheticModel {
            d: cfg.d,
            surfaces: [s0, s1],
            noise: [cfg.noise0, cfg.noise1],
            propensity,
            clamp: cfg.overlap_clamp,
            features: FeatureSampler::Uniform,
        })
    }

    pub fn gamma(&self, x: &[f64]) -> f64 {
        self.propensity.raw(x).clamp(self.clamp[0], self.clamp[1])
    }

    pub fn sample_features(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed, &[seed::tag("features")]);
        let mut data = Vec::with_capacity(n * self.d);
        for _ in 0..n {
            for j in 0..self.d {
                let v = match &self.features {
                    FeatureSampler::Uniform => rng.gen::<f64>(),
                    FeatureSampler::Mixed { continuous, rates } => {
                        if j < *continuous {
                            rng.gen::<f64>()
                        } else {
                            (rng.gen::<f64>() < rates[j - continuous]) as u8 as f64
                        }
                    }
                };
                data.push(v);
            }
        }
        DMatrix::from_row_slice(n, self.d, &data)
    }

    pub fn true_ite(&self, x: &DMatrix<f64>) -> Vec<f64> {
        rows(x).map(|r| self.surfaces[1].eval(&r) - self.surfaces[0].eval(&r)).collect()
    }

    /// Draw `n` subjects. `treatment_seed` re-draws only the assignment.
    pub fn sample(&self, n: usize, seed: u64, treatment_seed: Option<u64>) -> Result<ObservationalDataset> {
        let x = self.sample_features(n, seed);
        let mut noise_rng = seed::rng(seed, &[seed::tag("noise")]);
        let mut treat_rng = seed::rng(treatment_seed.unwrap_or(seed), &[seed::tag("treatment")]);
        let mut treatments = Vec::with_capacity(n);
        let mut outcomes = Vec::with_capacity(n);
        let mut counterfactuals = Vec::with_capacity(n);
        let mut ite = Vec::with_capacity(n);
        for r in rows(&x) {
            let f = [self.surfaces[0].eval(&r), self.surfaces[1].eval(&r)];
            let e0: f64 = noise_rng.sample(StandardNormal);
            let e1: f64 = noise_rng.sample(StandardNormal);
            let y = [f[0] + self.noise[0].sqrt() * e0, f[1] + self.noise[1].sqrt() * e1];
            let w = (treat_rng.gen::<f64>() < self.gamma(&r)) as u8;
            treatments.push(w);
            outcomes.push(y[w as usize]);
            counterfactuals.push(y[1 - w as usize]);
            ite.push(f[1] - f[0]);
        }
        ObservationalDataset::new(x, treatments, outcomes, Some(counterfactuals), Some(ite))
    }
}

fn rows(x: &DMatrix<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    x.row_iter().map(|r| r.iter().copied().collect())
}

/// Draw a dataset from a generator configuration.
pub fn generate(cfg: &GeneratorConfig) -> Result<ObservationalDataset> {
    SyntheticModel::from_config(cfg)?.sample(cfg.n, cfg.seed, cfg.treatment_seed)
}

/// Settings of the IHDP-style analog: 6 uniform and 19 binary features, an
/// exponential control surface, a linear treated surface shifted to an average
/// effect on the treated of 4, and logistic selection into treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IhdpAnalogConfig {
    pub n: usize,
    /// Target share of treated subjects.
    pub treated_fraction: f64,
    pub steepness: f64,
    pub overlap_clamp: [f64; 2],
    pub noise: f64,
    pub seed: u64,
}

impl Default for IhdpAnalogConfig {
    fn default() -> Self {
        IhdpAnalogConfig {
            n: 747,
            treated_fraction: 139.0 / 747.0,
            steepness: 2.0,
            overlap_clamp: [0.02, 0.98],
            noise: 1.0,
            seed: 0,
        }
    }
}

pub const IHDP_CONTINUOUS: usize = 6;
pub const IHDP_BINARY: usize = 19;
const IHDP_EFFECT_ON_TREATED: f64 = 4.0;

impl IhdpAnalogConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.overlap_clamp;
        if self.n < 1 || !(0.0 < self.treated_fraction && self.treated_fraction < 1.0) {
            return Err(Error::config("IHDP analog needs n >= 1 and 0 < treated_fraction < 1"));
        }
        if !(0.0 < lo && lo <= hi && hi < 1.0) || !(self.noise >= 0.0) {
            return Err(Error::config("IHDP analog needs 0 < clamp_min <= clamp_max < 1 and noise >= 0"));
        }
        Ok(())
    }

    /// The generative model for this configuration's seed.
    pub fn model(&self) -> Result<SyntheticModel> {
        self.validate()?;
        let d = IHDP_CONTINUOUS + IHDP_BINARY;
        let rates: Vec<f64> = (0..IHDP_BINARY).map(|j| 0.15 + 0.7 * j as f64 / (IHDP_BINARY - 1) as f64).collect();
        let mut rng = seed::rng(self.seed, &[seed::tag("ihdp_coefficients")]);
        let levels = [0.0, 0.1, 0.2, 0.3, 0.4];
        let pick = WeightedIndex::new([0.6, 0.1, 0.1, 0.1, 0.1]).unwrap();
        let beta: Vec<f64> = (0..d).map(|_| levels[pick.sample(&mut rng)]).collect();
        let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()).collect();
        let means: Vec<f64> = (0..d).map(|j| if j < IHDP_CONTINUOUS { 0.5 } else { rates[j - IHDP_CONTINUOUS] }).collect();
        let logit = (self.treated_fraction / (1.0 - self.treated_fraction)).ln();
        // sigmoid(steepness * (dir . (x - mean)) + logit)
        let bias = -dir.iter().zip(&means).map(|(a, b)| a * b).sum::<f64>()
            + if self.steepness != 0.0 { logit / self.steepness } else { 0.0 };
        let propensity = if self.steepness == 0.0 {
            Propensity::Constant(self.treated_fraction)
        } else {
            Propensity::Logistic {
                weights: dir,
                bias,
                steepness: self.steepness,
            }
        };
        let dims: Vec<usize> = (0..d).collect();
        let mut model = SyntheticModel {
            d,
            surfaces: [
                Surface::ExpLinear {
                    weights: beta.clone(),
                    shift: 0.5,
                    dims: dims.clone(),
                },
                Surface::Linear {
                    weights: beta,
                    intercept: 0.0,
                    dims,
                },
            ],
            noise: [self.noise; 2],
            propensity,
            clamp: self.overlap_clamp,
            features: FeatureSampler::Mixed {
                continuous: IHDP_CONTINUOUS,
                rates,
            },
        };
        // Calibrate the treated intercept on a pilot sample, weighting by propensity.
        let pilot = model.sample_features(20_000, seed::derive(self.seed, &[seed::tag("ihdp_pilot")]));
        let (mut num, mut den) = (0.0, 0.0);
        for r in rows(&pilot) {
            let g = model.gamma(&r);
            num += g * (model.surfaces[1].eval(&r) - model.surfaces[0].eval(&r));
            den += g;
        }
        if let Surface::Linear { intercept, .. } = &mut model.surfaces[1] {
            *intercept = IHDP_EFFECT_ON_TREATED - num / den;
        }
        Ok(model)
    }
}

pub fn ihdp_analog(cfg: &IhdpAnalogConfig) -> Result<ObservationalDataset> {
    cfg.model()?.sample(cfg.n, cfg.seed, None)
}

//! Stationary scalar covariance kernels and the two-output linear model of
//! coregionalization `K(x, x') = A k0(x, x') + B k1(x, x')`.

use std::fmt;

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Half-integer Matérn smoothness levels with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Smoothness {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl Smoothness {
    pub const ALL: [Smoothness; 3] = [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves];

    pub fn value(self) -> f64 {
        match self {
            Smoothness::Half => 0.5,
            Smoothness::ThreeHalves => 1.5,
            Smoothness::FiveHalves => 2.5,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        Smoothness::ALL
            .into_iter()
            .find(|s| (s.value() - v).abs() < 1e-12)
            .ok_or_else(|| Error::config(format!("Matérn smoothness must be one of 0.5, 1.5, 2.5; got {v}")))
    }
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for Smoothness {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Smoothness {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Smoothness::from_value(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Matern,
    SquaredExponential,
}

/// A stationary kernel over ARD-scaled Euclidean distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScalarKernel", into = "RawScalarKernel")]
pub struct ScalarKernelSpec {
    family: KernelFamily,
    nu: Option<Smoothness>,
    length_scales: Vec<f64>,
    variance: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScalarKernel {
    family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<Smoothness>,
    length_scales: Vec<f64>,
    variance: f64,
}

impl TryFrom<RawScalarKernel> for ScalarKernelSpec {
    type Error = Error;
    fn try_from(raw: RawScalarKernel) -> Result<Self> {
        match (raw.family, raw.nu) {
            (KernelFamily::Matern, Some(nu)) => ScalarKernelSpec::matern(nu, raw.length_scales, raw.variance),
            (KernelFamily::Matern, None) => Err(Error::config("Matérn kernel requires `nu`")),
            (KernelFamily::SquaredExponential, None) => ScalarKernelSpec::squared_exponential(raw.length_scales, raw.variance),
            (KernelFamily::SquaredExponential, Some(_)) => Err(Error::config("squared exponential kernel takes no `nu`")),
        }
    }
}

impl From<ScalarKernelSpec> for RawScalarKernel {
    fn from(s: ScalarKernelSpec) -> Self {
        RawScalarKernel {
            family: s.family,
            nu: s.nu,
            length_scales: s.length_scales,
            variance: s.variance,
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl ScalarKernelSpec {
    pub fn matern(nu: Smoothness, length_scales: Vec<f64>, variance: f64) -> Result<Self> {
        Self::build(KernelFamily::Matern, Some(nu), length_scales, variance)
    }

    pub fn squared_exponential(length_scales: Vec<f64>, variance: f64) -> Result<Self> {
        Self::build(KernelFamily::SquaredExponential, None, length_scales, variance)
    }

    fn build(family: KernelFamily, nu: Option<Smoothness>, length_scales: Vec<f64>, variance: f64) -> Result<Self> {
        if length_scales.is_empty() {
            return Err(Error::config("kernel needs at least one length-scale"));
        }
        for &l in &length_scales {
            check_positive("length-scale", l)?;
        }
        check_positive("kernel variance", variance)?;
        Ok(ScalarKernelSpec {
            family,
            nu,
            length_scales,
            variance,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn nu(&self) -> Option<Smoothness> {
        self.nu
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Kernel value as a function of the squared scaled distance.
    #[inline]
    pub fn profile(&self, r2: f64) -> f64 {
        let unit = match (self.family, self.nu) {
            (KernelFamily::SquaredExponential, _) => (-0.5 * r2).exp(),
            (KernelFamily::Matern, Some(Smoothness::Half)) => (-r2.sqrt()).exp(),
            (KernelFamily::Matern, Some(Smoothness::ThreeHalves)) => {
                let s = (3.0 * r2).sqrt();
                (1.0 + s) * (-s).exp()
            }
            (KernelFamily::Matern, Some(Smoothness::FiveHalves)) => {
                let s = (5.0 * r2).sqrt();
                (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
            }
            (KernelFamily::Matern, None) => unreachable!("validated at construction"),
        };
        self.variance * unit
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || x2.len() != self.dim() {
            return Err(Error::shape(format!(
                "kernel has d = {} but inputs have lengths {} and {}",
                self.dim(),
                x.len(),
                x2.len()
            )));
        }
        Ok(self.profile(scaled_sq_dist(&self.length_scales, x, x2)))
    }

    /// Row-major copy of `x` divided by the length-scales.
    pub fn scale_points(&self, x: &DMatrix<f64>) -> Result<ScaledPoints> {
        if x.ncols() != self.dim() {
            return Err(Error::shape(format!("kernel has d = {} but points have d = {}", self.dim(), x.ncols())));
        }
        let (n, d) = x.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend((0..d).map(|j| x[(i, j)] / self.length_scales[j]));
        }
        Ok(ScaledPoints { data, d })
    }

    pub fn with_variance(&self, variance: f64) -> Result<Self> {
        Self::build(self.family, self.nu, self.length_scales.clone(), variance)
    }

    pub fn with_length_scales(&self, length_scales: Vec<f64>) -> Result<Self> {
        Self::build(self.family, self.nu, length_scales, self.variance)
    }
}

#[inline]
fn scaled_sq_dist(ls: &[f64], x: &[f64], x2: &[f64]) -> f64 {
    x.iter().zip(x2).zip(ls).map(|((a, b), l)| ((a - b) / l).powi(2)).sum()
}

/// Points pre-divided by a kernel's length-scales, stored row-major.
#[derive(Debug, Clone)]
pub struct ScaledPoints {
    data: Vec<f64>,
    d: usize,
}

impl ScaledPoints {
    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn sq_dist(&self, i: usize, other: &ScaledPoints, j: usize) -> f64 {
        self.row(i).iter().zip(other.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Two-output LMC kernel.
///
/// The off-diagonal coefficients are stored as correlations `rho_a`, `rho_b`
/// in `[-1, 1]`: `a01 = a10 = rho_a * a00 * sqrt(eps)` and
/// `b01 = b10 = rho_b * sqrt(b11 * eps)`, so both coefficient matrices are
/// positive semi-definite for every admissible parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLmc", into = "RawLmc")]
pub struct LmcKernelSpec {
    k0: ScalarKernelSpec,
    k1: ScalarKernelSpec,
    a00: f64,
    b11: f64,
    rho_a: f64,
    rho_b: f64,
    epsilon: f64,
}

pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLmc {
    k0: ScalarKernelSpec,
    k1: ScalarKernelSpec,
    a00: f64,
    b11: f64,
    rho_a: f64,
    rho_b: f64,
    epsilon: f64,
}

impl TryFrom<RawLmc> for LmcKernelSpec {
    type Error = Error;
    fn try_from(r: RawLmc) -> Result<Self> {
        LmcKernelSpec::new(r.k0, r.k1, r.a00, r.b11, r.rho_a, r.rho_b, r.epsilon)
    }
}

impl From<LmcKernelSpec> for RawLmc {
    fn from(s: LmcKernelSpec) -> Self {
        RawLmc {
            k0: s.k0,
            k1: s.k1,
            a00: s.a00,
            b11: s.b11,
            rho_a: s.rho_a,
            rho_b: s.rho_b,
            epsilon: s.epsilon,
        }
    }
}

impl LmcKernelSpec {
    pub fn new(
        k0: ScalarKernelSpec,
        k1: ScalarKernelSpec,
        a00: f64,
        b11: f64,
        rho_a: f64,
        rho_b: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if k0.dim() != k1.dim() {
            return Err(Error::shape(format!("k0 has d = {} but k1 has d = {}", k0.dim(), k1.dim())));
        }
        check_positive("a00", a00)?;
        check_positive("b11", b11)?;
        check_positive("epsilon", epsilon)?;
        for (name, rho) in [("rho_a", rho_a), ("rho_b", rho_b)] {
            if !(-1.0..=1.0).contains(&rho) {
                return Err(Error::config(format!("{name} must lie in [-1, 1], got {rho}")));
            }
        }
        Ok(LmcKernelSpec {
            k0,
            k1,
            a00,
            b11,
            rho_a,
            rho_b,
            epsilon,
        })
    }

    pub fn k0(&self) -> &ScalarKernelSpec {
        &self.k0
    }

    pub fn k1(&self) -> &ScalarKernelSpec {
        &self.k1
    }

    pub fn a00(&self) -> f64 {
        self.a00
    }

    pub fn b11(&self) -> f64 {
        self.b11
    }

    pub fn rho_a(&self) -> f64 {
        self.rho_a
    }

    pub fn rho_b(&self) -> f64 {
        self.rho_b
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.k0.dim()
    }

    pub fn a01(&self) -> f64 {
        self.rho_a * self.a00 * self.epsilon.sqrt()
    }

    pub fn b01(&self) -> f64 {
        self.rho_b * (self.b11 * self.epsilon).sqrt()
    }

    pub fn coefficient_a(&self) -> Matrix2<f64> {
        let c = self.a01();
        Matrix2::new(self.a00 * self.a00, c, c, self.epsilon)
    }

    pub fn coefficient_b(&self) -> Matrix2<f64> {
        let c = self.b01();
        Matrix2::new(self.epsilon, c, c, self.b11)
    }

    /// Prior variance of output `task` at any point.
    pub fn task_variance(&self, task: u8) -> f64 {
        let (a, b) = (self.coefficient_a(), self.coefficient_b());
        let t = task as usize;
        a[(t, t)] * self.k0.variance() + b[(t, t)] * self.k1.variance()
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<Matrix2<f64>> {
        let k0 = self.k0.eval(x, x2)?;
        let k1 = self.k1.eval(x, x2)?;
        Ok(self.coefficient_a() * k0 + self.coefficient_b() * k1)
    }
}

/// Gram matrix `G[i, j] = [K(x_i, x'_j)]_{tasks[i], tasks2[j]}`.
pub fn gram(spec: &LmcKernelSpec, x: &DMatrix<f64>, x2: &DMatrix<f64>, tasks: &[u8], tasks2: &[u8]) -> Result<DMatrix<f64>> {
    if tasks.len() != x.nrows() || tasks2.len() != x2.nrows() {
        return Err(Error::shape("task labels must match the number of points"));
    }
    if tasks.iter().chain(tasks2).any(|&t| t > 1) {
        return Err(Error::shape("task labels must be 0 or 1"));
    }
    let lmc = LmcGram::new(spec);
    let (p0, p1) = (spec.k0.scale_points(x)?, spec.k1.scale_points(x)?);
    let (q0, q1) = (spec.k0.scale_points(x2)?, spec.k1.scale_points(x2)?);
    Ok(DMatrix::from_fn(x.nrows(), x2.nrows(), |i, j| {
        lmc.entry(p0.sq_dist(i, &q0, j), p1.sq_dist(i, &q1, j), tasks[i], tasks2[j])
    }))
}

/// Precomputed coefficients for fast LMC Gram assembly.
#[derive(Debug, Clone)]
pub(crate) struct LmcGram<'a> {
    spec: &'a LmcKernelSpec,
    a: Matrix2<f64>,
    b: Matrix2<f64>,
}

impl<'a> LmcGram<'a> {
    pub(crate) fn new(spec: &'a LmcKernelSpec) -> Self {
        LmcGram {
            spec,
            a: spec.coefficient_a(),
            b: spec.coefficient_b(),
        }
    }

    #[inline]
    pub(crate) fn entry(&self, r2_0: f64, r2_1: f64, t: u8, t2: u8) -> f64 {
        let (t, t2) = (t as usize, t2 as usize);
        self.a[(t, t2)] * self.spec.k0.profile(r2_0) + self.b[(t, t2)] * self.spec.k1.profile(r2_1)
    }
}

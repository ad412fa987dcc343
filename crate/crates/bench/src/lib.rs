//! Fixtures shared by the benchmarks.

use causalgp::gp_engine::PriorStructure;
use causalgp::kernels::{LmcKernelSpec, ScalarKernelSpec, Smoothness};
use causalgp::FactualData;
use nalgebra::DMatrix;

/// Deterministic two-arm dataset on `[0,1]^d` with alternating treatment.
pub fn toy_data(n: usize, d: usize) -> FactualData {
    let x = DMatrix::from_fn(n, d, |i, j| ((i * 7 + j * 13) % n) as f64 / n as f64);
    let w: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let y = (0..n).map(|i| (6.0 * x[(i, 0)]).sin() + w[i] as f64).collect();
    FactualData::new(x, w, y).expect("valid toy data")
}

pub fn type_two_prior(d: usize) -> PriorStructure {
    let k0 = ScalarKernelSpec::matern(Smoothness::Half, vec![0.3; d], 1.0).expect("kernel");
    let k1 = ScalarKernelSpec::matern(Smoothness::FiveHalves, vec![0.5; d], 1.0).expect("kernel");
    PriorStructure::TypeII {
        kernel: LmcKernelSpec::new(k0, k1, 1.0, 1.0, 0.5, 0.3, 1e-4).expect("lmc"),
        noise0: 0.1,
        noise1: 0.1,
    }
}

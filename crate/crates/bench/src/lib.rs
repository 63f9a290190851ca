//! Fixtures shared by the benchmarks.

use bqrnn_core::{Dataset, NetworkParams, Noise, Scenario, ScenarioSpec, Standardizer};
use nalgebra::DMatrix;

/// Standardized Scenario 1 data with `n` rows and a fixed starting network
/// with `k` hidden units.
pub fn fixture(n: usize, k: usize) -> (Dataset, NetworkParams) {
    let raw = ScenarioSpec::new(Scenario::Linear, Noise::Gaussian, n, 7)
        .generate()
        .expect("scenario parameters are valid");
    let data = Standardizer::fit(&raw).transform(&raw).expect("same width");
    let p = data.p();
    let gamma = DMatrix::from_fn(k, p + 1, |j, c| 0.3 * ((j + 2 * c) as f64).sin());
    let beta = (0..=k).map(|j| 0.5 - 0.1 * j as f64).collect();
    (data, NetworkParams::new(beta, gamma).expect("shapes agree"))
}

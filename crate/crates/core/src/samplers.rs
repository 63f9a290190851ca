//! Seeded random variate generation for the Gibbs sweep.
//!
//! Every draw goes through an [`RngStream`], a ChaCha8 generator keyed by a
//! 64-bit seed and a stream id. ChaCha streams with the same key and different
//! stream ids are independent, which gives each chain its own reproducible
//! sequence without shared state.

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Open01};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, cholesky_solve, solve_upper_transposed};

/// Below this value of `rho1 * rho2` the GIG(1/2) draw uses the Gamma limit.
pub const GIG_DEGENERATE_PRODUCT: f64 = 1e-10;

/// A single-owner random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        Open01.sample(&mut self.rng)
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Exponential draw with unit rate.
    pub fn std_exponential(&mut self) -> f64 {
        Exp1.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn require_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

pub fn normal(rng: &mut RngStream, mean: f64, sd: f64) -> Result<f64> {
    require_positive("sd", sd)?;
    Ok(mean + sd * rng.std_normal())
}

/// Exponential draw parameterized by its rate.
pub fn exponential(rng: &mut RngStream, rate: f64) -> Result<f64> {
    require_positive("rate", rate)?;
    Ok(rng.std_exponential() / rate)
}

/// Gamma draw parameterized by shape and rate.
pub fn gamma(rng: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    require_positive("shape", shape)?;
    require_positive("rate", rate)?;
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Inverse-gamma draw with density proportional to `x^(-shape-1) exp(-rate/x)`.
pub fn inverse_gamma(rng: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    require_positive("shape", shape)?;
    require_positive("rate", rate)?;
    // 1/X ~ Gamma(shape, rate)
    Ok(1.0 / gamma(rng, shape, rate)?)
}

/// Inverse-Gaussian draw (mean `mu`, shape `lambda`) by transformation with
/// multiple roots. The smaller root is formed from the product of roots,
/// which stays accurate when `mu` is large.
pub fn inverse_gaussian(rng: &mut RngStream, mu: f64, lambda: f64) -> Result<f64> {
    require_positive("mean", mu)?;
    require_positive("shape", lambda)?;
    let z = rng.std_normal();
    let y = mu * z * z;
    let larger = mu + mu * y / (2.0 * lambda) + mu / (2.0 * lambda) * (4.0 * lambda * y + y * y).sqrt();
    let smaller = mu * mu / larger;
    if rng.uniform() <= mu / (mu + smaller) {
        Ok(smaller)
    } else {
        Ok(larger)
    }
}

/// Parameters of a generalized inverse Gaussian law with `nu = 1/2`.
///
/// Density is proportional to `x^(-1/2) exp{-(rho1^2 / x + rho2^2 x) / 2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigParams {
    rho1: f64,
    rho2: f64,
}

impl GigParams {
    pub const NU: f64 = 0.5;

    pub fn new(rho1: f64, rho2: f64) -> Result<Self> {
        if !(rho1 >= 0.0) || !rho1.is_finite() {
            return Err(Error::Domain(format!("rho1 must be non-negative, got {rho1}")));
        }
        require_positive("rho2", rho2)?;
        Ok(Self { rho1, rho2 })
    }

    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    /// `E[X] = (rho1/rho2)(1 + 1/(rho1 rho2))`, i.e. `rho1/rho2 + 1/rho2^2`.
    pub fn mean(&self) -> f64 {
        self.rho1 / self.rho2 + 1.0 / (self.rho2 * self.rho2)
    }

    /// `E[1/X] = rho2/rho1` (infinite when `rho1 = 0`).
    pub fn mean_reciprocal(&self) -> f64 {
        self.rho2 / self.rho1
    }

    /// Log of the unnormalized density at `x > 0`.
    pub fn log_kernel(&self, x: f64) -> f64 {
        -0.5 * x.ln() - 0.5 * (self.rho1 * self.rho1 / x + self.rho2 * self.rho2 * x)
    }
}

/// Draw from GIG(1/2, rho1, rho2).
///
/// `1/X` is inverse Gaussian with mean `rho2/rho1` and shape `rho2^2`. When
/// `rho1 * rho2` falls below [`GIG_DEGENERATE_PRODUCT`] the law is replaced by
/// its `rho1 -> 0` limit, Gamma(1/2, rate `rho2^2/2`).
pub fn gig_half(rng: &mut RngStream, p: GigParams) -> f64 {
    if p.rho1 * p.rho2 < GIG_DEGENERATE_PRODUCT {
        let shape_half = Gamma::new(0.5, 2.0 / (p.rho2 * p.rho2)).expect("rho2 validated positive");
        let x: f64 = shape_half.sample(rng);
        // Gamma(1/2) can underflow to exactly zero for huge rates.
        return x.max(f64::MIN_POSITIVE);
    }
    let y = inverse_gaussian(rng, p.rho2 / p.rho1, p.rho2 * p.rho2).expect("parameters validated positive");
    1.0 / y
}

/// Draw from `N(mean, S)` where `S` is `matrix` or, with `is_precision`, its
/// inverse. The precision route never forms the inverse explicitly.
pub fn mvnormal(
    rng: &mut RngStream,
    mean: &DVector<f64>,
    matrix: &DMatrix<f64>,
    is_precision: bool,
) -> Result<DVector<f64>> {
    let m = mean.len();
    if matrix.nrows() != m || matrix.ncols() != m {
        return Err(Error::Dimension(format!(
            "mean has length {m} but matrix is {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let l = cholesky_lower(matrix)?;
    let z = DVector::from_fn(m, |_, _| rng.std_normal());
    let offset = if is_precision {
        // Q = L Lᵀ  =>  L⁻ᵀ z ~ N(0, Q⁻¹)
        solve_upper_transposed(&l, &z)
    } else {
        &l * z
    };
    Ok(mean + offset)
}

/// Draw from the Gaussian with precision `precision` and mean
/// `precision⁻¹ linear`, the canonical form of a conjugate update.
/// Returns the draw together with the mean.
pub fn mvnormal_canonical(
    rng: &mut RngStream,
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = linear.len();
    if precision.nrows() != m || precision.ncols() != m {
        return Err(Error::Dimension(format!(
            "linear term has length {m} but precision is {}x{}",
            precision.nrows(),
            precision.ncols()
        )));
    }
    let l = cholesky_lower(precision)?;
    let mean = cholesky_solve(&l, linear);
    let z = DVector::from_fn(m, |_, _| rng.std_normal());
    let draw = &mean + solve_upper_transposed(&l, &z);
    Ok((draw, mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn same_stream_same_draws() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(
                normal(&mut a, 0.0, 1.0).unwrap().to_bits(),
                normal(&mut b, 0.0, 1.0).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(7, 0);
        let mut b = RngStream::new(7, 1);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn normal_moments() {
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| normal(&mut rng, 0.0, 1.0).unwrap()).collect();
        let (m, _) = mean_and_se(&xs);
        assert!(m.abs() < 3.0 / (n as f64).sqrt());
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = RngStream::new(1, 0);
        assert!(normal(&mut rng, 0.0, 0.0).is_err());
        assert!(inverse_gamma(&mut rng, -1.0, 1.0).is_err());
        assert!(inverse_gamma(&mut rng, 1.0, 0.0).is_err());
        assert!(GigParams::new(1.0, 0.0).is_err());
        assert!(GigParams::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_gamma_moments() {
        let mut rng = RngStream::new(5, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| inverse_gamma(&mut rng, 3.0, 4.0).unwrap())
            .collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - 2.0).abs() < 3.0 * se, "mean {m} se {se}");
        let recip: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
        let (mr, ser) = mean_and_se(&recip);
        assert!((mr - 0.75).abs() < 3.0 * ser, "mean {mr} se {ser}");
    }

    #[test]
    fn gig_moments() {
        for (rho1, rho2, expected) in [(1.0, 1.0, 2.0), (2.0, 1.0, 3.0)] {
            let p = GigParams::new(rho1, rho2).unwrap();
            assert!((p.mean() - expected).abs() < 1e-15);
            let mut rng = RngStream::new(99, 0);
            let xs: Vec<f64> = (0..100_000).map(|_| gig_half(&mut rng, p)).collect();
            let (m, se) = mean_and_se(&xs);
            assert!((m - expected).abs() < 3.0 * se, "({rho1},{rho2}) mean {m} se {se}");
        }
    }

    #[test]
    fn gig_degenerate_branch_is_gamma_limit() {
        // GIG(1/2, 0, rho2) = Gamma(1/2, rate rho2^2/2), mean 1/rho2^2.
        let p = GigParams::new(0.0, 2.0).unwrap();
        let mut rng = RngStream::new(3, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| gig_half(&mut rng, p)).collect();
        assert!(xs.iter().all(|&x| x > 0.0));
        let (m, se) = mean_and_se(&xs);
        assert!((m - 0.25).abs() < 3.0 * se);
    }

    #[test]
    fn gig_stays_accurate_for_tiny_rho1() {
        // rho1 just above the degenerate threshold: mean ~ 1/rho2^2
        let p = GigParams::new(1e-9, 1.0).unwrap();
        let mut rng = RngStream::new(8, 0);
        let xs: Vec<f64> = (0..50_000).map(|_| gig_half(&mut rng, p)).collect();
        assert!(xs.iter().all(|&x| x > 0.0 && x.is_finite()));
        let (m, se) = mean_and_se(&xs);
        assert!((m - p.mean()).abs() < 3.0 * se);
    }

    #[test]
    fn mvnormal_scalar_variance() {
        let mut rng = RngStream::new(21, 0);
        let mean = DVector::from_element(1, 0.0);
        let cov = DMatrix::from_element(1, 1, 4.0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| mvnormal(&mut rng, &mean, &cov, false).unwrap()[0])
            .collect();
        let (m, _) = mean_and_se(&xs);
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
        assert!((var / 4.0 - 1.0).abs() < 0.05);

        let prec = DMatrix::from_element(1, 1, 0.25);
        let ys: Vec<f64> = (0..100_000)
            .map(|_| mvnormal(&mut rng, &mean, &prec, true).unwrap()[0])
            .collect();
        let (m, _) = mean_and_se(&ys);
        let var = ys.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (ys.len() as f64 - 1.0);
        assert!((var / 4.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn mvnormal_component_means() {
        let mut rng = RngStream::new(22, 0);
        let mean = DVector::from_vec(vec![5.0, 5.0]);
        let cov = DMatrix::identity(2, 2);
        let n = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let x = mvnormal(&mut rng, &mean, &cov, false).unwrap();
            sums[0] += x[0];
            sums[1] += x[1];
        }
        for s in sums {
            assert!((s / n as f64 - 5.0).abs() < 3.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn mvnormal_rejects_indefinite() {
        let mut rng = RngStream::new(1, 0);
        let mean = DVector::zeros(2);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            mvnormal(&mut rng, &mean, &m, true),
            Err(Error::NotPositiveDefinite { minor: 2, size: 2 })
        );
    }
}

//! Datasets: heteroscedastic simulation scenarios with their theoretical
//! quantiles, CSV ingestion, train/test splitting and z-score scaling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ald::QuantileSpec;
use crate::error::{Error, Result};
use crate::samplers::RngStream;

/// Scenario-1 location coefficients.
pub const DEFAULT_BETA1: [f64; 3] = [2.0, 4.0, 6.0];
/// Scenario-1 scale coefficients.
pub const DEFAULT_BETA2: [f64; 3] = [0.1, 0.3, 0.5];
/// Upper bound of the U(0, b) covariates.
pub const COVARIATE_UPPER: f64 = 5.0;

/// A regression dataset: inputs `x` (`n x p`, no intercept column) and response `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    feature_names: Vec<String>,
    target_name: String,
    oracle: Option<ScenarioSpec>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|h| format!("x{h}")).collect();
        Self::with_names(x, y, names, "y".into())
    }

    pub fn with_names(
        x: DMatrix<f64>,
        y: DVector<f64>,
        feature_names: Vec<String>,
        target_name: String,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::Size(format!("dataset needs n >= 1 and p >= 1, got {n}x{p}")));
        }
        if y.len() != n {
            return Err(Error::Dimension(format!(
                "x has {n} rows but y has {} entries",
                y.len()
            )));
        }
        if feature_names.len() != p {
            return Err(Error::Dimension(format!(
                "{} feature names for {p} features",
                feature_names.len()
            )));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        Ok(Self {
            x,
            y,
            feature_names,
            target_name,
            oracle: None,
        })
    }

    pub fn with_oracle(mut self, oracle: ScenarioSpec) -> Self {
        self.oracle = Some(oracle);
        self
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn oracle(&self) -> Option<&ScenarioSpec> {
        self.oracle.as_ref()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Theoretical conditional `tau`-quantile at every row, when an oracle is attached.
    pub fn oracle_quantiles(&self, tau: f64) -> Option<Result<Vec<f64>>> {
        let oracle = self.oracle.as_ref()?;
        Some(
            (0..self.n())
                .map(|i| theoretical_quantile(oracle, &self.row(i), tau))
                .collect(),
        )
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Size("subset would be empty".into()));
        }
        let x = DMatrix::from_fn(idx.len(), self.p(), |r, c| self.x[(idx[r], c)]);
        let y = DVector::from_fn(idx.len(), |r, _| self.y[idx[r]]);
        Ok(Self {
            x,
            y,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            oracle: self.oracle.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// `y = xᵀb1 + (xᵀb2) e`
    Linear,
    /// `y = (xᵀb1)^4 + (xᵀb2)^2 e`
    Polynomial,
}

/// Error distribution of a simulation scenario. Exponential noise has mean 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Gaussian,
    Uniform,
    Exponential,
}

impl Noise {
    /// Quantile function of the standardized noise law.
    pub fn quantile(&self, tau: f64) -> f64 {
        match self {
            Noise::Gaussian => Normal::standard().inverse_cdf(tau),
            Noise::Uniform => tau,
            Noise::Exponential => -(-tau).ln_1p(),
        }
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        match self {
            Noise::Gaussian => rng.std_normal(),
            Noise::Uniform => rng.uniform(),
            Noise::Exponential => rng.std_exponential(),
        }
    }
}

macro_rules! lowercase_enum_text {
    ($ty:ty { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(Error::Domain(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

lowercase_enum_text!(Scenario { Linear => "linear", Polynomial => "polynomial" });
lowercase_enum_text!(Noise { Gaussian => "gaussian", Uniform => "uniform", Exponential => "exponential" });

/// A simulation design and its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub noise: Noise,
    pub n: usize,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, noise: Noise, n: usize, seed: u64) -> Self {
        Self {
            scenario,
            noise,
            n,
            beta1: DEFAULT_BETA1.to_vec(),
            beta2: DEFAULT_BETA2.to_vec(),
            seed,
        }
    }

    pub fn p(&self) -> usize {
        self.beta1.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Size("scenario needs n >= 1".into()));
        }
        if self.beta1.is_empty() || self.beta1.len() != self.beta2.len() {
            return Err(Error::Dimension(format!(
                "beta1 has {} entries and beta2 has {}",
                self.beta1.len(),
                self.beta2.len()
            )));
        }
        Ok(())
    }

    /// Location and scale of `y` given `x`: `y = location + scale * e`.
    fn location_scale(&self, x: &[f64]) -> (f64, f64) {
        let a: f64 = x.iter().zip(&self.beta1).map(|(x, b)| x * b).sum();
        let s: f64 = x.iter().zip(&self.beta2).map(|(x, b)| x * b).sum();
        match self.scenario {
            Scenario::Linear => (a, s),
            Scenario::Polynomial => (a.powi(4), s * s),
        }
    }

    /// Generates the data from the stream `(seed, 0)`.
    pub fn generate(&self) -> Result<Dataset> {
        generate_scenario(self, &mut RngStream::new(self.seed, 0))
    }
}

/// Draws `x_ih ~ U(0, 5)` and the response of the scenario.
pub fn generate_scenario(spec: &ScenarioSpec, rng: &mut RngStream) -> Result<Dataset> {
    spec.validate()?;
    let p = spec.p();
    // draw order is (x_i, e_i) per observation
    let mut x = DMatrix::zeros(spec.n, p);
    let mut y = DVector::zeros(spec.n);
    for i in 0..spec.n {
        for h in 0..p {
            x[(i, h)] = COVARIATE_UPPER * rng.uniform();
        }
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let (loc, scale) = spec.location_scale(&row);
        y[i] = loc + scale * spec.noise.draw(rng);
    }
    Ok(Dataset::new(x, y)?.with_oracle(spec.clone()))
}

/// Responses for fixed inputs `x`, drawing only the noise from `rng`.
pub fn generate_responses(spec: &ScenarioSpec, x: &DMatrix<f64>, rng: &mut RngStream) -> Result<Dataset> {
    spec.validate()?;
    if x.ncols() != spec.p() {
        return Err(Error::Dimension(format!(
            "x has {} columns, scenario has {}",
            x.ncols(),
            spec.p()
        )));
    }
    let y = DVector::from_fn(x.nrows(), |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let (loc, scale) = spec.location_scale(&row);
        loc + scale * spec.noise.draw(rng)
    });
    Ok(Dataset::new(x.clone(), y)?.with_oracle(spec.clone()))
}

/// True conditional `tau`-quantile of the scenario at `x`.
pub fn theoretical_quantile(spec: &ScenarioSpec, x: &[f64], tau: f64) -> Result<f64> {
    QuantileSpec::new(tau)?;
    if x.len() != spec.p() {
        return Err(Error::Dimension(format!(
            "x has {} entries, scenario has {}",
            x.len(),
            spec.p()
        )));
    }
    let (loc, scale) = spec.location_scale(x);
    Ok(loc + scale * spec.noise.quantile(tau))
}

/// Reads a numeric CSV file. `target` is a header name, or a 0-based column
/// index when the file has no header (or the name is not found).
pub fn load_csv(path: &Path, target: &str, delimiter: u8, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(has_header)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;

    let headers: Option<Vec<String>> = if has_header {
        let h = reader.headers().map_err(|e| Error::Schema(e.to_string()))?;
        Some(h.iter().map(|s| s.trim().to_string()).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = headers.as_ref().map(Vec::len);
    for record in reader.records() {
        let record = record.map_err(|e| {
            let (row, column) = e.position().map(|p| (p.line() as usize, 0)).unwrap_or((0, 0));
            Error::Parse {
                row,
                column,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 1);
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Parse {
                row: line,
                column: record.len(),
                message: format!("expected {} fields", width.unwrap_or(0)),
            });
        }
        let mut values = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: line,
                column: c + 1,
                message: format!("non-numeric cell '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: c + 1,
                    message: format!("non-finite cell '{cell}'"),
                });
            }
            values.push(v);
        }
        rows.push(values);
    }
    let width = width.unwrap_or(0);
    if rows.is_empty() {
        return Err(Error::Schema(format!("{} has no data rows", path.display())));
    }

    let target_idx = headers
        .as_ref()
        .and_then(|h| h.iter().position(|name| name == target))
        .or_else(|| target.parse::<usize>().ok().filter(|&i| i < width))
        .ok_or_else(|| Error::Schema(format!("target column '{target}' not found")))?;
    if width < 2 {
        return Err(Error::Schema("need at least one feature besides the target".into()));
    }

    let names: Vec<String> = headers.unwrap_or_else(|| (0..width).map(|c| format!("c{c}")).collect());
    let feature_cols: Vec<usize> = (0..width).filter(|&c| c != target_idx).collect();
    let n = rows.len();
    let x = DMatrix::from_fn(n, feature_cols.len(), |i, h| rows[i][feature_cols[h]]);
    let y = DVector::from_fn(n, |i, _| rows[i][target_idx]);
    Dataset::with_names(
        x,
        y,
        feature_cols.iter().map(|&c| names[c].clone()).collect(),
        names[target_idx].clone(),
    )
}

/// Writes features then target, with a header row, using shortest round-trip
/// float formatting.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push(&data.target_name);
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.y[i].to_string());
        w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Size of the training side for `n` rows.
pub fn train_size(n: usize, train_fraction: f64) -> usize {
    // guard against 0.8 * 10 = 7.999...
    ((n as f64) * train_fraction + 1e-9).floor() as usize
}

/// Seeded random partition into (train, test) of sizes
/// `floor(n * fraction)` and the remainder.
pub fn train_test_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let (train_idx, test_idx) = split_indices(data.n(), train_fraction, seed)?;
    Ok((data.subset(&train_idx)?, data.subset(&test_idx)?))
}

/// Index partition used by [`train_test_split`].
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = train_size(n, train_fraction);
    if n_train == 0 || n_train >= n {
        return Err(Error::Size(format!(
            "splitting {n} rows at fraction {train_fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut RngStream::new(seed, 0));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Per-column z-score transform of inputs and response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let (x_mean, x_sd) = (0..data.p()).map(|h| mean_sd(data.x.column(h).iter().copied())).unzip();
        let (y_mean, y_sd) = mean_sd(data.y.iter().copied());
        Self {
            x_mean,
            x_sd,
            y_mean,
            y_sd,
        }
    }

    /// The transform that leaves data unchanged.
    pub fn identity(p: usize) -> Self {
        Self {
            x_mean: vec![0.0; p],
            x_sd: vec![1.0; p],
            y_mean: 0.0,
            y_sd: 1.0,
        }
    }

    pub fn transform_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, h| (x[(i, h)] - self.x_mean[h]) / self.x_sd[h])
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        let y = data.y.map(|v| (v - self.y_mean) / self.y_sd);
        let mut out = Dataset::with_names(
            self.transform_x(&data.x),
            y,
            data.feature_names.clone(),
            data.target_name.clone(),
        )?;
        out.oracle = data.oracle.clone();
        Ok(out)
    }

    pub fn unscale_y(&self, v: f64) -> f64 {
        v * self.y_sd + self.y_mean
    }

    pub fn unscale_y_spread(&self, sd: f64) -> f64 {
        sd * self.y_sd
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn theoretical_quantile_values() {
        let lin_gauss = ScenarioSpec::new(Scenario::Linear, Noise::Gaussian, 10, 0);
        let x = [0.7, 1.9, 3.3];
        let expected: f64 = x.iter().zip(DEFAULT_BETA1).map(|(a, b)| a * b).sum();
        assert_eq!(theoretical_quantile(&lin_gauss, &x, 0.5).unwrap(), expected);

        let lin_unif = ScenarioSpec::new(Scenario::Linear, Noise::Uniform, 10, 0);
        assert_relative_eq!(
            theoretical_quantile(&lin_unif, &[1.0, 1.0, 1.0], 0.95).unwrap(),
            12.855,
            max_relative = 1e-14
        );

        let poly_exp = ScenarioSpec::new(Scenario::Polynomial, Noise::Exponential, 10, 0);
        let q = theoretical_quantile(&poly_exp, &[1.0, 1.0, 1.0], 0.5).unwrap();
        assert_relative_eq!(q, 20736.0 + 0.81 * 2f64.ln(), max_relative = 1e-14);
        assert!((q - 20736.5615).abs() < 1e-4);

        assert!(theoretical_quantile(&lin_gauss, &x, 1.0).is_err());
        assert!(theoretical_quantile(&lin_gauss, &x, 0.0).is_err());
    }

    #[test]
    fn zero_inputs_give_zero_linear_response() {
        for noise in [Noise::Gaussian, Noise::Uniform, Noise::Exponential] {
            let spec = ScenarioSpec::new(Scenario::Linear, noise, 5, 1);
            let d = generate_responses(&spec, &DMatrix::zeros(5, 3), &mut RngStream::new(1, 0)).unwrap();
            assert!(d.y().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = ScenarioSpec::new(Scenario::Polynomial, Noise::Exponential, 50, 42);
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
        let other = ScenarioSpec {
            seed: 43,
            ..spec.clone()
        };
        assert_ne!(spec.generate().unwrap(), other.generate().unwrap());
    }

    #[test]
    fn split_sizes() {
        let (a, b) = split_indices(10, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.8, 3).unwrap(), (a, b));

        let (a, b) = split_indices(506, 0.8, 9).unwrap();
        assert_eq!((a.len(), b.len()), (404, 102));

        assert!(split_indices(3, 0.1, 0).is_err());
        assert!(split_indices(1, 0.99, 0).is_err());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let d = ScenarioSpec::new(Scenario::Linear, Noise::Gaussian, 10, 0)
            .generate()
            .unwrap();
        assert!(train_test_split(&d, 0.0, 1).is_err());
        assert!(train_test_split(&d, 1.0, 1).is_err());
    }

    #[test]
    fn theoretical_quantile_monotone_in_tau() {
        for scenario in [Scenario::Linear, Scenario::Polynomial] {
            for noise in [Noise::Gaussian, Noise::Uniform, Noise::Exponential] {
                let spec = ScenarioSpec::new(scenario, noise, 1, 0);
                let x = [0.2, 3.1, 4.9];
                let mut prev = f64::NEG_INFINITY;
                for i in 1..100 {
                    let q = theoretical_quantile(&spec, &x, i as f64 / 100.0).unwrap();
                    assert!(q >= prev);
                    prev = q;
                }
            }
        }
    }

    #[test]
    fn standardizer_roundtrip() {
        let d = ScenarioSpec::new(Scenario::Linear, Noise::Gaussian, 30, 5)
            .generate()
            .unwrap();
        let s = Standardizer::fit(&d);
        let z = s.transform(&d).unwrap();
        let mean: f64 = z.y().iter().sum::<f64>() / 30.0;
        assert!(mean.abs() < 1e-12);
        for i in 0..30 {
            assert_relative_eq!(s.unscale_y(z.y()[i]), d.y()[i], max_relative = 1e-12);
        }
    }
}

//! Experiment configuration: a TOML file whose every field has a default, plus
//! validation that reports all problems at once, each tagged with its field.

use std::fmt;
use std::path::{Path, PathBuf};

use bqrnn_core::data::{Noise, Scenario, ScenarioSpec, DEFAULT_BETA1, DEFAULT_BETA2};
use bqrnn_core::mcmc::{ChainConfig, Priors};
use bqrnn_core::QrnnOptions;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MODEL_NAMES: [&str; 4] = ["qr", "bqr", "qrnn", "bqrnn"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Prefix of the run directory name.
    pub name: String,
    /// `simulate` or `csv`.
    pub mode: String,
    pub seed: u64,
    pub taus: Vec<f64>,
    pub models: Vec<String>,
    pub hidden_units: usize,
    pub train_fraction: f64,
    /// Fit the network models on z-scored inputs and response.
    pub standardize: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub simulate: SimulateConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvConfig>,
    pub priors: PriorConfig,
    pub chain: ChainSettings,
    pub qrnn: QrnnSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            mode: "simulate".into(),
            seed: 1,
            taus: vec![0.05, 0.5, 0.95],
            models: MODEL_NAMES.iter().map(|s| s.to_string()).collect(),
            hidden_units: 4,
            train_fraction: 0.8,
            standardize: true,
            output_dir: None,
            simulate: SimulateConfig::default(),
            csv: None,
            priors: PriorConfig::default(),
            chain: ChainSettings::default(),
            qrnn: QrnnSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: String,
    pub noise: String,
    pub n: usize,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            scenario: "linear".into(),
            noise: "gaussian".into(),
            n: 200,
            beta1: DEFAULT_BETA1.to_vec(),
            beta2: DEFAULT_BETA2.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvConfig {
    pub path: String,
    pub target: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default = "default_true")]
    pub has_header: bool,
}

fn default_delimiter() -> String {
    ",".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma0_sq: Priors::DEFAULT_SIGMA0_SQ,
            sigma1_sq: Priors::DEFAULT_SIGMA1_SQ,
            a: Priors::DEFAULT_A,
            b: Priors::DEFAULT_B,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSettings {
    pub n_iter: usize,
    pub burn_in_fraction: f64,
    pub thin: usize,
    pub mh_step_sd: f64,
}

impl Default for ChainSettings {
    fn default() -> Self {
        let c = ChainConfig::default();
        Self {
            n_iter: c.n_iter,
            burn_in_fraction: c.burn_in_fraction,
            thin: c.thin,
            mh_step_sd: c.mh_step_sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QrnnSettings {
    pub max_epochs: usize,
    pub tol: f64,
    pub smoothing_eps: f64,
    pub weight_penalty: f64,
    pub n_restarts: usize,
    pub init_scale: f64,
    pub initial_step: f64,
}

impl Default for QrnnSettings {
    fn default() -> Self {
        let o = QrnnOptions::default();
        Self {
            max_epochs: o.max_epochs,
            tol: o.tol,
            smoothing_eps: o.smoothing_eps,
            weight_penalty: o.weight_penalty,
            n_restarts: o.n_restarts,
            init_scale: o.init_scale,
            initial_step: o.initial_step,
        }
    }
}

/// A problem with one configuration field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Where the data comes from, after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Simulate(ScenarioSpec),
    Csv {
        path: PathBuf,
        target: String,
        delimiter: u8,
        has_header: bool,
    },
}

#[derive(Debug, Default)]
struct Checker {
    errors: Vec<FieldError>,
}

impl Checker {
    fn fail(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(FieldError {
            field: field.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.fail(field, format!("must be a positive finite number, got {v}"));
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text; missing fields take their defaults.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::ConfigParse(e.to_string()))
    }

    /// Reads a config file and resolves a relative CSV path against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(csv) = &mut self.csv {
            let p = Path::new(&csv.path);
            if p.is_relative() {
                csv.path = base.join(p).to_string_lossy().into_owned();
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Checks every field and returns the full list of problems.
    pub fn validate(&self) -> Result<DataSource, Vec<FieldError>> {
        let mut c = Checker::default();

        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            c.fail("name", "must be a non-empty name without path separators");
        }
        if self.seed > i64::MAX as u64 {
            c.fail(
                "seed",
                format!("{} does not fit a TOML integer (max {})", self.seed, i64::MAX),
            );
        }
        if self.taus.is_empty() {
            c.fail("taus", "at least one quantile level is required");
        }
        for (i, &t) in self.taus.iter().enumerate() {
            if !(t > 0.0 && t < 1.0) {
                c.fail(&format!("taus[{i}]"), format!("{t} is outside (0, 1)"));
            }
        }
        if self.taus.windows(2).any(|w| !(w[0] < w[1])) {
            c.fail("taus", "values must be strictly increasing");
        }
        if self.models.is_empty() {
            c.fail("models", "at least one model is required");
        }
        for (i, m) in self.models.iter().enumerate() {
            if !MODEL_NAMES.contains(&m.as_str()) {
                c.fail(
                    &format!("models[{i}]"),
                    format!("unknown model '{m}', expected one of {MODEL_NAMES:?}"),
                );
            }
        }
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].contains(m) {
                c.fail(&format!("models[{i}]"), format!("'{m}' is listed twice"));
            }
        }
        if self.hidden_units == 0 && self.models.iter().any(|m| m == "qrnn" || m == "bqrnn") {
            c.fail("hidden_units", "network models need at least one hidden unit");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            c.fail("train_fraction", format!("{} is outside (0, 1)", self.train_fraction));
        }

        let p = &self.priors;
        c.positive("priors.sigma0_sq", p.sigma0_sq);
        c.positive("priors.sigma1_sq", p.sigma1_sq);
        c.positive("priors.a", p.a);
        c.positive("priors.b", p.b);

        let ch = &self.chain;
        let chain = self.chain_config(0);
        if ch.n_iter == 0 {
            c.fail("chain.n_iter", "must be positive");
        }
        if !(0.0..1.0).contains(&ch.burn_in_fraction) {
            c.fail(
                "chain.burn_in_fraction",
                format!("{} is outside [0, 1)", ch.burn_in_fraction),
            );
        }
        if ch.thin == 0 {
            c.fail("chain.thin", "must be positive");
        }
        c.positive("chain.mh_step_sd", ch.mh_step_sd);
        if ch.n_iter > 0 && ch.thin > 0 && (0.0..1.0).contains(&ch.burn_in_fraction) && chain.retained_count() < 2 {
            c.fail(
                "chain.n_iter",
                format!("retains {} draws; at least 2 are needed", chain.retained_count()),
            );
        }

        let q = &self.qrnn;
        if q.max_epochs == 0 {
            c.fail("qrnn.max_epochs", "must be positive");
        }
        if !(q.tol >= 0.0) {
            c.fail("qrnn.tol", format!("must be non-negative, got {}", q.tol));
        }
        c.positive("qrnn.smoothing_eps", q.smoothing_eps);
        if !(q.weight_penalty >= 0.0 && q.weight_penalty.is_finite()) {
            c.fail(
                "qrnn.weight_penalty",
                format!("must be non-negative, got {}", q.weight_penalty),
            );
        }
        if q.n_restarts == 0 {
            c.fail("qrnn.n_restarts", "must be positive");
        }
        c.positive("qrnn.init_scale", q.init_scale);
        c.positive("qrnn.initial_step", q.initial_step);

        let source = match self.mode.as_str() {
            "simulate" => self.check_simulate(&mut c),
            "csv" => self.check_csv(&mut c),
            other => {
                c.fail("mode", format!("unknown mode '{other}', expected 'simulate' or 'csv'"));
                None
            }
        };
        match source {
            Some(s) if c.errors.is_empty() => Ok(s),
            _ => Err(c.errors),
        }
    }

    fn check_simulate(&self, c: &mut Checker) -> Option<DataSource> {
        let s = &self.simulate;
        let scenario: Option<Scenario> = s
            .scenario
            .parse()
            .map_err(|_| {
                c.fail(
                    "simulate.scenario",
                    format!("unknown scenario '{}', expected 'linear' or 'polynomial'", s.scenario),
                )
            })
            .ok();
        let noise: Option<Noise> = s
            .noise
            .parse()
            .map_err(|_| {
                c.fail(
                    "simulate.noise",
                    format!(
                        "unknown noise '{}', expected 'gaussian', 'uniform' or 'exponential'",
                        s.noise
                    ),
                )
            })
            .ok();
        if s.n < 4 {
            c.fail("simulate.n", format!("need at least 4 observations, got {}", s.n));
        }
        if s.beta1.is_empty() {
            c.fail("simulate.beta1", "must not be empty");
        }
        if s.beta1.len() != s.beta2.len() {
            c.fail(
                "simulate.beta2",
                format!("has {} entries but beta1 has {}", s.beta2.len(), s.beta1.len()),
            );
        }
        for (name, v) in [("simulate.beta1", &s.beta1), ("simulate.beta2", &s.beta2)] {
            if v.iter().any(|b| !b.is_finite()) {
                c.fail(name, "entries must be finite");
            }
        }
        let (scenario, noise) = (scenario?, noise?);
        Some(DataSource::Simulate(ScenarioSpec {
            scenario,
            noise,
            n: s.n,
            beta1: s.beta1.clone(),
            beta2: s.beta2.clone(),
            seed: self.data_seed(),
        }))
    }

    fn check_csv(&self, c: &mut Checker) -> Option<DataSource> {
        let Some(csv) = &self.csv else {
            c.fail("csv", "mode 'csv' needs a [csv] table with path and target");
            return None;
        };
        let path = PathBuf::from(&csv.path);
        if !path.is_file() {
            c.fail("csv.path", format!("file {} does not exist", path.display()));
        }
        if csv.target.is_empty() {
            c.fail("csv.target", "must name a column");
        }
        let delimiter = match csv.delimiter.as_bytes() {
            [b] if b.is_ascii() => Some(*b),
            _ => {
                c.fail(
                    "csv.delimiter",
                    format!("must be a single ASCII character, got '{}'", csv.delimiter),
                );
                None
            }
        };
        Some(DataSource::Csv {
            path,
            target: csv.target.clone(),
            delimiter: delimiter?,
            has_header: csv.has_header,
        })
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, "data")
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    /// Seed of the job fitting `model` at quantile level `tau`.
    pub fn job_seed(&self, model: &str, tau: f64) -> u64 {
        derive_seed(self.seed, &format!("{model}@{tau}"))
    }

    pub fn chain_config(&self, seed: u64) -> ChainConfig {
        ChainConfig {
            n_iter: self.chain.n_iter,
            burn_in_fraction: self.chain.burn_in_fraction,
            thin: self.chain.thin,
            mh_step_sd: self.chain.mh_step_sd,
            seed,
            n_chains: 1,
        }
    }

    pub fn qrnn_options(&self, seed: u64) -> QrnnOptions {
        let q = &self.qrnn;
        QrnnOptions {
            max_epochs: q.max_epochs,
            tol: q.tol,
            smoothing_eps: q.smoothing_eps,
            weight_penalty: q.weight_penalty,
            n_restarts: q.n_restarts,
            init_scale: q.init_scale,
            initial_step: q.initial_step,
            seed,
        }
    }

    /// Prior variances and inverse-gamma constants with zero means sized for
    /// `k` hidden units and `p` features (`k = None` for the linear model).
    pub fn priors(&self, k: Option<usize>, p: usize) -> Priors {
        let base = match k {
            Some(k) => Priors::defaults(k, p),
            None => Priors::linear_defaults(p),
        };
        Priors {
            sigma0_sq: self.priors.sigma0_sq,
            sigma1_sq: self.priors.sigma1_sq,
            a: self.priors.a,
            b: self.priors.b,
            ..base
        }
    }

    pub fn wants(&self, model: &str) -> bool {
        self.models.iter().any(|m| m == model)
    }
}

/// SplitMix64 finalizer over the master seed and an FNV-1a hash of `tag`,
/// truncated to 63 bits so the value fits a TOML integer.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) >> 1
}

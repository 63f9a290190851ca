//! End-to-end experiment: load or simulate data, split it, fit every
//! requested model at every quantile level, evaluate, and persist.

use std::fs;
use std::path::{Path, PathBuf};

use bqrnn_core::data::{load_csv, train_test_split, Dataset, Standardizer};
use bqrnn_core::evaluate::{autocorr, ess, mean_check, oracle_error, ChainDiagnostics, EvalReport, OracleEntry, Split};
use bqrnn_core::mcmc::{posterior_quantile_summary, run_chain, ChainOutput, QuantileSummary};
use bqrnn_core::{fit_bqr, fit_linear_qr, fit_qrnn, NetworkParams, QrFit, QrOptions, QrnnFit, QuantileSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, MODEL_NAMES};
use crate::error::CliError;

/// Lags of the log-posterior autocorrelation reported for each chain.
pub const ACF_LAGS: [usize; 4] = [1, 5, 10, 25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSeed {
    pub model: String,
    pub tau: f64,
    pub seed: u64,
}

/// Every seed a run uses, derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub data: u64,
    pub split: u64,
    pub jobs: Vec<JobSeed>,
}

impl SeedRecord {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        let mut jobs = Vec::new();
        for &tau in &cfg.taus {
            // QRNN also seeds the BQRNN starting point, so it gets a seed
            // whenever either network model runs.
            for model in MODEL_NAMES {
                let needed = cfg.wants(model) || (model == "qrnn" && cfg.wants("bqrnn"));
                if needed && model != "qr" {
                    jobs.push(JobSeed {
                        model: model.into(),
                        tau,
                        seed: cfg.job_seed(model, tau),
                    });
                }
            }
        }
        Self {
            master: cfg.seed,
            data: cfg.data_seed(),
            split: cfg.split_seed(),
            jobs,
        }
    }

    fn job(&self, model: &str, tau: f64) -> u64 {
        self.jobs
            .iter()
            .find(|j| j.model == model && j.tau == tau)
            .map(|j| j.seed)
            .expect("seed recorded for every job")
    }
}

/// Resolved configuration plus provenance; re-running it reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub seeds: SeedRecord,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: SeedRecord::for_config(cfg),
            config: cfg.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes to TOML")
    }
}

/// Point fits kept for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FitSummary {
    Qr {
        fit: QrFit,
    },
    Qrnn {
        params: NetworkParams,
        final_loss: f64,
        epochs: usize,
    },
    Chain {
        posterior_mean: Vec<f64>,
        acceptance_rates: Vec<f64>,
        retained: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: String,
    pub tau: f64,
    pub fit: FitSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    /// Transform applied to the data seen by the network models.
    pub standardizer: Standardizer,
    pub fits: Vec<FitRecord>,
}

/// Predictions of one model at one level, on the original response scale.
#[derive(Debug, Clone)]
pub struct JobResult {
    pub model: String,
    pub tau: f64,
    pub train: Predictions,
    pub test: Predictions,
    pub chain: Option<ChainOutput>,
    pub fit: FitSummary,
}

#[derive(Debug, Clone)]
pub struct Predictions {
    pub point: Vec<f64>,
    /// Posterior sd of the conditional quantile, for the Bayesian models.
    pub sd: Option<Vec<f64>>,
}

impl Predictions {
    fn point(point: Vec<f64>) -> Self {
        Self { point, sd: None }
    }

    fn posterior(s: QuantileSummary, scaler: &Standardizer) -> Self {
        Self {
            point: s.mean.iter().map(|&m| scaler.unscale_y(m)).collect(),
            sd: Some(s.sd.iter().map(|&v| scaler.unscale_y_spread(v)).collect()),
        }
    }
}

/// Everything a run computes, before anything is written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    pub report: EvalReport,
    pub fits: Fits,
    pub jobs: Vec<JobResult>,
    pub train: Dataset,
    pub test: Dataset,
}

impl Outcome {
    pub fn job(&self, model: &str, tau: f64) -> Option<&JobResult> {
        self.jobs.iter().find(|j| j.model == model && j.tau == tau)
    }
}

pub fn load_data(source: &DataSource) -> Result<Dataset, CliError> {
    match source {
        DataSource::Simulate(spec) => spec.generate().map_err(CliError::model("simulating data")),
        DataSource::Csv {
            path,
            target,
            delimiter,
            has_header,
        } => load_csv(path, target, *delimiter, *has_header)
            .map_err(CliError::model(format!("loading {}", path.display()))),
    }
}

fn rows(data: &Dataset, scaler: &Standardizer) -> Vec<Vec<f64>> {
    let x = scaler.transform_x(data.x());
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

fn predict_network(
    params: &NetworkParams,
    data: &Dataset,
    scaler: &Standardizer,
) -> Result<Vec<f64>, bqrnn_core::Error> {
    rows(data, scaler)
        .iter()
        .map(|r| params.forward(r).map(|f| scaler.unscale_y(f)))
        .collect()
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    seeds: &'a SeedRecord,
    train: &'a Dataset,
    test: &'a Dataset,
    scaled_train: &'a Dataset,
    scaler: &'a Standardizer,
}

impl Context<'_> {
    fn qrnn(&self, tau: f64) -> Result<QrnnFit, CliError> {
        let spec = QuantileSpec::new(tau).map_err(CliError::model(format!("qrnn at tau={tau}")))?;
        let opts = self.cfg.qrnn_options(self.seeds.job("qrnn", tau));
        fit_qrnn(self.scaled_train, &spec, self.cfg.hidden_units, &opts)
            .map_err(CliError::model(format!("qrnn at tau={tau}")))
    }

    fn run_job(&self, model: &str, tau: f64, qrnn: Option<&QrnnFit>) -> Result<JobResult, CliError> {
        let ctx = format!("{model} at tau={tau}");
        let err = |e| CliError::model(ctx.clone())(e);
        let spec = QuantileSpec::new(tau).map_err(err)?;
        let p = self.train.p();
        let (train, test, chain, fit) = match model {
            "qr" => {
                let fit = fit_linear_qr(self.train, &spec, &QrOptions::default()).map_err(err)?;
                let pred = |d: &Dataset| (0..d.n()).map(|i| fit.predict(&d.row(i))).collect::<Vec<_>>();
                let (tr, te) = (pred(self.train), pred(self.test));
                (
                    Predictions::point(tr),
                    Predictions::point(te),
                    None,
                    FitSummary::Qr { fit },
                )
            }
            "qrnn" => {
                let fit = qrnn.expect("qrnn fitted before its job");
                let tr = predict_network(&fit.params, self.train, self.scaler).map_err(err)?;
                let te = predict_network(&fit.params, self.test, self.scaler).map_err(err)?;
                let summary = FitSummary::Qrnn {
                    params: fit.params.clone(),
                    final_loss: fit.train_loss_trace.last().copied().unwrap_or(f64::NAN),
                    epochs: fit.train_loss_trace.len(),
                };
                (Predictions::point(tr), Predictions::point(te), None, summary)
            }
            "bqr" => {
                let config = self.cfg.chain_config(self.seeds.job("bqr", tau));
                let out = fit_bqr(self.train, &self.cfg.priors(None, p), &spec, &config).map_err(err)?;
                let identity = Standardizer::identity(p);
                let tr = posterior_quantile_summary(&out, self.train.x()).map_err(err)?;
                let te = posterior_quantile_summary(&out, self.test.x()).map_err(err)?;
                let fit = chain_summary(&out);
                (
                    Predictions::posterior(tr, &identity),
                    Predictions::posterior(te, &identity),
                    Some(out),
                    fit,
                )
            }
            "bqrnn" => {
                let init = &qrnn.expect("qrnn fitted before its job").params;
                let config = self.cfg.chain_config(self.seeds.job("bqrnn", tau));
                let priors = self.cfg.priors(Some(self.cfg.hidden_units), p);
                let out = run_chain(self.scaled_train, &priors, &spec, &config, init).map_err(err)?;
                let tr = posterior_quantile_summary(&out, &self.scaler.transform_x(self.train.x())).map_err(err)?;
                let te = posterior_quantile_summary(&out, &self.scaler.transform_x(self.test.x())).map_err(err)?;
                let fit = chain_summary(&out);
                (
                    Predictions::posterior(tr, self.scaler),
                    Predictions::posterior(te, self.scaler),
                    Some(out),
                    fit,
                )
            }
            other => unreachable!("model '{other}' passed validation"),
        };
        Ok(JobResult {
            model: model.into(),
            tau,
            train,
            test,
            chain,
            fit,
        })
    }
}

fn chain_summary(out: &ChainOutput) -> FitSummary {
    FitSummary::Chain {
        posterior_mean: out.posterior_mean_params(),
        acceptance_rates: out.acceptance_rates(),
        retained: out.draws.len(),
    }
}

fn diagnostics(job: &JobResult, out: &ChainOutput) -> ChainDiagnostics {
    let sigma: Vec<f64> = out.draws.iter().map(|d| d.state.sigma).collect();
    let lp: Vec<f64> = out.draws.iter().map(|d| d.log_posterior).collect();
    let mut named = Vec::new();
    for (name, trace) in [("sigma", &sigma), ("log_posterior", &lp)] {
        if let Ok(e) = ess(trace) {
            named.push((name.to_string(), e.ess));
        }
    }
    let lags: Vec<usize> = ACF_LAGS.iter().copied().filter(|&l| l < lp.len()).collect();
    let acf = lags
        .last()
        .and_then(|&max| autocorr(&lp, max).ok())
        .map(|a| lags.iter().map(|&l| a.values[l]).collect())
        .unwrap_or_default();
    ChainDiagnostics {
        model: job.model.clone(),
        tau: job.tau,
        acceptance_rates: out.acceptance_rates(),
        ess: named,
        autocorr_lags: lags,
        autocorr_log_posterior: acf,
    }
}

fn evaluate(jobs: &[JobResult], train: &Dataset, test: &Dataset) -> Result<EvalReport, CliError> {
    let mut report = EvalReport::default();
    let y_train: Vec<f64> = train.y().iter().copied().collect();
    let y_test: Vec<f64> = test.y().iter().copied().collect();
    for job in jobs {
        let ctx = format!("evaluating {} at tau={}", job.model, job.tau);
        let spec = QuantileSpec::new(job.tau).map_err(CliError::model(ctx.clone()))?;
        for (split, y, pred, data) in [
            (Split::Train, &y_train, &job.train, train),
            (Split::Test, &y_test, &job.test, test),
        ] {
            let mcf = mean_check(y, &pred.point, &spec).map_err(CliError::model(ctx.clone()))?;
            report
                .push_mcf(&job.model, job.tau, split, mcf)
                .map_err(CliError::model(ctx.clone()))?;
            if let Some(oracle) = data.oracle_quantiles(job.tau) {
                let oracle = oracle.map_err(CliError::model(ctx.clone()))?;
                let summary = QuantileSummary {
                    mean: pred.point.clone(),
                    sd: pred.sd.clone().unwrap_or_else(|| vec![0.0; pred.point.len()]),
                };
                let (mae, coverage) = oracle_error(&summary, &oracle).map_err(CliError::model(ctx.clone()))?;
                report.oracle.push(OracleEntry {
                    model: job.model.clone(),
                    tau: job.tau,
                    split,
                    mae,
                    coverage: pred.sd.as_ref().map(|_| coverage),
                });
            }
        }
        if let Some(out) = &job.chain {
            report.diagnostics.push(diagnostics(job, out));
        }
    }
    Ok(report)
}

/// Runs the whole experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let source = cfg.validate().map_err(CliError::Invalid)?;
    let manifest = Manifest::new(cfg);
    let seeds = &manifest.seeds;
    let data = load_data(&source)?;
    let (train, test) =
        train_test_split(&data, cfg.train_fraction, seeds.split).map_err(CliError::model("splitting data"))?;
    let scaler = if cfg.standardize {
        Standardizer::fit(&train)
    } else {
        Standardizer::identity(train.p())
    };
    let scaled_train = scaler
        .transform(&train)
        .map_err(CliError::model("standardizing data"))?;
    let ctx = Context {
        cfg,
        seeds,
        train: &train,
        test: &test,
        scaled_train: &scaled_train,
        scaler: &scaler,
    };
    let needs_qrnn = cfg.wants("qrnn") || cfg.wants("bqrnn");
    let models: Vec<&str> = MODEL_NAMES.iter().copied().filter(|m| cfg.wants(m)).collect();

    // Levels are independent; within a level the QRNN fit comes first because
    // it starts the BQRNN chain.
    let per_tau: Vec<Result<Vec<JobResult>, CliError>> = cfg
        .taus
        .par_iter()
        .map(|&tau| {
            let qrnn = if needs_qrnn { Some(ctx.qrnn(tau)?) } else { None };
            models
                .par_iter()
                .map(|m| ctx.run_job(m, tau, qrnn.as_ref()))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect();
    let mut jobs = Vec::new();
    for r in per_tau {
        jobs.extend(r?);
    }

    let report = evaluate(&jobs, &train, &test)?;
    let fits = Fits {
        standardizer: scaler.clone(),
        fits: jobs
            .iter()
            .map(|j| FitRecord {
                model: j.model.clone(),
                tau: j.tau,
                fit: j.fit.clone(),
            })
            .collect(),
    };
    Ok(Outcome {
        manifest,
        report,
        fits,
        jobs,
        train,
        test,
    })
}

/// Creates `root/<name>-<UTC timestamp>`, adding a counter when that
/// directory already exists. Existing directories are never reused.
pub fn create_run_dir(root: &Path, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(root).map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{name}-{stamp}");
    for attempt in 0u32.. {
        let dir = if attempt == 0 {
            root.join(&base)
        } else {
            root.join(format!("{base}-{attempt}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::Io(format!("cannot create {}: {e}", dir.display()))),
        }
    }
    unreachable!("counter exhausted")
}

pub fn chain_file_stem(model: &str, tau: f64) -> String {
    format!("{model}_tau{tau}")
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Writes the manifest, reports, fits and chain files into `dir`.
pub fn persist(outcome: &Outcome, dir: &Path) -> Result<(), CliError> {
    write(&dir.join("manifest.toml"), outcome.manifest.to_toml())?;
    let json = serde_json::to_string_pretty(&outcome.report).map_err(|e| CliError::Io(e.to_string()))?;
    write(&dir.join("report.json"), json + "\n")?;
    write(&dir.join("report.txt"), outcome.report.to_table())?;
    let fits = serde_json::to_string_pretty(&outcome.fits).map_err(|e| CliError::Io(e.to_string()))?;
    write(&dir.join("fits.json"), fits + "\n")?;
    let chains = dir.join("chains");
    if outcome.jobs.iter().any(|j| j.chain.is_some()) {
        fs::create_dir_all(&chains)?;
    }
    for job in &outcome.jobs {
        if let Some(out) = &job.chain {
            let stem = chain_file_stem(&job.model, job.tau);
            let mut buf = Vec::new();
            out.write_csv(&mut buf)
                .map_err(CliError::model(format!("writing chain {stem}")))?;
            write(&chains.join(format!("{stem}.csv")), buf)?;
            write(&chains.join(format!("{stem}_acceptance.txt")), out.acceptance_summary())?;
        }
    }
    Ok(())
}

/// Runs `cfg` and writes a new run directory under `output_root`.
pub fn run_experiment(cfg: &ExperimentConfig, output_root: &Path) -> Result<(PathBuf, Outcome), CliError> {
    let outcome = execute(cfg)?;
    let dir = create_run_dir(output_root, &cfg.name)?;
    persist(&outcome, &dir)?;
    Ok((dir, outcome))
}

/// Input of `run`: a config file, or a manifest from an earlier run.
pub fn load_run_input(path: &Path) -> Result<(ExperimentConfig, Option<Manifest>), CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::ConfigParse(e.to_string()))?;
    if table.contains_key("config") && table.contains_key("seeds") {
        let manifest: Manifest = toml::from_str(&text).map_err(|e| CliError::ConfigParse(e.to_string()))?;
        return Ok((manifest.config.clone(), Some(manifest)));
    }
    Ok((ExperimentConfig::load(path)?, None))
}

/// Checks that a manifest's seeds are the ones this build derives.
pub fn check_manifest(manifest: &Manifest) -> Result<(), CliError> {
    let derived = SeedRecord::for_config(&manifest.config);
    if derived != manifest.seeds {
        return Err(CliError::ConfigParse(
            "manifest seeds do not match the seeds derived from its config; it was written by an incompatible version"
                .into(),
        ));
    }
    Ok(())
}

//! Model comparison by mean check loss, posterior summaries against known
//! conditional quantiles, and chain diagnostics.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::ald::{check_loss, QuantileSpec};
use crate::error::{Error, Result};
use crate::mcmc::QuantileSummary;

/// `(1/m) sum rho_tau(y_i - yhat_i)`.
pub fn mean_check(y: &[f64], yhat: &[f64], spec: &QuantileSpec) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension(format!(
            "y has {} entries, predictions have {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Size("mean check loss of an empty sample".into()));
    }
    let total: f64 = y.iter().zip(yhat).map(|(a, b)| check_loss(a - b, spec)).sum();
    Ok(total / y.len() as f64)
}

/// Mean absolute error of the posterior mean and the fraction of oracle values
/// inside `mean +- 2 sd`.
pub fn oracle_error(summary: &QuantileSummary, oracle: &[f64]) -> Result<(f64, f64)> {
    let m = oracle.len();
    if summary.mean.len() != m || summary.sd.len() != m {
        return Err(Error::Dimension(format!(
            "summary covers {} rows, oracle has {m}",
            summary.mean.len()
        )));
    }
    if m == 0 {
        return Err(Error::Size("oracle comparison over zero rows".into()));
    }
    let mut abs = 0.0;
    let mut inside = 0usize;
    for ((&mu, &sd), &q) in summary.mean.iter().zip(&summary.sd).zip(oracle) {
        abs += (mu - q).abs();
        if (mu - q).abs() <= 2.0 * sd {
            inside += 1;
        }
    }
    Ok((abs / m as f64, inside as f64 / m as f64))
}

/// Effective sample size; `degenerate` marks a trace with zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    pub degenerate: bool,
}

/// Sample autocorrelations at lags `0..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

fn centered(trace: &[f64]) -> (Vec<f64>, f64) {
    let m = trace.len() as f64;
    let mean = trace.iter().sum::<f64>() / m;
    let c: Vec<f64> = trace.iter().map(|t| t - mean).collect();
    let var = c.iter().map(|d| d * d).sum::<f64>() / m;
    (c, var)
}

fn autocovariance(c: &[f64], lag: usize) -> f64 {
    let m = c.len();
    c[..m - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / m as f64
}

pub fn autocorr(trace: &[f64], max_lag: usize) -> Result<Autocorrelation> {
    if max_lag >= trace.len() {
        return Err(Error::Size(format!(
            "max_lag {max_lag} must be below the trace length {}",
            trace.len()
        )));
    }
    let (c, var) = centered(trace);
    if !(var > 0.0) {
        let mut values = vec![f64::NAN; max_lag + 1];
        values[0] = 1.0;
        return Ok(Autocorrelation {
            values,
            degenerate: true,
        });
    }
    let values = (0..=max_lag)
        .map(|lag| if lag == 0 { 1.0 } else { autocovariance(&c, lag) / var })
        .collect();
    Ok(Autocorrelation {
        values,
        degenerate: false,
    })
}

/// Geyer's initial positive sequence estimator, capped at the trace length.
pub fn ess(trace: &[f64]) -> Result<EssEstimate> {
    let m = trace.len();
    if m < 10 {
        return Err(Error::Size(format!("ESS needs at least 10 values, got {m}")));
    }
    let (c, var) = centered(trace);
    if !(var > 0.0) {
        return Ok(EssEstimate {
            ess: m as f64,
            degenerate: true,
        });
    }
    let rho = |lag: usize| if lag == 0 { 1.0 } else { autocovariance(&c, lag) / var };
    // Pair sums Gamma_t = rho(2t) + rho(2t+1) stay positive for reversible
    // chains; truncate at the first non-positive pair.
    let mut sum = 0.0;
    let mut t = 0;
    while 2 * t + 1 < m {
        let pair = rho(2 * t) + rho(2 * t + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        t += 1;
    }
    let tau_int = (2.0 * sum - 1.0).max(1e-12);
    Ok(EssEstimate {
        ess: (m as f64 / tau_int).min(m as f64),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McfEntry {
    pub model: String,
    pub tau: f64,
    pub split: Split,
    pub mcf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub model: String,
    pub tau: f64,
    pub split: Split,
    pub mae: f64,
    /// Only posterior summaries carry a spread, so point estimates leave this empty.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub model: String,
    pub tau: f64,
    pub acceptance_rates: Vec<f64>,
    /// ESS per named trace (sigma, log posterior, ...).
    pub ess: Vec<(String, f64)>,
    pub autocorr_lags: Vec<usize>,
    pub autocorr_log_posterior: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mcf: Vec<McfEntry>,
    pub oracle: Vec<OracleEntry>,
    pub diagnostics: Vec<ChainDiagnostics>,
}

impl EvalReport {
    pub fn push_mcf(&mut self, model: &str, tau: f64, split: Split, mcf: f64) -> Result<()> {
        if !(mcf >= 0.0) {
            return Err(Error::Domain(format!(
                "MCF for {model} at tau={tau} ({split}) is {mcf}"
            )));
        }
        self.mcf.push(McfEntry {
            model: model.to_string(),
            tau,
            split,
            mcf,
        });
        Ok(())
    }

    pub fn mcf_for(&self, model: &str, tau: f64, split: Split) -> Option<f64> {
        self.mcf
            .iter()
            .find(|e| e.model == model && e.tau == tau && e.split == split)
            .map(|e| e.mcf)
    }

    pub fn oracle_for(&self, model: &str, tau: f64, split: Split) -> Option<&OracleEntry> {
        self.oracle
            .iter()
            .find(|e| e.model == model && e.tau == tau && e.split == split)
    }

    fn models(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.mcf {
            if !out.contains(&e.model) {
                out.push(e.model.clone());
            }
        }
        out
    }

    fn taus(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.mcf {
            if !out.contains(&e.tau) {
                out.push(e.tau);
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// Aligned text table: one row per model, one column per (tau, split).
    pub fn to_table(&self) -> String {
        let models = self.models();
        let taus = self.taus();
        let mut header = vec!["model".to_string()];
        for t in &taus {
            for s in [Split::Train, Split::Test] {
                header.push(format!("tau={t} {s}"));
            }
        }
        let mut rows = vec![header];
        for m in &models {
            let mut row = vec![m.clone()];
            for &t in &taus {
                for s in [Split::Train, Split::Test] {
                    row.push(self.mcf_for(m, t, s).map_or("-".into(), |v| format!("{v:.4}")));
                }
            }
            rows.push(row);
        }
        let mut out = String::from("Mean check loss\n");
        out.push_str(&align(&rows));

        if !self.oracle.is_empty() {
            let mut rows = vec![vec![
                "model".to_string(),
                "tau".into(),
                "split".into(),
                "oracle MAE".into(),
                "coverage".into(),
            ]];
            for e in &self.oracle {
                rows.push(vec![
                    e.model.clone(),
                    e.tau.to_string(),
                    e.split.to_string(),
                    format!("{:.4}", e.mae),
                    e.coverage.map_or("-".into(), |c| format!("{c:.3}")),
                ]);
            }
            out.push_str("\nConditional quantile error against the true quantile\n");
            out.push_str(&align(&rows));
        }

        if !self.diagnostics.is_empty() {
            out.push_str("\nChain diagnostics\n");
            for d in &self.diagnostics {
                let _ = write!(out, "{} tau={}:", d.model, d.tau);
                let mut parts = Vec::new();
                if !d.acceptance_rates.is_empty() {
                    let rates: Vec<String> = d.acceptance_rates.iter().map(|r| format!("{r:.3}")).collect();
                    parts.push(format!("acceptance [{}]", rates.join(", ")));
                }
                parts.extend(d.ess.iter().map(|(name, e)| format!("ESS({name})={e:.1}")));
                if !d.autocorr_lags.is_empty() {
                    let acf: Vec<String> = d
                        .autocorr_lags
                        .iter()
                        .zip(&d.autocorr_log_posterior)
                        .map(|(l, v)| format!("{l}:{v:.3}"))
                        .collect();
                    parts.push(format!("ACF(log posterior) [{}]", acf.join(", ")));
                }
                out.push(' ');
                out.push_str(&parts.join(", "));
                out.push('\n');
            }
        }
        out
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

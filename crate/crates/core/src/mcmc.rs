//! Gibbs sampler for the quantile-regression network.
//!
//! One sweep draws, in order:
//!
//! 1. `beta` from its Gaussian full conditional,
//! 2. each hidden row `gamma_j` by one random-walk Metropolis-Hastings step,
//! 3. `sigma` from its inverse-gamma full conditional,
//! 4. every latent `v_i` from GIG(1/2, rho1_i, rho2).
//!
//! With `V = diag(1/v)`, `xi = 1 - 2 tau` and `r = y - L beta - xi v`, the
//! log joint posterior kernel is
//!
//! ```text
//! -(3n/2) ln s - 1/2 sum ln v_i - rᵀVr / (4 s) - tau(1-tau)/s sum v_i
//!   - |beta - beta0|² / (2 s0²) - sum_j |gamma_j - gamma_j0|² / (2 s1²)
//!   - (a/2 + 1) ln s - b / (2 s)
//! ```
//!
//! The linear Bayesian baseline runs the same sweep with `L = (1, x)` and no
//! Metropolis step.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ald::QuantileSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{canonical_sum, combine, design_matrix, DesignMatrix, NetworkParams};
use crate::samplers::{gig_half, inverse_gamma, mvnormal_canonical, GigParams, RngStream};

/// Independent Gaussian priors on `beta` and each `gamma_j`, inverse-gamma
/// `IG(a/2, b/2)` on `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub beta_mean: Vec<f64>,
    pub sigma0_sq: f64,
    /// Row-major `k x (p + 1)`.
    pub gamma_mean: Vec<f64>,
    pub sigma1_sq: f64,
    pub a: f64,
    pub b: f64,
}

impl Priors {
    pub const DEFAULT_SIGMA0_SQ: f64 = 100.0;
    pub const DEFAULT_SIGMA1_SQ: f64 = 100.0;
    pub const DEFAULT_A: f64 = 3.0;
    pub const DEFAULT_B: f64 = 0.1;

    /// Zero prior means with the default variances and `a = 3`, `b = 0.1`.
    pub fn defaults(k: usize, p: usize) -> Self {
        Self {
            beta_mean: vec![0.0; k + 1],
            sigma0_sq: Self::DEFAULT_SIGMA0_SQ,
            gamma_mean: vec![0.0; k * (p + 1)],
            sigma1_sq: Self::DEFAULT_SIGMA1_SQ,
            a: Self::DEFAULT_A,
            b: Self::DEFAULT_B,
        }
    }

    /// Defaults for the linear model with `p` features (`p + 1` coefficients).
    pub fn linear_defaults(p: usize) -> Self {
        Self::defaults(p, 0).with_gamma_mean(Vec::new())
    }

    fn with_gamma_mean(mut self, gamma_mean: Vec<f64>) -> Self {
        self.gamma_mean = gamma_mean;
        self
    }

    /// Same variances and shape/rate with zero means sized for `shape`.
    pub fn resized(&self, shape: ModelShape) -> Self {
        let (nb, ng) = shape.param_lens();
        Self {
            beta_mean: vec![0.0; nb],
            gamma_mean: vec![0.0; ng],
            ..self.clone()
        }
    }

    fn validate(&self, shape: ModelShape) -> Result<()> {
        for (name, v) in [
            ("sigma0_sq", self.sigma0_sq),
            ("sigma1_sq", self.sigma1_sq),
            ("a", self.a),
            ("b", self.b),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("prior {name} must be positive, got {v}")));
            }
        }
        let (nb, ng) = shape.param_lens();
        if self.beta_mean.len() != nb || self.gamma_mean.len() != ng {
            return Err(Error::Dimension(format!(
                "priors sized ({}, {}) but model needs ({nb}, {ng})",
                self.beta_mean.len(),
                self.gamma_mean.len()
            )));
        }
        Ok(())
    }
}

/// Iteration plan of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in_fraction: f64,
    pub thin: usize,
    pub mh_step_sd: f64,
    pub seed: u64,
    pub n_chains: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 100_000,
            burn_in_fraction: 0.5,
            thin: 10,
            mh_step_sd: 0.01,
            seed: 0,
            n_chains: 1,
        }
    }
}

impl ChainConfig {
    pub fn burn_in(&self) -> usize {
        (self.n_iter as f64 * self.burn_in_fraction).floor() as usize
    }

    /// `floor((n_iter - burn_in) / thin)`.
    pub fn retained_count(&self) -> usize {
        if self.thin == 0 {
            return 0;
        }
        self.n_iter.saturating_sub(self.burn_in()) / self.thin
    }

    /// Whether sweep `t` (1-based) is kept.
    pub fn is_retained(&self, t: usize) -> bool {
        let burn = self.burn_in();
        t > burn && (t - burn).is_multiple_of(self.thin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::Domain("n_iter must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::Domain(format!(
                "burn_in_fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        if self.thin == 0 {
            return Err(Error::Domain("thin must be positive".into()));
        }
        if !(self.mh_step_sd > 0.0 && self.mh_step_sd.is_finite()) {
            return Err(Error::Domain(format!(
                "mh_step_sd must be positive, got {}",
                self.mh_step_sd
            )));
        }
        if self.n_chains == 0 {
            return Err(Error::Domain("n_chains must be positive".into()));
        }
        if self.retained_count() == 0 {
            return Err(Error::Domain(format!(
                "n_iter={} with burn-in {} and thin {} retains no draws",
                self.n_iter,
                self.burn_in(),
                self.thin
            )));
        }
        Ok(())
    }
}

/// Which conditional-quantile model a chain samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelShape {
    Network { k: usize, p: usize },
    Linear { p: usize },
}

impl ModelShape {
    /// Lengths of (beta, flat gamma).
    pub fn param_lens(&self) -> (usize, usize) {
        match *self {
            ModelShape::Network { k, p } => (k + 1, k * (p + 1)),
            ModelShape::Linear { p } => (p + 1, 0),
        }
    }

    pub fn p(&self) -> usize {
        match *self {
            ModelShape::Network { p, .. } | ModelShape::Linear { p } => p,
        }
    }

    /// Number of Metropolis blocks per sweep.
    pub fn hidden_units(&self) -> usize {
        match *self {
            ModelShape::Network { k, .. } => k,
            ModelShape::Linear { .. } => 0,
        }
    }

    fn design(&self, x: &DMatrix<f64>, gamma: &[f64]) -> Result<DesignMatrix> {
        match *self {
            ModelShape::Network { k, p } => design_matrix(x, &DMatrix::from_row_slice(k, p + 1, gamma)),
            ModelShape::Linear { .. } => Ok(DesignMatrix::linear(x)),
        }
    }
}

/// One state of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub beta: Vec<f64>,
    /// Row-major `k x (p + 1)`; empty for the linear model.
    pub gamma: Vec<f64>,
    pub sigma: f64,
    pub v: Vec<f64>,
}

impl LatentState {
    /// `sigma = 1` and `v = 1` around the given network weights.
    pub fn initial(params: &NetworkParams, n: usize) -> Self {
        Self {
            beta: params.beta().to_vec(),
            gamma: params.gamma_flat().to_vec(),
            sigma: 1.0,
            v: vec![1.0; n],
        }
    }

    pub fn network(&self, k: usize, p: usize) -> Result<NetworkParams> {
        let mut flat = self.beta.clone();
        flat.extend_from_slice(&self.gamma);
        NetworkParams::from_flat(k, p, &flat)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.v.len() != n {
            return Err(Error::Dimension(format!("v has length {} but n = {n}", self.v.len())));
        }
        if let Some(i) = self.v.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("v[{i}] = {} is not positive", self.v[i])));
        }
        Ok(())
    }
}

/// A retained state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    /// 1-based sweep index.
    pub iteration: usize,
    pub state: LatentState,
    pub log_posterior: f64,
}

/// Result of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub shape: ModelShape,
    pub config: ChainConfig,
    pub stream_id: u64,
    pub draws: Vec<Draw>,
    /// Accepted Metropolis proposals per hidden unit.
    pub accept_counts: Vec<u64>,
    /// Metropolis proposals per hidden unit.
    pub proposal_counts: Vec<u64>,
    /// Log posterior kernel after every sweep.
    pub log_posterior_trace: Vec<f64>,
}

impl ChainOutput {
    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.accept_counts
            .iter()
            .zip(&self.proposal_counts)
            .map(|(&a, &p)| if p == 0 { 0.0 } else { a as f64 / p as f64 })
            .collect()
    }

    /// Conditional quantile predicted by draw `d` at input `x`.
    pub fn predict_draw(&self, d: &Draw, x: &[f64]) -> Result<f64> {
        match self.shape {
            ModelShape::Network { k, p } => d.state.network(k, p)?.forward(x),
            ModelShape::Linear { p } => {
                if x.len() != p {
                    return Err(Error::Dimension(format!(
                        "input has {} features, model has {p}",
                        x.len()
                    )));
                }
                let mut eta = Vec::with_capacity(p + 1);
                eta.push(1.0);
                eta.extend_from_slice(x);
                Ok(combine(&d.state.beta, &eta))
            }
        }
    }

    /// Posterior mean of the flattened `(beta, gamma)` vector.
    pub fn posterior_mean_params(&self) -> Vec<f64> {
        let m = self.draws.len() as f64;
        let mut acc = vec![
            0.0;
            self.draws
                .first()
                .map_or(0, |d| d.state.beta.len() + d.state.gamma.len())
        ];
        for d in &self.draws {
            for (a, v) in acc.iter_mut().zip(d.state.beta.iter().chain(&d.state.gamma)) {
                *a += v / m;
            }
        }
        acc
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut cols = vec!["iteration".to_string(), "sigma".to_string()];
        let (nb, _) = self.shape.param_lens();
        cols.extend((0..nb).map(|j| format!("beta_{j}")));
        if let ModelShape::Network { k, p } = self.shape {
            for j in 1..=k {
                cols.extend((0..=p).map(|h| format!("gamma_{j}_{h}")));
            }
        }
        cols.push("log_posterior".into());
        cols
    }

    /// One CSV row per retained draw: iteration, sigma, beta, gamma (row-major), log posterior.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(self.column_names()).map_err(io)?;
        for d in &self.draws {
            let mut rec = vec![d.iteration.to_string(), d.state.sigma.to_string()];
            rec.extend(d.state.beta.iter().chain(&d.state.gamma).map(f64::to_string));
            rec.push(d.log_posterior.to_string());
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text Metropolis acceptance summary, one line per hidden unit.
    pub fn acceptance_summary(&self) -> String {
        let mut s = format!(
            "sweeps {} burn_in {} thin {} retained {} step_sd {}\n",
            self.config.n_iter,
            self.config.burn_in(),
            self.config.thin,
            self.draws.len(),
            self.config.mh_step_sd
        );
        for (j, ((a, p), r)) in self
            .accept_counts
            .iter()
            .zip(&self.proposal_counts)
            .zip(self.acceptance_rates())
            .enumerate()
        {
            s.push_str(&format!("gamma_{} accepted {a} of {p} rate {r:.4}\n", j + 1));
        }
        s
    }
}

/// Quadratic form `rᵀVr` with `r = y - fitted - xi v`.
fn quadratic_form(y: &DVector<f64>, fitted: &DVector<f64>, v: &[f64], xi: f64) -> f64 {
    let mut q = 0.0;
    for i in 0..y.len() {
        let r = y[i] - fitted[i] - xi * v[i];
        q += r * r / v[i];
    }
    q
}

/// Squared distance of each gamma row from its prior mean, canonically summed.
fn gamma_prior_ss(gamma: &[f64], gamma_mean: &[f64], width: usize) -> f64 {
    if gamma.is_empty() {
        return 0.0;
    }
    let mut rows: Vec<f64> = gamma
        .chunks(width)
        .zip(gamma_mean.chunks(width))
        .map(|(g, m)| g.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    canonical_sum(&mut rows)
}

fn beta_prior_ss(beta: &[f64], mean: &[f64]) -> f64 {
    let d0 = beta[0] - mean[0];
    let mut rest: Vec<f64> = beta[1..]
        .iter()
        .zip(&mean[1..])
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    d0 * d0 + canonical_sum(&mut rest)
}

/// Components of the log posterior kernel, in the order they are summed.
struct LogPosteriorParts {
    likelihood: f64,
    beta_prior: f64,
    gamma_prior: f64,
    sigma_prior: f64,
}

impl LogPosteriorParts {
    fn total(&self) -> f64 {
        self.likelihood + self.beta_prior + self.gamma_prior + self.sigma_prior
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("likelihood", self.likelihood),
            ("beta prior", self.beta_prior),
            ("gamma prior", self.gamma_prior),
            ("sigma prior", self.sigma_prior),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

fn log_posterior_parts(
    fitted: &DVector<f64>,
    y: &DVector<f64>,
    state: &LatentState,
    priors: &Priors,
    spec: &QuantileSpec,
    width: usize,
) -> LogPosteriorParts {
    let n = y.len() as f64;
    let s = state.sigma;
    let q = quadratic_form(y, fitted, &state.v, spec.xi());
    let sum_v: f64 = state.v.iter().sum();
    let sum_log_v: f64 = state.v.iter().map(|v| v.ln()).sum();
    LogPosteriorParts {
        likelihood: -1.5 * n * s.ln() - 0.5 * sum_log_v - q / (4.0 * s) - spec.zeta_num() / s * sum_v,
        beta_prior: -beta_prior_ss(&state.beta, &priors.beta_mean) / (2.0 * priors.sigma0_sq),
        gamma_prior: -gamma_prior_ss(&state.gamma, &priors.gamma_mean, width) / (2.0 * priors.sigma1_sq),
        sigma_prior: -(priors.a / 2.0 + 1.0) * s.ln() - priors.b / (2.0 * s),
    }
}

fn network_shape(state: &LatentState, data: &Dataset) -> Result<ModelShape> {
    let k = state
        .beta
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::Dimension("beta must have at least the intercept".into()))?;
    let shape = ModelShape::Network { k, p: data.p() };
    if state.gamma.len() != shape.param_lens().1 {
        return Err(Error::Dimension(format!(
            "gamma has {} entries but k={k}, p={} needs {}",
            state.gamma.len(),
            data.p(),
            shape.param_lens().1
        )));
    }
    Ok(shape)
}

fn checked_design(state: &LatentState, data: &Dataset, priors: &Priors, shape: ModelShape) -> Result<DesignMatrix> {
    state.validate(data.n())?;
    priors.validate(shape)?;
    shape.design(data.x(), &state.gamma)
}

/// Log of the joint posterior kernel of the network model at `state`.
pub fn log_unnorm_posterior(state: &LatentState, data: &Dataset, priors: &Priors, spec: &QuantileSpec) -> Result<f64> {
    let shape = network_shape(state, data)?;
    log_unnorm_posterior_for(shape, state, data, priors, spec)
}

/// Log posterior kernel for an explicit model shape (network or linear).
pub fn log_unnorm_posterior_for(
    shape: ModelShape,
    state: &LatentState,
    data: &Dataset,
    priors: &Priors,
    spec: &QuantileSpec,
) -> Result<f64> {
    let design = checked_design(state, data, priors, shape)?;
    let fitted = design.fitted(&state.beta);
    Ok(log_posterior_parts(&fitted, data.y(), state, priors, spec, shape.p() + 1).total())
}

/// Precision and linear term of the Gaussian full conditional of `beta`:
/// `P = LᵀVL / (2 s) + I / s0²`, `m = LᵀV(y - xi v) / (2 s) + beta0 / s0²`.
pub fn beta_conditional(
    design: &DesignMatrix,
    y: &DVector<f64>,
    v: &[f64],
    sigma: f64,
    priors: &Priors,
    spec: &QuantileSpec,
) -> (DMatrix<f64>, DVector<f64>) {
    let l = design.matrix();
    let (n, m) = l.shape();
    let mut precision = DMatrix::<f64>::zeros(m, m);
    let mut linear = DVector::<f64>::zeros(m);
    let xi = spec.xi();
    for i in 0..n {
        let w = 1.0 / v[i];
        let target = w * (y[i] - xi * v[i]);
        for a in 0..m {
            let la = l[(i, a)];
            linear[a] += la * target;
            let wla = w * la;
            for b in 0..=a {
                precision[(a, b)] += wla * l[(i, b)];
            }
        }
    }
    let scale = 1.0 / (2.0 * sigma);
    for a in 0..m {
        for b in 0..=a {
            let val = precision[(a, b)] * scale + if a == b { 1.0 / priors.sigma0_sq } else { 0.0 };
            precision[(a, b)] = val;
            precision[(b, a)] = val;
        }
        linear[a] = linear[a] * scale + priors.beta_mean[a] / priors.sigma0_sq;
    }
    (precision, linear)
}

/// Shape and rate of the inverse-gamma full conditional of `sigma`:
/// `((3n + a)/2, rᵀVr/4 + tau(1-tau) sum v + b/2)`.
pub fn sigma_conditional(
    fitted: &DVector<f64>,
    y: &DVector<f64>,
    v: &[f64],
    priors: &Priors,
    spec: &QuantileSpec,
) -> (f64, f64) {
    let n = y.len() as f64;
    let q = quadratic_form(y, fitted, v, spec.xi());
    let sum_v: f64 = v.iter().sum();
    (
        (3.0 * n + priors.a) / 2.0,
        q / 4.0 + spec.zeta_num() * sum_v + priors.b / 2.0,
    )
}

/// Parameters of the GIG full conditional of `v_i`: `rho1² = resid² / (2 s)`, `rho2² = 1 / (2 s)`.
pub fn v_conditional(residual: f64, sigma: f64) -> GigParams {
    let scale = (2.0 * sigma).sqrt();
    GigParams::new(residual.abs() / scale, 1.0 / scale).expect("sigma validated positive")
}

/// Metropolis acceptance for log ratio `log_ratio` against a uniform `u`.
#[inline]
pub fn mh_accept(log_ratio: f64, u: f64) -> bool {
    // NaN compares false and so rejects
    u.ln() < log_ratio
}

/// Draws `beta` from its full conditional and stores it in `state`.
pub fn sample_beta(
    state: &mut LatentState,
    data: &Dataset,
    priors: &Priors,
    spec: &QuantileSpec,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let shape = network_shape(state, data)?;
    let design = checked_design(state, data, priors, shape)?;
    let (precision, linear) = beta_conditional(&design, data.y(), &state.v, state.sigma, priors, spec);
    let (draw, _) = mvnormal_canonical(rng, &precision, &linear)?;
    state.beta = draw.iter().copied().collect();
    Ok(state.beta.clone())
}

/// One random-walk Metropolis step for hidden row `j` (1-based). Returns the
/// resulting row and whether the proposal was accepted.
pub fn mh_update_gamma_j(
    state: &mut LatentState,
    j: usize,
    data: &Dataset,
    priors: &Priors,
    spec: &QuantileSpec,
    rng: &mut RngStream,
    step_sd: f64,
) -> Result<(Vec<f64>, bool)> {
    let shape = network_shape(state, data)?;
    let k = shape.hidden_units();
    if j == 0 || j > k {
        return Err(Error::Domain(format!("hidden unit index {j} outside 1..={k}")));
    }
    if !(step_sd >= 0.0 && step_sd.is_finite()) {
        return Err(Error::Domain(format!("step_sd must be non-negative, got {step_sd}")));
    }
    let mut design = checked_design(state, data, priors, shape)?;
    let mut fitted = design.fitted(&state.beta);
    let mut q = quadratic_form(data.y(), &fitted, &state.v, spec.xi());
    let accepted = metropolis_step(
        &mut MetropolisCtx {
            x: data.x(),
            y: data.y(),
            spec,
            priors,
            width: data.p() + 1,
        },
        state,
        &mut design,
        &mut fitted,
        &mut q,
        j - 1,
        step_sd,
        rng,
    );
    let w = data.p() + 1;
    Ok((state.gamma[(j - 1) * w..j * w].to_vec(), accepted))
}

/// Draws `sigma` from its full conditional and stores it in `state`.
pub fn sample_sigma(
    state: &mut LatentState,
    data: &Dataset,
    priors: &Priors,
    spec: &QuantileSpec,
    rng: &mut RngStream,
) -> Result<f64> {
    let shape = network_shape(state, data)?;
    let design = checked_design(state, data, priors, shape)?;
    let fitted = design.fitted(&state.beta);
    let (shape_ig, rate) = sigma_conditional(&fitted, data.y(), &state.v, priors, spec);
    state.sigma = inverse_gamma(rng, shape_ig, rate)?;
    Ok(state.sigma)
}

/// Draws every latent `v_i` and stores them in `state`.
pub fn sample_v(
    state: &mut LatentState,
    data: &Dataset,
    _spec: &QuantileSpec,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let shape = network_shape(state, data)?;
    state.validate(data.n())?;
    let design = shape.design(data.x(), &state.gamma)?;
    let fitted = design.fitted(&state.beta);
    draw_v(&mut state.v, data.y(), &fitted, state.sigma, rng);
    Ok(state.v.clone())
}

fn draw_v(v: &mut [f64], y: &DVector<f64>, fitted: &DVector<f64>, sigma: f64, rng: &mut RngStream) {
    for (i, vi) in v.iter_mut().enumerate() {
        *vi = gig_half(rng, v_conditional(y[i] - fitted[i], sigma));
    }
}

struct MetropolisCtx<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    spec: &'a QuantileSpec,
    priors: &'a Priors,
    width: usize,
}

/// Proposes `gamma_j + step_sd z` for 0-based unit `j`; on acceptance updates
/// the state, column `j + 1` of the design, the fitted values and `q`.
#[allow(clippy::too_many_arguments)]
fn metropolis_step(
    ctx: &mut MetropolisCtx<'_>,
    state: &mut LatentState,
    design: &mut DesignMatrix,
    fitted: &mut DVector<f64>,
    q: &mut f64,
    j: usize,
    step_sd: f64,
    rng: &mut RngStream,
) -> bool {
    let w = ctx.width;
    let current = &state.gamma[j * w..(j + 1) * w];
    let mean = &ctx.priors.gamma_mean[j * w..(j + 1) * w];
    let proposal: Vec<f64> = current.iter().map(|g| g + step_sd * rng.std_normal()).collect();

    let column = DesignMatrix::candidate_column(ctx.x, &proposal);
    let l = design.matrix();
    let n = l.nrows();
    let mut eta = vec![0.0; l.ncols()];
    let mut new_fitted = DVector::zeros(n);
    let xi = ctx.spec.xi();
    let mut new_q = 0.0;
    for i in 0..n {
        for (c, e) in eta.iter_mut().enumerate() {
            *e = l[(i, c)];
        }
        eta[j + 1] = column[i];
        let f = combine(&state.beta, &eta);
        new_fitted[i] = f;
        let r = ctx.y[i] - f - xi * state.v[i];
        new_q += r * r / state.v[i];
    }

    let ss = |g: &[f64]| -> f64 { g.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum() };
    let log_ratio = -(new_q - *q) / (4.0 * state.sigma) - (ss(&proposal) - ss(current)) / (2.0 * ctx.priors.sigma1_sq);
    let accepted = mh_accept(log_ratio, rng.uniform());
    if accepted {
        state.gamma[j * w..(j + 1) * w].copy_from_slice(&proposal);
        design.set_column(j, &column);
        *fitted = new_fitted;
        *q = new_q;
    }
    accepted
}

/// What a sweep updates, for slice tests and reduced samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepBlocks {
    pub beta: bool,
    pub gamma: bool,
    pub sigma: bool,
    pub v: bool,
}

impl SweepBlocks {
    pub const ALL: Self = Self {
        beta: true,
        gamma: true,
        sigma: true,
        v: true,
    };
}

/// Runs a chain from an explicit starting state, updating only `blocks`.
#[allow(clippy::too_many_arguments)]
pub fn run_sampler(
    shape: ModelShape,
    data: &Dataset,
    priors: &Priors,
    spec: &QuantileSpec,
    config: &ChainConfig,
    init: LatentState,
    blocks: SweepBlocks,
    stream_id: u64,
) -> Result<ChainOutput> {
    config.validate()?;
    if shape.p() != data.p() {
        return Err(Error::Dimension(format!(
            "model expects {} features, data has {}",
            shape.p(),
            data.p()
        )));
    }
    let (nb, ng) = shape.param_lens();
    if init.beta.len() != nb || init.gamma.len() != ng {
        return Err(Error::Dimension(format!(
            "initial state sized ({}, {}) but model needs ({nb}, {ng})",
            init.beta.len(),
            init.gamma.len()
        )));
    }
    if init.beta.iter().chain(&init.gamma).any(|v| !v.is_finite()) {
        return Err(Error::Initialization(
            "initial weights contain non-finite values".into(),
        ));
    }
    let mut state = init;
    let mut design = checked_design(&state, data, priors, shape)?;
    let x = data.x();
    let y = data.y();
    let width = data.p() + 1;
    let k = shape.hidden_units();
    let mut fitted = design.fitted(&state.beta);

    let parts = log_posterior_parts(&fitted, y, &state, priors, spec, width);
    if let Some(component) = parts.first_non_finite() {
        return Err(Error::Initialization(format!(
            "log posterior {component} is not finite at the initial state"
        )));
    }

    let mut rng = RngStream::new(config.seed, stream_id);
    let mut out = ChainOutput {
        shape,
        config: config.clone(),
        stream_id,
        draws: Vec::with_capacity(config.retained_count()),
        accept_counts: vec![0; k],
        proposal_counts: vec![0; k],
        log_posterior_trace: Vec::with_capacity(config.n_iter),
    };

    for t in 1..=config.n_iter {
        if blocks.beta {
            let (precision, linear) = beta_conditional(&design, y, &state.v, state.sigma, priors, spec);
            let (draw, _) = mvnormal_canonical(&mut rng, &precision, &linear)?;
            state.beta.copy_from_slice(draw.as_slice());
            fitted = design.fitted(&state.beta);
        }
        if blocks.gamma && k > 0 {
            let mut q = quadratic_form(y, &fitted, &state.v, spec.xi());
            let mut ctx = MetropolisCtx {
                x,
                y,
                spec,
                priors,
                width,
            };
            for j in 0..k {
                let accepted = metropolis_step(
                    &mut ctx,
                    &mut state,
                    &mut design,
                    &mut fitted,
                    &mut q,
                    j,
                    config.mh_step_sd,
                    &mut rng,
                );
                out.proposal_counts[j] += 1;
                out.accept_counts[j] += u64::from(accepted);
            }
        }
        if blocks.sigma {
            let (a, b) = sigma_conditional(&fitted, y, &state.v, priors, spec);
            state.sigma = inverse_gamma(&mut rng, a, b)?;
        }
        if blocks.v {
            draw_v(&mut state.v, y, &fitted, state.sigma, &mut rng);
        }
        let lp = log_posterior_parts(&fitted, y, &state, priors, spec, width).total();
        out.log_posterior_trace.push(lp);
        if config.is_retained(t) {
            out.draws.push(Draw {
                iteration: t,
                state: state.clone(),
                log_posterior: lp,
            });
        }
    }
    Ok(out)
}

/// Runs the network sampler from `init` with `sigma = 1`, `v = 1`, on stream 0.
pub fn run_chain(
    data: &Dataset,
    priors: &Priors,
    spec: &QuantileSpec,
    config: &ChainConfig,
    init: &NetworkParams,
) -> Result<ChainOutput> {
    run_chain_on_stream(data, priors, spec, config, init, 0)
}

pub fn run_chain_on_stream(
    data: &Dataset,
    priors: &Priors,
    spec: &QuantileSpec,
    config: &ChainConfig,
    init: &NetworkParams,
    stream_id: u64,
) -> Result<ChainOutput> {
    if init.p() != data.p() {
        return Err(Error::Dimension(format!(
            "initial network has {} inputs but data has {} features",
            init.p(),
            data.p()
        )));
    }
    let shape = ModelShape::Network {
        k: init.k(),
        p: init.p(),
    };
    run_sampler(
        shape,
        data,
        priors,
        spec,
        config,
        LatentState::initial(init, data.n()),
        SweepBlocks::ALL,
        stream_id,
    )
}

/// Runs `config.n_chains` independent chains on streams `0..n_chains`, in parallel.
pub fn run_chains(
    data: &Dataset,
    priors: &Priors,
    spec: &QuantileSpec,
    config: &ChainConfig,
    init: &NetworkParams,
) -> Result<Vec<ChainOutput>> {
    config.validate()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.n_chains as u64)
            .map(|c| scope.spawn(move || run_chain_on_stream(data, priors, spec, config, init, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::State("chain thread panicked".into())))
            })
            .collect()
    })
}

/// Linear Bayesian quantile regression: the same sweep with `L = (1, x)`,
/// starting from `beta = 0`, `sigma = 1`, `v = 1`.
pub fn run_linear_chain(
    data: &Dataset,
    priors: &Priors,
    spec: &QuantileSpec,
    config: &ChainConfig,
) -> Result<ChainOutput> {
    let shape = ModelShape::Linear { p: data.p() };
    let init = LatentState {
        beta: vec![0.0; data.p() + 1],
        gamma: Vec::new(),
        sigma: 1.0,
        v: vec![1.0; data.n()],
    };
    run_sampler(shape, data, priors, spec, config, init, SweepBlocks::ALL, 0)
}

/// Posterior mean and standard deviation of the predicted conditional quantile per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Applies every retained draw to each row of `x_eval`; sd uses divisor `m - 1`.
pub fn posterior_quantile_summary(output: &ChainOutput, x_eval: &DMatrix<f64>) -> Result<QuantileSummary> {
    let m = output.draws.len();
    if m < 2 {
        return Err(Error::State(format!(
            "posterior summary needs at least 2 draws, chain has {m}"
        )));
    }
    if x_eval.ncols() != output.shape.p() {
        return Err(Error::Dimension(format!(
            "evaluation inputs have {} features, model has {}",
            x_eval.ncols(),
            output.shape.p()
        )));
    }
    let rows = x_eval.nrows();
    let mut mean = vec![0.0; rows];
    let mut m2 = vec![0.0; rows];
    let mut x = vec![0.0; x_eval.ncols()];
    for (count, d) in output.draws.iter().enumerate() {
        let net = match output.shape {
            ModelShape::Network { k, p } => Some(d.state.network(k, p)?),
            ModelShape::Linear { .. } => None,
        };
        for i in 0..rows {
            for (h, xv) in x.iter_mut().enumerate() {
                *xv = x_eval[(i, h)];
            }
            let f = match &net {
                Some(net) => net.forward(&x)?,
                None => output.predict_draw(d, &x)?,
            };
            let delta = f - mean[i];
            mean[i] += delta / (count + 1) as f64;
            m2[i] += delta * (f - mean[i]);
        }
    }
    let sd = m2.iter().map(|s| (s / (m - 1) as f64).max(0.0).sqrt()).collect();
    Ok(QuantileSummary { mean, sd })
}

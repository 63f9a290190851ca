//! Frequentist and linear comparators: linear quantile regression, linear
//! Bayesian quantile regression, and a gradient-trained quantile regression
//! network whose weights start the Bayesian network chain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ald::{check_loss, smoothed_check_loss, smoothed_check_loss_derivative, QuantileSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, cholesky_solve};
use crate::mcmc::{run_linear_chain, ChainConfig, ChainOutput, Priors};
use crate::network::{combine, logistic, pre_activation, NetworkParams};
use crate::samplers::RngStream;

/// Linear quantile regression fit `y ~ (1, x)ᵀ coef`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrFit {
    /// Intercept first.
    pub coef: Vec<f64>,
    /// `sum_i rho_tau(y_i - x_iᵀ coef)`.
    pub objective: f64,
    pub iterations: usize,
}

impl QrFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut eta = Vec::with_capacity(x.len() + 1);
        eta.push(1.0);
        eta.extend_from_slice(x);
        combine(&self.coef, &eta)
    }
}

/// Smoothing schedule for [`fit_linear_qr`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrOptions {
    pub eps_start: f64,
    pub eps_end: f64,
    /// Factor by which the smoothing width shrinks between stages.
    pub eps_shrink: f64,
    pub max_iter_per_stage: usize,
    /// Relative change in the smoothed objective that ends a stage.
    pub tol: f64,
}

impl Default for QrOptions {
    fn default() -> Self {
        Self {
            eps_start: 1e-2,
            eps_end: 1e-8,
            eps_shrink: 0.1,
            max_iter_per_stage: 500,
            tol: 1e-13,
        }
    }
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    DMatrix::from_fn(n, p + 1, |i, c| if c == 0 { 1.0 } else { x[(i, c - 1)] })
}

fn objective(design: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>, spec: &QuantileSpec) -> f64 {
    (y - design * coef).iter().map(|&r| check_loss(r, spec)).sum()
}

/// Check-loss sum of a linear fit, recomputed from scratch.
pub fn linear_qr_objective(data: &Dataset, coef: &[f64], spec: &QuantileSpec) -> f64 {
    objective(
        &with_intercept(data.x()),
        data.y(),
        &DVector::from_column_slice(coef),
        spec,
    )
}

/// Minimizes `sum rho_tau(y - (1, x)ᵀ b)` by iteratively reweighted least
/// squares on the smoothed check loss `(tau - 1/2) u + H_eps(u) / 2`, shrinking
/// `eps` between stages, then polishes by interpolating the `p + 1`
/// observations with the smallest residuals.
pub fn fit_linear_qr(data: &Dataset, spec: &QuantileSpec, opts: &QrOptions) -> Result<QrFit> {
    fit_qr_design(&with_intercept(data.x()), data.y(), spec, opts)
}

/// [`fit_linear_qr`] on an explicit design matrix. No intercept column is
/// added, so a single column of ones gives the sample `tau`-quantile.
pub fn fit_qr_design(design: &DMatrix<f64>, y: &DVector<f64>, spec: &QuantileSpec, opts: &QrOptions) -> Result<QrFit> {
    let (n, m) = design.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows but y has {} entries",
            y.len()
        )));
    }
    if n <= m || m == 0 {
        return Err(Error::Size(format!(
            "need n > m >= 1 for an n x m design, got {n} x {m}"
        )));
    }
    let svd = design.clone().svd(false, false);
    let (smax, smin) = svd
        .singular_values
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    if !(smin > 1e-10 * smax) {
        return Err(Error::SingularDesign(format!(
            "design condition number {:.3e} exceeds 1e10",
            smax / smin
        )));
    }

    let gram = design.transpose() * design;
    let chol = cholesky_lower(&gram).map_err(|e| Error::SingularDesign(e.to_string()))?;
    let mut coef = cholesky_solve(&chol, &(design.transpose() * y));

    // (XᵀWX) b = XᵀW y + (2 tau - 1) Xᵀ1 is the minimizer of the quadratic
    // majorizer of the smoothed loss at the current residuals.
    let drift: DVector<f64> = design.row_sum().transpose() * (2.0 * spec.tau() - 1.0);
    let smoothed = |coef: &DVector<f64>, eps: f64| -> f64 {
        (y - design * coef)
            .iter()
            .map(|&r| smoothed_check_loss(r, eps, spec))
            .sum()
    };

    let mut iterations = 0;
    let mut eps = opts.eps_start;
    loop {
        let mut prev = smoothed(&coef, eps);
        for _ in 0..opts.max_iter_per_stage {
            iterations += 1;
            let resid = y - design * &coef;
            let w: Vec<f64> = resid.iter().map(|r| 1.0 / r.abs().max(eps)).collect();
            let mut lhs = DMatrix::<f64>::zeros(m, m);
            let mut rhs = drift.clone();
            for i in 0..n {
                for a in 0..m {
                    let wa = w[i] * design[(i, a)];
                    rhs[a] += wa * y[i];
                    for b in 0..=a {
                        lhs[(a, b)] += wa * design[(i, b)];
                    }
                }
            }
            for a in 0..m {
                for b in 0..a {
                    lhs[(b, a)] = lhs[(a, b)];
                }
            }
            let Ok(l) = cholesky_lower(&lhs) else { break };
            let next = cholesky_solve(&l, &rhs);
            let cur = smoothed(&next, eps);
            coef = next;
            let done = (prev - cur).abs() <= opts.tol * prev.abs().max(1e-300);
            prev = cur;
            if done {
                break;
            }
        }
        if eps <= opts.eps_end {
            break;
        }
        eps = (eps * opts.eps_shrink).max(opts.eps_end);
    }

    let mut best = objective(design, y, &coef, spec);
    if let Some(vertex) = interpolating_fit(design, y, &coef) {
        let obj = objective(design, y, &vertex, spec);
        if obj < best {
            best = obj;
            coef = vertex;
        }
    }
    Ok(QrFit {
        coef: coef.iter().copied().collect(),
        objective: best,
        iterations,
    })
}

/// Exact fit through the `m` observations with the smallest absolute
/// residuals, when those rows are linearly independent.
fn interpolating_fit(design: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>) -> Option<DVector<f64>> {
    let m = design.ncols();
    let resid = y - design * coef;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()));
    let rows = &order[..m];
    let a = DMatrix::from_fn(m, m, |r, c| design[(rows[r], c)]);
    let b = DVector::from_fn(m, |r, _| y[rows[r]]);
    a.lu().solve(&b).filter(|s| s.iter().all(|v| v.is_finite()))
}

/// Linear Bayesian quantile regression (no Metropolis step).
pub fn fit_bqr(data: &Dataset, priors: &Priors, spec: &QuantileSpec, config: &ChainConfig) -> Result<ChainOutput> {
    run_linear_chain(data, priors, spec, config)
}

/// Gradient training schedule for [`fit_qrnn`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrnnOptions {
    pub max_epochs: usize,
    /// Relative loss decrease below which training stops.
    pub tol: f64,
    pub smoothing_eps: f64,
    /// Coefficient of the mean squared input-to-hidden weight (biases
    /// excluded) added to the training objective.
    pub weight_penalty: f64,
    /// Independent random initializations; the lowest final loss wins.
    pub n_restarts: usize,
    /// Standard deviation of the initial hidden weights.
    pub init_scale: f64,
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for QrnnOptions {
    fn default() -> Self {
        Self {
            max_epochs: 5000,
            tol: 1e-9,
            smoothing_eps: 1e-3,
            weight_penalty: 0.0,
            n_restarts: 3,
            init_scale: 0.5,
            initial_step: 1.0,
            seed: 0,
        }
    }
}

/// Fitted quantile regression network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrnnFit {
    pub params: NetworkParams,
    /// Training objective (mean smoothed check loss plus any weight penalty)
    /// after each epoch of the winning restart.
    pub train_loss_trace: Vec<f64>,
    pub smoothing_eps: f64,
}

/// Mean smoothed check loss of the network over `(x, y)` and its gradient in
/// the flat `(beta, gamma)` layout.
pub fn qrnn_loss_and_gradient(
    params: &NetworkParams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &QuantileSpec,
    eps: f64,
) -> (f64, Vec<f64>) {
    let (k, p) = (params.k(), params.p());
    let n = x.nrows();
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0; NetworkParams::flat_len(k, p)];
    let mut loss = 0.0;
    let mut row = vec![0.0; p];
    let mut eta = vec![1.0; k + 1];
    let beta = params.beta();
    for i in 0..n {
        for (h, r) in row.iter_mut().enumerate() {
            *r = x[(i, h)];
        }
        for j in 0..k {
            eta[j + 1] = logistic(pre_activation(params.gamma_row(j), &row));
        }
        let resid = y[i] - combine(beta, &eta);
        loss += smoothed_check_loss(resid, eps, spec) * inv_n;
        // d loss / d f = -s'(resid) / n
        let df = -smoothed_check_loss_derivative(resid, eps, spec) * inv_n;
        grad[0] += df;
        for j in 0..k {
            let s = eta[j + 1];
            grad[j + 1] += df * s;
            let dz = df * beta[j + 1] * s * (1.0 - s);
            let base = k + 1 + j * (p + 1);
            grad[base] += dz;
            for h in 0..p {
                grad[base + 1 + h] += dz * row[h];
            }
        }
    }
    (loss, grad)
}

fn initial_network(
    data: &Dataset,
    spec: &QuantileSpec,
    k: usize,
    scale: f64,
    rng: &mut RngStream,
) -> Result<NetworkParams> {
    let p = data.p();
    let mut sorted: Vec<f64> = data.y().iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * spec.tau()).round() as usize;
    let mut flat = Vec::with_capacity(NetworkParams::flat_len(k, p));
    flat.push(sorted[idx]);
    flat.extend((0..k).map(|_| scale * rng.std_normal()));
    flat.extend((0..k * (p + 1)).map(|_| scale * rng.std_normal()));
    NetworkParams::from_flat(k, p, &flat)
}

fn penalized(params: &NetworkParams, data: &Dataset, spec: &QuantileSpec, opts: &QrnnOptions) -> (f64, Vec<f64>) {
    let (mut loss, mut grad) = qrnn_loss_and_gradient(params, data.x(), data.y(), spec, opts.smoothing_eps);
    if opts.weight_penalty > 0.0 {
        let (k, p) = (params.k(), params.p());
        let scale = opts.weight_penalty / (k * p) as f64;
        for j in 0..k {
            let base = k + 1 + j * (p + 1);
            for (h, &w) in params.gamma_row(j)[1..].iter().enumerate() {
                loss += scale * w * w;
                grad[base + 1 + h] += 2.0 * scale * w;
            }
        }
    }
    (loss, grad)
}

fn train_once(data: &Dataset, spec: &QuantileSpec, init: NetworkParams, opts: &QrnnOptions) -> Result<QrnnFit> {
    const ARMIJO: f64 = 1e-4;
    const MIN_STEP: f64 = 1e-16;
    let (k, p) = (init.k(), init.p());
    let eps = opts.smoothing_eps;
    let mut params = init;
    let (mut loss, mut grad) = penalized(&params, data, spec, opts);
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, loss });
    }
    let mut trace = Vec::with_capacity(opts.max_epochs);
    let mut step = opts.initial_step;
    for epoch in 1..=opts.max_epochs {
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2 == 0.0 {
            break;
        }
        let theta = params.to_flat();
        let mut accepted = None;
        while step >= MIN_STEP {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            if cand.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
            let cand = NetworkParams::from_flat(k, p, &cand)?;
            let (cl, cg) = penalized(&cand, data, spec, opts);
            if cl.is_finite() && cl <= loss - ARMIJO * step * g2 {
                accepted = Some((cand, cl, cg));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cl, cg)) = accepted else { break };
        let rel = (loss - cl) / loss.abs().max(1e-300);
        // Barzilai-Borwein trial step for the next line search; the Armijo
        // test above still guarantees a monotone objective.
        let (mut ss, mut sy) = (0.0, 0.0);
        for ((t, c), (g, h)) in theta.iter().zip(cand.to_flat()).zip(grad.iter().zip(&cg)) {
            let (ds, dg) = (c - t, h - g);
            ss += ds * ds;
            sy += ds * dg;
        }
        step = if sy > 0.0 && (ss / sy).is_finite() {
            ss / sy
        } else {
            2.0 * step
        };
        params = cand;
        loss = cl;
        grad = cg;
        trace.push(loss);
        if rel < opts.tol {
            break;
        }
    }
    Ok(QrnnFit {
        params,
        train_loss_trace: trace,
        smoothing_eps: eps,
    })
}

/// Trains a `k`-unit network on the smoothed check loss by full-batch
/// gradient descent with backtracking line search.
pub fn fit_qrnn(data: &Dataset, spec: &QuantileSpec, k: usize, opts: &QrnnOptions) -> Result<QrnnFit> {
    if k == 0 {
        return Err(Error::Domain("QRNN needs at least one hidden unit".into()));
    }
    if !(opts.weight_penalty >= 0.0 && opts.weight_penalty.is_finite()) {
        return Err(Error::Domain(format!(
            "weight_penalty must be non-negative, got {}",
            opts.weight_penalty
        )));
    }
    if !(opts.smoothing_eps > 0.0) {
        return Err(Error::Domain(format!(
            "smoothing_eps must be positive, got {}",
            opts.smoothing_eps
        )));
    }
    let mut best: Option<QrnnFit> = None;
    for restart in 0..opts.n_restarts.max(1) {
        let mut rng = RngStream::new(opts.seed, restart as u64);
        let init = initial_network(data, spec, k, opts.init_scale, &mut rng)?;
        let fit = train_once(data, spec, init, opts)?;
        let final_loss = |f: &QrnnFit| f.train_loss_trace.last().copied().unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|b| final_loss(&fit) < final_loss(b)) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

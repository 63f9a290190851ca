//! Single-hidden-layer logistic network defining the conditional quantile
//! surface `beta_0 + sum_j beta_j psi(x~ᵀ gamma_j)`, with `x~ = (1, x)`.
//!
//! Hidden-unit contributions are always summed in a canonical order (sorted
//! by value), so relabelling the hidden units leaves every output bitwise
//! unchanged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerically stable logistic function.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sum of `terms` in ascending order, independent of the input order.
pub(crate) fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Output weights `beta` (length `k + 1`) and hidden weights `gamma`
/// (`k` rows of `p + 1`, bias first).
///
/// The flat layout is `beta_0..beta_k` followed by `gamma` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    beta: Vec<f64>,
    gamma: Vec<f64>,
    k: usize,
    p: usize,
}

impl NetworkParams {
    pub fn new(beta: Vec<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let k = gamma.nrows();
        if gamma.ncols() == 0 {
            return Err(Error::Dimension("gamma needs at least the bias column".into()));
        }
        let p = gamma.ncols() - 1;
        if beta.len() != k + 1 {
            return Err(Error::Dimension(format!(
                "beta has length {} but gamma has {k} hidden units",
                beta.len()
            )));
        }
        let mut flat = Vec::with_capacity(k * (p + 1));
        for j in 0..k {
            flat.extend(gamma.row(j).iter().copied());
        }
        let params = Self {
            beta,
            gamma: flat,
            k,
            p,
        };
        params.check_finite()?;
        Ok(params)
    }

    pub fn zeros(k: usize, p: usize) -> Self {
        Self {
            beta: vec![0.0; k + 1],
            gamma: vec![0.0; k * (p + 1)],
            k,
            p,
        }
    }

    pub fn from_flat(k: usize, p: usize, flat: &[f64]) -> Result<Self> {
        let expected = Self::flat_len(k, p);
        if flat.len() != expected {
            return Err(Error::Dimension(format!(
                "flat parameter vector has length {} but (k={k}, p={p}) needs {expected}",
                flat.len()
            )));
        }
        let params = Self {
            beta: flat[..k + 1].to_vec(),
            gamma: flat[k + 1..].to_vec(),
            k,
            p,
        };
        params.check_finite()?;
        Ok(params)
    }

    pub fn flat_len(k: usize, p: usize) -> usize {
        k + 1 + k * (p + 1)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend_from_slice(&self.gamma);
        v
    }

    fn check_finite(&self) -> Result<()> {
        if self.beta.iter().chain(&self.gamma).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Domain("network parameters must be finite".into()))
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn beta_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }

    /// Row `j` of gamma (0-based hidden unit index).
    pub fn gamma_row(&self, j: usize) -> &[f64] {
        &self.gamma[j * (self.p + 1)..(j + 1) * (self.p + 1)]
    }

    pub fn gamma_row_mut(&mut self, j: usize) -> &mut [f64] {
        let w = self.p + 1;
        &mut self.gamma[j * w..(j + 1) * w]
    }

    pub fn gamma_flat(&self) -> &[f64] {
        &self.gamma
    }

    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.k, self.p + 1, &self.gamma)
    }

    /// Relabels hidden units: unit `j` of the result is unit `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k];
        if perm.len() != self.k
            || perm
                .iter()
                .any(|&j| j >= self.k || std::mem::replace(&mut seen[j], true))
        {
            return Err(Error::Dimension(format!(
                "{perm:?} is not a permutation of 0..{}",
                self.k
            )));
        }
        let mut out = self.clone();
        for (j, &src) in perm.iter().enumerate() {
            out.beta[j + 1] = self.beta[src + 1];
            out.gamma_row_mut(j).copy_from_slice(self.gamma_row(src));
        }
        Ok(out)
    }

    /// Hidden activation vector `eta(x) = (1, psi(x~ᵀ gamma_1), ..)`.
    pub fn hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p {
            return Err(Error::Dimension(format!(
                "input has {} features but the network expects {}",
                x.len(),
                self.p
            )));
        }
        let mut eta = Vec::with_capacity(self.k + 1);
        eta.push(1.0);
        for j in 0..self.k {
            eta.push(logistic(pre_activation(self.gamma_row(j), x)));
        }
        Ok(eta)
    }

    /// Conditional quantile at a single input `x` (length `p`).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let eta = self.hidden(x)?;
        Ok(combine(&self.beta, &eta))
    }
}

/// `gamma_0 + sum_h gamma_h x_h`.
#[inline]
pub(crate) fn pre_activation(gamma_row: &[f64], x: &[f64]) -> f64 {
    let mut z = gamma_row[0];
    for (g, xv) in gamma_row[1..].iter().zip(x) {
        z += g * xv;
    }
    z
}

/// `beta_0 + canonical_sum(beta_j eta_j)` for a design row `eta` with leading 1.
#[inline]
pub(crate) fn combine(beta: &[f64], eta: &[f64]) -> f64 {
    debug_assert_eq!(beta.len(), eta.len());
    let mut terms = [0.0f64; 16];
    let k = beta.len() - 1;
    if k <= terms.len() {
        for j in 0..k {
            terms[j] = beta[j + 1] * eta[j + 1];
        }
        beta[0] * eta[0] + canonical_sum(&mut terms[..k])
    } else {
        let mut v: Vec<f64> = (1..=k).map(|j| beta[j] * eta[j]).collect();
        beta[0] * eta[0] + canonical_sum(&mut v)
    }
}

/// The `n x (k + 1)` matrix `L` whose row `i` is `eta(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    l: DMatrix<f64>,
}

impl DesignMatrix {
    /// The raw linear design `(1, x)`, used by the linear Bayesian baseline.
    pub fn linear(x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        Self {
            l: DMatrix::from_fn(n, p + 1, |i, c| if c == 0 { 1.0 } else { x[(i, c - 1)] }),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.l
    }

    pub fn nrows(&self) -> usize {
        self.l.nrows()
    }

    /// Number of hidden units `k`.
    pub fn hidden_units(&self) -> usize {
        self.l.ncols() - 1
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.l.row(i).iter().copied().collect()
    }

    /// Recomputes the column of hidden unit `j` (0-based) from a new gamma row.
    pub fn refresh_column(&mut self, x: &DMatrix<f64>, j: usize, gamma_row: &[f64]) {
        let col = j + 1;
        let mut row = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            for (h, r) in row.iter_mut().enumerate() {
                *r = x[(i, h)];
            }
            self.l[(i, col)] = logistic(pre_activation(gamma_row, &row));
        }
    }

    /// Overwrites the column of hidden unit `j` with precomputed activations.
    pub fn set_column(&mut self, j: usize, column: &[f64]) {
        for (i, &v) in column.iter().enumerate() {
            self.l[(i, j + 1)] = v;
        }
    }

    /// Column of hidden unit `j` evaluated at a candidate gamma row, without
    /// modifying the design.
    pub fn candidate_column(x: &DMatrix<f64>, gamma_row: &[f64]) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                for (h, r) in row.iter_mut().enumerate() {
                    *r = x[(i, h)];
                }
                logistic(pre_activation(gamma_row, &row))
            })
            .collect()
    }

    /// `L beta`, each row summed canonically.
    pub fn fitted(&self, beta: &[f64]) -> DVector<f64> {
        let mut eta = vec![0.0; self.l.ncols()];
        DVector::from_fn(self.l.nrows(), |i, _| {
            for (c, e) in eta.iter_mut().enumerate() {
                *e = self.l[(i, c)];
            }
            combine(beta, &eta)
        })
    }
}

/// Builds `L` for inputs `x` (`n x p`, no intercept column) and hidden
/// weights `gamma` (`k x (p + 1)`).
pub fn design_matrix(x: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<DesignMatrix> {
    if gamma.ncols() != x.ncols() + 1 {
        return Err(Error::Dimension(format!(
            "gamma has {} columns but inputs have {} features (+1 bias)",
            gamma.ncols(),
            x.ncols()
        )));
    }
    let n = x.nrows();
    let k = gamma.nrows();
    let mut design = DesignMatrix {
        l: DMatrix::from_element(n, k + 1, 1.0),
    };
    for j in 0..k {
        let row: Vec<f64> = gamma.row(j).iter().copied().collect();
        design.refresh_column(x, j, &row);
    }
    Ok(design)
}

//! Block, noise and variational parameter types plus the Gaussian density
//! arithmetic shared by inference, simulation and evaluation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-9;
/// Lower bound on every estimated variance.
pub const VAR_FLOOR: f64 = 1e-8;
/// Margin kept from the equicorrelation positive-definite boundary.
pub const RHO_MARGIN: f64 = 1e-6;

/// Open interval of equicorrelations that keep a `layers`-dimensional
/// covariance positive definite.
pub fn rho_interval(layers: usize) -> (f64, f64) {
    if layers <= 1 {
        (f64::NEG_INFINITY, 1.0)
    } else {
        (-1.0 / (layers as f64 - 1.0), 1.0)
    }
}

/// Pull `rho` inside the positive-definite interval, `RHO_MARGIN` away from either end.
pub fn clamp_rho(rho: f64, layers: usize) -> f64 {
    let (lo, hi) = rho_interval(layers);
    let lo = if lo.is_finite() { lo + RHO_MARGIN } else { -1.0 + RHO_MARGIN };
    let rho = if rho.is_nan() { 0.0 } else { rho };
    rho.clamp(lo, hi - RHO_MARGIN)
}

/// Σ with `var` on the diagonal and `rho·σ_h·σ_k` off it.
pub fn build_covariance(var: &[f64], rho: f64) -> Result<DMatrix<f64>> {
    let k = var.len();
    if k == 0 {
        return Err(Error::invalid("covariance needs at least one layer"));
    }
    if var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    let (lo, hi) = rho_interval(k);
    if k > 1 && !(rho > lo && rho < hi) {
        return Err(Error::CorrelationOutOfRange { rho, layers: k });
    }
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    Ok(DMatrix::from_fn(k, k, |h, l| {
        if h == l {
            var[h]
        } else {
            rho * sd[h] * sd[l]
        }
    }))
}

/// Multivariate normal log-density with a dense SPD covariance.
pub fn log_density(x: &[f64], mu: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    let k = x.len();
    if mu.len() != k || cov.nrows() != k || cov.ncols() != k {
        return Err(Error::invalid("dimension mismatch in log_density"));
    }
    let gaussian = Gaussian::from_covariance(mu.to_vec(), cov)?;
    Ok(gaussian.log_pdf(x))
}

/// Prior probability that a block is signal: (Q−1)/Q.
pub fn psi(blocks: usize) -> f64 {
    assert!(blocks >= 1, "psi needs Q >= 1");
    (blocks as f64 - 1.0) / blocks as f64
}

/// Free parameters of the model: means and variances per block, one
/// correlation per signal block and the ambient mean and variance.
pub fn param_count(layers: usize, blocks: usize) -> usize {
    2 * layers * blocks + blocks - 1 + 2 * layers
}

/// A K-variate normal with its Cholesky factor cached for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mu: Vec<f64>,
    /// Lower-triangular factor, row-major.
    chol: Vec<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn from_covariance(mu: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let k = mu.len();
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let sym_err = (cov - cov.transpose()).abs().max();
        if sym_err > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let l = cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .l();
        let mut chol = vec![0.0; k * k];
        let mut log_det = 0.0;
        for r in 0..k {
            for c in 0..=r {
                chol[r * k + c] = l[(r, c)];
            }
            log_det += 2.0 * l[(r, r)].ln();
        }
        let log_norm = -0.5 * log_det - 0.5 * k as f64 * (2.0 * PI).ln();
        Ok(Gaussian { mu, chol, log_norm })
    }

    pub fn equicorrelated(mu: &[f64], var: &[f64], rho: f64) -> Result<Self> {
        Self::from_covariance(mu.to_vec(), &build_covariance(var, rho)?)
    }

    pub fn diagonal(mu: &[f64], var: &[f64]) -> Result<Self> {
        Self::equicorrelated(mu, var, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let k = self.mu.len();
        let mut quad = 0.0;
        // Forward substitution L y = x − μ; stack buffer covers realistic layer counts.
        let mut buf = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if k <= buf.len() {
            &mut buf[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        for r in 0..k {
            let row = &self.chol[r * k..r * k + r];
            let mut acc = x[r] - self.mu[r];
            for (c, lv) in row.iter().enumerate() {
                acc -= lv * y[c];
            }
            let v = acc / self.chol[r * k + r];
            y[r] = v;
            quad += v * v;
        }
        self.log_norm - 0.5 * quad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub rho: f64,
}

impl BlockParams {
    pub fn gaussian(&self) -> Result<Gaussian> {
        Gaussian::equicorrelated(&self.mu, &self.var, self.rho)
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        build_covariance(&self.var, self.rho)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl NoiseParams {
    pub fn gaussian(&self) -> Result<Gaussian> {
        Gaussian::diagonal(&self.mu, &self.var)
    }

    pub fn as_block(&self) -> BlockParams {
        BlockParams {
            mu: self.mu.clone(),
            var: self.var.clone(),
            rho: 0.0,
        }
    }
}

/// Full parameter set: per-block signal laws, the ambient-noise law, block
/// proportions, the signal prior Ψ and the designated noise block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub blocks: Vec<BlockParams>,
    pub noise: NoiseParams,
    pub alpha: Vec<f64>,
    pub psi: f64,
    pub noise_block: usize,
}

impl ModelParams {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_layers(&self) -> usize {
        self.noise.mu.len()
    }

    /// Check the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let q = self.num_blocks();
        let k = self.num_layers();
        if q == 0 || self.alpha.len() != q {
            return Err(Error::invalid("alpha length must equal the block count"));
        }
        if self.noise.var.len() != k {
            return Err(Error::invalid("noise mean and variance lengths differ"));
        }
        if self.noise_block >= q {
            return Err(Error::invalid("noise block index out of range"));
        }
        if self.alpha.iter().any(|&a| a < 0.0) || (self.alpha.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("alpha is not a probability vector"));
        }
        for b in &self.blocks {
            if b.mu.len() != k || b.var.len() != k {
                return Err(Error::invalid("block parameter length differs from layer count"));
            }
            build_covariance(&b.var, b.rho)?;
        }
        Ok(())
    }
}

/// Variational memberships: τ (n×Q, row-major, row-stochastic) and the
/// per-block signal probabilities P.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    n: usize,
    q: usize,
    pub tau: Vec<f64>,
    pub p: Vec<f64>,
}

impl VariationalState {
    pub fn new(n: usize, q: usize, tau: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if tau.len() != n * q || p.len() != q {
            return Err(Error::invalid("variational state dimensions do not match"));
        }
        Ok(VariationalState { n, q, tau, p })
    }

    /// Hard memberships turned into a τ with `1 − soft_eps` on the assigned block.
    pub fn from_labels(labels: &[usize], q: usize, soft_eps: f64) -> Self {
        let n = labels.len();
        let off = if q > 1 { soft_eps / (q - 1) as f64 } else { 0.0 };
        let on = if q > 1 { 1.0 - soft_eps } else { 1.0 };
        let mut tau = vec![off; n * q];
        for (i, &l) in labels.iter().enumerate() {
            tau[i * q + l] = on;
        }
        VariationalState {
            n,
            q,
            tau,
            p: vec![psi(q).clamp(PROB_EPS, 1.0 - PROB_EPS); q],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_blocks(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn tau(&self, i: usize, q: usize) -> f64 {
        self.tau[i * self.q + q]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.tau[i * self.q..(i + 1) * self.q]
    }

    /// Row argmax with the lowest index winning ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.n).map(|i| argmax(self.row(i))).collect()
    }

    /// Largest deviation of a τ row sum from one.
    pub fn max_row_error(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// `ln(max(x, PROB_EPS))`.
#[inline]
pub(crate) fn safe_ln(x: f64) -> f64 {
    x.max(PROB_EPS).ln()
}

/// `x·ln x` with the ε-guarded log; exactly 0 at x = 0.
#[inline]
pub(crate) fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * safe_ln(x)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

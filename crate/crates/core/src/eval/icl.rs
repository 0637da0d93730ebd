//! Integrated complete likelihood for choosing Q.

use crate::error::{Error, Result};
use crate::model::{safe_ln, ModelParams};
use crate::network::MultilayerNetwork;
use crate::vem::{fit, FitConfig, FitResult};

/// Complete-data log-likelihood at hard labels: pairs inside a signal block
/// use that block's law, every other pair the ambient law, plus Σ_i log α_{z_i}.
pub fn complete_log_likelihood(net: &MultilayerNetwork, params: &ModelParams, labels: &[usize]) -> Result<f64> {
    if labels.len() != net.num_nodes() || labels.iter().any(|&z| z >= params.num_blocks()) {
        return Err(Error::invalid("labels do not match the network and block count"));
    }
    let noise = params.noise.gaussian()?;
    let blocks = params
        .blocks
        .iter()
        .map(|b| b.gaussian())
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (i, j, x) in net.pairs() {
        let (zi, zj) = (labels[i], labels[j]);
        total += if zi == zj && zi != params.noise_block {
            blocks[zi].log_pdf(x)
        } else {
            noise.log_pdf(x)
        };
    }
    total += labels.iter().map(|&z| safe_ln(params.alpha[z])).sum::<f64>();
    Ok(total)
}

/// ½Q(Q−1)·log(n·max(K−1, 1)).
pub fn membership_penalty(n: usize, layers: usize, blocks: usize) -> f64 {
    let q = blocks as f64;
    0.5 * q * (q - 1.0) * (n as f64 * (layers.max(2) - 1) as f64).ln()
}

/// Q·log(n(n−1)K/2) + (Q(Q−1)/2)·K·log(n(n−1)/2).
pub fn parameter_penalty(n: usize, layers: usize, blocks: usize) -> f64 {
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
    let (q, k) = (blocks as f64, layers as f64);
    q * (pairs * k).ln() + 0.5 * q * (q - 1.0) * k * pairs.ln()
}

pub fn icl_from_loglik(loglik: f64, n: usize, layers: usize, blocks: usize) -> f64 {
    loglik - membership_penalty(n, layers, blocks) - parameter_penalty(n, layers, blocks)
}

pub fn icl(net: &MultilayerNetwork, fit: &FitResult) -> Result<f64> {
    let ll = complete_log_likelihood(net, &fit.params, &fit.hard_membership)?;
    Ok(icl_from_loglik(ll, net.num_nodes(), net.num_layers(), fit.params.num_blocks()))
}

/// One row of a block-count scan.
#[derive(Debug, Clone)]
pub struct SelectionRow {
    pub blocks: usize,
    pub icl: f64,
    pub fit: FitResult,
}

/// Fit every Q in `qmin..=qmax` with `base` (its block count is overridden)
/// and score each by ICL. Returns the rows and the index of the best one;
/// ties go to the smaller Q.
pub fn select_blocks(
    net: &MultilayerNetwork,
    qmin: usize,
    qmax: usize,
    base: &FitConfig,
) -> Result<(Vec<SelectionRow>, usize)> {
    if qmin < 1 || qmax < qmin {
        return Err(Error::invalid(format!("invalid block range {qmin}..={qmax}")));
    }
    let mut rows = Vec::with_capacity(qmax - qmin + 1);
    for q in qmin..=qmax {
        let cfg = FitConfig {
            blocks: q,
            ..base.clone()
        };
        let mut f = fit(net, &cfg)?;
        let score = icl(net, &f)?;
        f.icl = Some(score);
        rows.push(SelectionRow {
            blocks: q,
            icl: score,
            fit: f,
        });
    }
    let best = (0..rows.len())
        .fold(0, |b, r| if rows[r].icl > rows[b].icl { r } else { b });
    Ok((rows, best))
}

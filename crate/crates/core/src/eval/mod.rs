//! Model selection and agreement with a known truth.

mod icl;
mod metrics;

pub use icl::{
    complete_log_likelihood, icl, icl_from_loglik, membership_penalty, parameter_penalty, select_blocks, SelectionRow,
};
pub use metrics::{ari, best_matching, confusion, exact_recovery, nmi, Partition};

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Mean,
    Variance,
    Rho,
    NoiseMean,
    NoiseVariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub kind: ParamKind,
    /// Block index in the truth's labelling; `None` for the ambient law.
    pub block: Option<usize>,
    pub layer: Option<usize>,
    pub truth: f64,
    pub fitted: f64,
    /// fitted − truth
    pub signed: f64,
    /// |fitted − truth| / max(|truth|, 0.01)
    pub abs_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamReport {
    pub entries: Vec<ParamError>,
}

impl ParamReport {
    pub fn of_kind(&self, kind: ParamKind) -> impl Iterator<Item = &ParamError> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    /// Median absolute percentage error over the given kinds, if any entries exist.
    pub fn median_abs_pct(&self, kinds: &[ParamKind]) -> Option<f64> {
        median(self.entries.iter().filter(|e| kinds.contains(&e.kind)).map(|e| e.abs_pct).collect())
    }
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

fn entry(kind: ParamKind, block: Option<usize>, layer: Option<usize>, truth: f64, fitted: f64) -> ParamError {
    ParamError {
        kind,
        block,
        layer,
        truth,
        fitted,
        signed: fitted - truth,
        abs_pct: (fitted - truth).abs() / truth.abs().max(0.01),
    }
}

/// Per-parameter errors after mapping truth block `q` to fitted block
/// `matching[q]`. The truth's noise block contributes only through the
/// ambient-law entries.
pub fn param_report(truth: &ModelParams, fitted: &ModelParams, matching: &[usize]) -> Result<ParamReport> {
    let q = truth.num_blocks();
    let k = truth.num_layers();
    if fitted.num_blocks() != q || fitted.num_layers() != k {
        return Err(Error::invalid(format!(
            "parameter shapes differ: Q {} vs {}, K {} vs {}",
            q,
            fitted.num_blocks(),
            k,
            fitted.num_layers()
        )));
    }
    if matching.len() != q || matching.iter().any(|&m| m >= q) {
        return Err(Error::invalid("matching must map every block into range"));
    }
    let mut entries = Vec::new();
    for b in (0..q).filter(|&b| b != truth.noise_block) {
        let (t, f) = (&truth.blocks[b], &fitted.blocks[matching[b]]);
        for h in 0..k {
            entries.push(entry(ParamKind::Mean, Some(b), Some(h), t.mu[h], f.mu[h]));
        }
        for h in 0..k {
            entries.push(entry(ParamKind::Variance, Some(b), Some(h), t.var[h], f.var[h]));
        }
        if k > 1 {
            entries.push(entry(ParamKind::Rho, Some(b), None, t.rho, f.rho));
        }
    }
    for h in 0..k {
        entries.push(entry(ParamKind::NoiseMean, None, Some(h), truth.noise.mu[h], fitted.noise.mu[h]));
        entries.push(entry(ParamKind::NoiseVariance, None, Some(h), truth.noise.var[h], fitted.noise.var[h]));
    }
    Ok(ParamReport { entries })
}

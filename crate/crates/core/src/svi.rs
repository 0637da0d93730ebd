//! Stochastic E-step on growing node subsamples.
//!
//! Step t draws m_t = min(⌊a + (t/(t+1))^κ_m · n⌋, n) nodes, recomputes τ and
//! P on the induced subnetwork, and averages them into the running state with
//! weight δ_t = (t+1)^(−κ_w). Rows of unsampled nodes are left alone.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{ModelParams, VariationalState, PROB_EPS};
use crate::network::MultilayerNetwork;
use crate::rng::stream;
use crate::vem::{p_star, tau_star, Tables};

#[derive(Debug, Clone, PartialEq)]
pub struct SviConfig {
    /// Base subsample size.
    pub a: usize,
    /// Growth exponent of the subsample size.
    pub kappa_m: f64,
    /// Decay exponent of the averaging weight, in (0.5, 1].
    pub kappa_w: f64,
    pub seed: u64,
}

impl Default for SviConfig {
    fn default() -> Self {
        SviConfig {
            a: 150,
            kappa_m: 2.0,
            kappa_w: 0.7,
            seed: 0,
        }
    }
}

impl SviConfig {
    pub fn validate(&self) -> Result<()> {
        if self.a < 2 {
            return Err(Error::invalid("svi base subsample size must be at least 2"));
        }
        if !(self.kappa_w > 0.5 && self.kappa_w <= 1.0) {
            return Err(Error::invalid("svi averaging exponent must lie in (0.5, 1]"));
        }
        if !(self.kappa_m > 0.0) || !self.kappa_m.is_finite() {
            return Err(Error::invalid("svi growth exponent must be positive"));
        }
        Ok(())
    }
}

pub fn subsample_size(t: usize, cfg: &SviConfig, n: usize) -> usize {
    let t = t as f64;
    let m = cfg.a as f64 + (t / (t + 1.0)).powf(cfg.kappa_m) * n as f64;
    (m.floor() as usize).min(n)
}

pub fn averaging_weight(t: usize, cfg: &SviConfig) -> f64 {
    (t as f64 + 1.0).powf(-cfg.kappa_w)
}

/// Sorted node sample for step `t`.
pub fn sample_nodes(t: usize, cfg: &SviConfig, n: usize) -> Vec<usize> {
    let m = subsample_size(t, cfg, n);
    let mut rng = stream(cfg.seed, "svi", t as u64);
    let mut nodes = sample(&mut rng, n, m).into_vec();
    nodes.sort_unstable();
    nodes
}

pub fn svi_e_step(
    net: &MultilayerNetwork,
    params: &ModelParams,
    state: &VariationalState,
    t: usize,
    cfg: &SviConfig,
    exec: Exec,
) -> Result<VariationalState> {
    let n = net.num_nodes();
    let q = state.num_blocks();
    let nodes = sample_nodes(t, cfg, n);
    if nodes.len() < q.max(2) {
        return Err(Error::invalid("subsample too small for Q blocks"));
    }
    let sub = net.induced(&nodes)?;
    let sub_tau = nodes.iter().flat_map(|&i| state.row(i).iter().copied()).collect();
    let mut sub_state = VariationalState::new(nodes.len(), q, sub_tau, state.p.clone())?;

    let tables = Tables::new(&sub, params, exec)?;
    sub_state.tau = tau_star(&tables, params, &sub_state, exec);
    let p_new = p_star(&tables, params, &sub_state, exec);

    let delta = averaging_weight(t, cfg);
    let mut out = state.clone();
    for (r, &i) in nodes.iter().enumerate() {
        let row = &mut out.tau[i * q..(i + 1) * q];
        for (v, &s) in row.iter_mut().zip(sub_state.row(r)) {
            *v = delta * s + (1.0 - delta) * *v;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    for (p, &s) in out.p.iter_mut().zip(&p_new) {
        *p = (delta * s + (1.0 - delta) * *p).clamp(PROB_EPS, 1.0 - PROB_EPS);
    }
    Ok(out)
}

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{safe_ln, xlogx, ModelParams, VariationalState};
use crate::network::MultilayerNetwork;

use super::tables::Tables;

/// The hierarchical bound split into its additive pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// Expected edge log-likelihood: signal, noise-block and interstitial parts.
    pub likelihood: f64,
    /// Σ τ_iq log α_q.
    pub membership_prior: f64,
    /// −Σ τ_iq log τ_iq.
    pub tau_entropy: f64,
    /// −Σ_q [P_q log P_q + (1−P_q) log(1−P_q)].
    pub signal_entropy: f64,
    /// Σ τ_iq [P_q log Ψ + (1−P_q) log(1−Ψ)].
    pub signal_prior: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.membership_prior + self.tau_entropy + self.signal_entropy + self.signal_prior
    }

    fn check(self) -> Result<Self> {
        for (name, v) in [
            ("likelihood", self.likelihood),
            ("membership prior", self.membership_prior),
            ("membership entropy", self.tau_entropy),
            ("signal entropy", self.signal_entropy),
            ("signal prior", self.signal_prior),
        ] {
            if !v.is_finite() {
                return Err(Error::numerical(format!("non-finite ELBO term: {name} = {v}")));
            }
        }
        Ok(self)
    }
}

pub(crate) fn elbo_terms(tables: &Tables, params: &ModelParams, state: &VariationalState, exec: Exec) -> Result<ElboTerms> {
    let n = tables.n;
    let q = tables.q;
    let p = &state.p;
    let weighted: Vec<f64> = (0..n * q).map(|idx| state.tau[idx] * p[idx % q]).collect();

    let rows = exec.map(n, |i| {
        let sig = tables.sig_row(i);
        let noise = tables.noise_row(i);
        let wi = &weighted[i * q..(i + 1) * q];
        let mut acc = 0.0;
        for j in i + 1..n {
            let f_n = noise[j];
            let tj = state.row(j);
            let s = &sig[j * q..(j + 1) * q];
            let mut within = 0.0;
            for b in 0..q {
                within += wi[b] * tj[b] * (s[b] - f_n);
            }
            acc += f_n + within;
        }
        acc
    });
    let likelihood: f64 = rows.iter().sum();

    let ln_psi = safe_ln(params.psi);
    let ln_not_psi = safe_ln(1.0 - params.psi);
    let ln_alpha: Vec<f64> = params.alpha.iter().map(|&a| safe_ln(a)).collect();
    let per_block: Vec<f64> = p.iter().map(|&pb| pb * ln_psi + (1.0 - pb) * ln_not_psi).collect();
    let mut membership_prior = 0.0;
    let mut tau_entropy = 0.0;
    let mut signal_prior = 0.0;
    for i in 0..n {
        for (b, &t) in state.row(i).iter().enumerate() {
            membership_prior += t * ln_alpha[b];
            tau_entropy -= xlogx(t);
            signal_prior += t * per_block[b];
        }
    }
    let signal_entropy = -p.iter().map(|&pb| xlogx(pb) + xlogx(1.0 - pb)).sum::<f64>();
    ElboTerms {
        likelihood,
        membership_prior,
        tau_entropy,
        signal_entropy,
        signal_prior,
    }
    .check()
}

/// Hierarchical ELBO of `state` under `params`.
pub fn elbo(net: &MultilayerNetwork, params: &ModelParams, state: &VariationalState) -> Result<f64> {
    elbo_with(net, params, state, Exec::available()).map(|t| t.total())
}

pub fn elbo_with(net: &MultilayerNetwork, params: &ModelParams, state: &VariationalState, exec: Exec) -> Result<ElboTerms> {
    let tables = Tables::new(net, params, exec)?;
    elbo_terms(&tables, params, state, exec)
}

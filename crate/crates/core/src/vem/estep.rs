//! E-step: the membership fixed point and the signal-probability update.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{log_sum_exp, safe_ln, ModelParams, VariationalState, PROB_EPS};
use crate::network::MultilayerNetwork;

use super::elbo::elbo_terms;
use super::tables::Tables;
use super::FitConfig;

/// Halvings of the damping factor tried before the inner loop gives up on a step.
const MAX_BACKTRACK: usize = 12;

/// One undamped pass of the membership fixed point over every row:
/// log τ*_iq = log α_q + P_q Σ_{j≠i} τ_jq (f_q − f_AN)(X_ij) − 1 + P_q log Ψ + (1−P_q) log(1−Ψ),
/// normalised per row. Terms constant in q are dropped before normalisation.
pub(crate) fn tau_star(tables: &Tables, params: &ModelParams, state: &VariationalState, exec: Exec) -> Vec<f64> {
    let n = tables.n;
    let q = tables.q;
    let ln_psi = safe_ln(params.psi);
    let ln_not_psi = safe_ln(1.0 - params.psi);
    let base: Vec<f64> = (0..q)
        .map(|b| {
            let p = state.p[b];
            safe_ln(params.alpha[b]) - 1.0 + p * ln_psi + (1.0 - p) * ln_not_psi
        })
        .collect();
    let mut out = vec![0.0; n * q];
    exec.fill_rows(&mut out, q, |i, row| {
        let sig = tables.sig_row(i);
        let noise = tables.noise_row(i);
        let mut score = vec![0.0; q];
        for j in (0..n).filter(|&j| j != i) {
            let f_n = noise[j];
            let tj = state.row(j);
            let s = &sig[j * q..(j + 1) * q];
            for b in 0..q {
                score[b] += tj[b] * (s[b] - f_n);
            }
        }
        for b in 0..q {
            score[b] = base[b] + state.p[b] * score[b];
        }
        let lse = log_sum_exp(&score);
        for b in 0..q {
            row[b] = (score[b] - lse).exp();
        }
    });
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSweep {
    pub iterations: usize,
    /// Largest |Δτ| between the input τ and the result.
    pub max_change: f64,
    pub elbo: f64,
}

/// Damped fixed-point iterations on τ. A step that would lower the bound is
/// retried with half the damping; the loop ends at `tol_tau`, at
/// `tau_inner_max`, or when no ascent step is found.
pub(crate) fn tau_inner_loop(
    tables: &Tables,
    params: &ModelParams,
    state: &mut VariationalState,
    cfg: &FitConfig,
    mut current: f64,
) -> Result<TauSweep> {
    let start = state.tau.clone();
    let mut iterations = 0;
    for it in 0..cfg.tau_inner_max {
        iterations = it + 1;
        let star = tau_star(tables, params, state, cfg.exec);
        if star.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("tau update diverged at inner iteration {it}")));
        }
        let mut step = cfg.damping;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACK {
            let mut cand = state.clone();
            for (c, (&s, &t)) in cand.tau.iter_mut().zip(star.iter().zip(&state.tau)) {
                *c = step * s + (1.0 - step) * t;
            }
            normalize_rows(&mut cand);
            let value = elbo_terms(tables, params, &cand, cfg.exec)?.total();
            if value >= current {
                accepted = Some((cand, value));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, value)) = accepted else { break };
        let change = max_abs_diff(&cand.tau, &state.tau);
        *state = cand;
        current = value;
        if change < cfg.tol_tau {
            break;
        }
    }
    Ok(TauSweep {
        iterations,
        max_change: max_abs_diff(&start, &state.tau),
        elbo: current,
    })
}

pub(crate) fn normalize_rows(state: &mut VariationalState) {
    let q = state.num_blocks();
    for row in state.tau.chunks_mut(q) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
}

/// Run the membership fixed point for fixed parameters and signal probabilities.
pub fn estimate_tau(
    net: &MultilayerNetwork,
    params: &ModelParams,
    state: &VariationalState,
    cfg: &FitConfig,
) -> Result<(VariationalState, TauSweep)> {
    let tables = Tables::new(net, params, cfg.exec)?;
    let mut out = state.clone();
    let current = elbo_terms(&tables, params, &out, cfg.exec)?.total();
    let sweep = tau_inner_loop(&tables, params, &mut out, cfg, current)?;
    Ok((out, sweep))
}

/// Per-block signal-vs-noise log-density gap Σ_{i<j} τ_iq τ_jq (f_q − f_AN)(X_ij).
pub(crate) fn density_gaps(tables: &Tables, state: &VariationalState, exec: Exec) -> Vec<f64> {
    let n = tables.n;
    let q = tables.q;
    let rows = exec.map(n, |i| {
        let sig = tables.sig_row(i);
        let noise = tables.noise_row(i);
        let ti = state.row(i);
        let mut acc = vec![0.0; q];
        for j in i + 1..n {
            let f_n = noise[j];
            let tj = state.row(j);
            let s = &sig[j * q..(j + 1) * q];
            for b in 0..q {
                acc[b] += ti[b] * tj[b] * (s[b] - f_n);
            }
        }
        acc
    });
    let mut gaps = vec![0.0; q];
    for r in rows {
        for (g, v) in gaps.iter_mut().zip(r) {
            *g += v;
        }
    }
    gaps
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Signal probabilities from the density gaps: N̂_q = σ(log((1−Ψ)/Ψ) − gap_q),
/// normalised so Σ N̂ = 1, then P_q = 1 − N̂_q clamped to [ε, 1−ε].
/// Evaluated in log space.
pub fn signal_probabilities(gaps: &[f64], psi: f64) -> Vec<f64> {
    let offset = safe_ln(1.0 - psi) - safe_ln(psi);
    let log_noise: Vec<f64> = gaps.iter().map(|&g| log_sigmoid(offset - g)).collect();
    let lse = log_sum_exp(&log_noise);
    log_noise
        .iter()
        .map(|&l| (1.0 - (l - lse).exp()).clamp(PROB_EPS, 1.0 - PROB_EPS))
        .collect()
}

pub(crate) fn p_star(tables: &Tables, params: &ModelParams, state: &VariationalState, exec: Exec) -> Vec<f64> {
    signal_probabilities(&density_gaps(tables, state, exec), params.psi)
}

/// Updated signal probabilities P for the current τ and parameters.
pub fn estimate_p(net: &MultilayerNetwork, params: &ModelParams, state: &VariationalState) -> Result<Vec<f64>> {
    let exec = Exec::available();
    let tables = Tables::new(net, params, exec)?;
    Ok(p_star(&tables, params, state, exec))
}

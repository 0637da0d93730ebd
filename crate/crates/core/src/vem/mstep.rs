//! M-step estimators: block proportions, per-block laws blended with the
//! ambient law by P_q, and the ambient law blended across interstitial and
//! noise-block edges by Ψ.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{clamp_rho, BlockParams, NoiseParams, VariationalState, VAR_FLOOR};
use crate::network::MultilayerNetwork;

/// Blocks with less pair mass than this are reset to the ambient law.
pub const DEGENERATE_MASS: f64 = 1e-8;

/// Per-row partial sums of width `width`, reduced in row order.
fn reduce_rows<F>(exec: Exec, n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let mut buf = vec![0.0; n * width];
    exec.fill_rows(&mut buf, width, f);
    let mut total = vec![0.0; width];
    for row in buf.chunks_exact(width) {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    total
}

/// α_q = Σ_i τ_iq / Σ_iq τ_iq.
pub fn m_step_alpha(state: &VariationalState) -> Vec<f64> {
    let q = state.num_blocks();
    let mut cols = vec![0.0; q];
    for i in 0..state.num_nodes() {
        for (c, t) in cols.iter_mut().zip(state.row(i)) {
            *c += t;
        }
    }
    let total: f64 = cols.iter().sum();
    cols.iter().map(|c| c / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockEstimate {
    pub params: BlockParams,
    /// The block had no pair mass and was reset to the ambient law.
    pub degenerate: bool,
}

fn tri_index(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|h| (h..k).map(move |l| (h, l))).collect()
}

fn estimate_blocks(
    net: &MultilayerNetwork,
    state: &VariationalState,
    which: &[usize],
    noise: &NoiseParams,
    exec: Exec,
) -> Vec<BlockEstimate> {
    let n = net.num_nodes();
    let k = net.num_layers();
    let nb = which.len();
    let first_width = 1 + k;
    let first = reduce_rows(exec, n, nb * first_width, |i, acc| {
        let ti = state.row(i);
        for j in i + 1..n {
            let tj = state.row(j);
            let x = net.edge(i, j);
            for (slot, &b) in which.iter().enumerate() {
                let w = ti[b] * tj[b];
                let a = &mut acc[slot * first_width..(slot + 1) * first_width];
                a[0] += w;
                for h in 0..k {
                    a[1 + h] += w * x[h];
                }
            }
        }
    });

    let mut means = Vec::with_capacity(nb);
    let mut degenerate = Vec::with_capacity(nb);
    for (slot, &b) in which.iter().enumerate() {
        let a = &first[slot * first_width..(slot + 1) * first_width];
        let mass = a[0];
        let p = state.p[b];
        if mass < DEGENERATE_MASS {
            degenerate.push(true);
            means.push(noise.mu.clone());
        } else {
            degenerate.push(false);
            means.push((0..k).map(|h| p * a[1 + h] / mass + (1.0 - p) * noise.mu[h]).collect::<Vec<f64>>());
        }
    }

    let tri = tri_index(k);
    let second_width = tri.len();
    let second = reduce_rows(exec, n, nb * second_width, |i, acc| {
        let ti = state.row(i);
        let mut dev = vec![0.0; k];
        for j in i + 1..n {
            let tj = state.row(j);
            let x = net.edge(i, j);
            for (slot, &b) in which.iter().enumerate() {
                let w = ti[b] * tj[b];
                let mu = &means[slot];
                for h in 0..k {
                    dev[h] = x[h] - mu[h];
                }
                let a = &mut acc[slot * second_width..(slot + 1) * second_width];
                for (t, &(h, l)) in tri.iter().enumerate() {
                    a[t] += w * dev[h] * dev[l];
                }
            }
        }
    });

    which
        .iter()
        .enumerate()
        .map(|(slot, &b)| {
            if degenerate[slot] {
                return BlockEstimate {
                    params: noise.as_block(),
                    degenerate: true,
                };
            }
            let mass = first[slot * first_width];
            let m2 = &second[slot * second_width..(slot + 1) * second_width];
            let p = state.p[b];
            let moment = |h: usize, l: usize| {
                let t = tri.iter().position(|&e| e == (h.min(l), h.max(l))).expect("triangle entry");
                m2[t] / mass
            };
            let var: Vec<f64> = (0..k)
                .map(|h| (p * moment(h, h) + (1.0 - p) * noise.var[h]).max(VAR_FLOOR))
                .collect();
            let mut rho = f64::NEG_INFINITY;
            for h in 0..k {
                for l in h + 1..k {
                    let cross = p * moment(h, l);
                    rho = rho.max(cross / (var[h] * var[l]).sqrt());
                }
            }
            let rho = if k < 2 { 0.0 } else { clamp_rho(rho, k) };
            BlockEstimate {
                params: BlockParams {
                    mu: means[slot].clone(),
                    var,
                    rho,
                },
                degenerate: false,
            }
        })
        .collect()
}

/// Closed-form update for block `q` given τ, P and the current ambient law.
pub fn m_step_block(
    net: &MultilayerNetwork,
    state: &VariationalState,
    q: usize,
    noise: &NoiseParams,
) -> Result<BlockEstimate> {
    if q >= state.num_blocks() {
        return Err(Error::invalid(format!("block index {q} out of range")));
    }
    Ok(estimate_blocks(net, state, &[q], noise, Exec::available()).remove(0))
}

pub(crate) fn m_step_blocks(
    net: &MultilayerNetwork,
    state: &VariationalState,
    noise: &NoiseParams,
    exec: Exec,
) -> Vec<BlockEstimate> {
    let all: Vec<usize> = (0..state.num_blocks()).collect();
    estimate_blocks(net, state, &all, noise, exec)
}

/// Mix two weighted averages with coefficients Ψ and 1 − Ψ, dropping a side
/// whose weight mass is zero and renormalising the coefficients.
fn blend(psi: f64, cross: (f64, f64), within: (f64, f64)) -> Option<f64> {
    let (cross_mass, cross_sum) = cross;
    let (within_mass, within_sum) = within;
    let mut num = 0.0;
    let mut den = 0.0;
    if cross_mass > 0.0 && psi > 0.0 {
        num += psi * cross_sum / cross_mass;
        den += psi;
    }
    if within_mass > 0.0 && psi < 1.0 {
        num += (1.0 - psi) * within_sum / within_mass;
        den += 1.0 - psi;
    }
    (den > 0.0).then(|| num / den)
}

/// Ambient mean and diagonal variance.
pub fn m_step_noise(net: &MultilayerNetwork, state: &VariationalState, psi: f64) -> Result<NoiseParams> {
    m_step_noise_with(net, state, psi, Exec::available())
}

pub(crate) fn m_step_noise_with(
    net: &MultilayerNetwork,
    state: &VariationalState,
    psi: f64,
    exec: Exec,
) -> Result<NoiseParams> {
    let n = net.num_nodes();
    let k = net.num_layers();
    let q = state.num_blocks();
    let not_signal: Vec<f64> = state.p.iter().map(|p| 1.0 - p).collect();
    let row_sum: Vec<f64> = (0..n).map(|i| state.row(i).iter().sum()).collect();
    // Edge weights: interstitial Σ_{q≠l} τ_iq τ_jl and noise-block Σ_q τ_iq τ_jq (1−P_q).
    let weights = |i: usize, j: usize| {
        let (ti, tj) = (state.row(i), state.row(j));
        let mut same = 0.0;
        let mut within = 0.0;
        for b in 0..q {
            let w = ti[b] * tj[b];
            same += w;
            within += w * not_signal[b];
        }
        ((row_sum[i] * row_sum[j] - same).max(0.0), within)
    };

    let width = 2 + 2 * k;
    let first = reduce_rows(exec, n, width, |i, acc| {
        for j in i + 1..n {
            let (c, u) = weights(i, j);
            let x = net.edge(i, j);
            acc[0] += c;
            acc[1] += u;
            for h in 0..k {
                acc[2 + h] += c * x[h];
                acc[2 + k + h] += u * x[h];
            }
        }
    });
    let (cross_mass, within_mass) = (first[0], first[1]);
    let mu = (0..k)
        .map(|h| blend(psi, (cross_mass, first[2 + h]), (within_mass, first[2 + k + h])))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| Error::numerical("noise estimate undefined: no interstitial or noise-block mass"))?;

    let second = reduce_rows(exec, n, 2 * k, |i, acc| {
        for j in i + 1..n {
            let (c, u) = weights(i, j);
            let x = net.edge(i, j);
            for h in 0..k {
                let d = (x[h] - mu[h]).powi(2);
                acc[h] += c * d;
                acc[k + h] += u * d;
            }
        }
    });
    let var = (0..k)
        .map(|h| {
            blend(psi, (cross_mass, second[h]), (within_mass, second[k + h]))
                .expect("mass checked above")
                .max(VAR_FLOOR)
        })
        .collect();
    Ok(NoiseParams { mu, var })
}

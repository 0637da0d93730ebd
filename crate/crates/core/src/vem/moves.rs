//! Escapes from two recurring local optima, tried after the main loop has
//! converged. Each candidate is re-fitted from scratch and kept only if its
//! final bound beats the incumbent.
//!
//! * noise swap: the block holding the noise role has its parameters tied to
//!   the ambient law, so its density gap is exactly zero and it never gives
//!   the role up. Hand the role to another block and re-fit.
//! * split/merge: two true blocks sharing one fitted block while another
//!   fitted block is (nearly) empty. Split a block by 2-means on the nodes'
//!   mean edge weight towards every block, and fold the smallest block into
//!   its members' next-best blocks.

use crate::exec::Exec;
use crate::init::kmeans;
use crate::model::{argmax, argmin, VariationalState, PROB_EPS};
use crate::network::MultilayerNetwork;

use super::FitConfig;

/// Per node: mean weight towards each block (τ-weighted), layer-major within block.
fn profiles(net: &MultilayerNetwork, state: &VariationalState, exec: Exec) -> Vec<Vec<f64>> {
    let n = net.num_nodes();
    let k = net.num_layers();
    let q = state.num_blocks();
    exec.map(n, |i| {
        let mut sum = vec![0.0; q * k];
        let mut mass = vec![0.0; q];
        for j in (0..n).filter(|&j| j != i) {
            let x = net.edge(i, j);
            for (c, &t) in state.row(j).iter().enumerate() {
                mass[c] += t;
                for h in 0..k {
                    sum[c * k + h] += t * x[h];
                }
            }
        }
        for c in 0..q {
            let m = if mass[c] > 0.0 { mass[c] } else { 1.0 };
            sum[c * k..(c + 1) * k].iter_mut().for_each(|v| *v /= m);
        }
        sum
    })
}

pub(crate) fn candidates(net: &MultilayerNetwork, state: &VariationalState, cfg: &FitConfig) -> Vec<VariationalState> {
    let q = state.num_blocks();
    let mut out = Vec::new();
    if q < 2 {
        return out;
    }
    let noise = argmin(&state.p);
    for b in (0..q).filter(|&b| b != noise) {
        let mut s = state.clone();
        s.p = (0..q).map(|c| if c == b { PROB_EPS } else { 1.0 - PROB_EPS }).collect();
        out.push(s);
    }

    let labels = state.hard_labels();
    let mut sizes = vec![0usize; q];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let target = (0..q).min_by_key(|&c| (sizes[c], c)).expect("q >= 2");
    let prof = profiles(net, state, cfg.exec);
    // Fold the target's members into their best other block.
    let folded: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l != target {
                return l;
            }
            let mut row = state.row(i).to_vec();
            row[target] = f64::NEG_INFINITY;
            argmax(&row)
        })
        .collect();
    for s in (0..q).filter(|&s| s != target) {
        let members: Vec<usize> = (0..folded.len()).filter(|&i| folded[i] == s).collect();
        if members.len() < 4 {
            continue;
        }
        let points: Vec<Vec<f64>> = members.iter().map(|&i| prof[i].clone()).collect();
        let Ok(km) = kmeans(&points, 2, cfg.kmeans_restarts, cfg.seed, cfg.exec) else {
            continue;
        };
        let mut next = folded.clone();
        for (&i, &part) in members.iter().zip(&km.labels) {
            if part == 1 {
                next[i] = target;
            }
        }
        if next != labels {
            out.push(VariationalState::from_labels(&next, q, cfg.soft_eps));
        }
    }
    out
}

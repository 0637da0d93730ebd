//! Building weighted layers from raw data: agreement similarity with the
//! Fisher transform, strength-normalised logits, and layer aggregation.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::network::MultilayerNetwork;

/// Agreement ratios are pulled this far inside (−1, 1) before atanh.
pub const AGREEMENT_CLAMP: f64 = 1e-7;
/// Strength ratios are clamped to `[LOGIT_CLAMP, 1 − LOGIT_CLAMP]`.
pub const LOGIT_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Yes,
    No,
    Missing,
}

impl Response {
    fn sign(self) -> i8 {
        match self {
            Response::Yes => 1,
            Response::No => -1,
            Response::Missing => 0,
        }
    }
}

/// One layer of survey items: `items[s][u]` is subject s's answer to item u.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseLayer {
    pub name: String,
    pub items: Vec<Vec<Response>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub n_subjects: usize,
    pub subjects: Vec<String>,
    pub layers: Vec<ResponseLayer>,
}

/// atanh(r); errors outside the open unit interval.
pub fn fisher(r: f64) -> Result<f64> {
    if !(r.abs() < 1.0) {
        return Err(Error::invalid(format!("fisher transform needs |r| < 1, got {r}")));
    }
    // Odd by construction, independent of libm symmetry.
    Ok(r.signum() * r.abs().atanh())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Pairwise agreement network: per layer, +1 for a shared "yes", −1 for a
/// shared "no", 0 otherwise, averaged over the layer's items and mapped
/// through atanh after clamping away from ±1.
pub fn build_similarity_network(responses: &ResponseMatrix, exec: Exec) -> Result<MultilayerNetwork> {
    let n = responses.n_subjects;
    if n < 2 {
        return Err(Error::invalid("similarity network needs at least 2 subjects"));
    }
    if responses.layers.is_empty() {
        return Err(Error::invalid("response matrix has no layers"));
    }
    let k = responses.layers.len();
    let mut signs: Vec<Vec<Vec<i8>>> = Vec::with_capacity(k);
    for layer in &responses.layers {
        if layer.items.len() != n {
            return Err(Error::invalid(format!(
                "layer {} has {} rows, expected {n}",
                layer.name,
                layer.items.len()
            )));
        }
        let u = layer.items.first().map_or(0, |r| r.len());
        if u == 0 {
            return Err(Error::invalid(format!("layer {} has no items", layer.name)));
        }
        if layer.items.iter().any(|r| r.len() != u) {
            return Err(Error::invalid(format!("layer {} has ragged rows", layer.name)));
        }
        signs.push(
            layer
                .items
                .iter()
                .map(|r| r.iter().map(|x| x.sign()).collect())
                .collect(),
        );
    }

    let rows: Vec<Vec<f64>> = exec.map(n, |i| {
        let mut out = Vec::with_capacity((n - i - 1) * k);
        for j in i + 1..n {
            for layer in &signs {
                let (a, b) = (&layer[i], &layer[j]);
                let total: i64 = a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| if x == y { x as i64 } else { 0 })
                    .sum();
                let r = total as f64 / a.len() as f64;
                let r = r.clamp(-1.0 + AGREEMENT_CLAMP, 1.0 - AGREEMENT_CLAMP);
                out.push(fisher(r).expect("clamped into (-1, 1)"));
            }
        }
        out
    });
    let mut net = MultilayerNetwork::new(n, k, rows.concat())?;
    net.node_labels = Some(responses.subjects.clone());
    Ok(net)
}

/// Divide each weight by its layer's total strength, clamp, and take the logit.
pub fn normalize_logit(net: &MultilayerNetwork) -> Result<MultilayerNetwork> {
    let k = net.num_layers();
    if net.weights().iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("logit normalisation needs nonnegative weights"));
    }
    let mut totals = vec![0.0; k];
    for w in net.weights().chunks_exact(k) {
        for (t, v) in totals.iter_mut().zip(w) {
            *t += v;
        }
    }
    if let Some(h) = totals.iter().position(|&t| !(t > 0.0)) {
        return Err(Error::invalid(format!("layer {h} has no trips")));
    }
    let weights = net
        .weights()
        .chunks_exact(k)
        .flat_map(|w| {
            w.iter()
                .zip(&totals)
                .map(|(v, t)| logit((v / t).clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut out = MultilayerNetwork::new(net.num_nodes(), k, weights)?;
    out.node_labels = net.node_labels.clone();
    Ok(out)
}

/// Single-layer network holding the entrywise sum over layers.
pub fn sum_layers(net: &MultilayerNetwork) -> MultilayerNetwork {
    let weights = net
        .weights()
        .chunks_exact(net.num_layers())
        .map(|w| w.iter().sum())
        .collect();
    let mut out = MultilayerNetwork::new(net.num_nodes(), 1, weights).expect("sum of finite weights");
    out.node_labels = net.node_labels.clone();
    out
}

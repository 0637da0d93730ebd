use crate::error::{Error, Result};

/// Dense, symmetric, K-layer weighted graph without self-loops.
///
/// Only pairs `i < j` are stored, in lexicographic order; each pair holds its
/// K layer weights contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilayerNetwork {
    n: usize,
    layers: usize,
    weights: Vec<f64>,
    pub node_labels: Option<Vec<String>>,
}

#[inline]
pub fn num_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

impl MultilayerNetwork {
    /// `weights` is pair-major: pair p occupies `weights[p*K..(p+1)*K]`.
    pub fn new(n: usize, layers: usize, weights: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("a network needs at least 2 nodes"));
        }
        if layers < 1 {
            return Err(Error::invalid("a network needs at least 1 layer"));
        }
        if weights.len() != num_pairs(n) * layers {
            return Err(Error::invalid(format!(
                "expected {} weights for n={n}, K={layers}, got {}",
                num_pairs(n) * layers,
                weights.len()
            )));
        }
        if let Some(p) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("non-finite weight at entry {p}")));
        }
        Ok(MultilayerNetwork {
            n,
            layers,
            weights,
            node_labels: None,
        })
    }

    /// Build from a closure `f(i, j, layer)` evaluated for every `i < j`.
    pub fn from_fn(n: usize, layers: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut weights = Vec::with_capacity(num_pairs(n) * layers);
        for i in 0..n {
            for j in i + 1..n {
                for k in 0..layers {
                    weights.push(f(i, j, k));
                }
            }
        }
        Self::new(n, layers, weights)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn num_pairs(&self) -> usize {
        num_pairs(self.n)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the unordered pair {i, j}; `i != j`.
    #[inline]
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j && i < self.n && j < self.n);
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * (2 * self.n - a - 1) / 2 + (b - a - 1)
    }

    /// Edge vector X_ij (symmetric in i, j).
    #[inline]
    pub fn edge(&self, i: usize, j: usize) -> &[f64] {
        let p = self.pair_index(i, j);
        &self.weights[p * self.layers..(p + 1) * self.layers]
    }

    #[inline]
    pub fn pair(&self, p: usize) -> &[f64] {
        &self.weights[p * self.layers..(p + 1) * self.layers]
    }

    /// All pairs in storage order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        let n = self.n;
        (0..n)
            .flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
            .zip(self.weights.chunks_exact(self.layers))
            .map(|((i, j), w)| (i, j, w))
    }

    /// Relabel nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::invalid("permutation length differs from node count"));
        }
        self.induced(perm)
    }

    /// Subgraph on `nodes` (distinct, in the given order).
    pub fn induced(&self, nodes: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n];
        for &v in nodes {
            if v >= self.n || std::mem::replace(&mut seen[v], true) {
                return Err(Error::invalid("node list has out-of-range or repeated entries"));
            }
        }
        let m = nodes.len();
        let k = self.layers;
        let mut weights = Vec::with_capacity(num_pairs(m) * k);
        for i in 0..m {
            for j in i + 1..m {
                weights.extend_from_slice(self.edge(nodes[i], nodes[j]));
            }
        }
        let mut out = Self::new(m, k, weights)?;
        out.node_labels = self
            .node_labels
            .as_ref()
            .map(|l| nodes.iter().map(|&p| l[p].clone()).collect());
        Ok(out)
    }

    /// Reorder layers: layer `h` of the result is layer `order[h]` of `self`.
    pub fn with_layer_order(&self, order: &[usize]) -> Result<Self> {
        if order.is_empty() || order.iter().any(|&h| h >= self.layers) {
            return Err(Error::invalid("layer order out of range"));
        }
        let weights = self
            .weights
            .chunks_exact(self.layers)
            .flat_map(|w| order.iter().map(move |&h| w[h]))
            .collect();
        Self::new(self.n, order.len(), weights)
    }
}

use crate::error::Result;
use crate::exec::Exec;
use crate::model::{Gaussian, ModelParams};
use crate::network::MultilayerNetwork;

/// Log-densities of every edge under every block law and under the ambient
/// law, stored as full symmetric n×n rows so each node's row is contiguous.
pub(crate) struct Tables {
    pub n: usize,
    pub q: usize,
    /// `sig[(i*n + j)*q + b]` = log f(X_ij; μ_b, Σ_b); zero on the diagonal.
    pub sig: Vec<f64>,
    /// `noise[i*n + j]` = log f(X_ij; μ_AN, Σ_AN); zero on the diagonal.
    pub noise: Vec<f64>,
}

impl Tables {
    pub fn new(net: &MultilayerNetwork, params: &ModelParams, exec: Exec) -> Result<Self> {
        let n = net.num_nodes();
        let q = params.num_blocks();
        let blocks = params
            .blocks
            .iter()
            .map(|b| b.gaussian())
            .collect::<Result<Vec<_>>>()?;
        let noise_g = params.noise.gaussian()?;
        let mut sig = vec![0.0; n * n * q];
        exec.fill_rows(&mut sig, n * q, |i, row| {
            for j in (0..n).filter(|&j| j != i) {
                let x = net.edge(i, j);
                for (b, g) in blocks.iter().enumerate() {
                    row[j * q + b] = g.log_pdf(x);
                }
            }
        });
        let mut noise = vec![0.0; n * n];
        fill_noise(net, &noise_g, &mut noise, exec);
        Ok(Tables { n, q, sig, noise })
    }

    pub fn set_block(&mut self, net: &MultilayerNetwork, b: usize, g: &Gaussian, exec: Exec) {
        let (n, q) = (self.n, self.q);
        exec.fill_rows(&mut self.sig, n * q, |i, row| {
            for j in (0..n).filter(|&j| j != i) {
                row[j * q + b] = g.log_pdf(net.edge(i, j));
            }
        });
    }

    pub fn set_noise(&mut self, net: &MultilayerNetwork, g: &Gaussian, exec: Exec) {
        fill_noise(net, g, &mut self.noise, exec);
    }

    #[inline]
    pub fn sig_row(&self, i: usize) -> &[f64] {
        &self.sig[i * self.n * self.q..(i + 1) * self.n * self.q]
    }

    #[inline]
    pub fn noise_row(&self, i: usize) -> &[f64] {
        &self.noise[i * self.n..(i + 1) * self.n]
    }
}

fn fill_noise(net: &MultilayerNetwork, g: &Gaussian, out: &mut [f64], exec: Exec) {
    let n = net.num_nodes();
    exec.fill_rows(out, n, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j == i { 0.0 } else { g.log_pdf(net.edge(i, j)) };
        }
    });
}

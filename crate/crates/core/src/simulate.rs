//! Synthetic networks: random-parameter draws with separability filtering,
//! and the fixed four-block trivariate design.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{clamp_rho, psi, BlockParams, ModelParams, NoiseParams};
use crate::network::MultilayerNetwork;
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockCount {
    Fixed(usize),
    /// Uniform over `lo..=hi`.
    Uniform(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub n: usize,
    pub layers: usize,
    /// Total block count, noise block included.
    pub blocks: BlockCount,
    /// Per-layer prior centre of the signal block means.
    pub prior_means: Vec<f64>,
    pub prior_sd: f64,
    /// Variances are |N(0, prior_sd²)| floored here.
    pub var_floor: f64,
    pub noise_mu: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub dirichlet_conc: f64,
    pub min_block_size: usize,
    pub rho_range: (f64, f64),
    pub keep_frac: f64,
    pub seed: u64,
}

impl SimSpec {
    fn experiment1(n: usize, prior_means: Vec<f64>, noise_mu: Vec<f64>, seed: u64) -> Self {
        let layers = prior_means.len();
        SimSpec {
            n,
            layers,
            blocks: BlockCount::Uniform(3, 5),
            prior_means,
            prior_sd: 5f64.sqrt(),
            var_floor: 0.05,
            noise_mu,
            noise_var: vec![1.0; layers],
            dirichlet_conc: 5.0,
            min_block_size: 3,
            rho_range: (0.0, 1.0),
            keep_frac: 0.10,
            seed,
        }
    }

    /// Two layers, 500 nodes.
    pub fn bivariate(seed: u64) -> Self {
        Self::experiment1(500, vec![0.0, 2.0], vec![-1.0, 0.0], seed)
    }

    /// Three layers, 200 nodes.
    pub fn trivariate(seed: u64) -> Self {
        Self::experiment1(200, vec![-2.0, 0.0, 2.0], vec![-1.0, 0.0, 1.0], seed)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.layers;
        if k == 0 || self.prior_means.len() != k || self.noise_mu.len() != k || self.noise_var.len() != k {
            return Err(Error::invalid("simulation spec: per-layer vectors must have length K"));
        }
        let (lo, hi) = match self.blocks {
            BlockCount::Fixed(q) => (q, q),
            BlockCount::Uniform(lo, hi) => (lo, hi),
        };
        if lo < 2 || hi < lo {
            return Err(Error::invalid("simulation spec: need Q >= 2 (block 0 is the noise block)"));
        }
        if self.n < hi * self.min_block_size.max(1) {
            return Err(Error::invalid("simulation spec: too few nodes for the block count"));
        }
        if !(self.prior_sd > 0.0) || !(self.var_floor > 0.0) || !(self.dirichlet_conc > 0.0) {
            return Err(Error::invalid("simulation spec: scales must be positive"));
        }
        if self.noise_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("simulation spec: noise variances must be positive"));
        }
        let (a, b) = self.rho_range;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return Err(Error::invalid("simulation spec: rho_range must be a sub-interval of [0, 1]"));
        }
        if !(self.keep_frac > 0.0 && self.keep_frac <= 1.0) {
            return Err(Error::invalid("simulation spec: keep_frac must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn dirichlet(conc: f64, q: usize, rng: &mut Rng) -> Vec<f64> {
    let gamma = Gamma::new(conc, 1.0).expect("positive shape");
    let mut g: Vec<f64> = (0..q).map(|_| gamma.sample(rng)).collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Draw one parameter set. Block 0 is the noise block and carries the
/// ambient law.
pub fn gen_params(spec: &SimSpec, rng: &mut Rng) -> Result<ModelParams> {
    spec.validate()?;
    let q = match spec.blocks {
        BlockCount::Fixed(q) => q,
        BlockCount::Uniform(lo, hi) => rng.random_range(lo..=hi),
    };
    let k = spec.layers;
    let noise = NoiseParams {
        mu: spec.noise_mu.clone(),
        var: spec.noise_var.clone(),
    };
    let mut blocks = vec![noise.as_block()];
    for _ in 1..q {
        let mu = (0..k)
            .map(|h| spec.prior_means[h] + spec.prior_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let var = (0..k)
            .map(|_| (spec.prior_sd * rng.sample::<f64, _>(StandardNormal)).abs().max(spec.var_floor))
            .collect();
        let (lo, hi) = spec.rho_range;
        let rho = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let rho = if k < 2 { 0.0 } else { clamp_rho(rho, k) };
        blocks.push(BlockParams { mu, var, rho });
    }
    Ok(ModelParams {
        blocks,
        noise,
        alpha: dirichlet(spec.dirichlet_conc, q, rng),
        psi: psi(q),
        noise_block: 0,
    })
}

/// Multinomial block sizes under `alpha`, redrawn until every block has at
/// least `min_size` nodes.
pub fn sample_sizes(alpha: &[f64], n: usize, min_size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if alpha.is_empty() || n < alpha.len() * min_size {
        return Err(Error::invalid("cannot draw block sizes: too few nodes"));
    }
    let cumulative: Vec<f64> = alpha
        .iter()
        .scan(0.0, |acc, a| {
            *acc += a;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().expect("non-empty");
    for _ in 0..10_000 {
        let mut sizes = vec![0; alpha.len()];
        for _ in 0..n {
            let u = rng.random::<f64>() * total;
            let b = cumulative.iter().position(|&c| u < c).unwrap_or(alpha.len() - 1);
            sizes[b] += 1;
        }
        if sizes.iter().all(|&s| s >= min_size) {
            return Ok(sizes);
        }
    }
    Err(Error::invalid("could not draw block sizes above the minimum"))
}

/// Sample a dense network: within-block pairs of a signal block from its own
/// law, all other pairs from the ambient law. Node labels are shuffled.
pub fn gen_network(params: &ModelParams, sizes: &[usize], rng: &mut Rng) -> Result<(MultilayerNetwork, Vec<usize>)> {
    if sizes.len() != params.num_blocks() {
        return Err(Error::invalid("one size per block required"));
    }
    if sizes.iter().any(|&s| s < 1) {
        return Err(Error::invalid("every block needs at least one node"));
    }
    let n: usize = sizes.iter().sum();
    let k = params.num_layers();
    let mut labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
    labels.shuffle(rng);

    let factor = |cov: DMatrix<f64>| -> Result<DMatrix<f64>> {
        Cholesky::new(cov).map(|c| c.l()).ok_or(Error::NotPositiveDefinite)
    };
    let noise_l = factor(params.noise.as_block().covariance()?)?;
    let block_l = params
        .blocks
        .iter()
        .map(|b| factor(b.covariance()?))
        .collect::<Result<Vec<_>>>()?;

    let mut weights = Vec::with_capacity(n * (n - 1) / 2 * k);
    let mut z = DVector::zeros(k);
    for i in 0..n {
        for j in i + 1..n {
            let (mu, l) = if labels[i] == labels[j] && labels[i] != params.noise_block {
                (&params.blocks[labels[i]].mu, &block_l[labels[i]])
            } else {
                (&params.noise.mu, &noise_l)
            };
            for h in 0..k {
                z[h] = rng.sample(StandardNormal);
            }
            let x = l * &z;
            weights.extend((0..k).map(|h| mu[h] + x[h]));
        }
    }
    Ok((MultilayerNetwork::new(n, k, weights)?, labels))
}

/// Bhattacharyya distance between two Gaussians.
pub fn bhattacharyya(p: &BlockParams, q: &BlockParams) -> Result<f64> {
    if p.mu.len() != q.mu.len() {
        return Err(Error::invalid("dimension mismatch"));
    }
    let sp = p.covariance()?;
    let sq = q.covariance()?;
    let avg = (&sp + &sq) * 0.5;
    let chol = Cholesky::new(avg).ok_or_else(|| Error::numerical("singular average covariance"))?;
    let d = DVector::from_iterator(p.mu.len(), p.mu.iter().zip(&q.mu).map(|(a, b)| a - b));
    let quad = d.dot(&chol.solve(&d));
    let ln_det = |m: DMatrix<f64>| -> Result<f64> {
        let c = Cholesky::new(m).ok_or(Error::NotPositiveDefinite)?;
        Ok(2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    };
    let ln_avg = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(quad / 8.0 + 0.5 * (ln_avg - 0.5 * (ln_det(sp)? + ln_det(sq)?)))
}

/// Smallest pairwise distance among all blocks, noise block included.
pub fn min_block_distance(params: &ModelParams) -> Result<f64> {
    let mut best = f64::INFINITY;
    for a in 0..params.num_blocks() {
        for b in a + 1..params.num_blocks() {
            best = best.min(bhattacharyya(&params.blocks[a], &params.blocks[b])?);
        }
    }
    Ok(best)
}

/// Indices of the ⌈keep_frac · len⌉ largest scores, in rank order; ties go
/// to the lower index.
pub fn filter_separable(min_distances: &[f64], keep_frac: f64) -> Vec<usize> {
    let keep = ((min_distances.len() as f64 * keep_frac).ceil() as usize).min(min_distances.len());
    let mut order: Vec<usize> = (0..min_distances.len()).collect();
    order.sort_by(|&a, &b| min_distances[b].total_cmp(&min_distances[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub params: ModelParams,
    pub sizes: Vec<usize>,
    pub min_distance: f64,
}

/// Draw `count` parameter sets, each from its own stream.
pub fn gen_candidates(spec: &SimSpec, count: usize, exec: Exec) -> Result<Vec<Candidate>> {
    spec.validate()?;
    exec.map(count, |index| {
        let mut rng = stream(spec.seed, "candidate", index as u64);
        let params = gen_params(spec, &mut rng)?;
        let sizes = sample_sizes(&params.alpha, spec.n, spec.min_block_size, &mut rng)?;
        let min_distance = min_block_distance(&params)?;
        Ok(Candidate {
            index,
            params,
            sizes,
            min_distance,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone)]
pub struct SimulatedNetwork {
    pub candidate: Candidate,
    pub network: MultilayerNetwork,
    pub truth: Vec<usize>,
}

pub fn realize(spec: &SimSpec, candidate: &Candidate) -> Result<SimulatedNetwork> {
    let mut rng = stream(spec.seed, "network", candidate.index as u64);
    let (network, truth) = gen_network(&candidate.params, &candidate.sizes, &mut rng)?;
    Ok(SimulatedNetwork {
        candidate: candidate.clone(),
        network,
        truth,
    })
}

/// Draw `count` candidates, keep the most separable fraction and sample their
/// networks. Output is in rank order.
pub fn simulate_filtered(spec: &SimSpec, count: usize, exec: Exec) -> Result<Vec<SimulatedNetwork>> {
    if count == 0 || (count as f64) * spec.keep_frac < 1.0 - 1e-12 {
        return Err(Error::invalid("need at least 1/keep_frac candidates"));
    }
    let candidates = gen_candidates(spec, count, exec)?;
    let scores: Vec<f64> = candidates.iter().map(|c| c.min_distance).collect();
    let kept = filter_separable(&scores, spec.keep_frac);
    exec.map(kept.len(), |r| realize(spec, &candidates[kept[r]]))
        .into_iter()
        .collect()
}

/// The fixed trivariate four-block design; block 0 is the noise block.
pub fn experiment2_spec() -> (ModelParams, Vec<usize>) {
    let mu = [
        [5.0, 11.98, 11.55, 10.39],
        [10.0, 16.86, 16.49, 14.81],
        [15.0, 16.69, 21.25, 21.08],
    ];
    let var = [
        [7.88, 13.11, 0.31, 1.16],
        [7.32, 7.67, 4.89, 1.03],
        [6.69, 4.15, 0.06, 4.36],
    ];
    let rho = [0.00, 0.40, 0.15, 0.34];
    let sizes = vec![76, 97, 93, 34];
    let n: usize = sizes.iter().sum();
    let blocks: Vec<BlockParams> = (0..4)
        .map(|b| BlockParams {
            mu: (0..3).map(|h| mu[h][b]).collect(),
            var: (0..3).map(|h| var[h][b]).collect(),
            rho: rho[b],
        })
        .collect();
    let noise = NoiseParams {
        mu: blocks[0].mu.clone(),
        var: blocks[0].var.clone(),
    };
    let params = ModelParams {
        blocks,
        noise,
        alpha: sizes.iter().map(|&s| s as f64 / n as f64).collect(),
        psi: psi(4),
        noise_block: 0,
    };
    (params, sizes)
}

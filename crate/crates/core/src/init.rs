//! Spectral initialisation of τ on the layer-summed graph.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::VariationalState;
use crate::network::MultilayerNetwork;
use crate::rng;
use crate::transform::sum_layers;

const DEGREE_FLOOR: f64 = 1e-12;
const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub blocks: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
    pub soft_eps: f64,
}

impl InitConfig {
    pub fn new(blocks: usize, seed: u64) -> Self {
        InitConfig {
            blocks,
            kmeans_restarts: 10,
            seed,
            soft_eps: 0.05,
        }
    }
}

/// Rows of the eigenvectors belonging to the `dim` smallest eigenvalues of
/// the symmetric normalised Laplacian of the summed, min-shifted graph,
/// each row scaled to unit length.
pub fn spectral_embedding(net: &MultilayerNetwork, dim: usize) -> Result<Vec<Vec<f64>>> {
    let n = net.num_nodes();
    if dim == 0 || dim > n {
        return Err(Error::invalid("embedding dimension must be in 1..=n"));
    }
    let summed = sum_layers(net);
    let min = summed.weights().iter().cloned().fold(f64::INFINITY, f64::min);
    let mut adj = DMatrix::<f64>::zeros(n, n);
    for (i, j, w) in summed.pairs() {
        let a = w[0] - min;
        adj[(i, j)] = a;
        adj[(j, i)] = a;
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| 1.0 / adj.row(i).sum().max(DEGREE_FLOOR).sqrt())
        .collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt_deg[i] * adj[(i, j)] * inv_sqrt_deg[j]
    });
    let eig = SymmetricEigen::try_new(lap, 1e-12, 10_000)
        .ok_or_else(|| Error::numerical("spectral initialization failed"))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("spectral initialization failed"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let cols = &order[..dim];
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<f64> = cols.iter().map(|&c| eig.eigenvectors[(i, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub wcss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().expect("just pushed")));
        }
    }
    centers
}

/// Lloyd iterations from the given centres until assignments stop changing.
pub fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeansResult {
    let k = centers.len();
    let dim = points.first().map_or(0, |p| p.len());
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centers);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seed an empty cluster at the point farthest from its centre.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]])
                            .total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("nonempty");
                centers[c] = points[far].clone();
                labels[far] = c;
            }
        }
    }
    let wcss = labels
        .iter()
        .zip(points)
        .map(|(&l, p)| sq_dist(p, &centers[l]))
        .sum();
    KMeansResult { labels, wcss }
}

/// Best of `restarts` k-means++ runs by within-cluster sum of squares; the
/// lowest restart index wins ties.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64, exec: Exec) -> Result<KMeansResult> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid("k-means needs 1 <= k <= number of points"));
    }
    let runs = exec.map(restarts.max(1), |r| {
        let mut rng = rng::stream(seed, "kmeans", r as u64);
        let seeds = plus_plus_seeds(points, k, &mut rng);
        lloyd(points, seeds, KMEANS_MAX_ITER)
    });
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.wcss < runs[best].wcss {
            best = r;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one restart"))
}

/// Spectral clustering of the summed graph turned into a soft τ, with all
/// signal probabilities started at 1 − 1/Q.
pub fn spectral_init(net: &MultilayerNetwork, cfg: &InitConfig, exec: Exec) -> Result<VariationalState> {
    let n = net.num_nodes();
    let q = cfg.blocks;
    if q == 0 || n <= q {
        return Err(Error::invalid(format!("spectral initialisation needs n > Q >= 1 (n={n}, Q={q})")));
    }
    if cfg.kmeans_restarts == 0 {
        return Err(Error::invalid("kmeans_restarts must be at least 1"));
    }
    if q == 1 {
        return Ok(VariationalState::from_labels(&vec![0; n], 1, cfg.soft_eps));
    }
    let embedding = spectral_embedding(net, q)?;
    let km = kmeans(&embedding, q, cfg.kmeans_restarts, cfg.seed, exec)?;
    Ok(VariationalState::from_labels(&km.labels, q, cfg.soft_eps))
}

/// Uniform-random τ rows; a baseline for tests, not a supported initialiser.
#[doc(hidden)]
pub fn uniform_random_state(n: usize, q: usize, seed: u64) -> VariationalState {
    let mut rng = rng::stream(seed, "uniform-init", 0);
    let mut tau = Vec::with_capacity(n * q);
    for _ in 0..n {
        let row: Vec<f64> = (0..q).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = row.iter().sum();
        tau.extend(row.iter().map(|v| v / s));
    }
    let p = vec![crate::model::psi(q).max(crate::model::PROB_EPS); q];
    VariationalState::new(n, q, tau, p).expect("dimensions match")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.len() == b.len()
            && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    fn two_cliques() -> MultilayerNetwork {
        MultilayerNetwork::from_fn(10, 2, |i, j, k| if (i < 5) == (j < 5) { 1.0 + 0.5 * k as f64 } else { 0.0 }).unwrap()
    }

    #[test]
    fn disjoint_cliques_are_recovered() {
        let net = two_cliques();
        let state = spectral_init(&net, &InitConfig::new(2, 3), Exec::available()).unwrap();
        let labels = state.hard_labels();
        let truth: Vec<usize> = (0..10).map(|i| (i >= 5) as usize).collect();
        assert!(same_partition(&labels, &truth), "{labels:?}");
        assert!(state.max_row_error() < 1e-12);
        assert!(state.tau.iter().all(|&t| t > 0.0 && t < 1.0));
        assert!(state.p.iter().all(|&p| (p - 0.5).abs() < 1e-15));
    }

    #[test]
    fn relabelling_nodes_permutes_rows() {
        let net = two_cliques();
        let perm = [7, 2, 9, 0, 4, 1, 8, 3, 6, 5];
        let a = spectral_init(&net, &InitConfig::new(2, 1), Exec::Sequential).unwrap().hard_labels();
        let b = spectral_init(&net.permuted(&perm).unwrap(), &InitConfig::new(2, 1), Exec::Sequential)
            .unwrap()
            .hard_labels();
        let a_perm: Vec<usize> = perm.iter().map(|&p| a[p]).collect();
        assert!(same_partition(&a_perm, &b));
    }

    #[test]
    fn deterministic_across_exec_modes() {
        let net = MultilayerNetwork::from_fn(20, 1, |i, j, _| ((i * 7 + j * 13) % 5) as f64 + if i % 3 == j % 3 { 4.0 } else { 0.0 })
            .unwrap();
        let cfg = InitConfig::new(3, 42);
        let a = spectral_init(&net, &cfg, Exec::Sequential).unwrap();
        let b = spectral_init(&net, &cfg, Exec::available()).unwrap();
        let c = spectral_init(&net, &cfg, Exec::available()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn single_block_and_bad_sizes() {
        let net = two_cliques();
        let s = spectral_init(&net, &InitConfig::new(1, 0), Exec::Sequential).unwrap();
        assert!(s.tau.iter().all(|&t| t == 1.0));
        assert!(spectral_init(&net, &InitConfig::new(10, 0), Exec::Sequential).is_err());
    }

    #[test]
    fn isolated_node_uses_degree_floor() {
        // Node 0's summed weights all equal the global minimum, so its shifted degree is 0.
        let net = MultilayerNetwork::from_fn(8, 1, |i, j, _| if i == 0 { -1.0 } else if (i < 4) == (j < 4) { 2.0 } else { 0.0 }).unwrap();
        let s = spectral_init(&net, &InitConfig::new(2, 0), Exec::Sequential).unwrap();
        assert!(s.tau.iter().all(|t| t.is_finite()));
    }
}

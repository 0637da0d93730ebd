use approx::assert_abs_diff_eq;
use rand::Rng as _;

use super::estep::{density_gaps, normalize_rows, tau_inner_loop};
use super::*;
use crate::eval::{exact_recovery, Partition};
use crate::init::uniform_random_state;
use crate::model::{build_covariance, log_density, psi};
use crate::rng::stream;
use crate::simulate::{experiment2_spec, gen_network};
use crate::model::PROB_EPS;

fn random_net(n: usize, k: usize, seed: u64) -> MultilayerNetwork {
    let mut rng = stream(seed, "vem-test", 0);
    MultilayerNetwork::from_fn(n, k, |i, j, h| {
        let bump = if (i % 2) == (j % 2) { 1.5 } else { 0.0 };
        bump + h as f64 * 0.3 + rng.random::<f64>() * 2.0 - 1.0
    })
    .unwrap()
}

fn random_params(q: usize, k: usize, seed: u64) -> ModelParams {
    let mut rng = stream(seed, "vem-test-params", 0);
    let blocks = (0..q)
        .map(|_| BlockParams {
            mu: (0..k).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect(),
            var: (0..k).map(|_| 0.5 + rng.random::<f64>()).collect(),
            rho: if k > 1 { rng.random::<f64>() * 0.6 } else { 0.0 },
        })
        .collect();
    let raw: Vec<f64> = (0..q).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    ModelParams {
        blocks,
        noise: NoiseParams {
            mu: (0..k).map(|_| rng.random::<f64>() - 0.5).collect(),
            var: (0..k).map(|_| 0.8 + rng.random::<f64>()).collect(),
        },
        alpha: raw.iter().map(|r| r / total).collect(),
        psi: psi(q),
        noise_block: 0,
    }
}

fn random_state(n: usize, q: usize, seed: u64) -> VariationalState {
    let mut s = uniform_random_state(n, q, seed);
    let mut rng = stream(seed, "vem-test-p", 0);
    s.p = (0..q).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect();
    s
}

fn seq(blocks: usize) -> FitConfig {
    FitConfig {
        exec: Exec::Sequential,
        ..FitConfig::new(blocks)
    }
}

/// E_q[log p(X, Z, C)] + H(q) by enumerating every (Z, C).
fn brute_force_elbo(net: &MultilayerNetwork, params: &ModelParams, state: &VariationalState) -> f64 {
    let n = net.num_nodes();
    let q = state.num_blocks();
    let block_cov: Vec<_> = params.blocks.iter().map(|b| build_covariance(&b.var, b.rho).unwrap()).collect();
    let noise_cov = build_covariance(&params.noise.var, 0.0).unwrap();
    let mut total = 0.0;
    for z_code in 0..q.pow(n as u32) {
        let z: Vec<usize> = (0..n).map(|i| (z_code / q.pow(i as u32)) % q).collect();
        for c_code in 0..(1usize << q) {
            let c: Vec<bool> = (0..q).map(|b| c_code >> b & 1 == 1).collect();
            let mut weight = 1.0;
            let mut log_q = 0.0;
            for i in 0..n {
                weight *= state.tau(i, z[i]);
                log_q += state.tau(i, z[i]).ln();
            }
            for b in 0..q {
                let pb = if c[b] { state.p[b] } else { 1.0 - state.p[b] };
                weight *= pb;
                log_q += pb.ln();
            }
            let mut log_joint = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    let x = net.edge(i, j);
                    log_joint += if z[i] == z[j] && c[z[i]] {
                        log_density(x, &params.blocks[z[i]].mu, &block_cov[z[i]]).unwrap()
                    } else {
                        log_density(x, &params.noise.mu, &noise_cov).unwrap()
                    };
                }
            }
            for &zi in &z {
                log_joint += params.alpha[zi].ln();
                log_joint += if c[zi] { params.psi.ln() } else { (1.0 - params.psi).ln() };
            }
            total += weight * (log_joint - log_q);
        }
    }
    total
}

#[test]
fn elbo_matches_enumeration() {
    for (n, q, k, seed) in [(4, 2, 2, 1), (5, 2, 1, 2), (4, 3, 3, 3)] {
        let net = random_net(n, k, seed);
        let params = random_params(q, k, seed);
        let state = random_state(n, q, seed);
        let got = elbo_with(&net, &params, &state, Exec::Sequential).unwrap().total();
        let want = brute_force_elbo(&net, &params, &state);
        assert_abs_diff_eq!(got, want, epsilon = 1e-10);
    }
}

#[test]
fn two_node_scalar_by_hand() {
    let net = MultilayerNetwork::new(2, 1, vec![1.0]).unwrap();
    let params = ModelParams {
        blocks: vec![
            BlockParams { mu: vec![1.0], var: vec![1.0], rho: 0.0 },
            BlockParams { mu: vec![0.0], var: vec![1.0], rho: 0.0 },
        ],
        noise: NoiseParams { mu: vec![0.0], var: vec![1.0] },
        alpha: vec![0.5, 0.5],
        psi: 0.5,
        noise_block: 1,
    };
    let state = VariationalState::new(2, 2, vec![1.0, 0.0, 1.0, 0.0], vec![0.6, 0.4]).unwrap();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let f_block = -half_ln_2pi;
    let f_noise = -half_ln_2pi - 0.5;
    let likelihood = f_noise + 0.6 * (f_block - f_noise);
    let prior = 2.0 * 0.5f64.ln();
    let p_entropy = -2.0 * (0.6 * 0.6f64.ln() + 0.4 * 0.4f64.ln());
    let signal_prior = 2.0 * 0.5f64.ln();
    let want = likelihood + prior + p_entropy + signal_prior;
    let got = elbo_with(&net, &params, &state, Exec::Sequential).unwrap();
    assert_abs_diff_eq!(got.total(), want, epsilon = 1e-12);
    assert_abs_diff_eq!(got.total(), -2.5455, epsilon = 1e-4);
    assert_eq!(got.tau_entropy, 0.0);
}

#[test]
fn tau_star_maximises_each_row() {
    let net = random_net(9, 2, 4);
    let params = random_params(3, 2, 4);
    let state = random_state(9, 3, 4);
    let tables = Tables::new(&net, &params, Exec::Sequential).unwrap();
    let star = tau_star(&tables, &params, &state, Exec::Sequential);
    let mut rng = stream(4, "rows", 0);
    for i in 0..9 {
        let mut best = state.clone();
        best.tau[i * 3..(i + 1) * 3].copy_from_slice(&star[i * 3..(i + 1) * 3]);
        let top = elbo_terms(&tables, &params, &best, Exec::Sequential).unwrap().total();
        for _ in 0..25 {
            let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 1e-6).collect();
            let s: f64 = raw.iter().sum();
            let mut other = state.clone();
            for b in 0..3 {
                other.tau[i * 3 + b] = raw[b] / s;
            }
            let v = elbo_terms(&tables, &params, &other, Exec::Sequential).unwrap().total();
            assert!(v <= top + 1e-10, "row {i}: {v} > {top}");
        }
    }
}

#[test]
fn symmetric_uniform_point_is_fixed() {
    let net = random_net(8, 2, 5);
    let mut params = random_params(3, 2, 5);
    let shared = params.blocks[0].clone();
    params.blocks = vec![shared; 3];
    params.alpha = vec![1.0 / 3.0; 3];
    let state = VariationalState::new(8, 3, vec![1.0 / 3.0; 24], vec![0.4; 3]).unwrap();
    let tables = Tables::new(&net, &params, Exec::Sequential).unwrap();
    let star = tau_star(&tables, &params, &state, Exec::Sequential);
    for v in star {
        assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-14);
    }
}

#[test]
fn rows_stay_stochastic_through_inner_loop() {
    let net = random_net(12, 2, 6);
    let params = random_params(3, 2, 6);
    let mut state = random_state(12, 3, 6);
    let tables = Tables::new(&net, &params, Exec::Sequential).unwrap();
    let mut cfg = seq(3);
    cfg.tau_inner_max = 1;
    let mut current = elbo_terms(&tables, &params, &state, Exec::Sequential).unwrap().total();
    for _ in 0..10 {
        let sweep = tau_inner_loop(&tables, &params, &mut state, &cfg, current).unwrap();
        assert!(state.max_row_error() < 1e-10);
        assert!(sweep.elbo >= current);
        current = sweep.elbo;
    }
    let mut skewed = state.clone();
    skewed.tau.iter_mut().for_each(|v| *v *= 3.0);
    normalize_rows(&mut skewed);
    assert!(skewed.max_row_error() < 1e-12);
}

#[test]
fn signal_probabilities_by_hand() {
    let p = signal_probabilities(&[2.0, -2.0], 0.5);
    assert_abs_diff_eq!(p[0], 0.8808, epsilon = 1e-4);
    assert_abs_diff_eq!(p[1], 0.1192, epsilon = 1e-4);
    // Σ(1 − P) = 1 by construction.
    let p = signal_probabilities(&[3.0, 0.5, -1.0], 2.0 / 3.0);
    assert_abs_diff_eq!(p.iter().map(|v| 1.0 - v).sum::<f64>(), 1.0, epsilon = 1e-12);

    let p = signal_probabilities(&[1e6, -1e6, 0.0], 2.0 / 3.0);
    assert!(p.iter().all(|v| v.is_finite() && (PROB_EPS..=1.0 - PROB_EPS).contains(v)));
    assert_eq!(crate::model::argmin(&p), 1);
}

#[test]
fn noise_like_block_gets_lowest_p() {
    let net = MultilayerNetwork::from_fn(10, 1, |i, j, _| {
        let wobble = ((i * 7 + j * 3) % 5) as f64 * 0.1;
        if i < 5 && j < 5 { 4.0 + wobble } else { wobble }
    })
    .unwrap();
    let labels: Vec<usize> = (0..10).map(|i| (i >= 5) as usize).collect();
    let state = VariationalState::from_labels(&labels, 2, 0.01);
    let noise = NoiseParams { mu: vec![0.2], var: vec![0.05] };
    let params = ModelParams {
        blocks: vec![BlockParams { mu: vec![4.2], var: vec![0.05], rho: 0.0 }, noise.as_block()],
        noise,
        alpha: vec![0.5, 0.5],
        psi: 0.5,
        noise_block: 1,
    };
    let tables = Tables::new(&net, &params, Exec::Sequential).unwrap();
    let gaps = density_gaps(&tables, &state, Exec::Sequential);
    assert!(gaps[0] > 0.0);
    assert_eq!(gaps[1], 0.0);
    let p = estimate_p(&net, &params, &state).unwrap();
    assert!(p[1] < p[0], "{p:?}");
}

#[test]
fn alpha_is_column_mass() {
    let state = VariationalState::new(3, 2, vec![1.0, 0.0, 0.5, 0.5, 0.25, 0.75], vec![0.5; 2]).unwrap();
    let a = m_step_alpha(&state);
    assert_abs_diff_eq!(a[0], 1.75 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(a[1], 1.25 / 3.0, epsilon = 1e-15);
    let hard = VariationalState::from_labels(&[0, 0, 0, 1], 2, 0.0);
    assert_eq!(m_step_alpha(&hard), vec![0.75, 0.25]);
}

/// Plain double sums for one block's moments.
fn block_oracle(net: &MultilayerNetwork, state: &VariationalState, b: usize, noise: &NoiseParams) -> BlockParams {
    let n = net.num_nodes();
    let k = net.num_layers();
    let p = state.p[b];
    let mut mass = 0.0;
    let mut sum = vec![0.0; k];
    for i in 0..n {
        for j in i + 1..n {
            let w = state.tau(i, b) * state.tau(j, b);
            mass += w;
            for h in 0..k {
                sum[h] += w * net.edge(i, j)[h];
            }
        }
    }
    let mu: Vec<f64> = (0..k).map(|h| p * sum[h] / mass + (1.0 - p) * noise.mu[h]).collect();
    let mut cov = vec![vec![0.0; k]; k];
    for i in 0..n {
        for j in i + 1..n {
            let w = state.tau(i, b) * state.tau(j, b);
            let x = net.edge(i, j);
            for h in 0..k {
                for l in 0..k {
                    cov[h][l] += w * (x[h] - mu[h]) * (x[l] - mu[l]) / mass;
                }
            }
        }
    }
    let var: Vec<f64> = (0..k).map(|h| p * cov[h][h] + (1.0 - p) * noise.var[h]).collect();
    let mut rho = f64::NEG_INFINITY;
    for h in 0..k {
        for l in h + 1..k {
            rho = rho.max(p * cov[h][l] / (var[h] * var[l]).sqrt());
        }
    }
    BlockParams { mu, var, rho: if k > 1 { crate::model::clamp_rho(rho, k) } else { 0.0 } }
}

fn noise_oracle(net: &MultilayerNetwork, state: &VariationalState, psi: f64) -> NoiseParams {
    let n = net.num_nodes();
    let k = net.num_layers();
    let q = state.num_blocks();
    let weights = |i: usize, j: usize| {
        let mut cross = 0.0;
        let mut within = 0.0;
        for a in 0..q {
            for b in 0..q {
                let w = state.tau(i, a) * state.tau(j, b);
                if a == b {
                    within += w * (1.0 - state.p[a]);
                } else {
                    cross += w;
                }
            }
        }
        (cross, within)
    };
    let mean_of = |f: &dyn Fn(&[f64]) -> Vec<f64>| {
        let (mut cm, mut um) = (0.0, 0.0);
        let (mut cs, mut us) = (vec![0.0; k], vec![0.0; k]);
        for i in 0..n {
            for j in i + 1..n {
                let (c, u) = weights(i, j);
                let v = f(net.edge(i, j));
                cm += c;
                um += u;
                for h in 0..k {
                    cs[h] += c * v[h];
                    us[h] += u * v[h];
                }
            }
        }
        (0..k)
            .map(|h| match (cm > 0.0, um > 0.0) {
                (true, true) => psi * cs[h] / cm + (1.0 - psi) * us[h] / um,
                (true, false) => cs[h] / cm,
                (false, true) => us[h] / um,
                (false, false) => f64::NAN,
            })
            .collect::<Vec<f64>>()
    };
    let mu = mean_of(&|x: &[f64]| x.to_vec());
    let var = mean_of(&|x: &[f64]| x.iter().zip(&mu).map(|(a, m)| (a - m).powi(2)).collect());
    NoiseParams { mu, var }
}

fn assert_block_close(got: &BlockParams, want: &BlockParams) {
    for (a, b) in got.mu.iter().zip(&want.mu).chain(got.var.iter().zip(&want.var)) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
    assert_abs_diff_eq!(got.rho, want.rho, epsilon = 1e-10);
}

#[test]
fn block_moments_match_double_sums() {
    let net = random_net(10, 3, 7);
    let noise = NoiseParams { mu: vec![0.1, -0.2, 0.3], var: vec![1.1, 0.9, 1.3] };
    for p in [[0.3, 0.8, 0.55], [0.0, 1.0, 0.5]] {
        let mut state = random_state(10, 3, 7);
        state.p = p.to_vec();
        for b in 0..3 {
            let got = m_step_block(&net, &state, b, &noise).unwrap();
            assert!(!got.degenerate);
            assert_block_close(&got.params, &block_oracle(&net, &state, b, &noise));
        }
    }
    // P = 0 reproduces the ambient law.
    let mut state = random_state(10, 3, 8);
    state.p[1] = 0.0;
    let got = m_step_block(&net, &state, 1, &noise).unwrap().params;
    assert_eq!(got.mu, noise.mu);
    assert_eq!(got.var, noise.var);
}

#[test]
fn degenerate_block_resets_to_noise() {
    let net = random_net(6, 2, 9);
    let state = VariationalState::from_labels(&[0, 0, 0, 0, 0, 1], 3, 0.0);
    let noise = NoiseParams { mu: vec![0.0, 1.0], var: vec![2.0, 3.0] };
    for b in [1, 2] {
        let est = m_step_block(&net, &state, b, &noise).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.params, noise.as_block());
    }
    assert!(m_step_block(&net, &state, 3, &noise).is_err());
}

#[test]
fn noise_moments_match_double_sums() {
    let net = random_net(9, 2, 10);
    for p in [vec![0.3, 0.7, 0.9], vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0]] {
        let mut state = random_state(9, 3, 10);
        state.p = p;
        let psi = 2.0 / 3.0;
        let got = m_step_noise(&net, &state, psi).unwrap();
        let want = noise_oracle(&net, &state, psi);
        for h in 0..2 {
            assert_abs_diff_eq!(got.mu[h], want.mu[h], epsilon = 1e-10);
            assert_abs_diff_eq!(got.var[h], want.var[h], epsilon = 1e-10);
        }
    }
}

fn small_exp2(seed: u64) -> (MultilayerNetwork, Vec<usize>) {
    let (params, sizes) = experiment2_spec();
    let small: Vec<usize> = sizes.iter().map(|s| s / 5).collect();
    gen_network(&params, &small, &mut stream(seed, "vem-fit", 0)).unwrap()
}

#[test]
fn traces_are_monotone() {
    for seed in 0..20 {
        let (net, _) = small_exp2(seed);
        let cfg = seq(4).with_seed(seed);
        let fit = fit(&net, &cfg).unwrap();
        for w in fit.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs().max(1.0), "seed {seed}: {} -> {}", w[0], w[1]);
        }
        assert!(fit.state.max_row_error() < 1e-10);
        assert!(fit.elbo.is_finite());
    }
}

#[test]
fn single_block_fit() {
    let (net, _) = small_exp2(1);
    let fit = fit(&net, &seq(1)).unwrap();
    assert!(fit.hard_membership.iter().all(|&l| l == 0));
    assert_eq!(fit.params.noise_block, 0);
    assert_eq!(fit.params.alpha, vec![1.0]);
    assert!(fit.elbo.is_finite());
}

#[test]
fn relabelling_nodes_relabels_the_fit() {
    let (params, sizes) = experiment2_spec();
    let (net, truth) = gen_network(&params, &sizes, &mut stream(11, "vem-fit", 0)).unwrap();
    let n = net.num_nodes();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.reverse();
    perm.swap(0, n / 2);
    let permuted = net.permuted(&perm).unwrap();
    let a = fit(&net, &seq(4)).unwrap().hard_membership;
    let b = fit(&permuted, &seq(4)).unwrap().hard_membership;
    let a_perm: Vec<usize> = perm.iter().map(|&p| a[p]).collect();
    let truth_perm: Vec<usize> = perm.iter().map(|&p| truth[p]).collect();
    let part = |v: Vec<usize>| Partition::new(v).unwrap();
    let b = part(b);
    assert!(exact_recovery(&part(a_perm), &b).unwrap());
    assert!(exact_recovery(&part(truth_perm), &b).unwrap());
}

#[test]
fn exec_modes_agree_bitwise() {
    let (net, _) = small_exp2(3);
    let a = fit(&net, &seq(4)).unwrap();
    let b = fit(&net, &FitConfig::new(4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bad_configs_are_rejected() {
    let (net, _) = small_exp2(2);
    assert!(fit(&net, &seq(0)).is_err());
    assert!(fit(&net, &seq(net.num_nodes())).is_err());
    let mut cfg = seq(2);
    cfg.damping = 0.0;
    assert!(fit(&net, &cfg).is_err());
    let wrong = VariationalState::from_labels(&[0, 1], 2, 0.1);
    assert!(fit_from_state(&net, &seq(2), wrong).is_err());
}

#[test]
fn planted_pair_matches_exhaustive_assignment() {
    let mut rng = stream(12, "planted", 0);
    let net = MultilayerNetwork::from_fn(12, 1, |i, j, _| {
        let base = if (i < 5) == (j < 5) && i < 5 { 4.0 } else { 0.0 };
        base + 0.3 * (rng.random::<f64>() - 0.5)
    })
    .unwrap();
    let f = fit(&net, &seq(2)).unwrap();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for code in 0..(1usize << 12) {
        let labels: Vec<usize> = (0..12).map(|i| code >> i & 1).collect();
        let ll = crate::eval::complete_log_likelihood(&net, &f.params, &labels).unwrap();
        if ll > best.0 {
            best = (ll, code);
        }
    }
    let oracle: Vec<usize> = (0..12).map(|i| best.1 >> i & 1).collect();
    assert!(exact_recovery(&Partition::new(oracle).unwrap(), &Partition::new(f.hard_membership.clone()).unwrap()).unwrap());
    let truth: Vec<usize> = (0..12).map(|i| (i >= 5) as usize).collect();
    assert!(exact_recovery(&Partition::new(truth).unwrap(), &Partition::new(f.hard_membership).unwrap()).unwrap());
}

#[test]
fn single_block_tau_is_all_ones() {
    let net = random_net(6, 1, 13);
    let params = random_params(1, 1, 13);
    let state = random_state(6, 1, 13);
    let (out, _) = estimate_tau(&net, &params, &state, &seq(1)).unwrap();
    assert!(out.tau.iter().all(|&t| t == 1.0));
}

#[test]
fn p_hand_instance() {
    let p = signal_probabilities(&[2.0, -2.0], 0.5);
    let sigma = |z: f64| 1.0 / (1.0 + (-z).exp());
    // N̂ = (σ(−2), σ(2)) already sums to one.
    assert_abs_diff_eq!(p[0], 1.0 - sigma(-2.0), epsilon = 1e-12);
    assert_abs_diff_eq!(p[1], 1.0 - sigma(2.0), epsilon = 1e-12);
    let p = signal_probabilities(&[1e4, 0.0], 0.5);
    assert_eq!(p[0], 1.0 - PROB_EPS);
}

#[test]
fn alpha_from_block_sizes() {
    let labels: Vec<usize> = (0..10).map(|i| (i >= 3) as usize).collect();
    let a = m_step_alpha(&VariationalState::from_labels(&labels, 2, 0.0));
    assert_abs_diff_eq!(a[0], 0.3, epsilon = 1e-15);
    assert_abs_diff_eq!(a[1], 0.7, epsilon = 1e-15);
    let a = m_step_alpha(&VariationalState::new(4, 4, vec![0.25; 16], vec![0.5; 4]).unwrap());
    assert!(a.iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn noise_mean_hand_cases() {
    // Hard τ on {0,1} | {2,3}, P = (1, 1): only the four cross pairs count.
    let w = [(0, 1, 9.0), (0, 2, 1.0), (0, 3, 2.0), (1, 2, 3.0), (1, 3, 6.0), (2, 3, 9.0)];
    let net = MultilayerNetwork::from_fn(4, 1, |i, j, _| w.iter().find(|e| e.0 == i && e.1 == j).unwrap().2).unwrap();
    let mut state = VariationalState::from_labels(&[0, 0, 1, 1], 2, 0.0);
    state.p = vec![1.0, 1.0];
    let noise = m_step_noise(&net, &state, 0.5).unwrap();
    assert_abs_diff_eq!(noise.mu[0], 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(noise.var[0], (4.0 + 1.0 + 0.0 + 9.0) / 4.0, epsilon = 1e-12);

    let flat = MultilayerNetwork::from_fn(5, 2, |_, _, _| 2.5).unwrap();
    let noise = m_step_noise(&flat, &random_state(5, 2, 14), 0.5).unwrap();
    assert!(noise.mu.iter().all(|&m| (m - 2.5).abs() < 1e-12));
    assert_eq!(noise.var, vec![crate::model::VAR_FLOOR; 2]);
}

#[test]
fn permuting_initial_columns_permutes_the_fit() {
    let (net, _) = small_exp2(21);
    let init = crate::init::spectral_init(&net, &crate::init::InitConfig::new(4, 0), Exec::Sequential).unwrap();
    let perm = [2, 0, 3, 1];
    let mut swapped = init.clone();
    for i in 0..net.num_nodes() {
        for b in 0..4 {
            swapped.tau[i * 4 + perm[b]] = init.tau(i, b);
        }
    }
    swapped.p = (0..4).map(|b| init.p[perm.iter().position(|&x| x == b).unwrap()]).collect();
    let a = fit_from_state(&net, &seq(4), init).unwrap();
    let b = fit_from_state(&net, &seq(4), swapped).unwrap();
    assert!((a.elbo - b.elbo).abs() <= 1e-8 * a.elbo.abs().max(1.0), "{} vs {}", a.elbo, b.elbo);
    let relabelled: Vec<usize> = a.hard_membership.iter().map(|&l| perm[l]).collect();
    assert_eq!(relabelled, b.hard_membership);
}

//! Full-batch hierarchical variational EM.
//!
//! Each outer iteration runs the membership fixed point, the signal
//! probability update, and the closed-form M-step. Every sub-step is accepted
//! only if it does not lower the bound; otherwise it is shrunk towards the
//! current value by halving, and dropped if no shrunken step helps. The
//! recorded trace is therefore non-decreasing.

mod elbo;
mod estep;
mod moves;
mod mstep;
mod tables;
#[cfg(test)]
mod tests;

pub use elbo::{elbo, elbo_with, ElboTerms};
pub use estep::{estimate_p, estimate_tau, signal_probabilities, TauSweep};
pub use mstep::{m_step_alpha, m_step_block, m_step_noise, BlockEstimate, DEGENERATE_MASS};

pub(crate) use elbo::elbo_terms;
pub(crate) use estep::{p_star, tau_star};
pub(crate) use tables::Tables;

use log::{debug, info};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::init::{spectral_init, InitConfig};
use crate::model::{argmin, psi, BlockParams, ModelParams, NoiseParams, VariationalState, PROB_EPS};
use crate::network::MultilayerNetwork;
use crate::svi::{subsample_size, svi_e_step, SviConfig};

const MAX_HALVINGS: usize = 6;
/// Relative bound gain a post-convergence move must achieve to be kept.
const MOVE_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub blocks: usize,
    pub max_outer: usize,
    pub tau_inner_max: usize,
    /// Max-abs change in τ below which iteration stops.
    pub tol_tau: f64,
    /// Relative ELBO change below which iteration stops.
    pub tol_elbo: f64,
    /// Weight of the new fixed-point value in the τ update, in (0, 1].
    pub damping: f64,
    pub seed: u64,
    pub kmeans_restarts: usize,
    pub soft_eps: f64,
    /// Rounds of noise-swap and split/merge moves after convergence; 0 disables.
    pub max_moves: usize,
    /// Run stochastic E-steps on growing subsamples before the full-batch phase.
    pub svi: Option<SviConfig>,
    pub exec: Exec,
}

impl FitConfig {
    pub fn new(blocks: usize) -> Self {
        FitConfig {
            blocks,
            max_outer: 200,
            tau_inner_max: 50,
            tol_tau: 1e-6,
            tol_elbo: 1e-8,
            damping: 0.7,
            seed: 0,
            kmeans_restarts: 10,
            soft_eps: 0.05,
            max_moves: 10,
            svi: None,
            exec: Exec::available(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::invalid("block count must be at least 1"));
        }
        if !(self.tol_tau > 0.0) || !(self.tol_elbo > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping must lie in (0, 1]"));
        }
        if self.max_outer == 0 || self.tau_inner_max == 0 || self.kmeans_restarts == 0 {
            return Err(Error::invalid("iteration counts must be at least 1"));
        }
        if let Some(svi) = &self.svi {
            svi.validate()?;
        }
        Ok(())
    }

    fn init_config(&self) -> InitConfig {
        InitConfig {
            blocks: self.blocks,
            kmeans_restarts: self.kmeans_restarts,
            seed: self.seed,
            soft_eps: self.soft_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    pub state: VariationalState,
    pub hard_membership: Vec<usize>,
    /// Bound after each full-batch outer iteration of the final run.
    pub elbo_trace: Vec<f64>,
    /// Bound after each stochastic step, when enabled.
    pub svi_elbo_trace: Vec<f64>,
    /// Bound at the returned parameters, after the noise block is designated.
    pub elbo: f64,
    pub converged: bool,
    /// Outer iterations of the run that produced the result.
    pub iterations: usize,
    /// Post-convergence moves that were accepted.
    pub moves: usize,
    pub icl: Option<f64>,
}

/// Fit from the spectral initialisation.
pub fn fit(net: &MultilayerNetwork, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_sizes(net, cfg.blocks)?;
    let init = spectral_init(net, &cfg.init_config(), cfg.exec)?;
    fit_from_state(net, cfg, init)
}

fn check_sizes(net: &MultilayerNetwork, blocks: usize) -> Result<()> {
    if net.num_nodes() <= blocks {
        return Err(Error::invalid(format!(
            "fit needs n > Q (n={}, Q={blocks})",
            net.num_nodes()
        )));
    }
    Ok(())
}

/// Parameters implied by a variational state, with a provisional noise block 0.
pub fn initial_params(net: &MultilayerNetwork, state: &VariationalState, exec: Exec) -> Result<ModelParams> {
    let q = state.num_blocks();
    let psi = psi(q);
    let noise = mstep::m_step_noise_with(net, state, psi, exec)?;
    let blocks = mstep::m_step_blocks(net, state, &noise, exec)
        .into_iter()
        .map(|b| b.params)
        .collect();
    Ok(ModelParams {
        blocks,
        noise,
        alpha: m_step_alpha(state),
        psi,
        noise_block: 0,
    })
}

/// Fit from a given initial τ and P.
pub fn fit_from_state(net: &MultilayerNetwork, cfg: &FitConfig, init: VariationalState) -> Result<FitResult> {
    cfg.validate()?;
    check_sizes(net, cfg.blocks)?;
    if init.num_nodes() != net.num_nodes() || init.num_blocks() != cfg.blocks {
        return Err(Error::invalid("initial state does not match network and block count"));
    }
    let exec = cfg.exec;
    let n = net.num_nodes();
    let mut state = init;
    let mut params = initial_params(net, &state, exec)?;

    let mut svi_elbo_trace = Vec::new();
    if let Some(svi) = &cfg.svi {
        let mut t = 0;
        while subsample_size(t, svi, n) < n {
            state = svi_e_step(net, &params, &state, t, svi, exec)?;
            params.alpha = m_step_alpha(&state);
            for (b, est) in mstep::m_step_blocks(net, &state, &params.noise, exec).into_iter().enumerate() {
                params.blocks[b] = est.params;
            }
            params.noise = mstep::m_step_noise_with(net, &state, params.psi, exec)?;
            let value = elbo_with(net, &params, &state, exec)?.total();
            info!(
                "svi\t{t}\tm\t{}\telbo\t{value:.10e}\tmin_p\t{:.3e}",
                subsample_size(t, svi, n),
                state.p.iter().cloned().fold(f64::INFINITY, f64::min)
            );
            svi_elbo_trace.push(value);
            t += 1;
        }
    }

    let mut best = run(net, cfg, params, state)?;
    let mut moves = 0;
    for round in 0..cfg.max_moves {
        let mut improved = None;
        for cand in moves::candidates(net, &best.state, cfg) {
            let attempt = initial_params(net, &cand, exec).and_then(|p| run(net, cfg, p, cand));
            match attempt {
                Ok(r) => {
                    let bar = improved.as_ref().map_or(best.elbo, |b: &Run| b.elbo);
                    if r.elbo > bar + MOVE_GAIN * bar.abs().max(1.0) {
                        improved = Some(r);
                    }
                }
                Err(e) => debug!("move candidate skipped: {e}"),
            }
        }
        let Some(r) = improved else { break };
        info!("move	{round}	elbo	{:.10e}	from	{:.10e}", r.elbo, best.elbo);
        best = r;
        moves += 1;
    }

    Ok(FitResult {
        hard_membership: best.state.hard_labels(),
        params: best.params,
        state: best.state,
        elbo_trace: best.trace,
        svi_elbo_trace,
        elbo: best.elbo,
        converged: best.converged,
        iterations: best.iterations,
        moves,
        icl: None,
    })
}

struct Run {
    params: ModelParams,
    state: VariationalState,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
    /// Bound after the noise block is designated.
    elbo: f64,
}

fn run(net: &MultilayerNetwork, cfg: &FitConfig, params: ModelParams, state: VariationalState) -> Result<Run> {
    let mut session = Session::new(net, cfg, params, state)?;
    let mut trace = Vec::with_capacity(cfg.max_outer);
    let mut converged = false;
    let mut iterations = 0;
    for t in 0..cfg.max_outer {
        iterations = t + 1;
        let before = session.elbo;
        let old_p = session.state.p.clone();
        let sweep = estep::tau_inner_loop(&session.tables, &session.params, &mut session.state, cfg, session.elbo)?;
        session.elbo = sweep.elbo;
        session.p_step()?;
        session.m_step()?;
        let p_change = old_p
            .iter()
            .zip(&session.state.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        trace.push(session.elbo);
        let min_p = session.state.p.iter().cloned().fold(f64::INFINITY, f64::min);
        info!(
            "iter\t{t}\telbo\t{:.10e}\tmax_dtau\t{:.3e}\tmin_p\t{min_p:.3e}",
            session.elbo, sweep.max_change
        );
        let rel = (session.elbo - before).abs() / before.abs().max(1.0);
        if rel < cfg.tol_elbo || (sweep.max_change < cfg.tol_tau && p_change < cfg.tol_tau) {
            converged = true;
            break;
        }
    }

    let Session { mut params, state, .. } = session;
    let nb = argmin(&state.p);
    params.noise_block = nb;
    params.blocks[nb] = params.noise.as_block();
    let elbo = elbo_with(net, &params, &state, cfg.exec)?.total();
    Ok(Run {
        params,
        state,
        trace,
        converged,
        iterations,
        elbo,
    })
}

struct Session<'a> {
    net: &'a MultilayerNetwork,
    cfg: &'a FitConfig,
    tables: Tables,
    params: ModelParams,
    state: VariationalState,
    elbo: f64,
}

fn lerp(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
}

impl<'a> Session<'a> {
    fn new(net: &'a MultilayerNetwork, cfg: &'a FitConfig, params: ModelParams, state: VariationalState) -> Result<Self> {
        let tables = Tables::new(net, &params, cfg.exec)?;
        let elbo = elbo_terms(&tables, &params, &state, cfg.exec)?.total();
        Ok(Session {
            net,
            cfg,
            tables,
            params,
            state,
            elbo,
        })
    }

    fn evaluate(&self) -> Result<f64> {
        Ok(elbo_terms(&self.tables, &self.params, &self.state, self.cfg.exec)?.total())
    }

    fn p_step(&mut self) -> Result<()> {
        let old = self.state.p.clone();
        let target = p_star(&self.tables, &self.params, &self.state, self.cfg.exec);
        let mut s = 1.0;
        for _ in 0..=MAX_HALVINGS {
            self.state.p = lerp(&old, &target, s)
                .into_iter()
                .map(|p| p.clamp(PROB_EPS, 1.0 - PROB_EPS))
                .collect();
            let value = self.evaluate()?;
            if value >= self.elbo {
                self.elbo = value;
                return Ok(());
            }
            s *= 0.5;
        }
        self.state.p = old;
        Ok(())
    }

    fn m_step(&mut self) -> Result<()> {
        let exec = self.cfg.exec;
        let old_alpha = std::mem::replace(&mut self.params.alpha, m_step_alpha(&self.state));
        let value = self.evaluate()?;
        if value >= self.elbo {
            self.elbo = value;
        } else {
            self.params.alpha = old_alpha;
        }

        let estimates = mstep::m_step_blocks(self.net, &self.state, &self.params.noise, exec);
        for (b, est) in estimates.into_iter().enumerate() {
            if est.degenerate {
                info!("degenerate\tblock\t{b}\treset to ambient law");
            }
            self.block_step(b, est.params)?;
        }

        let target = mstep::m_step_noise_with(self.net, &self.state, self.params.psi, exec)?;
        self.noise_step(target)
    }

    fn block_step(&mut self, b: usize, target: BlockParams) -> Result<()> {
        let old = self.params.blocks[b].clone();
        let mut s = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let cand = BlockParams {
                mu: lerp(&old.mu, &target.mu, s),
                var: lerp(&old.var, &target.var, s),
                rho: old.rho + s * (target.rho - old.rho),
            };
            let g = cand.gaussian()?;
            self.tables.set_block(self.net, b, &g, self.cfg.exec);
            self.params.blocks[b] = cand;
            let value = self.evaluate()?;
            if value >= self.elbo {
                self.elbo = value;
                return Ok(());
            }
            s *= 0.5;
        }
        let g = old.gaussian()?;
        self.tables.set_block(self.net, b, &g, self.cfg.exec);
        self.params.blocks[b] = old;
        Ok(())
    }

    fn noise_step(&mut self, target: NoiseParams) -> Result<()> {
        let old = self.params.noise.clone();
        let mut s = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let cand = NoiseParams {
                mu: lerp(&old.mu, &target.mu, s),
                var: lerp(&old.var, &target.var, s),
            };
            self.tables.set_noise(self.net, &cand.gaussian()?, self.cfg.exec);
            self.params.noise = cand;
            let value = self.evaluate()?;
            if value >= self.elbo {
                self.elbo = value;
                return Ok(());
            }
            s *= 0.5;
        }
        self.tables.set_noise(self.net, &old.gaussian()?, self.cfg.exec);
        self.params.noise = old;
        Ok(())
    }
}

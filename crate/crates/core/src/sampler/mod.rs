//! Reversible-jump MCMC for the partition mixture model.
//!
//! Each iteration is one Gibbs sweep over all full conditionals followed by
//! one split/merge move per arm. Chains start from a prior draw and are
//! seeded from the master seed by stream id, so multi-chain output is
//! bit-identical across runs and thread counts.

pub mod gibbs;
pub mod moves;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ArmState, ComponentCountPrior, Dataset, Hyperparameters, ModelState, PreparedData,
};
use crate::rng::{self, Purpose};
use crate::stats::{
    sample_dirichlet, sample_gamma, sample_inv_gamma, sample_log_categorical, sample_normal_prec,
};

pub use gibbs::gibbs_sweep;
pub use moves::{
    merge_transform, rj_step, rj_step_arm, split_transform, Component, MoveKind, RjOutcome,
};

/// Whether the `N(delta; mu, sigma)` term enters the mixture-layer updates.
/// `Flat` replaces it by a constant, which leaves the mixture prior as the
/// stationary distribution; used to check the transdimensional moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaLikelihood {
    Active,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoveConfig {
    /// Probability of proposing a split rather than a merge.
    pub p_split: f64,
    pub beta_u1: (f64, f64),
    pub beta_u2: (f64, f64),
    pub beta_u3: (f64, f64),
}

impl Default for MoveConfig {
    fn default() -> Self {
        Self {
            p_split: 0.6,
            beta_u1: (2.0, 2.0),
            beta_u2: (2.0, 2.0),
            beta_u3: (2.0, 2.0),
        }
    }
}

impl MoveConfig {
    pub fn violations(&self) -> Vec<(String, f64)> {
        let mut bad = Vec::new();
        if !(self.p_split > 0.0 && self.p_split < 1.0) {
            bad.push(("p_split".to_string(), self.p_split));
        }
        for (name, (a, b)) in [
            ("beta_u1", self.beta_u1),
            ("beta_u2", self.beta_u2),
            ("beta_u3", self.beta_u3),
        ] {
            for v in [a, b] {
                if !(v.is_finite() && v > 0.0) {
                    bad.push((name.to_string(), v));
                }
            }
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some((name, v)) => Err(Error::invalid(name, v, "out of range")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_iter: 2000,
            n_burnin: 1000,
            thin: 1,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn violations(&self) -> Vec<(String, f64)> {
        let mut bad = Vec::new();
        if self.n_chains == 0 {
            bad.push(("n_chains".into(), 0.0));
        }
        if self.n_iter == 0 {
            bad.push(("n_iter".into(), 0.0));
        }
        if self.thin == 0 {
            bad.push(("thin".into(), 0.0));
        }
        if self.n_burnin >= self.n_iter {
            bad.push(("n_burnin".into(), self.n_burnin as f64));
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some((name, v)) => Err(Error::invalid(name, v, "out of range")),
            None => Ok(()),
        }
    }

    /// Draws kept per chain.
    pub fn kept_per_chain(&self) -> usize {
        (self.n_iter - self.n_burnin).div_ceil(self.thin)
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.n_burnin && (iteration - self.n_burnin) % self.thin == 0
    }
}

/// One arm of one stored draw, after the sum-to-zero identification shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmDraw {
    pub theta: Vec<f64>,
    pub beta: f64,
    pub delta: Vec<f64>,
    pub q: usize,
    pub z: Vec<usize>,
    pub w: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: f64,
}

impl ArmDraw {
    fn from_state(arm: &ArmState) -> Self {
        let id = arm.identified();
        Self {
            theta: arm.theta(),
            beta: id.beta,
            delta: id.delta,
            q: arm.q(),
            z: id.z,
            w: id.w,
            mu: id.mu,
            sigma: id.sigma,
            tau: id.tau,
        }
    }

    /// Number of nonempty components.
    pub fn occupied(&self) -> usize {
        let mut seen = vec![false; self.q];
        for &t in &self.z {
            seen[t] = true;
        }
        seen.into_iter().filter(|&s| s).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDraw {
    pub iteration: usize,
    pub varsigma: f64,
    pub arms: Vec<ArmDraw>,
}

/// Split/merge bookkeeping for one chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounters {
    pub split_proposed: u64,
    pub split_accepted: u64,
    pub split_blocked: u64,
    pub merge_proposed: u64,
    pub merge_accepted: u64,
    pub merge_blocked: u64,
}

impl MoveCounters {
    fn record(&mut self, outcome: RjOutcome) {
        let (proposed, accepted, blocked) = match outcome.kind {
            MoveKind::Split => (
                &mut self.split_proposed,
                &mut self.split_accepted,
                &mut self.split_blocked,
            ),
            MoveKind::Merge => (
                &mut self.merge_proposed,
                &mut self.merge_accepted,
                &mut self.merge_blocked,
            ),
        };
        *proposed += 1;
        *accepted += outcome.accepted as u64;
        *blocked += outcome.blocked as u64;
    }

    pub fn merge(&mut self, other: &MoveCounters) {
        self.split_proposed += other.split_proposed;
        self.split_accepted += other.split_accepted;
        self.split_blocked += other.split_blocked;
        self.merge_proposed += other.merge_proposed;
        self.merge_accepted += other.merge_accepted;
        self.merge_blocked += other.merge_blocked;
    }

    pub fn split_rate(&self) -> f64 {
        self.split_accepted as f64 / self.split_proposed.max(1) as f64
    }

    pub fn merge_rate(&self) -> f64 {
        self.merge_accepted as f64 / self.merge_proposed.max(1) as f64
    }
}

/// Post-burn-in draws of every chain, indexed `chains[chain][draw]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub n_arms: usize,
    pub n_subgroups: usize,
    pub chains: Vec<Vec<StoredDraw>>,
    /// Split/merge counters per chain, per arm.
    pub moves: Vec<Vec<MoveCounters>>,
}

impl ChainDraws {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredDraw> {
        self.chains.iter().flatten()
    }

    /// Counters summed over chains for one arm.
    pub fn move_totals(&self, arm: usize) -> MoveCounters {
        let mut total = MoveCounters::default();
        for chain in &self.moves {
            total.merge(&chain[arm]);
        }
        total
    }
}

/// Sampler variants sharing the chain driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerMode {
    /// Freeze every arm at this component count and skip split/merge moves.
    pub fixed_q: Option<usize>,
}

/// Draws a full state from the prior. With `fixed_q` the component count is
/// set instead of drawn.
pub fn init_from_prior<R: Rng + ?Sized>(
    n_arms: usize,
    n_subgroups: usize,
    hypers: &Hyperparameters,
    fixed_q: Option<usize>,
    rng: &mut R,
) -> Result<ModelState> {
    let varsigma = sample_gamma(rng, hypers.a_cell, hypers.b_cell, "varsigma")?;
    let q_prior = ComponentCountPrior::new(hypers.alpha, n_subgroups);
    let mut arms = Vec::with_capacity(n_arms);
    for i in 0..n_arms {
        let q = match fixed_q {
            Some(q) => q,
            None => {
                let logp: Vec<f64> = (1..=n_subgroups).map(|q| q_prior.ln_prob(q)).collect();
                sample_log_categorical(rng, &logp) + 1
            }
        };
        let arm = init_arm(n_subgroups, q, hypers, i, rng)?;
        arms.push(arm);
    }
    Ok(ModelState { varsigma, arms })
}

fn init_arm<R: Rng + ?Sized>(
    n_subgroups: usize,
    q: usize,
    hypers: &Hyperparameters,
    arm: usize,
    rng: &mut R,
) -> Result<ArmState> {
    let beta = sample_normal_prec(rng, hypers.c[arm], hypers.p[arm], "beta")?;
    let tau = sample_gamma(rng, hypers.a_between, hypers.b_between, "tau")?;
    let w = sample_dirichlet(rng, &vec![1.0; q], "w")?;
    let mut mu = Vec::with_capacity(q);
    let mut sigma = Vec::with_capacity(q);
    for _ in 0..q {
        mu.push(sample_normal_prec(rng, 0.0, tau, "mu")?);
        sigma.push(sample_inv_gamma(rng, hypers.a_within, hypers.b_within, "sigma")?);
    }
    let logw: Vec<f64> = w.iter().map(|x| x.ln()).collect();
    let mut z = Vec::with_capacity(n_subgroups);
    let mut delta = Vec::with_capacity(n_subgroups);
    for _ in 0..n_subgroups {
        let t = sample_log_categorical(rng, &logw);
        z.push(t);
        delta.push(sample_normal_prec(rng, mu[t], 1.0 / sigma[t], "delta")?);
    }
    Ok(ArmState { beta, delta, w, mu, sigma, tau, z })
}

/// Runs one chain on prepared data.
pub fn run_single_chain(
    data: &PreparedData,
    hypers: &Hyperparameters,
    chain_cfg: &ChainConfig,
    move_cfg: &MoveConfig,
    mode: SamplerMode,
    chain: usize,
) -> Result<(Vec<StoredDraw>, Vec<MoveCounters>)> {
    let mut rng = rng::stream(chain_cfg.seed, Purpose::Chain, 0, chain as u64);
    let wrap = |iteration: usize, e: Error| Error::Iteration {
        chain,
        iteration,
        source: Box::new(e),
    };
    let mut state = init_from_prior(data.n_arms, data.n_subgroups, hypers, mode.fixed_q, &mut rng)
        .map_err(|e| wrap(0, e))?;
    let q_prior = ComponentCountPrior::new(hypers.alpha, data.n_subgroups);
    let mut counters = vec![MoveCounters::default(); data.n_arms];
    let mut draws = Vec::with_capacity(chain_cfg.kept_per_chain());
    for it in 0..chain_cfg.n_iter {
        gibbs_sweep(&mut state, data, hypers, &mut rng).map_err(|e| wrap(it, e))?;
        if mode.fixed_q.is_none() {
            for (arm, counter) in state.arms.iter_mut().zip(counters.iter_mut()) {
                let outcome = rj_step_arm(
                    arm,
                    hypers,
                    &q_prior,
                    move_cfg,
                    DeltaLikelihood::Active,
                    &mut rng,
                )
                .map_err(|e| wrap(it, e))?;
                counter.record(outcome);
            }
        }
        if cfg!(debug_assertions) {
            state.check_invariants().map_err(|e| wrap(it, e))?;
        }
        if chain_cfg.keeps(it) {
            draws.push(StoredDraw {
                iteration: it,
                varsigma: state.varsigma,
                arms: state.arms.iter().map(ArmDraw::from_state).collect(),
            });
        }
    }
    Ok((draws, counters))
}

/// Runs `n_chains` chains in parallel and collects them in chain order.
pub fn run_chains(
    data: &PreparedData,
    hypers: &Hyperparameters,
    chain_cfg: &ChainConfig,
    move_cfg: &MoveConfig,
    mode: SamplerMode,
) -> Result<ChainDraws> {
    hypers.validate(data.n_arms)?;
    chain_cfg.validate()?;
    move_cfg.validate()?;
    if let Some(q) = mode.fixed_q {
        if q == 0 || q > data.n_subgroups {
            return Err(Error::invalid("q", q as f64, "fixed component count outside 1..=K"));
        }
    }
    let results: Vec<_> = (0..chain_cfg.n_chains)
        .into_par_iter()
        .map(|c| run_single_chain(data, hypers, chain_cfg, move_cfg, mode, c))
        .collect();
    let mut chains = Vec::with_capacity(results.len());
    let mut moves = Vec::with_capacity(results.len());
    for r in results {
        let (draws, counters) = r?;
        chains.push(draws);
        moves.push(counters);
    }
    Ok(ChainDraws {
        n_arms: data.n_arms,
        n_subgroups: data.n_subgroups,
        chains,
        moves,
    })
}

/// Fits the full model with split/merge moves.
pub fn run_chain(
    data: &Dataset,
    hypers: &Hyperparameters,
    chain_cfg: &ChainConfig,
    move_cfg: &MoveConfig,
) -> Result<ChainDraws> {
    run_chains(
        &PreparedData::from(data),
        hypers,
        chain_cfg,
        move_cfg,
        SamplerMode { fixed_q: None },
    )
}

/// Mixture layer of a single arm run with the deviation likelihood switched
/// off; returns the component count after every iteration. Its stationary
/// distribution is the mixture prior, so the `q` trace must reproduce
/// `P(q) ∝ q^alpha`.
pub fn run_mixture_prior_chain(
    n_subgroups: usize,
    hypers: &Hyperparameters,
    move_cfg: &MoveConfig,
    n_iter: usize,
    seed: u64,
) -> Result<(Vec<usize>, MoveCounters)> {
    let mut rng = rng::stream(seed, Purpose::Chain, 0, 0);
    let hypers = hypers.clone().broadcast(1);
    let state = init_from_prior(1, n_subgroups, &hypers, None, &mut rng)?;
    let mut arm = state.arms.into_iter().next().expect("one arm");
    let q_prior = ComponentCountPrior::new(hypers.alpha, n_subgroups);
    let mut trace = Vec::with_capacity(n_iter);
    let mut counters = MoveCounters::default();
    for _ in 0..n_iter {
        gibbs::mixture_sweep(&mut arm, &hypers, DeltaLikelihood::Flat, &mut rng)?;
        let outcome = rj_step_arm(
            &mut arm,
            &hypers,
            &q_prior,
            move_cfg,
            DeltaLikelihood::Flat,
            &mut rng,
        )?;
        counters.record(outcome);
        trace.push(arm.q());
    }
    Ok((trace, counters))
}

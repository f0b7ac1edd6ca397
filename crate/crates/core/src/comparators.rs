//! Reference analysis models sharing the partition model's likelihood:
//! independent cells (IND), a fully exchangeable hierarchical model (BHM) and
//! the mixture model with a fixed component count chosen by DIC (BLAST).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Hyperparameters, PreparedData};
use crate::posterior::ThetaSamples;
use crate::rng::{self, Purpose};
use crate::sampler::{run_chains, ChainConfig, ChainDraws, MoveConfig, SamplerMode};
use crate::stats::{sample_gamma, sample_normal_prec, LN_2PI};

/// Analysis model selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Bharp,
    Ind,
    Bhm,
    Blast,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Bharp, Method::Ind, Method::Bhm, Method::Blast];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bharp => "BHARP",
            Method::Ind => "IND",
            Method::Bhm => "BHM",
            Method::Blast => "BLAST",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BHARP" => Ok(Method::Bharp),
            "IND" => Ok(Method::Ind),
            "BHM" => Ok(Method::Bhm),
            "BLAST" => Ok(Method::Blast),
            other => Err(format!("unknown method `{other}` (expected BHARP, IND, BHM or BLAST)")),
        }
    }
}

/// DIC of one fixed-q BLAST fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicScore {
    pub q: usize,
    pub mean_deviance: f64,
    pub p_d: f64,
    pub dic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlastSelection {
    pub selected_q: usize,
    pub scores: Vec<DicScore>,
}

/// Stored draws of a comparator fit. `theta[chain][draw]` is arm-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorDraws {
    pub method: Method,
    pub n_arms: usize,
    pub n_subgroups: usize,
    pub theta: Vec<Vec<Vec<f64>>>,
    pub varsigma: Vec<Vec<f64>>,
    /// BLAST only: DIC table and the mixture draws of the selected fit.
    pub blast: Option<BlastSelection>,
    pub mixture: Option<ChainDraws>,
}

impl ThetaSamples for ComparatorDraws {
    fn n_arms(&self) -> usize {
        self.n_arms
    }

    fn n_subgroups(&self) -> usize {
        self.n_subgroups
    }

    fn theta_chains(&self, arm: usize, subgroup: usize) -> Vec<Vec<f64>> {
        let idx = arm * self.n_subgroups + subgroup;
        self.theta
            .iter()
            .map(|chain| chain.iter().map(|d| d[idx]).collect())
            .collect()
    }
}

/// Draws of the shared outcome precision.
pub trait PrecisionSamples {
    fn varsigma_pooled(&self) -> Vec<f64>;
}

impl PrecisionSamples for ComparatorDraws {
    fn varsigma_pooled(&self) -> Vec<f64> {
        self.varsigma.concat()
    }
}

impl PrecisionSamples for ChainDraws {
    fn varsigma_pooled(&self) -> Vec<f64> {
        self.iter().map(|d| d.varsigma).collect()
    }
}

struct ChainOutput {
    theta: Vec<Vec<f64>>,
    varsigma: Vec<f64>,
}

fn update_varsigma_flat<R: Rng + ?Sized>(
    theta: &[f64],
    data: &PreparedData,
    hypers: &Hyperparameters,
    rng: &mut R,
) -> Result<f64> {
    let (n, ssr) = data
        .cells
        .iter()
        .zip(theta)
        .fold((0usize, 0.0), |(n, s), (c, &t)| (n + c.n, s + c.sq_dev(t)));
    sample_gamma(
        rng,
        hypers.a_cell + 0.5 * n as f64,
        hypers.b_cell + 0.5 * ssr,
        "varsigma",
    )
}

fn run_comparator_chains<F>(chain_cfg: &ChainConfig, chain_fn: F) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)>
where
    F: Fn(&mut rng::SimRng) -> Result<ChainOutput> + Sync,
{
    chain_cfg.validate()?;
    let outputs: Vec<Result<ChainOutput>> = (0..chain_cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(chain_cfg.seed, Purpose::Chain, 0, c as u64);
            chain_fn(&mut rng).map_err(|e| Error::Iteration {
                chain: c,
                iteration: 0,
                source: Box::new(e),
            })
        })
        .collect();
    let mut theta = Vec::new();
    let mut varsigma = Vec::new();
    for out in outputs {
        let out = out?;
        theta.push(out.theta);
        varsigma.push(out.varsigma);
    }
    Ok((theta, varsigma))
}

/// Independent cells: `theta_ik ~ N(c_i, 1/p_i)` updated by its own cell
/// only, with the outcome precision shared.
pub fn fit_ind(data: &Dataset, hypers: &Hyperparameters, chain_cfg: &ChainConfig) -> Result<ComparatorDraws> {
    hypers.validate(data.n_arms())?;
    let prepared = PreparedData::from(data);
    let k = prepared.n_subgroups;
    let (theta, varsigma) = run_comparator_chains(chain_cfg, |rng| {
        let mut prec = sample_gamma(rng, hypers.a_cell, hypers.b_cell, "varsigma")?;
        let mut theta = vec![0.0; prepared.cells.len()];
        let mut out = ChainOutput {
            theta: Vec::with_capacity(chain_cfg.kept_per_chain()),
            varsigma: Vec::with_capacity(chain_cfg.kept_per_chain()),
        };
        for it in 0..chain_cfg.n_iter {
            for (idx, cell) in prepared.cells.iter().enumerate() {
                let arm = idx / k;
                let post_prec = hypers.p[arm] + prec * cell.n as f64;
                let post_mean = (hypers.p[arm] * hypers.c[arm] + prec * cell.sum()) / post_prec;
                theta[idx] = sample_normal_prec(rng, post_mean, post_prec, "theta")?;
            }
            prec = update_varsigma_flat(&theta, &prepared, hypers, rng)?;
            if it >= chain_cfg.n_burnin && (it - chain_cfg.n_burnin) % chain_cfg.thin == 0 {
                out.theta.push(theta.clone());
                out.varsigma.push(prec);
            }
        }
        Ok(out)
    })?;
    Ok(ComparatorDraws {
        method: Method::Ind,
        n_arms: prepared.n_arms,
        n_subgroups: k,
        theta,
        varsigma,
        blast: None,
        mixture: None,
    })
}

/// Fully exchangeable hierarchical model per arm:
/// `theta_ik ~ N(beta_i, 1/tau_i)`, `beta_i ~ N(c_i, 1/p_i)`,
/// `tau_i ~ Gamma(a_between, b_between)`.
pub fn fit_bhm(data: &Dataset, hypers: &Hyperparameters, chain_cfg: &ChainConfig) -> Result<ComparatorDraws> {
    hypers.validate(data.n_arms())?;
    let prepared = PreparedData::from(data);
    let n_arms = prepared.n_arms;
    let k = prepared.n_subgroups;
    let (theta, varsigma) = run_comparator_chains(chain_cfg, |rng| {
        let mut prec = sample_gamma(rng, hypers.a_cell, hypers.b_cell, "varsigma")?;
        let mut beta = Vec::with_capacity(n_arms);
        let mut tau = Vec::with_capacity(n_arms);
        for i in 0..n_arms {
            beta.push(sample_normal_prec(rng, hypers.c[i], hypers.p[i], "beta")?);
            tau.push(sample_gamma(rng, hypers.a_between, hypers.b_between, "tau")?);
        }
        let mut theta = vec![0.0; n_arms * k];
        for i in 0..n_arms {
            for kk in 0..k {
                theta[i * k + kk] = sample_normal_prec(rng, beta[i], tau[i], "theta")?;
            }
        }
        let mut out = ChainOutput {
            theta: Vec::with_capacity(chain_cfg.kept_per_chain()),
            varsigma: Vec::with_capacity(chain_cfg.kept_per_chain()),
        };
        for it in 0..chain_cfg.n_iter {
            for i in 0..n_arms {
                for (kk, cell) in prepared.arm(i).iter().enumerate() {
                    let post_prec = tau[i] + prec * cell.n as f64;
                    let post_mean = (tau[i] * beta[i] + prec * cell.sum()) / post_prec;
                    theta[i * k + kk] = sample_normal_prec(rng, post_mean, post_prec, "theta")?;
                }
                let row = &theta[i * k..(i + 1) * k];
                let post_prec = hypers.p[i] + k as f64 * tau[i];
                let post_mean = (hypers.p[i] * hypers.c[i] + tau[i] * row.iter().sum::<f64>()) / post_prec;
                beta[i] = sample_normal_prec(rng, post_mean, post_prec, "beta")?;
                let ss: f64 = row.iter().map(|t| (t - beta[i]) * (t - beta[i])).sum();
                tau[i] = sample_gamma(
                    rng,
                    hypers.a_between + 0.5 * k as f64,
                    hypers.b_between + 0.5 * ss,
                    "tau",
                )?;
            }
            prec = update_varsigma_flat(&theta, &prepared, hypers, rng)?;
            if it >= chain_cfg.n_burnin && (it - chain_cfg.n_burnin) % chain_cfg.thin == 0 {
                out.theta.push(theta.clone());
                out.varsigma.push(prec);
            }
        }
        Ok(out)
    })?;
    Ok(ComparatorDraws {
        method: Method::Bhm,
        n_arms,
        n_subgroups: k,
        theta,
        varsigma,
        blast: None,
        mixture: None,
    })
}

fn mixture_to_comparator(method: Method, draws: &ChainDraws) -> ComparatorDraws {
    ComparatorDraws {
        method,
        n_arms: draws.n_arms,
        n_subgroups: draws.n_subgroups,
        theta: draws
            .chains
            .iter()
            .map(|chain| {
                chain
                    .iter()
                    .map(|d| d.arms.iter().flat_map(|a| a.theta.iter().copied()).collect())
                    .collect()
            })
            .collect(),
        varsigma: draws
            .chains
            .iter()
            .map(|chain| chain.iter().map(|d| d.varsigma).collect())
            .collect(),
        blast: None,
        mixture: None,
    }
}

/// Outcome deviance `-2 log p(y | theta, varsigma)`; `theta` is arm-major.
pub fn deviance(theta: &[f64], varsigma: f64, data: &PreparedData) -> f64 {
    let ln_prec = varsigma.ln();
    -2.0 * data
        .cells
        .iter()
        .zip(theta)
        .map(|(c, &t)| 0.5 * c.n as f64 * (ln_prec - LN_2PI) - 0.5 * varsigma * c.sq_dev(t))
        .sum::<f64>()
}

/// Spiegelhalter DIC with plug-in at the posterior means of theta and
/// varsigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub mean_deviance: f64,
    pub p_d: f64,
    pub dic: f64,
}

pub fn dic<S: ThetaSamples + PrecisionSamples + ?Sized>(draws: &S, data: &Dataset) -> Result<Dic> {
    let prepared = PreparedData::from(data);
    let (n_arms, k) = (draws.n_arms(), draws.n_subgroups());
    if n_arms != prepared.n_arms || k != prepared.n_subgroups {
        return Err(Error::DimensionMismatch {
            what: "dic draws vs data",
            expected: prepared.cells.len(),
            found: n_arms * k,
        });
    }
    let cols: Vec<Vec<f64>> = (0..n_arms)
        .flat_map(|i| (0..k).map(move |kk| (i, kk)))
        .map(|(i, kk)| draws.theta_pooled(i, kk))
        .collect();
    let prec = draws.varsigma_pooled();
    let n = prec.len();
    if n < 2 {
        return Err(Error::InsufficientDraws(format!("DIC needs at least 2 draws, got {n}")));
    }
    let mut theta = vec![0.0; cols.len()];
    let mut total = 0.0;
    for s in 0..n {
        for (slot, col) in theta.iter_mut().zip(&cols) {
            *slot = col[s];
        }
        total += deviance(&theta, prec[s], &prepared);
    }
    let mean_deviance = total / n as f64;
    let theta_bar: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let prec_bar = prec.iter().sum::<f64>() / n as f64;
    let p_d = mean_deviance - deviance(&theta_bar, prec_bar, &prepared);
    Ok(Dic {
        mean_deviance,
        p_d,
        dic: mean_deviance + p_d,
    })
}

/// Mixture model with `q` frozen at each of 1, 2, 3 (capped at K); keeps
/// the fit with the smallest DIC. Single-arm data only.
pub fn fit_blast(
    data: &Dataset,
    hypers: &Hyperparameters,
    chain_cfg: &ChainConfig,
    move_cfg: &MoveConfig,
) -> Result<ComparatorDraws> {
    if data.n_arms() != 1 {
        return Err(Error::MultiArmRefused { arms: data.n_arms() });
    }
    let prepared = PreparedData::from(data);
    let max_q = prepared.n_subgroups.min(3);
    let mut best: Option<(f64, ChainDraws)> = None;
    let mut scores = Vec::with_capacity(max_q);
    let mut selected_q = 1;
    for q in 1..=max_q {
        let cfg = ChainConfig {
            seed: rng::replicate_seed(chain_cfg.seed, q as u64),
            ..chain_cfg.clone()
        };
        let draws = run_chains(&prepared, hypers, &cfg, move_cfg, SamplerMode { fixed_q: Some(q) })?;
        let d = dic(&draws, data)?;
        scores.push(DicScore {
            q,
            mean_deviance: d.mean_deviance,
            p_d: d.p_d,
            dic: d.dic,
        });
        if best.as_ref().is_none_or(|(b, _)| d.dic < *b) {
            selected_q = q;
            best = Some((d.dic, draws));
        }
    }
    let (_, draws) = best.expect("at least one fit");
    let mut out = mixture_to_comparator(Method::Blast, &draws);
    out.blast = Some(BlastSelection { selected_q, scores });
    out.mixture = Some(draws);
    Ok(out)
}

/// Result of fitting any of the analysis models.
#[derive(Debug, Clone)]
pub enum Fit {
    Mixture(ChainDraws),
    Reference(ComparatorDraws),
}

impl Fit {
    /// Mixture draws (BHARP, or the selected BLAST fit) when available.
    pub fn mixture(&self) -> Option<&ChainDraws> {
        match self {
            Fit::Mixture(d) => Some(d),
            Fit::Reference(c) => c.mixture.as_ref(),
        }
    }
}

impl ThetaSamples for Fit {
    fn n_arms(&self) -> usize {
        match self {
            Fit::Mixture(d) => d.n_arms,
            Fit::Reference(c) => c.n_arms,
        }
    }

    fn n_subgroups(&self) -> usize {
        match self {
            Fit::Mixture(d) => d.n_subgroups,
            Fit::Reference(c) => c.n_subgroups,
        }
    }

    fn theta_chains(&self, arm: usize, subgroup: usize) -> Vec<Vec<f64>> {
        match self {
            Fit::Mixture(d) => d.theta_chains(arm, subgroup),
            Fit::Reference(c) => c.theta_chains(arm, subgroup),
        }
    }
}

/// Fits `method` to `data`.
pub fn fit_model(
    method: Method,
    data: &Dataset,
    hypers: &Hyperparameters,
    chain_cfg: &ChainConfig,
    move_cfg: &MoveConfig,
) -> Result<Fit> {
    Ok(match method {
        Method::Bharp => Fit::Mixture(crate::sampler::run_chain(data, hypers, chain_cfg, move_cfg)?),
        Method::Ind => Fit::Reference(fit_ind(data, hypers, chain_cfg)?),
        Method::Bhm => Fit::Reference(fit_bhm(data, hypers, chain_cfg)?),
        Method::Blast => Fit::Reference(fit_blast(data, hypers, chain_cfg, move_cfg)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviance_of_two_zero_observations() {
        let data = Dataset::from_grid(vec![vec![vec![0.0, 0.0]]]).unwrap();
        let d = deviance(&[0.0], 1.0, &PreparedData::from(&data));
        assert!((d - 2.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((d - 3.6758).abs() < 1e-4);
    }

    #[test]
    fn constant_draws_have_zero_p_d() {
        let data = Dataset::from_grid(vec![vec![vec![0.1, -0.4], vec![0.3]]]).unwrap();
        let draws = ComparatorDraws {
            method: Method::Ind,
            n_arms: 1,
            n_subgroups: 2,
            theta: vec![vec![vec![0.2, 0.7]; 5]],
            varsigma: vec![vec![1.3; 5]],
            blast: None,
            mixture: None,
        };
        let d = dic(&draws, &data).unwrap();
        assert!(d.p_d.abs() < 1e-12);
        let at_point = deviance(&[0.2, 0.7], 1.3, &PreparedData::from(&data));
        assert!((d.dic - at_point).abs() < 1e-12);
    }

    #[test]
    fn blast_refuses_multi_arm() {
        let data = Dataset::empty(2, 3).unwrap();
        let err = fit_blast(
            &data,
            &Hyperparameters::defaults(2),
            &ChainConfig::default(),
            &MoveConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MultiArmRefused { arms: 2 }));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bart".parse::<Method>().is_err());
    }
}

//! Full-conditional updates. Every block is a closed-form draw given the
//! rest of the state; blocks are public so each can be checked in isolation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ArmState, CellStats, Hyperparameters, ModelState, PreparedData};
use crate::stats::{
    ln_normal_var, sample_dirichlet, sample_gamma, sample_inv_gamma, sample_log_categorical,
    sample_normal_prec,
};

use super::DeltaLikelihood;

/// varsigma | . ~ Gamma(a_cell + N/2, b_cell + SSR/2)
pub fn update_varsigma<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &PreparedData,
    hypers: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    let mut n = 0usize;
    let mut ssr = 0.0;
    for (i, arm) in state.arms.iter().enumerate() {
        for (k, cell) in data.arm(i).iter().enumerate() {
            n += cell.n;
            ssr += cell.sq_dev(arm.beta + arm.delta[k]);
        }
    }
    state.varsigma = sample_gamma(
        rng,
        hypers.a_cell + 0.5 * n as f64,
        hypers.b_cell + 0.5 * ssr,
        "varsigma",
    )?;
    Ok(())
}

/// beta | . ~ N with precision p + varsigma n and mean
/// (p c + varsigma sum(y - delta)) / precision.
pub fn update_beta<R: Rng + ?Sized>(
    arm: &mut ArmState,
    cells: &[CellStats],
    varsigma: f64,
    prior_mean: f64,
    prior_prec: f64,
    rng: &mut R,
) -> Result<()> {
    let mut n = 0.0;
    let mut resid = 0.0;
    for (cell, d) in cells.iter().zip(&arm.delta) {
        n += cell.n as f64;
        resid += cell.n as f64 * (cell.mean - d);
    }
    let prec = prior_prec + varsigma * n;
    let mean = (prior_prec * prior_mean + varsigma * resid) / prec;
    arm.beta = sample_normal_prec(rng, mean, prec, "beta")?;
    Ok(())
}

/// delta_k | . ~ N with precision 1/sigma_z + varsigma n_k.
pub fn update_delta<R: Rng + ?Sized>(
    arm: &mut ArmState,
    cells: &[CellStats],
    varsigma: f64,
    rng: &mut R,
) -> Result<()> {
    for (k, cell) in cells.iter().enumerate() {
        let t = arm.z[k];
        let n = cell.n as f64;
        let prec = 1.0 / arm.sigma[t] + varsigma * n;
        let mean = (arm.mu[t] / arm.sigma[t] + varsigma * n * (cell.mean - arm.beta)) / prec;
        arm.delta[k] = sample_normal_prec(rng, mean, prec, "delta")?;
    }
    Ok(())
}

/// z_k | . categorical with weights w_t N(delta_k; mu_t, sigma_t).
pub fn update_allocations<R: Rng + ?Sized>(
    arm: &mut ArmState,
    term: DeltaLikelihood,
    rng: &mut R,
) -> Result<()> {
    let q = arm.q();
    let mut logw = vec![0.0; q];
    for k in 0..arm.delta.len() {
        for (t, lw) in logw.iter_mut().enumerate() {
            *lw = arm.w[t].ln();
            if term == DeltaLikelihood::Active {
                *lw += ln_normal_var(arm.delta[k], arm.mu[t], arm.sigma[t]);
            }
        }
        if logw.iter().any(|l| l.is_nan()) {
            return Err(Error::NonFinite { block: "z" });
        }
        arm.z[k] = sample_log_categorical(rng, &logw);
    }
    Ok(())
}

/// w | . ~ Dirichlet(1 + n_1, ..., 1 + n_q)
pub fn update_weights<R: Rng + ?Sized>(arm: &mut ArmState, rng: &mut R) -> Result<()> {
    let alphas: Vec<f64> = arm.counts().into_iter().map(|n| 1.0 + n as f64).collect();
    arm.w = sample_dirichlet(rng, &alphas, "w")?;
    Ok(())
}

/// mu_t | . ~ N with precision tau + n_t / sigma_t and mean
/// (sum of member deviations / sigma_t) / precision.
pub fn update_means<R: Rng + ?Sized>(
    arm: &mut ArmState,
    term: DeltaLikelihood,
    rng: &mut R,
) -> Result<()> {
    let q = arm.q();
    let mut n = vec![0.0; q];
    let mut sum = vec![0.0; q];
    if term == DeltaLikelihood::Active {
        for (k, &t) in arm.z.iter().enumerate() {
            n[t] += 1.0;
            sum[t] += arm.delta[k];
        }
    }
    for t in 0..q {
        let prec = arm.tau + n[t] / arm.sigma[t];
        let mean = (sum[t] / arm.sigma[t]) / prec;
        arm.mu[t] = sample_normal_prec(rng, mean, prec, "mu")?;
    }
    Ok(())
}

/// sigma_t | . ~ InvGamma(a_within + n_t/2, b_within + SS_t/2)
pub fn update_variances<R: Rng + ?Sized>(
    arm: &mut ArmState,
    hypers: &Hyperparameters,
    term: DeltaLikelihood,
    rng: &mut R,
) -> Result<()> {
    let q = arm.q();
    let mut n = vec![0.0; q];
    let mut ss = vec![0.0; q];
    if term == DeltaLikelihood::Active {
        for (k, &t) in arm.z.iter().enumerate() {
            let d = arm.delta[k] - arm.mu[t];
            n[t] += 1.0;
            ss[t] += d * d;
        }
    }
    for t in 0..q {
        arm.sigma[t] = sample_inv_gamma(
            rng,
            hypers.a_within + 0.5 * n[t],
            hypers.b_within + 0.5 * ss[t],
            "sigma",
        )?;
    }
    Ok(())
}

/// tau | . ~ Gamma(a_between + q/2, b_between + sum(mu^2)/2)
pub fn update_tau<R: Rng + ?Sized>(
    arm: &mut ArmState,
    hypers: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    let ss: f64 = arm.mu.iter().map(|m| m * m).sum();
    arm.tau = sample_gamma(
        rng,
        hypers.a_between + 0.5 * arm.q() as f64,
        hypers.b_between + 0.5 * ss,
        "tau",
    )?;
    Ok(())
}

/// Mixture-layer blocks of one arm: z, w, mu, sigma, tau.
pub fn mixture_sweep<R: Rng + ?Sized>(
    arm: &mut ArmState,
    hypers: &Hyperparameters,
    term: DeltaLikelihood,
    rng: &mut R,
) -> Result<()> {
    update_allocations(arm, term, rng)?;
    update_weights(arm, rng)?;
    update_means(arm, term, rng)?;
    update_variances(arm, hypers, term, rng)?;
    update_tau(arm, hypers, rng)
}

/// One full Gibbs pass: varsigma, then per arm beta, delta, z, w, mu, sigma,
/// tau.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &PreparedData,
    hypers: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    update_varsigma(state, data, hypers, rng)?;
    let varsigma = state.varsigma;
    for (i, arm) in state.arms.iter_mut().enumerate() {
        let cells = data.arm(i);
        update_beta(arm, cells, varsigma, hypers.c[i], hypers.p[i], rng)?;
        update_delta(arm, cells, varsigma, rng)?;
        mixture_sweep(arm, hypers, DeltaLikelihood::Active, rng)?;
    }
    Ok(())
}

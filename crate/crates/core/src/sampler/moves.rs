//! Split/merge reversible-jump moves on one arm's mixture layer.
//!
//! A split takes a donor component `j`, maps `(w, mu, sigma)` plus three
//! auxiliary Beta draws to two moment-matched components, keeps the first at
//! index `j` and appends the second at index `q`. A merge absorbs the last
//! component into a uniformly chosen `j < q - 1` and is the exact inverse.
//! Only the mixture layer moves; `delta`, `beta`, `tau` and `varsigma` are
//! left untouched.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ln_mixture_layer, ArmState, ComponentCountPrior, Hyperparameters, ModelState};
use crate::stats::{ln_beta_pdf, ln_normal_var};

use super::{DeltaLikelihood, MoveConfig};

/// Weight, mean and variance of one mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub w: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Component {
    pub fn new(w: f64, mu: f64, sigma: f64) -> Self {
        Self { w, mu, sigma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub first: Component,
    pub second: Component,
    pub log_jacobian: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub merged: Component,
    pub u: [f64; 3],
    pub log_jacobian: f64,
}

fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::DegenerateSplit { name, value })
    }
}

/// Moment-matched split: `u1` shares the weight, `u2` offsets the means and
/// `u3` shares the variance. Preserves the weighted first and second moments.
pub fn split_transform(c: Component, u1: f64, u2: f64, u3: f64) -> Result<Split> {
    check_unit("u1", u1)?;
    check_unit("u2", u2)?;
    check_unit("u3", u3)?;
    if !(c.w > 0.0 && c.w < 1.0 + 1e-12) {
        return Err(Error::invalid("w", c.w, "weight must lie in (0, 1]"));
    }
    if !(c.sigma > 0.0) {
        return Err(Error::invalid("sigma", c.sigma, "component variance must be positive"));
    }
    let w1 = c.w * u1;
    let w2 = c.w * (1.0 - u1);
    let mu1 = c.mu - u2 * (c.sigma * w2 / w1).sqrt();
    let mu2 = c.mu + u2 * (c.sigma * w1 / w2).sqrt();
    let shrink = 1.0 - u2 * u2;
    let s1 = u3 * shrink * c.sigma * c.w / w1;
    let s2 = (1.0 - u3) * shrink * c.sigma * c.w / w2;
    let log_jacobian = c.w.ln() + (mu2 - mu1).ln() + s1.ln() + s2.ln()
        - u2.ln()
        - shrink.ln()
        - u3.ln()
        - (1.0 - u3).ln()
        - c.sigma.ln();
    Ok(Split {
        first: Component::new(w1, mu1, s1),
        second: Component::new(w2, mu2, s2),
        log_jacobian,
    })
}

/// Inverse of [`split_transform`]. Fails when `second.mu <= first.mu`, a
/// pair no split can produce.
pub fn merge_transform(first: Component, second: Component) -> Result<Merge> {
    for c in [first, second] {
        if !(c.w > 0.0 && c.w < 1.0) {
            return Err(Error::invalid("w", c.w, "weight must lie in (0, 1)"));
        }
        if !(c.sigma > 0.0) {
            return Err(Error::invalid("sigma", c.sigma, "component variance must be positive"));
        }
    }
    let w = first.w + second.w;
    let mu = (first.w * first.mu + second.w * second.mu) / w;
    let second_moment =
        (first.w * (first.mu * first.mu + first.sigma) + second.w * (second.mu * second.mu + second.sigma)) / w;
    let sigma = second_moment - mu * mu;
    let u1 = first.w / w;
    let u2 = (second.mu - first.mu) * (first.w * second.w).sqrt() / (w * sigma.sqrt());
    let shrink = 1.0 - u2 * u2;
    let u3 = first.sigma * first.w / (shrink * sigma * w);
    for (name, value) in [("u1", u1), ("u2", u2), ("u3", u3)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::NotMergeable { name, value });
        }
    }
    let log_jacobian = -(w.ln() + (second.mu - first.mu).ln() + first.sigma.ln() + second.sigma.ln()
        - u2.ln()
        - shrink.ln()
        - u3.ln()
        - (1.0 - u3).ln()
        - sigma.ln());
    Ok(Merge {
        merged: Component::new(w, mu, sigma),
        u: [u1, u2, u3],
        log_jacobian,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Split,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RjOutcome {
    pub kind: MoveKind,
    pub accepted: bool,
    /// The move was impossible at the current dimension (split at `q = K`,
    /// merge at `q = 1`) and counted as a rejection.
    pub blocked: bool,
}

/// A fully specified split proposal: the proposed state and the pieces of
/// the acceptance ratio that depend on how it was drawn.
#[derive(Debug, Clone)]
pub struct SplitProposal {
    pub donor: usize,
    pub u: [f64; 3],
    pub proposed: ArmState,
    pub log_jacobian: f64,
}

/// Log probability that reallocating the members of `donor` and the last
/// component of `split_state` yields their current allocations, each member
/// choosing between the two with probability proportional to
/// `w_t N(delta; mu_t, sigma_t)`.
pub fn ln_reallocation_prob(split_state: &ArmState, donor: usize, term: DeltaLikelihood) -> f64 {
    let last = split_state.q() - 1;
    split_state
        .z
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == donor || t == last)
        .map(|(k, &t)| {
            let (a, b) = reallocation_logits(split_state, k, donor, last, term);
            let norm = crate::stats::log_sum_exp(&[a, b]);
            if t == donor {
                a - norm
            } else {
                b - norm
            }
        })
        .sum()
}

fn reallocation_logits(
    arm: &ArmState,
    k: usize,
    first: usize,
    second: usize,
    term: DeltaLikelihood,
) -> (f64, f64) {
    let logit = |t: usize| {
        let mut l = arm.w[t].ln();
        if term == DeltaLikelihood::Active {
            l += ln_normal_var(arm.delta[k], arm.mu[t], arm.sigma[t]);
        }
        l
    };
    (logit(first), logit(second))
}

/// Builds the split state for a given donor and auxiliary draw, reallocating
/// the donor's members at random.
pub fn propose_split<R: Rng + ?Sized>(
    arm: &ArmState,
    donor: usize,
    u: [f64; 3],
    term: DeltaLikelihood,
    rng: &mut R,
) -> Result<SplitProposal> {
    let c = Component::new(arm.w[donor], arm.mu[donor], arm.sigma[donor]);
    let split = split_transform(c, u[0], u[1], u[2])?;
    let mut proposed = arm.clone();
    let new = arm.q();
    proposed.w[donor] = split.first.w;
    proposed.mu[donor] = split.first.mu;
    proposed.sigma[donor] = split.first.sigma;
    proposed.w.push(split.second.w);
    proposed.mu.push(split.second.mu);
    proposed.sigma.push(split.second.sigma);
    for k in 0..proposed.z.len() {
        if proposed.z[k] != donor {
            continue;
        }
        let (a, b) = reallocation_logits(&proposed, k, donor, new, term);
        let p_first = 1.0 / (1.0 + (b - a).exp());
        proposed.z[k] = if rng.random::<f64>() < p_first { donor } else { new };
    }
    Ok(SplitProposal {
        donor,
        u,
        proposed,
        log_jacobian: split.log_jacobian,
    })
}

fn ln_aux_density(cfg: &MoveConfig, u: [f64; 3]) -> f64 {
    ln_beta_pdf(u[0], cfg.beta_u1.0, cfg.beta_u1.1)
        + ln_beta_pdf(u[1], cfg.beta_u2.0, cfg.beta_u2.1)
        + ln_beta_pdf(u[2], cfg.beta_u3.0, cfg.beta_u3.1)
}

/// Log acceptance ratio of moving from the `q`-component `small` state to
/// the `(q+1)`-component `large` state by splitting `donor`. Donor and
/// absorber selection probabilities are both `1/q` and cancel.
#[allow(clippy::too_many_arguments)]
fn ln_split_ratio(
    small: &ArmState,
    large: &ArmState,
    donor: usize,
    u: [f64; 3],
    log_jacobian: f64,
    hypers: &Hyperparameters,
    q_prior: &ComponentCountPrior,
    cfg: &MoveConfig,
    term: DeltaLikelihood,
) -> f64 {
    let include = term == DeltaLikelihood::Active;
    let target = ln_mixture_layer(large, hypers, q_prior, include)
        - ln_mixture_layer(small, hypers, q_prior, include);
    let moves = (1.0 - cfg.p_split).ln() - cfg.p_split.ln();
    let proposal = ln_aux_density(cfg, u) + ln_reallocation_prob(large, donor, term);
    target + moves - proposal + log_jacobian
}

/// Log acceptance ratio of a split proposal from `current`.
pub fn split_log_ratio(
    current: &ArmState,
    proposal: &SplitProposal,
    hypers: &Hyperparameters,
    q_prior: &ComponentCountPrior,
    cfg: &MoveConfig,
    term: DeltaLikelihood,
) -> f64 {
    ln_split_ratio(
        current,
        &proposal.proposed,
        proposal.donor,
        proposal.u,
        proposal.log_jacobian,
        hypers,
        q_prior,
        cfg,
        term,
    )
}

/// Merges the last component of `current` into `absorber`. Returns the
/// merged state and the log acceptance ratio (the negated ratio of the
/// reverse split).
pub fn merge_proposal(
    current: &ArmState,
    absorber: usize,
    hypers: &Hyperparameters,
    q_prior: &ComponentCountPrior,
    cfg: &MoveConfig,
    term: DeltaLikelihood,
) -> Result<(ArmState, f64)> {
    let q = current.q();
    let last = q - 1;
    debug_assert!(absorber < last);
    let merge = merge_transform(
        Component::new(current.w[absorber], current.mu[absorber], current.sigma[absorber]),
        Component::new(current.w[last], current.mu[last], current.sigma[last]),
    )?;
    let mut merged = current.clone();
    merged.w.pop();
    merged.mu.pop();
    merged.sigma.pop();
    merged.w[absorber] = merge.merged.w;
    merged.mu[absorber] = merge.merged.mu;
    merged.sigma[absorber] = merge.merged.sigma;
    for t in &mut merged.z {
        if *t == last {
            *t = absorber;
        }
    }
    let forward = ln_split_ratio(
        &merged,
        current,
        absorber,
        merge.u,
        -merge.log_jacobian,
        hypers,
        q_prior,
        cfg,
        term,
    );
    Ok((merged, -forward))
}

fn draw_aux<R: Rng + ?Sized>(cfg: &MoveConfig, rng: &mut R) -> Result<[f64; 3]> {
    let draw = |(a, b): (f64, f64), rng: &mut R| -> Result<f64> {
        let d = Beta::new(a, b).map_err(|_| Error::invalid("beta shape", a.min(b), "must be positive"))?;
        // Beta draws can round to the closed endpoints; redraw in that case.
        loop {
            let x: f64 = d.sample(rng);
            if x > 0.0 && x < 1.0 {
                return Ok(x);
            }
        }
    };
    Ok([draw(cfg.beta_u1, rng)?, draw(cfg.beta_u2, rng)?, draw(cfg.beta_u3, rng)?])
}

/// One reversible-jump move on a single arm's mixture layer.
pub fn rj_step_arm<R: Rng + ?Sized>(
    arm: &mut ArmState,
    hypers: &Hyperparameters,
    q_prior: &ComponentCountPrior,
    cfg: &MoveConfig,
    term: DeltaLikelihood,
    rng: &mut R,
) -> Result<RjOutcome> {
    let q = arm.q();
    let max_q = q_prior.max_q();
    let kind = if rng.random::<f64>() < cfg.p_split {
        MoveKind::Split
    } else {
        MoveKind::Merge
    };
    let blocked = match kind {
        MoveKind::Split => q >= max_q,
        MoveKind::Merge => q <= 1,
    };
    if blocked {
        return Ok(RjOutcome { kind, accepted: false, blocked: true });
    }
    let (candidate, log_ratio) = match kind {
        MoveKind::Split => {
            let donor = rng.random_range(0..q);
            let u = draw_aux(cfg, rng)?;
            let proposal = propose_split(arm, donor, u, term, rng)?;
            let ratio = split_log_ratio(arm, &proposal, hypers, q_prior, cfg, term);
            (proposal.proposed, ratio)
        }
        MoveKind::Merge => {
            let absorber = rng.random_range(0..q - 1);
            match merge_proposal(arm, absorber, hypers, q_prior, cfg, term) {
                Ok(pair) => pair,
                // The reverse split cannot produce this ordering: zero
                // proposal density, so the merge is rejected.
                Err(Error::NotMergeable { .. }) => {
                    return Ok(RjOutcome { kind, accepted: false, blocked: false });
                }
                Err(e) => return Err(e),
            }
        }
    };
    let accepted = log_ratio.is_finite() && rng.random::<f64>().ln() < log_ratio;
    if accepted {
        *arm = candidate;
    }
    Ok(RjOutcome { kind, accepted, blocked: false })
}

/// Reversible-jump move on arm `arm` of a full model state.
pub fn rj_step<R: Rng + ?Sized>(
    state: &mut ModelState,
    arm: usize,
    hypers: &Hyperparameters,
    cfg: &MoveConfig,
    rng: &mut R,
) -> Result<RjOutcome> {
    let target = state.arms.get_mut(arm).ok_or(Error::DimensionMismatch {
        what: "arm index",
        expected: arm + 1,
        found: 0,
    })?;
    let q_prior = ComponentCountPrior::new(hypers.alpha, target.n_subgroups());
    rj_step_arm(target, hypers, &q_prior, cfg, DeltaLikelihood::Active, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_split() {
        let s = split_transform(Component::new(0.5, 0.0, 0.04), 0.5, 0.5, 0.5).unwrap();
        assert!((s.first.w - 0.25).abs() < 1e-15);
        assert!((s.first.mu + 0.1).abs() < 1e-15);
        assert!((s.first.sigma - 0.03).abs() < 1e-15);
        assert!((s.second.mu - 0.1).abs() < 1e-15);
        assert!((s.second.sigma - 0.03).abs() < 1e-15);
        let m = merge_transform(s.first, s.second).unwrap();
        assert!((m.merged.w - 0.5).abs() < 1e-15);
        assert!(m.merged.mu.abs() < 1e-15);
        assert!((m.merged.sigma - 0.04).abs() < 1e-15);
        for u in m.u {
            assert!((u - 0.5).abs() < 1e-12);
        }
        assert!((m.log_jacobian + s.log_jacobian).abs() < 1e-12);
    }

    #[test]
    fn degenerate_auxiliaries_are_rejected() {
        let c = Component::new(0.5, 0.0, 0.04);
        assert!(matches!(split_transform(c, 0.0, 0.5, 0.5), Err(Error::DegenerateSplit { .. })));
        assert!(matches!(split_transform(c, 0.5, 1.0, 0.5), Err(Error::DegenerateSplit { .. })));
    }

    #[test]
    fn identical_components_do_not_merge() {
        let c = Component::new(0.2, 0.3, 0.01);
        assert!(matches!(merge_transform(c, c), Err(Error::NotMergeable { name: "u2", .. })));
    }

    #[test]
    fn small_offset_collapses_means() {
        let c = Component::new(0.5, 0.2, 0.04);
        let (u1, u3) = (0.5, 0.5);
        let s = split_transform(c, u1, 1e-12, u3).unwrap();
        assert!((s.first.mu - 0.2).abs() < 1e-10 && (s.second.mu - 0.2).abs() < 1e-10);
        let s = split_transform(c, u1, 1e-6, u3).unwrap();
        // The mean gap is linear in u2, so the Jacobian tends to a finite
        // limit rather than zero.
        let (w1, w2) = (c.w * u1, c.w * (1.0 - u1));
        let limit = c.w * c.w * s.first.sigma * s.second.sigma
            / ((w1 * w2).sqrt() * u3 * (1.0 - u3) * c.sigma.sqrt());
        assert!((s.log_jacobian - limit.ln()).abs() < 1e-8);
    }
}

//! Label-invariant posterior summaries: point estimates, exceedance
//! probabilities, co-clustering, partition events and convergence
//! diagnostics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::sampler::ChainDraws;
use crate::stats::{median, quantile_sorted};

/// Anything that carries per-chain draws of every cell mean.
pub trait ThetaSamples {
    fn n_arms(&self) -> usize;
    fn n_subgroups(&self) -> usize;
    /// Draws of `theta[arm][subgroup]`, one vector per chain.
    fn theta_chains(&self, arm: usize, subgroup: usize) -> Vec<Vec<f64>>;

    fn theta_pooled(&self, arm: usize, subgroup: usize) -> Vec<f64> {
        self.theta_chains(arm, subgroup).concat()
    }
}

impl ThetaSamples for ChainDraws {
    fn n_arms(&self) -> usize {
        self.n_arms
    }

    fn n_subgroups(&self) -> usize {
        self.n_subgroups
    }

    fn theta_chains(&self, arm: usize, subgroup: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|chain| chain.iter().map(|d| d.arms[arm].theta[subgroup]).collect())
            .collect()
    }
}

fn non_empty<S: ThetaSamples + ?Sized>(draws: &S) -> Result<()> {
    if draws.n_arms() == 0 || draws.theta_pooled(0, 0).is_empty() {
        return Err(Error::InsufficientDraws("no stored draws".into()));
    }
    Ok(())
}

/// Posterior medians, `[arm][subgroup]`.
pub fn point_estimates<S: ThetaSamples + ?Sized>(draws: &S) -> Result<Vec<Vec<f64>>> {
    non_empty(draws)?;
    Ok((0..draws.n_arms())
        .map(|i| {
            (0..draws.n_subgroups())
                .map(|k| median(&draws.theta_pooled(i, k)))
                .collect()
        })
        .collect())
}

/// Central (equal-tailed) credible intervals at the given mass.
pub fn credible_intervals<S: ThetaSamples + ?Sized>(
    draws: &S,
    mass: f64,
) -> Result<Vec<Vec<(f64, f64)>>> {
    non_empty(draws)?;
    let lo = 0.5 * (1.0 - mass);
    Ok((0..draws.n_arms())
        .map(|i| {
            (0..draws.n_subgroups())
                .map(|k| {
                    let mut v = draws.theta_pooled(i, k);
                    v.sort_by(f64::total_cmp);
                    (quantile_sorted(&v, lo), quantile_sorted(&v, 1.0 - lo))
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// P(theta > x)
    Above,
    /// P(theta <= x)
    AtMost,
}

/// Fraction of draws of `theta[arm][subgroup]` beyond `x`.
pub fn exceedance<S: ThetaSamples + ?Sized>(
    draws: &S,
    arm: usize,
    subgroup: usize,
    x: f64,
    direction: Direction,
) -> f64 {
    let v = draws.theta_pooled(arm, subgroup);
    let above = v.iter().filter(|&&t| t > x).count();
    let hits = match direction {
        Direction::Above => above,
        Direction::AtMost => v.len() - above,
    };
    hits as f64 / v.len() as f64
}

/// Posterior probability that each pair of subgroups shares a component.
pub fn coclustering(draws: &ChainDraws, arm: usize) -> Result<Vec<Vec<f64>>> {
    let n = draws.n_draws();
    if n == 0 {
        return Err(Error::InsufficientDraws("no stored draws".into()));
    }
    let k = draws.n_subgroups;
    let mut counts = vec![vec![0usize; k]; k];
    for d in draws.iter() {
        let z = &d.arms[arm].z;
        for a in 0..k {
            for b in a..k {
                if z[a] == z[b] {
                    counts[a][b] += 1;
                }
            }
        }
    }
    let mut out = vec![vec![0.0; k]; k];
    for a in 0..k {
        out[a][a] = 1.0;
        for b in a + 1..k {
            let p = counts[a][b] as f64 / n as f64;
            out[a][b] = p;
            out[b][a] = p;
        }
    }
    Ok(out)
}

/// Relabels an allocation vector by order of first appearance so that equal
/// partitions compare equal.
pub fn canonical_partition(z: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    z.iter()
        .map(|&t| match map.iter().find(|(from, _)| *from == t) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((t, to));
                to
            }
        })
        .collect()
}

/// Fraction of draws whose allocation vector satisfies `predicate`. The
/// predicate receives the canonical (relabeled) partition.
pub fn partition_event<F>(draws: &ChainDraws, arm: usize, predicate: F) -> f64
where
    F: Fn(&[usize]) -> bool,
{
    let n = draws.n_draws();
    let hits = draws
        .iter()
        .filter(|d| predicate(&canonical_partition(&d.arms[arm].z)))
        .count();
    hits as f64 / n as f64
}

/// Posterior distribution of the number of occupied clusters, indexed by
/// `count - 1` over `1..=K`.
pub fn occupied_distribution(draws: &ChainDraws, arm: usize) -> Vec<f64> {
    let mut probs = vec![0.0; draws.n_subgroups];
    let n = draws.n_draws() as f64;
    for d in draws.iter() {
        probs[d.arms[arm].occupied() - 1] += 1.0 / n;
    }
    probs
}

/// Occupied-cluster count with the highest posterior probability.
pub fn modal_occupied(draws: &ChainDraws, arm: usize) -> usize {
    let probs = occupied_distribution(draws, arm);
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best + 1
}

/// Split-R-hat and bulk effective sample size of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rhat: f64,
    pub ess: f64,
    /// Every draw identical: R-hat is reported as 1 and ESS as the draw count.
    pub degenerate: bool,
}

fn split_halves(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of pooled fractional ranks (average ranks for ties).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(Vec::len).sum();
    let mut flat: Vec<(f64, usize)> = chains
        .iter()
        .flatten()
        .copied()
        .enumerate()
        .map(|(i, x)| (x, i))
        .collect();
    flat.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && flat[j + 1].0 == flat[i].0 {
            j += 1;
        }
        let avg = 0.5 * ((i + 1) + (j + 1)) as f64;
        for item in &flat[i..=j] {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out = Vec::with_capacity(chains.len());
    let mut pos = 0;
    for c in chains {
        out.push(
            (0..c.len())
                .map(|t| normal.inverse_cdf((ranks[pos + t] - 0.375) / (total as f64 + 0.25)))
                .collect(),
        );
        pos += c.len();
    }
    out
}

fn chain_mean(c: &[f64]) -> f64 {
    c.iter().sum::<f64>() / c.len() as f64
}

fn chain_var(c: &[f64]) -> f64 {
    let m = chain_mean(c);
    c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (c.len() - 1) as f64
}

fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| chain_mean(c)).collect();
    let within = chains.iter().map(|c| chain_var(c)).sum::<f64>() / chains.len() as f64;
    let grand = chain_mean(&means);
    let between_over_n = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (means.len() - 1) as f64;
    let var_plus = (n - 1.0) / n * within + between_over_n;
    if within == 0.0 {
        return if between_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (var_plus / within).sqrt()
}

fn autocovariance(c: &[f64], lag: usize) -> f64 {
    let m = chain_mean(c);
    let n = c.len();
    (0..n - lag).map(|t| (c[t] - m) * (c[t + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence.
fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let mean_acov = |lag: usize| chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m;
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if chains.len() > 1 {
        let means: Vec<f64> = chains.iter().map(|c| chain_mean(c)).collect();
        var_plus += chain_var(&means);
    }
    if var_plus == 0.0 {
        return m * nf;
    }
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;
    let mut rhos = vec![1.0, rho(1)];
    let mut t = 1;
    while t + 2 < n.saturating_sub(3) {
        let even = rho(t + 1);
        let odd = rho(t + 2);
        if even + odd < 0.0 {
            break;
        }
        rhos.push(even);
        rhos.push(odd);
        t += 2;
    }
    // Enforce monotonically decreasing pair sums.
    let mut pair = 2;
    while pair + 1 < rhos.len() {
        let prev = rhos[pair - 2] + rhos[pair - 1];
        if rhos[pair] + rhos[pair + 1] > prev {
            rhos[pair] = prev / 2.0;
            rhos[pair + 1] = prev / 2.0;
        }
        pair += 2;
    }
    let tau = (-1.0 + 2.0 * rhos.iter().sum::<f64>()).max(1.0 / (m * nf).log10());
    (m * nf / tau).min(m * nf * (m * nf).log10())
}

/// Rank-normalized split-R-hat (max of bulk and folded-tail versions) and
/// bulk ESS for one set of chains.
pub fn diagnose_chains(chains: &[Vec<f64>]) -> Result<Diagnostic> {
    if chains.len() < 2 {
        return Err(Error::InsufficientDraws(format!(
            "diagnostics need at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::InsufficientDraws(format!(
            "diagnostics need at least 4 draws per chain, got {n}"
        )));
    }
    let chains: Vec<Vec<f64>> = chains.iter().map(|c| c[..n].to_vec()).collect();
    let first = chains[0][0];
    if chains.iter().flatten().all(|&x| x == first) {
        log::warn!("all draws identical; R-hat reported as 1.0");
        return Ok(Diagnostic {
            rhat: 1.0,
            ess: (chains.len() * n) as f64,
            degenerate: true,
        });
    }
    let split = split_halves(&chains);
    let bulk = rank_normalize(&split);
    let pooled: Vec<f64> = chains.concat();
    let med = median(&pooled);
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    let tail = rank_normalize(&folded);
    let rhat = basic_rhat(&bulk).max(basic_rhat(&tail));
    Ok(Diagnostic {
        rhat,
        ess: ess(&bulk),
        degenerate: false,
    })
}

/// Per-cell diagnostics of the cell means, `[arm][subgroup]`.
pub fn diagnostics<S: ThetaSamples + ?Sized>(draws: &S) -> Result<Vec<Vec<Diagnostic>>> {
    (0..draws.n_arms())
        .map(|i| {
            (0..draws.n_subgroups())
                .map(|k| diagnose_chains(&draws.theta_chains(i, k)))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub theta_median: Vec<Vec<f64>>,
    pub theta_ci: Vec<Vec<(f64, f64)>>,
    pub coclustering: Vec<Vec<Vec<f64>>>,
    /// Distribution of occupied-cluster counts per arm.
    pub q_posterior: Vec<Vec<f64>>,
    pub diagnostics: Option<Vec<Vec<Diagnostic>>>,
}

pub fn summarize(draws: &ChainDraws) -> Result<PosteriorSummary> {
    let coclust = (0..draws.n_arms)
        .map(|i| coclustering(draws, i))
        .collect::<Result<Vec<_>>>()?;
    let diagnostics = match diagnostics(draws) {
        Ok(d) => Some(d),
        Err(Error::InsufficientDraws(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(PosteriorSummary {
        theta_median: point_estimates(draws)?,
        theta_ci: credible_intervals(draws, 0.95)?,
        coclustering: coclust,
        q_posterior: (0..draws.n_arms)
            .map(|i| occupied_distribution(draws, i))
            .collect(),
        diagnostics,
    })
}

/// Average-linkage agglomeration on a co-clustering matrix: clusters merge
/// while the highest average between-cluster co-clustering probability
/// exceeds `threshold`. Returns canonical labels.
pub fn average_linkage(coclust: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let k = coclust.len();
    let mut clusters: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &x in &clusters[a] {
                    for &y in &clusters[b] {
                        total += coclust[x][y];
                    }
                }
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(s, _, _)| avg > s) {
                    best = Some((avg, a, b));
                }
            }
        }
        match best {
            Some((score, a, b)) if score > threshold => {
                let merged = clusters.remove(b);
                clusters[a].extend(merged);
            }
            _ => break,
        }
    }
    let mut labels = vec![0; k];
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            labels[m] = c;
        }
    }
    canonical_partition(&labels)
}

/// Fraction of subgroups misclassified under the best one-to-one matching
/// of estimated clusters to true classes. Estimated clusters left without a
/// class count entirely as misclassified.
pub fn misclassification_rate(estimated: &[usize], truth: &[usize]) -> f64 {
    let est = canonical_partition(estimated);
    let tru = canonical_partition(truth);
    let n_est = est.iter().max().map_or(0, |m| m + 1);
    let n_tru = tru.iter().max().map_or(0, |m| m + 1);
    let mut overlap = vec![vec![0usize; n_tru]; n_est];
    for (&e, &t) in est.iter().zip(&tru) {
        overlap[e][t] += 1;
    }
    // Exhaustive assignment; cluster counts are at most the subgroup count.
    fn best(overlap: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
        if row == overlap.len() {
            return 0;
        }
        let mut top = best(overlap, row + 1, used);
        for t in 0..used.len() {
            if !used[t] {
                used[t] = true;
                top = top.max(overlap[row][t] + best(overlap, row + 1, used));
                used[t] = false;
            }
        }
        top
    }
    let matched = best(&overlap, 0, &mut vec![false; n_tru]);
    1.0 - matched as f64 / est.len() as f64
}

/// Integer class labels from true effect levels (equal values share a class).
pub fn truth_labels(theta: &[f64]) -> Vec<usize> {
    let mut levels: Vec<f64> = Vec::new();
    theta
        .iter()
        .map(|&t| match levels.iter().position(|&l| (l - t).abs() < 1e-12) {
            Some(i) => i,
            None => {
                levels.push(t);
                levels.len() - 1
            }
        })
        .collect()
}

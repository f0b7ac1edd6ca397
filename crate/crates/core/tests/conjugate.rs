//! Every Gibbs block, run repeatedly from one frozen state, against moments
//! obtained by quadrature of the joint density in that single coordinate.

use bharp::model::{log_joint, ArmState, Dataset, Hyperparameters, ModelState, PreparedData};
use bharp::rng::{stream, Purpose, SimRng};
use bharp::sampler::gibbs;
use bharp::sampler::DeltaLikelihood;

const DRAWS: usize = 20_000;
const REAL: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);
const POSITIVE: (f64, f64) = (0.0, f64::INFINITY);

fn dataset() -> Dataset {
    Dataset::from_grid(vec![
        vec![
            vec![0.3, -0.2, 1.1, 0.4],
            vec![1.6, 0.9],
            vec![-0.7, 0.1, 0.2],
            vec![0.5],
        ],
        vec![vec![], vec![2.2, 1.9, 2.5], vec![0.0, -0.4], vec![1.0, 1.2, 0.8, 0.9, 1.4]],
    ])
    .unwrap()
}

fn frozen() -> ModelState {
    ModelState {
        varsigma: 1.3,
        arms: vec![
            ArmState {
                beta: 0.2,
                delta: vec![0.1, 0.9, -0.3, 0.35],
                w: vec![0.5, 0.3, 0.2],
                mu: vec![0.05, 0.8, -0.25],
                sigma: vec![0.04, 0.09, 0.02],
                tau: 1.4,
                z: vec![0, 1, 2, 0],
            },
            ArmState {
                beta: 1.0,
                delta: vec![-0.5, 1.1, -1.2, 0.2],
                w: vec![0.65, 0.35],
                mu: vec![-0.4, 0.6],
                sigma: vec![0.3, 0.12],
                tau: 0.8,
                z: vec![0, 1, 0, 1],
            },
        ],
    }
}

fn hypers() -> Hyperparameters {
    Hyperparameters {
        c: vec![0.1, -0.2],
        p: vec![2.0, 1.5],
        ..Hyperparameters::defaults(2)
    }
}

struct Moments {
    mean: f64,
    var: f64,
    m4: f64,
}

/// Normalized moments of `exp(logf)` on `[lo, hi]` by the trapezoid rule.
fn quadrature(logf: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Moments {
    let n = 20_001;
    let h = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
    let ls: Vec<f64> = xs.iter().map(|&x| logf(x)).collect();
    let top = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut s1) = (0.0, 0.0);
    let wt = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    for i in 0..n {
        let f = wt(i) * (ls[i] - top).exp();
        z += f;
        s1 += f * xs[i];
    }
    let mean = s1 / z;
    let (mut s2, mut s4) = (0.0, 0.0);
    for i in 0..n {
        let f = wt(i) * (ls[i] - top).exp();
        let d = xs[i] - mean;
        s2 += f * d * d;
        s4 += f * d.powi(4);
    }
    Moments { mean, var: s2 / z, m4: s4 / z }
}

fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Mean and variance of the draws agree with the quadrature moments within
/// three Monte Carlo standard errors.
fn check(label: &str, xs: &[f64], oracle: &Moments) {
    let n = xs.len() as f64;
    let (m, v) = sample_moments(xs);
    let se_mean = (oracle.var / n).sqrt();
    assert!(
        (m - oracle.mean).abs() < 3.0 * se_mean,
        "{label}: mean {m} vs {} (se {se_mean})",
        oracle.mean
    );
    let se_var = ((oracle.m4 - oracle.var * oracle.var) / n).sqrt();
    assert!(
        (v - oracle.var).abs() < 3.0 * se_var,
        "{label}: variance {v} vs {} (se {se_var})",
        oracle.var
    );
}

/// Draws `DRAWS` values of one coordinate, each from a fresh copy of the
/// frozen state, and checks them against quadrature of the joint density
/// in that coordinate.
fn scalar_block(
    label: &str,
    sub: u64,
    get: impl Fn(&ModelState) -> f64,
    set: impl Fn(&mut ModelState, f64),
    update: impl Fn(&mut ModelState, &PreparedData, &Hyperparameters, &mut SimRng),
    support: (f64, f64),
) {
    let data = dataset();
    let prepared = PreparedData::from(&data);
    let h = hypers();
    let base = frozen();
    let mut rng = stream(2024, Purpose::Chain, 9, sub);
    let xs: Vec<f64> = (0..DRAWS)
        .map(|_| {
            let mut s = base.clone();
            update(&mut s, &prepared, &h, &mut rng);
            get(&s)
        })
        .collect();
    let (m, v) = sample_moments(&xs);
    let sd = v.sqrt();
    let lo = (m - 15.0 * sd).max(support.0 + 1e-9);
    let hi = (m + 15.0 * sd).min(support.1 - 1e-9);
    let oracle = quadrature(
        |x| {
            let mut s = base.clone();
            set(&mut s, x);
            log_joint(&s, &data, &h).unwrap()
        },
        lo,
        hi,
    );
    check(label, &xs, &oracle);
}

#[test]
fn varsigma_block() {
    check_varsigma_block();
}

pub fn check_varsigma_block() {
    scalar_block(
        "varsigma",
        0,
        |s| s.varsigma,
        |s, x| s.varsigma = x,
        |s, d, h, r| gibbs::update_varsigma(s, d, h, r).unwrap(),
        POSITIVE,
    );
}

#[test]
fn beta_block() {
    check_beta_block();
}

pub fn check_beta_block() {
    for arm in 0..2 {
        scalar_block(
            &format!("beta[{arm}]"),
            10 + arm as u64,
            |s| s.arms[arm].beta,
            |s, x| s.arms[arm].beta = x,
            |s, d, h, r| {
                let v = s.varsigma;
                gibbs::update_beta(&mut s.arms[arm], d.arm(arm), v, h.c[arm], h.p[arm], r).unwrap()
            },
            REAL,
        );
    }
}

#[test]
fn delta_block_including_empty_cell() {
    check_delta_block_including_empty_cell();
}

pub fn check_delta_block_including_empty_cell() {
    for arm in 0..2 {
        for k in 0..4 {
            scalar_block(
                &format!("delta[{arm}][{k}]"),
                20 + 4 * arm as u64 + k as u64,
                |s| s.arms[arm].delta[k],
                |s, x| s.arms[arm].delta[k] = x,
                |s, d, _, r| {
                    let v = s.varsigma;
                    gibbs::update_delta(&mut s.arms[arm], d.arm(arm), v, r).unwrap()
                },
                REAL,
            );
        }
    }
}

#[test]
fn mu_block() {
    check_mu_block();
}

pub fn check_mu_block() {
    for arm in 0..2 {
        for t in 0..frozen().arms[arm].q() {
            scalar_block(
                &format!("mu[{arm}][{t}]"),
                40 + 4 * arm as u64 + t as u64,
                |s| s.arms[arm].mu[t],
                |s, x| s.arms[arm].mu[t] = x,
                |s, _, _, r| gibbs::update_means(&mut s.arms[arm], DeltaLikelihood::Active, r).unwrap(),
                REAL,
            );
        }
    }
}

#[test]
fn sigma_block() {
    check_sigma_block();
}

pub fn check_sigma_block() {
    for arm in 0..2 {
        for t in 0..frozen().arms[arm].q() {
            scalar_block(
                &format!("sigma[{arm}][{t}]"),
                60 + 4 * arm as u64 + t as u64,
                |s| s.arms[arm].sigma[t],
                |s, x| s.arms[arm].sigma[t] = x,
                |s, _, h, r| {
                    gibbs::update_variances(&mut s.arms[arm], h, DeltaLikelihood::Active, r).unwrap()
                },
                POSITIVE,
            );
        }
    }
}

#[test]
fn tau_block() {
    check_tau_block();
}

pub fn check_tau_block() {
    for arm in 0..2 {
        scalar_block(
            &format!("tau[{arm}]"),
            80 + arm as u64,
            |s| s.arms[arm].tau,
            |s, x| s.arms[arm].tau = x,
            |s, _, h, r| gibbs::update_tau(&mut s.arms[arm], h, r).unwrap(),
            POSITIVE,
        );
    }
}

#[test]
fn weight_block_two_components() {
    check_weight_block_two_components();
}

pub fn check_weight_block_two_components() {
    // On the 1-simplex the weight is a single coordinate.
    scalar_block(
        "w[1][0]",
        90,
        |s| s.arms[1].w[0],
        |s, x| s.arms[1].w = vec![x, 1.0 - x],
        |s, _, _, r| gibbs::update_weights(&mut s.arms[1], r).unwrap(),
        (0.0, 1.0),
    );
}

#[test]
fn weight_block_dirichlet_moments() {
    check_weight_block_dirichlet_moments();
}

pub fn check_weight_block_dirichlet_moments() {
    let base = frozen();
    let counts = base.arms[0].counts();
    let alphas: Vec<f64> = counts.iter().map(|&n| 1.0 + n as f64).collect();
    let a0: f64 = alphas.iter().sum();
    let mut rng = stream(2024, Purpose::Chain, 9, 91);
    let draws: Vec<Vec<f64>> = (0..DRAWS)
        .map(|_| {
            let mut arm = base.arms[0].clone();
            gibbs::update_weights(&mut arm, &mut rng).unwrap();
            arm.w
        })
        .collect();
    for (t, &a) in alphas.iter().enumerate() {
        let mean = a / a0;
        let var = a * (a0 - a) / (a0 * a0 * (a0 + 1.0));
        let xs: Vec<f64> = draws.iter().map(|w| w[t]).collect();
        let (m, _) = sample_moments(&xs);
        assert!((m - mean).abs() < 3.0 * (var / DRAWS as f64).sqrt(), "w[{t}] mean {m} vs {mean}");
    }
}

#[test]
fn allocation_block_matches_enumeration() {
    check_allocation_block_matches_enumeration();
}

pub fn check_allocation_block_matches_enumeration() {
    let data = dataset();
    let h = hypers();
    let base = frozen();
    let mut rng = stream(2024, Purpose::Chain, 9, 92);
    for arm in 0..2 {
        let q = base.arms[arm].q();
        let mut freq = vec![vec![0usize; q]; 4];
        for _ in 0..DRAWS {
            let mut a = base.arms[arm].clone();
            gibbs::update_allocations(&mut a, DeltaLikelihood::Active, &mut rng).unwrap();
            for (k, &t) in a.z.iter().enumerate() {
                freq[k][t] += 1;
            }
        }
        for (k, row) in freq.iter().enumerate() {
            let logs: Vec<f64> = (0..q)
                .map(|t| {
                    let mut s = base.clone();
                    s.arms[arm].z[k] = t;
                    log_joint(&s, &data, &h).unwrap()
                })
                .collect();
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = logs.iter().map(|l| (l - top).exp()).sum();
            for (t, &c) in row.iter().enumerate() {
                let p = (logs[t] - top).exp() / norm;
                let se = (p * (1.0 - p) / DRAWS as f64).sqrt().max(1e-12);
                let f = c as f64 / DRAWS as f64;
                assert!((f - p).abs() < 3.0 * se + 1e-12, "z[{arm}][{k}] = {t}: {f} vs {p}");
            }
        }
    }
}

use bharp::model::{
    between_difference_density, crossover_delta, log_joint, log_likelihood, log_prior, sd_prior_summary,
    within_difference_density, ArmState, Dataset, Hyperparameters, ModelState,
};
use bharp::rng::{stream, Purpose};
use rand::Rng;
use rand_distr::{Distribution, Gamma as RGamma, Normal as RNormal};
use statrs::distribution::{Continuous, Gamma, InverseGamma, Normal};
use statrs::function::gamma::ln_gamma;

fn small_case() -> (ModelState, Dataset, Hyperparameters) {
    let data = Dataset::from_grid(vec![vec![vec![0.4, -0.1], vec![1.2], vec![0.3, 0.8]]]).unwrap();
    let state = ModelState {
        varsigma: 0.9,
        arms: vec![ArmState {
            beta: 0.25,
            delta: vec![-0.1, 0.6, 0.05],
            w: vec![0.7, 0.3],
            mu: vec![-0.02, 0.5],
            sigma: vec![0.02, 0.05],
            tau: 1.7,
            z: vec![0, 1, 0],
        }],
    };
    (state, data, Hyperparameters::defaults(1))
}

/// Every factor of the joint written out with library densities.
fn oracle(state: &ModelState, data: &Dataset, h: &Hyperparameters) -> f64 {
    let arm = &state.arms[0];
    let q = arm.q();
    let k = arm.delta.len();
    let obs_sd = 1.0 / state.varsigma.sqrt();
    let mut total = 0.0;
    for (s, &d) in arm.delta.iter().enumerate() {
        let theta = arm.beta + d;
        for &y in &data.cell(0, s).outcomes {
            total += Normal::new(theta, obs_sd).unwrap().ln_pdf(y);
        }
    }
    total += Gamma::new(h.a_cell, h.b_cell).unwrap().ln_pdf(state.varsigma);
    total += Normal::new(h.c[0], 1.0 / h.p[0].sqrt()).unwrap().ln_pdf(arm.beta);
    total += Gamma::new(h.a_between, h.b_between).unwrap().ln_pdf(arm.tau);
    let norm: f64 = (1..=k).map(|j| (j as f64).powf(h.alpha)).sum();
    total += h.alpha * (q as f64).ln() - norm.ln();
    // Dir(1, ..., 1) density on the simplex
    total += ln_gamma(q as f64);
    for t in 0..q {
        total += Normal::new(0.0, 1.0 / arm.tau.sqrt()).unwrap().ln_pdf(arm.mu[t]);
        total += InverseGamma::new(h.a_within, h.b_within).unwrap().ln_pdf(arm.sigma[t]);
    }
    for (s, &t) in arm.z.iter().enumerate() {
        total += arm.w[t].ln();
        total += Normal::new(arm.mu[t], arm.sigma[t].sqrt()).unwrap().ln_pdf(arm.delta[s]);
    }
    total
}

#[test]
fn log_joint_matches_term_by_term_oracle() {
    let (state, data, h) = small_case();
    let got = log_joint(&state, &data, &h).unwrap();
    let want = oracle(&state, &data, &h);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn log_joint_matches_oracle_on_random_states() {
    let mut rng = stream(5, Purpose::Data, 0, 0);
    let h = Hyperparameters::defaults(1);
    for _ in 0..200 {
        let k = rng.random_range(1..6);
        let q = rng.random_range(1..=k);
        let mut w: Vec<f64> = (0..q).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let mu: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<usize> = (0..k).map(|_| rng.random_range(0..q)).collect();
        let state = ModelState {
            varsigma: rng.random_range(0.3..3.0),
            arms: vec![ArmState {
                beta: rng.random_range(-1.0..1.0),
                delta: z.iter().map(|&t| mu[t] + rng.random_range(-0.2..0.2)).collect(),
                w,
                mu,
                sigma: (0..q).map(|_| rng.random_range(0.005..0.1)).collect(),
                tau: rng.random_range(0.3..3.0),
                z,
            }],
        };
        let grid = (0..k)
            .map(|_| (0..rng.random_range(0..4)).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let data = Dataset::from_grid(vec![grid]).unwrap();
        let got = log_joint(&state, &data, &h).unwrap();
        let want = oracle(&state, &data, &h);
        assert!((got - want).abs() < 1e-8 * (1.0 + want.abs()), "{got} vs {want}");
    }
}

#[test]
fn log_joint_is_label_symmetric() {
    let (state, data, h) = small_case();
    let mut swapped = state.clone();
    let arm = &mut swapped.arms[0];
    arm.w.swap(0, 1);
    arm.mu.swap(0, 1);
    arm.sigma.swap(0, 1);
    arm.z.iter_mut().for_each(|t| *t = 1 - *t);
    let a = log_joint(&state, &data, &h).unwrap();
    let b = log_joint(&swapped, &data, &h).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn likelihood_is_invariant_under_identification_shift() {
    let (state, data, h) = small_case();
    let mut shifted = state.clone();
    let c = 0.37;
    shifted.arms[0].beta += c;
    shifted.arms[0].delta.iter_mut().for_each(|d| *d -= c);
    let (la, lb) = (log_likelihood(&state, &data).unwrap(), log_likelihood(&shifted, &data).unwrap());
    assert!((la - lb).abs() < 1e-12);
    let (pa, pb) = (log_prior(&state, &h).unwrap(), log_prior(&shifted, &h).unwrap());
    assert!((pa - pb).abs() > 1e-6, "prior terms in beta and delta should move");
}

#[test]
fn sd_prior_summaries() {
    check_sd_prior_summaries();
}

pub fn check_sd_prior_summaries() {
    let s = sd_prior_summary(5.0, 6.0).unwrap();
    assert!((s.mode - 1.0).abs() < 0.02);
    assert!((s.hdi95.0 - 0.71).abs() < 0.02 && (s.hdi95.1 - 1.79).abs() < 0.02, "{s:?}");
    let s = sd_prior_summary(4.0, 4.0).unwrap();
    assert!((s.mode - 0.89).abs() < 0.02);
    assert!((s.hdi95.0 - 0.61).abs() < 0.02 && (s.hdi95.1 - 1.75).abs() < 0.02, "{s:?}");
    let s = sd_prior_summary(70.0, 0.71).unwrap();
    assert!((s.mode - 0.10).abs() < 0.005);
}

#[test]
fn sd_hdi_contains_mode_and_holds_95_percent() {
    for (a, b) in [(5.0, 6.0), (4.0, 4.0), (70.0, 0.71), (30.0, 0.31)] {
        let s = sd_prior_summary(a, b).unwrap();
        assert!(s.hdi95.0 < s.mode && s.mode < s.hdi95.1);
        // density of s = sqrt(v), v ~ InvGamma(a, b): 2 s f_v(s^2)
        let ig = InverseGamma::new(a, b).unwrap();
        let (lo, hi) = s.hdi95;
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let mass: f64 = (0..=n)
            .map(|i| {
                let x = lo + h * i as f64;
                let f = 2.0 * x * ig.pdf(x * x);
                if i == 0 || i == n { 0.5 * f } else { f }
            })
            .sum::<f64>()
            * h;
        assert!((mass - 0.95).abs() < 1e-3, "({a}, {b}): mass {mass}");
        let (flo, fhi) = (2.0 * lo * ig.pdf(lo * lo), 2.0 * hi * ig.pdf(hi * hi));
        assert!((flo - fhi).abs() < 1e-4 * flo.max(fhi), "endpoint densities {flo} {fhi}");
    }
}

#[test]
fn crossover_reference_value_and_crossing_property() {
    check_crossover_reference_value_and_crossing_property();
}

pub fn check_crossover_reference_value_and_crossing_property() {
    let h = Hyperparameters::defaults(1);
    let d = crossover_delta(&h).unwrap();
    assert!((d - 0.31).abs() < 0.02, "{d}");
    let fw = |x| within_difference_density(x, h.a_within, h.b_within);
    let fb = |x| between_difference_density(x, h.a_between, h.b_between);
    assert!((fw(d) - fb(d)).abs() < 1e-6);
    for i in 1..1000 {
        let x = d * i as f64 / 1000.0;
        assert!(fw(x) > fb(x), "x = {x}");
    }
}

#[test]
fn crossover_identical_hyperparameters_is_zero() {
    let h = Hyperparameters {
        a_within: 4.0,
        b_within: 4.0,
        ..Hyperparameters::defaults(1)
    };
    assert_eq!(crossover_delta(&h).unwrap(), 0.0);
}

/// Densities of |difference| from prior draws, compared on a histogram;
/// the crossing is where the two histograms change order.
#[test]
fn crossover_enrichment_hyperparameters_match_monte_carlo() {
    let h = Hyperparameters::enrichment_defaults(1);
    let d = crossover_delta(&h).unwrap();
    let mut rng = stream(17, Purpose::Data, 0, 1);
    let n = 10_000_000;
    let bin = 0.005;
    let nb = 200;
    let mut within = vec![0u64; nb];
    let mut between = vec![0u64; nb];
    let std = RNormal::new(0.0, 1.0).unwrap();
    let g_w = RGamma::new(h.a_within, 1.0 / h.b_within).unwrap();
    let g_b = RGamma::new(h.a_between, 1.0 / h.b_between).unwrap();
    for _ in 0..n {
        // two deviations in one component: N(0, 2 sigma), sigma ~ InvGamma
        let sigma = 1.0 / g_w.sample(&mut rng);
        let x = (2.0 * sigma).sqrt() * std.sample(&mut rng);
        let tau: f64 = g_b.sample(&mut rng);
        let y = (2.0 / tau).sqrt() * std.sample(&mut rng);
        for (v, hist) in [(x.abs(), &mut within), (y.abs(), &mut between)] {
            let b = (v / bin) as usize;
            if b < nb {
                hist[b] += 1;
            }
        }
    }
    let crossing = (0..nb).find(|&b| within[b] <= between[b]).expect("histograms cross");
    let mc = (crossing as f64) * bin;
    assert!((mc - d).abs() < 0.02, "monte carlo {mc} vs {d}");
}

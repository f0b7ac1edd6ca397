use bharp::comparators::{dic, fit_bhm, fit_blast, fit_ind, fit_model, Method};
use bharp::model::{Dataset, Hyperparameters, PreparedData};
use bharp::posterior::{point_estimates, ThetaSamples};
use bharp::rng::replicate_seed;
use bharp::sampler::{run_chains, ChainConfig, MoveConfig, SamplerMode};
use bharp::trial::{generate_fixed_dataset, TrialScenario};
use bharp::Error;

fn cfg(seed: u64) -> ChainConfig {
    ChainConfig {
        seed,
        ..ChainConfig::default()
    }
}

fn pinned_precision() -> Hyperparameters {
    Hyperparameters {
        a_cell: 1e10,
        b_cell: 1e10,
        ..Hyperparameters::defaults(1)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

#[test]
fn ind_empty_cell_returns_the_prior() {
    let data = Dataset::from_grid(vec![vec![vec![0.4, 0.9], vec![]]]).unwrap();
    let h = Hyperparameters {
        c: vec![0.3],
        p: vec![4.0],
        ..Hyperparameters::defaults(1)
    };
    let draws = fit_ind(&data, &h, &cfg(1)).unwrap();
    let (m, v) = mean_var(&draws.theta_pooled(0, 1));
    let n = draws.theta_pooled(0, 1).len() as f64;
    assert!((m - 0.3).abs() < 3.0 * (0.25 / n).sqrt(), "{m}");
    assert!((v - 0.25).abs() < 3.0 * 0.25 * (2.0 / n).sqrt(), "{v}");
}

#[test]
fn ind_conjugate_posterior_mean() {
    // 35 observations with mean exactly 0.5
    let ys: Vec<f64> = (0..35).map(|i| 0.5 + 0.1 * (i as f64 - 17.0)).collect();
    let data = Dataset::from_grid(vec![vec![ys]]).unwrap();
    let draws = fit_ind(&data, &pinned_precision(), &cfg(2)).unwrap();
    let v = draws.theta_pooled(0, 0);
    let (m, var) = mean_var(&v);
    let want: f64 = 35.0 * 0.5 / (2.0 + 35.0);
    assert!((want - 0.4730).abs() < 1e-4);
    assert!((m - want).abs() < 3.0 * (1.0 / 37.0 / v.len() as f64).sqrt(), "{m} vs {want}");
    assert!((var - 1.0 / 37.0).abs() < 3.0 * (1.0 / 37.0) * (2.0 / v.len() as f64).sqrt());
}

#[test]
fn bhm_shrinks_more_than_ind_on_homogeneous_data() {
    let data = generate_fixed_dataset(&TrialScenario::builtin("S1").unwrap(), 4).unwrap();
    // A diffuse arm-mean prior keeps IND from shrinking toward c.
    let h = Hyperparameters {
        p: vec![0.01],
        ..Hyperparameters::defaults(1)
    };
    let spread = |est: Vec<Vec<f64>>| {
        let row = &est[0];
        row.iter().cloned().fold(f64::MIN, f64::max) - row.iter().cloned().fold(f64::MAX, f64::min)
    };
    let ind = spread(point_estimates(&fit_ind(&data, &h, &cfg(3)).unwrap()).unwrap());
    let bhm = spread(point_estimates(&fit_bhm(&data, &h, &cfg(3)).unwrap()).unwrap());
    assert!(bhm < ind, "bhm spread {bhm}, ind spread {ind}");
}

#[test]
fn bhm_single_subgroup_tracks_ind() {
    let ys: Vec<f64> = (0..20).map(|i| 0.2 + 0.15 * ((i * 7 % 11) as f64 - 5.0)).collect();
    let data = Dataset::from_grid(vec![vec![ys]]).unwrap();
    let h = pinned_precision();
    let a = fit_ind(&data, &h, &cfg(4)).unwrap().theta_pooled(0, 0);
    let b = fit_bhm(&data, &h, &cfg(4)).unwrap().theta_pooled(0, 0);
    let ((ma, va), (mb, _)) = (mean_var(&a), mean_var(&b));
    // The extra subgroup-level variance only widens the prior on theta, so
    // the two posteriors sit within a fraction of a posterior sd.
    assert!((ma - mb).abs() < 0.25 * va.sqrt(), "{ma} vs {mb}");
}

#[test]
fn dic_penalizes_unneeded_components() {
    let data = generate_fixed_dataset(&TrialScenario::builtin("S1").unwrap(), 5).unwrap();
    let prepared = PreparedData::from(&data);
    let h = Hyperparameters::defaults(1);
    let fit = |q| {
        let draws = run_chains(&prepared, &h, &cfg(6), &MoveConfig::default(), SamplerMode { fixed_q: Some(q) }).unwrap();
        dic(&draws, &data).unwrap()
    };
    let (one, two) = (fit(1), fit(2));
    assert!(two.p_d > one.p_d, "p_D q=1 {} q=2 {}", one.p_d, two.p_d);
}

#[test]
fn dic_prefers_matching_count_on_separated_data() {
    let data = generate_fixed_dataset(&TrialScenario::builtin("S2").unwrap(), 5).unwrap();
    let prepared = PreparedData::from(&data);
    let h = Hyperparameters::defaults(1);
    let fit = |q| {
        let draws = run_chains(&prepared, &h, &cfg(7), &MoveConfig::default(), SamplerMode { fixed_q: Some(q) }).unwrap();
        dic(&draws, &data).unwrap().dic
    };
    assert!(fit(2) < fit(1));
}

#[test]
fn blast_refuses_multi_arm_data() {
    let data = Dataset::from_grid(vec![vec![vec![0.1]], vec![vec![0.2]]]).unwrap();
    let err = fit_blast(&data, &Hyperparameters::defaults(2), &cfg(1), &MoveConfig::default()).unwrap_err();
    assert!(matches!(err, Error::MultiArmRefused { arms: 2 }));
}

fn blast_selection_rate(scenario: &str, want_q: usize, reps: u64) -> f64 {
    let s = TrialScenario::builtin(scenario).unwrap();
    let h = Hyperparameters::defaults(1);
    let hits = (0..reps)
        .filter(|&r| {
            let seed = replicate_seed(99, r);
            let data = generate_fixed_dataset(&s, seed).unwrap();
            let fit = fit_blast(&data, &h, &cfg(seed), &MoveConfig::default()).unwrap();
            fit.blast.unwrap().selected_q == want_q
        })
        .count();
    hits as f64 / reps as f64
}

#[test]
#[ignore = "replicate study; run with --release -- --ignored"]
fn blast_selects_one_component_on_homogeneous_data() {
    let rate = blast_selection_rate("S1", 1, 100);
    assert!(rate >= 0.9, "q = 1 selected in {rate}");
}

#[test]
#[ignore = "replicate study; run with --release -- --ignored"]
fn blast_selects_two_components_on_two_levels() {
    let rate = blast_selection_rate("S2", 2, 100);
    assert!(rate >= 0.9, "q = 2 selected in {rate}");
}

#[test]
fn fit_model_dispatches_every_method() {
    let data = generate_fixed_dataset(&TrialScenario::builtin("S1").unwrap(), 8).unwrap();
    let c = ChainConfig {
        n_chains: 2,
        n_iter: 1100,
        seed: 8,
        ..ChainConfig::default()
    };
    for m in Method::ALL {
        let fit = fit_model(m, &data, &Hyperparameters::defaults(1), &c, &MoveConfig::default()).unwrap();
        assert_eq!(fit.theta_pooled(0, 0).len(), 200);
        assert_eq!(fit.mixture().is_some(), matches!(m, Method::Bharp | Method::Blast));
    }
}

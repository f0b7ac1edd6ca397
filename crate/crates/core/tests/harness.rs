use std::collections::BTreeMap;
use std::path::Path;

use bharp::harness::{self, Mode, RawConfig, RunConfig};
use bharp::model::Hyperparameters;
use bharp::posterior::coclustering;
use bharp::sampler::MoveConfig;
use bharp::trial::DesignConfig;

fn config(text: &str, out: &Path) -> RunConfig {
    let mut raw = RawConfig::parse(text).unwrap();
    raw.output_dir = Some(out.to_path_buf());
    raw.resolve().unwrap()
}

/// Every file in a directory, by name.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn without_manifest(mut files: BTreeMap<String, Vec<u8>>) -> BTreeMap<String, Vec<u8>> {
    files.remove("manifest.json");
    files
}

const SIMULATE: &str = r#"
mode = "simulate"
scenario = "S3"
method = ["BHARP", "IND", "BHM"]
n_replicates = 6
master_seed = 17
[chain]
n_chains = 2
n_iter = 1300
"#;

const TRIAL: &str = r#"
mode = "trial"
method = ["BHARP", "IND"]
n_replicates = 4
master_seed = 5
[chain]
n_chains = 2
n_iter = 1300
[design]
analysis_totals = [300, 600]
prob_e = [0.99, 0.9]
prob_f = [0.9, 0.9]
"#;

#[test]
fn repeated_runs_are_byte_identical() {
    check_repeated_runs_are_byte_identical();
}

pub fn check_repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for text in [SIMULATE, TRIAL] {
        let cfg = config(text, dir.path());
        harness::run(&cfg).unwrap();
        let first = snapshot(dir.path());
        harness::run(&cfg).unwrap();
        assert_eq!(first, snapshot(dir.path()));
        assert!(first.contains_key("manifest.json") && first.contains_key("metrics.csv"));
    }
}

#[test]
fn aggregates_do_not_depend_on_worker_count() {
    check_aggregates_do_not_depend_on_worker_count();
}

pub fn check_aggregates_do_not_depend_on_worker_count() {
    for text in [SIMULATE, TRIAL] {
        let outputs: Vec<_> = [1, 3]
            .into_iter()
            .map(|w| {
                let dir = tempfile::tempdir().unwrap();
                let mut cfg = config(text, dir.path());
                cfg.workers = w;
                harness::run(&cfg).unwrap();
                without_manifest(snapshot(dir.path()))
            })
            .collect();
        assert_eq!(outputs[0], outputs[1]);
    }
}

#[test]
fn single_replicate_aggregate_equals_the_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(SIMULATE, dir.path());
    cfg.n_replicates = 1;
    let res = harness::run_study(&cfg).unwrap();
    for agg in &res.aggregates {
        let rep = res.replicates.iter().find(|r| r.method == agg.method).unwrap();
        for (i, row) in agg.metrics.iter().enumerate() {
            for (s, m) in row.iter().enumerate() {
                let err = (rep.estimates[i][s] - cfg.scenario.true_theta[i][s]).abs();
                assert_eq!(m.rmse, err);
                assert_eq!(m.mae, err);
                assert_eq!(m.variance, 0.0);
            }
        }
        if let Some(p) = &rep.partition {
            assert_eq!(agg.mean_misclassification, Some(p.misclassification));
            assert_eq!(agg.mean_heterogeneous_coclustering, p.heterogeneous_coclustering);
            assert_eq!(agg.mean_coclustering, rep.coclustering);
        }
    }
}

#[test]
fn empty_trial_config_uses_defaults() {
    let cfg = RawConfig::parse("mode = \"trial\"\nscenario = \"partner-step-t2d\"\n").unwrap().resolve().unwrap();
    assert_eq!(cfg.mode, Mode::Trial);
    assert_eq!(cfg.hypers, Hyperparameters::enrichment_defaults(3));
    assert_eq!(cfg.design, DesignConfig::default());
    assert_eq!(cfg.moves, MoveConfig::default());
    assert_eq!(cfg.n_replicates, 1);
}

#[test]
fn invalid_hyperparameter_is_named() {
    let err = RawConfig::parse("[hyperparameters]\na_within = -1\n").unwrap().resolve().unwrap_err();
    assert!(err.to_string().contains("a_within"), "{err}");
}

#[test]
fn every_unknown_key_is_reported() {
    let err = RawConfig::parse("seeds = 3\n[chain]\nn_iters = 4\n").unwrap_err().to_string();
    assert!(err.contains("seeds") && err.contains("chain.n_iters"), "{err}");
}

#[test]
fn overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "scenario = \"S1\"\n[chain]\nn_chains = 1\nn_iter = 1100\n[moves]\np_split = 0.5\n",
        dir.path(),
    );
    assert_eq!(cfg.moves.p_split, 0.5);
    harness::run(&cfg).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["moves"]["p_split"], 0.5);
    assert_eq!(manifest["config"]["hypers"]["a_within"], 70.0);
}

const TOY: &str = "arm,subgroup,y\n0,0,0.3\n0,0,0.1\n0,1,0.9\n0,1,1.2\n0,2,-0.2\n0,2,0.4\n0,2,0.0\n";

fn toy_fit(dir: &Path) -> RunConfig {
    std::fs::write(dir.join("toy.csv"), TOY).unwrap();
    config(
        &format!(
            "data = {:?}\nmethod = [\"BHARP\", \"IND\"]\nmaster_seed = 3\n[chain]\nn_chains = 3\nn_iter = 1400\nn_burnin = 1000\n",
            dir.join("toy.csv")
        ),
        dir,
    )
}

#[test]
fn draws_file_has_one_row_per_kept_draw_and_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_fit(dir.path());
    harness::run(&cfg).unwrap();
    for name in ["draws_bharp.csv", "draws_ind.csv"] {
        let mut reader = csv::Reader::from_path(dir.path().join(name)).unwrap();
        let mut counts = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.unwrap();
            *counts.entry((rec[2].to_string(), rec[3].to_string())).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 3);
        assert!(counts.values().all(|&n| n == 3 * 400), "{name}: {counts:?}");
    }
}

#[test]
fn coclustering_round_trips_through_summary_and_edges() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_fit(dir.path());
    harness::run(&cfg).unwrap();
    let draws = harness::output::read_draws(&dir.path().join("draws_bharp.csv")).unwrap();
    let want = coclustering(&draws, 0).unwrap();
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    let got: Vec<Vec<Vec<f64>>> = serde_json::from_value(summary[0]["coclustering"].clone()).unwrap();
    assert_eq!(got, vec![want.clone()]);
    assert!(summary[1]["coclustering"].is_null());

    let mut reader = csv::Reader::from_path(dir.path().join("coclustering_edges.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["method", "arm", "subgroup_a", "subgroup_b", "probability"]
    );
    let mut n = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[0], "BHARP");
        let (a, b): (usize, usize) = (rec[2].parse().unwrap(), rec[3].parse().unwrap());
        assert!(a < b);
        assert_eq!(rec[4].parse::<f64>().unwrap(), want[a][b]);
        n += 1;
    }
    assert_eq!(n, 3);
}

#[test]
fn summarize_mode_reads_back_a_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_fit(dir.path());
    harness::run(&cfg).unwrap();
    let again = config("mode = \"summarize\"\n", dir.path());
    harness::run(&again).unwrap();
    let fit: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    let re: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("resummary.json")).unwrap()).unwrap();
    assert_eq!(fit[0]["theta_median"], re["theta_median"]);
    assert_eq!(fit[0]["coclustering"], re["coclustering"]);
}

//! Configuration, seeded parallel replicates and persistent output.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::comparators::{dic, fit_model, Fit, Method};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::posterior::{
    average_linkage, coclustering, credible_intervals, diagnostics, misclassification_rate, modal_occupied,
    occupied_distribution, point_estimates, summarize, truth_labels, Diagnostic, PosteriorSummary, ThetaSamples,
};
use crate::rng;
use crate::sampler::{ChainConfig, MoveCounters};
use crate::stats::{mean, variance};
use crate::trial::{operating_characteristics, run_trial, CellStatus, OperatingCharacteristics, TrialResult};

pub use config::{load_config, load_raw_config, Mode, RawConfig, RunConfig};
use output::{fmt_f64, write_edges, write_json, CsvOut};

/// Summary of one fit, for any analysis model.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub method: Method,
    pub theta_median: Vec<Vec<f64>>,
    pub theta_ci: Vec<Vec<(f64, f64)>>,
    pub diagnostics: Option<Vec<Vec<Diagnostic>>>,
    /// Mixture fits only.
    pub coclustering: Option<Vec<Vec<Vec<f64>>>>,
    pub q_posterior: Option<Vec<Vec<f64>>>,
    pub moves: Option<Vec<MoveCounters>>,
    pub dic: Option<f64>,
    pub blast: Option<crate::comparators::BlastSelection>,
}

fn optional_diagnostics<S: ThetaSamples + ?Sized>(draws: &S) -> Result<Option<Vec<Vec<Diagnostic>>>> {
    match diagnostics(draws) {
        Ok(d) => Ok(Some(d)),
        Err(Error::InsufficientDraws(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn summarize_fit(method: Method, fit: &Fit, data: &Dataset) -> Result<FitSummary> {
    let mixture = fit.mixture();
    let (coclust, q_post, moves) = match mixture {
        Some(d) => {
            let s: PosteriorSummary = summarize(d)?;
            (
                Some(s.coclustering),
                Some(s.q_posterior),
                Some((0..d.n_arms).map(|i| d.move_totals(i)).collect()),
            )
        }
        None => (None, None, None),
    };
    let dic_value = match fit {
        Fit::Mixture(d) => dic(d, data)?.dic,
        Fit::Reference(c) => dic(c, data)?.dic,
    };
    Ok(FitSummary {
        method,
        theta_median: point_estimates(fit)?,
        theta_ci: credible_intervals(fit, 0.95)?,
        diagnostics: optional_diagnostics(fit)?,
        coclustering: coclust,
        q_posterior: q_post,
        moves,
        dic: Some(dic_value),
        blast: match fit {
            Fit::Reference(c) => c.blast.clone(),
            Fit::Mixture(_) => None,
        },
    })
}

/// Partition quality of a mixture fit against the scenario truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionMetrics {
    /// Mean co-clustering over pairs with different true effects, averaged
    /// over arms that have such pairs.
    pub heterogeneous_coclustering: Option<f64>,
    pub misclassification: f64,
    pub modal_occupied: Vec<usize>,
}

/// Mean co-clustering over pairs of subgroups with different true classes.
pub fn heterogeneous_coclustering(coclust: &[Vec<f64>], truth: &[usize]) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for a in 0..truth.len() {
        for b in a + 1..truth.len() {
            if truth[a] != truth[b] {
                total += coclust[a][b];
                n += 1;
            }
        }
    }
    (n > 0).then(|| total / n as f64)
}

pub fn partition_metrics(fit: &Fit, true_theta: &[Vec<f64>]) -> Result<Option<PartitionMetrics>> {
    let Some(draws) = fit.mixture() else {
        return Ok(None);
    };
    let mut het = Vec::new();
    let mut mis = Vec::new();
    let mut modal = Vec::new();
    for (i, truth) in true_theta.iter().enumerate() {
        let c = coclustering(draws, i)?;
        let labels = truth_labels(truth);
        het.extend(heterogeneous_coclustering(&c, &labels));
        mis.push(misclassification_rate(&average_linkage(&c, 0.5), &labels));
        modal.push(modal_occupied(draws, i));
    }
    Ok(Some(PartitionMetrics {
        heterogeneous_coclustering: (!het.is_empty()).then(|| mean(&het)),
        misclassification: mean(&mis),
        modal_occupied: modal,
    }))
}

/// Per-cell accuracy of point estimates across replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub variance: f64,
}

pub fn cell_metrics(estimates: &[f64], truth: f64) -> CellMetrics {
    let n = estimates.len() as f64;
    CellMetrics {
        rmse: (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n).sqrt(),
        mae: estimates.iter().map(|e| (e - truth).abs()).sum::<f64>() / n,
        variance: variance(estimates),
    }
}

/// One replicate of a one-shot study under one method.
#[derive(Debug, Clone, Serialize)]
pub struct StudyReplicate {
    pub replicate: usize,
    pub method: Method,
    pub estimates: Vec<Vec<f64>>,
    pub coclustering: Option<Vec<Vec<Vec<f64>>>>,
    pub partition: Option<PartitionMetrics>,
    pub selected_q: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub method: Method,
    pub message: String,
}

/// Aggregated one-shot study results for one method.
#[derive(Debug, Clone, Serialize)]
pub struct StudyAggregate {
    pub method: Method,
    pub n_replicates: usize,
    pub metrics: Vec<Vec<CellMetrics>>,
    pub mean_heterogeneous_coclustering: Option<f64>,
    pub mean_misclassification: Option<f64>,
    /// Fraction of replicates by modal occupied count, per arm (index = count).
    pub modal_occupied_frequency: Option<Vec<Vec<f64>>>,
    /// Fraction of replicates selecting q = index (BLAST only).
    pub selected_q_frequency: Option<Vec<f64>>,
    pub mean_coclustering: Option<Vec<Vec<Vec<f64>>>>,
}

fn run_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(job))
}

fn check_failures(failures: &[ReplicateFailure], total: usize) -> Result<()> {
    if failures.len() * 100 > total {
        let first = failures
            .first()
            .map(|f| format!("replicate {} ({}): {}", f.replicate, f.method, f.message))
            .unwrap_or_default();
        return Err(Error::ReplicateFailures {
            failed: failures.len(),
            total,
            first,
        });
    }
    for f in failures {
        log::warn!("replicate {} ({}) failed: {}", f.replicate, f.method, f.message);
    }
    Ok(())
}

fn chain_for(cfg: &RunConfig, seed: u64) -> ChainConfig {
    ChainConfig {
        seed,
        ..cfg.chain.clone()
    }
}

fn study_replicate(cfg: &RunConfig, replicate: usize, method: Method) -> Result<StudyReplicate> {
    let seed = rng::replicate_seed(cfg.master_seed, replicate as u64);
    let data = crate::trial::generate_fixed_dataset(&cfg.scenario, seed)?;
    let fit = fit_model(method, &data, &cfg.hypers, &chain_for(cfg, seed), &cfg.moves)?;
    let coclust = fit
        .mixture()
        .map(|d| (0..d.n_arms).map(|i| coclustering(d, i)).collect::<Result<Vec<_>>>())
        .transpose()?;
    Ok(StudyReplicate {
        replicate,
        method,
        estimates: point_estimates(&fit)?,
        coclustering: coclust,
        partition: partition_metrics(&fit, &cfg.scenario.true_theta)?,
        selected_q: match &fit {
            Fit::Reference(c) => c.blast.as_ref().map(|b| b.selected_q),
            Fit::Mixture(_) => None,
        },
    })
}

fn mean_matrices(ms: &[&Vec<Vec<Vec<f64>>>]) -> Option<Vec<Vec<Vec<f64>>>> {
    let first = ms.first()?;
    let n = ms.len() as f64;
    let mut acc: Vec<Vec<Vec<f64>>> = first.iter().map(|m| m.iter().map(|r| vec![0.0; r.len()]).collect()).collect();
    for m in ms {
        for (a, b) in acc.iter_mut().zip(m.iter()) {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y / n;
                }
            }
        }
    }
    Some(acc)
}

fn aggregate_study(method: Method, reps: &[&StudyReplicate], true_theta: &[Vec<f64>]) -> StudyAggregate {
    let k = true_theta.first().map_or(0, Vec::len);
    let metrics = true_theta
        .iter()
        .enumerate()
        .map(|(i, row)| {
            (0..k)
                .map(|s| {
                    let est: Vec<f64> = reps.iter().map(|r| r.estimates[i][s]).collect();
                    cell_metrics(&est, row[s])
                })
                .collect()
        })
        .collect();
    let parts: Vec<&PartitionMetrics> = reps.iter().filter_map(|r| r.partition.as_ref()).collect();
    let het: Vec<f64> = parts.iter().filter_map(|p| p.heterogeneous_coclustering).collect();
    let modal = (!parts.is_empty()).then(|| {
        (0..true_theta.len())
            .map(|i| {
                let mut freq = vec![0.0; k + 1];
                for p in &parts {
                    freq[p.modal_occupied[i]] += 1.0 / parts.len() as f64;
                }
                freq
            })
            .collect()
    });
    let selected: Vec<usize> = reps.iter().filter_map(|r| r.selected_q).collect();
    let selected_q_frequency = (!selected.is_empty()).then(|| {
        let mut f = vec![0.0; 4];
        for &q in &selected {
            f[q] += 1.0 / selected.len() as f64;
        }
        f
    });
    let cc: Vec<&Vec<Vec<Vec<f64>>>> = reps.iter().filter_map(|r| r.coclustering.as_ref()).collect();
    StudyAggregate {
        method,
        n_replicates: reps.len(),
        metrics,
        mean_heterogeneous_coclustering: (!het.is_empty()).then(|| mean(&het)),
        mean_misclassification: (!parts.is_empty())
            .then(|| mean(&parts.iter().map(|p| p.misclassification).collect::<Vec<_>>())),
        modal_occupied_frequency: modal,
        selected_q_frequency,
        mean_coclustering: mean_matrices(&cc),
    }
}

/// Everything a simulate run produces.
#[derive(Debug, Clone, Serialize)]
pub struct StudyResults {
    pub replicates: Vec<StudyReplicate>,
    pub aggregates: Vec<StudyAggregate>,
    pub failures: Vec<ReplicateFailure>,
}

/// Runs every (replicate, method) pair of a one-shot study.
pub fn run_study(cfg: &RunConfig) -> Result<StudyResults> {
    let jobs: Vec<(usize, Method)> = (0..cfg.n_replicates)
        .flat_map(|r| cfg.methods.iter().map(move |&m| (r, m)))
        .collect();
    let outcomes: Vec<Result<StudyReplicate>> = run_pool(cfg.workers, || {
        jobs.par_iter().map(|&(r, m)| study_replicate(cfg, r, m)).collect()
    })?;
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for ((r, m), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(rep) => replicates.push(rep),
            Err(e) => failures.push(ReplicateFailure {
                replicate: *r,
                method: *m,
                message: e.to_string(),
            }),
        }
    }
    check_failures(&failures, jobs.len())?;
    let aggregates = cfg
        .methods
        .iter()
        .map(|&m| {
            let reps: Vec<&StudyReplicate> = replicates.iter().filter(|r| r.method == m).collect();
            aggregate_study(m, &reps, &cfg.scenario.true_theta)
        })
        .collect();
    Ok(StudyResults {
        replicates,
        aggregates,
        failures,
    })
}

/// Everything a trial run produces.
#[derive(Debug, Clone, Serialize)]
pub struct TrialResults {
    pub results: Vec<(usize, Method, TrialResult)>,
    pub characteristics: Vec<(Method, OperatingCharacteristics)>,
    pub metrics: Vec<(Method, Vec<Vec<CellMetrics>>)>,
    pub mean_coclustering: Vec<(Method, Vec<Vec<Vec<f64>>>)>,
    pub failures: Vec<ReplicateFailure>,
}

pub fn run_trials(cfg: &RunConfig) -> Result<TrialResults> {
    let jobs: Vec<(usize, Method)> = (0..cfg.n_replicates)
        .flat_map(|r| cfg.methods.iter().map(move |&m| (r, m)))
        .collect();
    let outcomes: Vec<Result<TrialResult>> = run_pool(cfg.workers, || {
        jobs.par_iter()
            .map(|&(r, m)| {
                let seed = rng::replicate_seed(cfg.master_seed, r as u64);
                run_trial(&cfg.scenario, &cfg.design, m, &cfg.hypers, &cfg.chain, &cfg.moves, seed)
            })
            .collect()
    })?;
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for ((r, m), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(t) => results.push((*r, *m, t)),
            Err(e) => failures.push(ReplicateFailure {
                replicate: *r,
                method: *m,
                message: e.to_string(),
            }),
        }
    }
    check_failures(&failures, jobs.len())?;
    let mut characteristics = Vec::new();
    let mut metrics = Vec::new();
    let mut mean_coclustering = Vec::new();
    for &m in &cfg.methods {
        let mine: Vec<TrialResult> = results.iter().filter(|(_, mm, _)| *mm == m).map(|(_, _, t)| t.clone()).collect();
        if mine.is_empty() {
            continue;
        }
        characteristics.push((m, operating_characteristics(&mine, &cfg.scenario)?));
        let cells = cfg
            .scenario
            .true_theta
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(s, &t)| {
                        let est: Vec<f64> = mine.iter().map(|r| r.estimates[i][s]).collect();
                        cell_metrics(&est, t)
                    })
                    .collect()
            })
            .collect();
        metrics.push((m, cells));
        let cc: Vec<&Vec<Vec<Vec<f64>>>> = mine.iter().filter_map(|r| r.coclustering.as_ref()).collect();
        if let Some(avg) = mean_matrices(&cc) {
            mean_coclustering.push((m, avg));
        }
    }
    Ok(TrialResults {
        results,
        characteristics,
        metrics,
        mean_coclustering,
        failures,
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    mode: Mode,
    master_seed: u64,
    workers: usize,
    config: &'a RunConfig,
    files: Vec<String>,
}

fn write_manifest(cfg: &RunConfig, files: &[PathBuf]) -> Result<PathBuf> {
    let path = cfg.output_dir.join("manifest.json");
    write_json(
        &path,
        &Manifest {
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            mode: cfg.mode,
            master_seed: cfg.master_seed,
            workers: cfg.workers,
            config: cfg,
            files: files
                .iter()
                .map(|p| p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()))
                .collect(),
        },
    )?;
    Ok(path)
}

fn tag(m: Method) -> String {
    m.name().to_ascii_lowercase()
}

const METRICS_HEADER: [&str; 10] = [
    "scenario",
    "method",
    "arm",
    "subgroup",
    "true_theta",
    "rmse",
    "mae",
    "variance",
    "n_replicates",
    "mean_enrolled",
];

fn write_metrics(
    path: &Path,
    scenario: &str,
    true_theta: &[Vec<f64>],
    rows: &[(Method, &Vec<Vec<CellMetrics>>, usize, Option<Vec<Vec<f64>>>)],
) -> Result<()> {
    let mut out = CsvOut::create(path, &METRICS_HEADER)?;
    for (m, cells, n, enrolled) in rows {
        for (i, row) in cells.iter().enumerate() {
            for (s, c) in row.iter().enumerate() {
                out.row([
                    scenario.to_string(),
                    m.name().to_string(),
                    i.to_string(),
                    s.to_string(),
                    fmt_f64(true_theta[i][s]),
                    fmt_f64(c.rmse),
                    fmt_f64(c.mae),
                    fmt_f64(c.variance),
                    n.to_string(),
                    enrolled.as_ref().map_or_else(String::new, |e| fmt_f64(e[i][s])),
                ])?;
            }
        }
    }
    out.finish()
}

fn write_failures(path: &Path, failures: &[ReplicateFailure]) -> Result<()> {
    let mut out = CsvOut::create(path, &["replicate", "method", "message"])?;
    for f in failures {
        out.row([f.replicate.to_string(), f.method.name().to_string(), f.message.clone()])?;
    }
    out.finish()
}

/// Writes study outputs: per-replicate estimates, metrics, summary, edges.
pub fn write_study_outputs(cfg: &RunConfig, results: &StudyResults) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    let mut files = Vec::new();

    let path = dir.join("replicates.csv");
    let mut out = CsvOut::create(
        &path,
        &[
            "replicate",
            "method",
            "arm",
            "subgroup",
            "estimate",
            "heterogeneous_coclustering",
            "misclassification",
            "modal_occupied",
            "selected_q",
        ],
    )?;
    for r in &results.replicates {
        for (i, row) in r.estimates.iter().enumerate() {
            for (s, &e) in row.iter().enumerate() {
                let p = r.partition.as_ref();
                out.row([
                    r.replicate.to_string(),
                    r.method.name().to_string(),
                    i.to_string(),
                    s.to_string(),
                    fmt_f64(e),
                    p.and_then(|p| p.heterogeneous_coclustering).map_or_else(String::new, fmt_f64),
                    p.map_or_else(String::new, |p| fmt_f64(p.misclassification)),
                    p.map_or_else(String::new, |p| p.modal_occupied[i].to_string()),
                    r.selected_q.map_or_else(String::new, |q| q.to_string()),
                ])?;
            }
        }
    }
    out.finish()?;
    files.push(path);

    let path = dir.join("metrics.csv");
    let rows: Vec<_> = results
        .aggregates
        .iter()
        .map(|a| (a.method, &a.metrics, a.n_replicates, None))
        .collect();
    write_metrics(&path, &cfg.scenario.name, &cfg.scenario.true_theta, &rows)?;
    files.push(path);

    let path = dir.join("summary.json");
    write_json(&path, &results.aggregates)?;
    files.push(path);

    let edges: Vec<(String, Vec<Vec<Vec<f64>>>)> = results
        .aggregates
        .iter()
        .filter_map(|a| a.mean_coclustering.clone().map(|c| (a.method.name().to_string(), c)))
        .collect();
    let path = dir.join("coclustering_edges.csv");
    write_edges(&path, &edges)?;
    files.push(path);

    let path = dir.join("failures.csv");
    write_failures(&path, &results.failures)?;
    files.push(path);
    Ok(files)
}

pub fn write_trial_outputs(cfg: &RunConfig, results: &TrialResults) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    let truth = &cfg.scenario.true_theta;

    let path = dir.join("trial_results.csv");
    let mut out = CsvOut::create(
        &path,
        &[
            "replicate",
            "method",
            "arm",
            "subgroup",
            "true_theta",
            "status",
            "enrolled",
            "estimate",
            "analyses_run",
        ],
    )?;
    for (r, m, t) in &results.results {
        for (i, row) in t.decisions.status.iter().enumerate() {
            for (s, status) in row.iter().enumerate() {
                let label = match status {
                    CellStatus::Active => "active",
                    CellStatus::Futile => "futile",
                    CellStatus::Efficacious => "efficacious",
                };
                out.row([
                    r.to_string(),
                    m.name().to_string(),
                    i.to_string(),
                    s.to_string(),
                    fmt_f64(truth[i][s]),
                    label.to_string(),
                    t.sample_sizes[i][s].to_string(),
                    fmt_f64(t.estimates[i][s]),
                    t.log.len().to_string(),
                ])?;
            }
        }
    }
    out.finish()?;
    files.push(path);

    let path = dir.join("metrics.csv");
    let rows: Vec<_> = results
        .metrics
        .iter()
        .map(|(m, cells)| {
            let mine: Vec<&TrialResult> = results.results.iter().filter(|(_, mm, _)| mm == m).map(|(_, _, t)| t).collect();
            let n = mine.len();
            let enrolled = truth
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    (0..row.len())
                        .map(|s| mine.iter().map(|t| t.sample_sizes[i][s] as f64).sum::<f64>() / n as f64)
                        .collect()
                })
                .collect();
            (*m, cells, n, Some(enrolled))
        })
        .collect();
    write_metrics(&path, &cfg.scenario.name, truth, &rows)?;
    files.push(path);

    let path = dir.join("operating_characteristics.json");
    write_json(&path, &results.characteristics)?;
    files.push(path);

    let path = dir.join("coclustering_edges.csv");
    let edges: Vec<(String, Vec<Vec<Vec<f64>>>)> = results
        .mean_coclustering
        .iter()
        .map(|(m, c)| (m.name().to_string(), c.clone()))
        .collect();
    write_edges(&path, &edges)?;
    files.push(path);

    let path = dir.join("failures.csv");
    write_failures(&path, &results.failures)?;
    files.push(path);
    Ok(files)
}

/// Fit mode: one dataset (from file, or drawn from the scenario), every
/// requested method.
pub fn run_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = match &cfg.data {
        Some(p) => output::read_dataset(p)?,
        None => crate::trial::generate_fixed_dataset(&cfg.scenario, cfg.master_seed)?,
    };
    let mut files = Vec::new();
    let mut edges = Vec::new();
    let mut summaries = Vec::new();
    for &m in &cfg.methods {
        let hypers = if cfg.data.is_some() {
            cfg.hypers.clone().broadcast(data.n_arms())
        } else {
            cfg.hypers.clone()
        };
        let fit = run_pool(cfg.workers, || fit_model(m, &data, &hypers, &chain_for(cfg, cfg.master_seed), &cfg.moves))??;
        let path = cfg.output_dir.join(format!("draws_{}.csv", tag(m)));
        output::write_draws(&path, &fit)?;
        files.push(path);
        let summary = summarize_fit(m, &fit, &data)?;
        if let Some(c) = &summary.coclustering {
            edges.push((m.name().to_string(), c.clone()));
        }
        summaries.push(summary);
    }
    let path = cfg.output_dir.join("summary.json");
    write_json(&path, &summaries)?;
    files.push(path);
    let path = cfg.output_dir.join("coclustering_edges.csv");
    write_edges(&path, &edges)?;
    files.push(path);
    Ok(files)
}

/// Summarize mode: recompute the posterior summary from a draws file.
pub fn run_summarize(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let input = cfg.input.clone().unwrap_or_else(|| cfg.output_dir.join("draws_bharp.csv"));
    let draws = output::read_draws(&input)?;
    #[derive(Serialize)]
    struct Resummary {
        input: String,
        theta_median: Vec<Vec<f64>>,
        theta_ci: Vec<Vec<(f64, f64)>>,
        coclustering: Vec<Vec<Vec<f64>>>,
        q_posterior: Vec<Vec<f64>>,
        diagnostics: Option<Vec<Vec<Diagnostic>>>,
    }
    let coclust = (0..draws.n_arms).map(|i| coclustering(&draws, i)).collect::<Result<Vec<_>>>()?;
    let summary = Resummary {
        input: input.display().to_string(),
        theta_median: point_estimates(&draws)?,
        theta_ci: credible_intervals(&draws, 0.95)?,
        q_posterior: (0..draws.n_arms).map(|i| occupied_distribution(&draws, i)).collect(),
        diagnostics: optional_diagnostics(&draws)?,
        coclustering: coclust.clone(),
    };
    let mut files = Vec::new();
    let path = cfg.output_dir.join("resummary.json");
    write_json(&path, &summary)?;
    files.push(path);
    let path = cfg.output_dir.join("resummary_edges.csv");
    write_edges(&path, &[("input".to_string(), coclust)])?;
    files.push(path);
    Ok(files)
}

/// Runs the configured mode and writes every output plus the manifest.
pub fn run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut files = match cfg.mode {
        Mode::Fit => run_fit(cfg)?,
        Mode::Simulate => write_study_outputs(cfg, &run_study(cfg)?)?,
        Mode::Trial => write_trial_outputs(cfg, &run_trials(cfg)?)?,
        Mode::Summarize => run_summarize(cfg)?,
    };
    files.push(write_manifest(cfg, &files)?);
    Ok(files)
}

//! TOML run configuration. Every key is optional; omitted values take the
//! calibrated defaults. Unknown keys and invalid values are collected and
//! reported together.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comparators::Method;
use crate::error::{Error, Result};
use crate::model::Hyperparameters;
use crate::sampler::{ChainConfig, MoveConfig};
use crate::trial::{AccrualPolicy, DesignConfig, TrialScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One dataset, full draws and summary.
    Fit,
    /// Replicated one-shot studies with estimation metrics.
    Simulate,
    /// Replicated adaptive trials with operating characteristics.
    Trial,
    /// Re-summarize a draws file written by `fit`.
    Summarize,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fit" => Ok(Mode::Fit),
            "simulate" => Ok(Mode::Simulate),
            "trial" => Ok(Mode::Trial),
            "summarize" => Ok(Mode::Summarize),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    pub a_cell: Option<f64>,
    pub b_cell: Option<f64>,
    pub c: Option<OneOrMany<f64>>,
    pub p: Option<OneOrMany<f64>>,
    pub alpha: Option<f64>,
    pub a_within: Option<f64>,
    pub b_within: Option<f64>,
    pub a_between: Option<f64>,
    pub b_between: Option<f64>,
}

impl HyperOverrides {
    fn apply(&self, base: Hyperparameters, n_arms: usize) -> Hyperparameters {
        let mut h = base;
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut h.a_cell, self.a_cell);
        set(&mut h.b_cell, self.b_cell);
        set(&mut h.alpha, self.alpha);
        set(&mut h.a_within, self.a_within);
        set(&mut h.b_within, self.b_within);
        set(&mut h.a_between, self.a_between);
        set(&mut h.b_between, self.b_between);
        if let Some(c) = &self.c {
            h.c = c.to_vec();
        }
        if let Some(p) = &self.p {
            h.p = p.to_vec();
        }
        h.broadcast(n_arms)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainOverrides {
    pub n_chains: Option<usize>,
    pub n_iter: Option<usize>,
    pub n_burnin: Option<usize>,
    pub thin: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveOverrides {
    pub p_split: Option<f64>,
    pub beta_u1: Option<(f64, f64)>,
    pub beta_u2: Option<(f64, f64)>,
    pub beta_u3: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignOverrides {
    pub analysis_totals: Option<Vec<usize>>,
    pub x_e: Option<f64>,
    pub x_f: Option<f64>,
    pub prob_e: Option<Vec<f64>>,
    pub prob_f: Option<Vec<f64>>,
    pub accrual_policy: Option<AccrualPolicy>,
}

/// Configuration exactly as written, before defaults are filled in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub mode: Option<Mode>,
    pub method: Option<OneOrMany<Method>>,
    /// Built-in scenario name or path to a scenario TOML file.
    pub scenario: Option<String>,
    /// CSV with columns arm, subgroup, y (fit mode).
    pub data: Option<PathBuf>,
    /// Draws file to re-summarize (summarize mode).
    pub input: Option<PathBuf>,
    pub n_replicates: Option<usize>,
    pub master_seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub hyperparameters: HyperOverrides,
    #[serde(default)]
    pub chain: ChainOverrides,
    #[serde(default)]
    pub moves: MoveOverrides,
    #[serde(default)]
    pub design: DesignOverrides,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

const TOP_KEYS: &[&str] = &[
    "mode",
    "method",
    "scenario",
    "data",
    "input",
    "n_replicates",
    "master_seed",
    "workers",
    "output_dir",
    "hyperparameters",
    "chain",
    "moves",
    "design",
];
const SECTION_KEYS: &[(&str, &[&str])] = &[
    (
        "hyperparameters",
        &[
            "a_cell", "b_cell", "c", "p", "alpha", "a_within", "b_within", "a_between", "b_between",
        ],
    ),
    ("chain", &["n_chains", "n_iter", "n_burnin", "thin"]),
    ("moves", &["p_split", "beta_u1", "beta_u2", "beta_u3"]),
    (
        "design",
        &["analysis_totals", "x_e", "x_f", "prob_e", "prob_f", "accrual_policy"],
    ),
];

fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let mut bad = Vec::new();
    for (key, value) in table {
        if !TOP_KEYS.contains(&key.as_str()) {
            bad.push(key.clone());
            continue;
        }
        if let Some((_, allowed)) = SECTION_KEYS.iter().find(|(s, _)| s == key) {
            if let Some(inner) = value.as_table() {
                for k in inner.keys() {
                    if !allowed.contains(&k.as_str()) {
                        bad.push(format!("{key}.{k}"));
                    }
                }
            }
        }
    }
    bad
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("parse error: {e}")))?;
        let unknown = unknown_keys(&table);
        if !unknown.is_empty() {
            let mut msg = String::new();
            for key in unknown {
                let _ = writeln!(msg, "  unknown key `{key}`");
            }
            return Err(Error::Config(msg));
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("schema error: {e}")))
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut problems: Vec<String> = Vec::new();
        let mode = self.mode.unwrap_or(Mode::Fit);
        let base = self.base_dir.clone().unwrap_or_default();
        let rel = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

        let scenario_ref = self.scenario.clone().unwrap_or_else(|| match mode {
            Mode::Trial => "partner-step-t2d".to_string(),
            _ => "S1".to_string(),
        });
        let scenario = match load_scenario(&scenario_ref, &base) {
            Ok(s) => Some(s),
            Err(e) => {
                problems.push(format!("scenario = {scenario_ref:?}: {e}"));
                None
            }
        };
        let n_arms = scenario.as_ref().map_or(1, TrialScenario::n_arms);

        let methods = self
            .method
            .as_ref()
            .map_or_else(|| vec![Method::Bharp], OneOrMany::to_vec);
        if methods.is_empty() {
            problems.push("method: at least one method is required".into());
        }
        if mode == Mode::Trial && methods.contains(&Method::Blast) {
            problems.push("method: BLAST is not available in trial mode".into());
        }

        let base_hypers = scenario
            .as_ref()
            .map_or_else(|| Hyperparameters::defaults(n_arms), TrialScenario::default_hyperparameters);
        let hypers = self.hyperparameters.apply(base_hypers, n_arms);
        for (k, v) in hypers.violations() {
            problems.push(format!("hyperparameters.{k} = {v}: must be finite (and positive where a scale or shape)"));
        }
        for (k, len) in [("c", hypers.c.len()), ("p", hypers.p.len())] {
            if len != n_arms {
                problems.push(format!("hyperparameters.{k}: {len} entries for {n_arms} arms"));
            }
        }

        let d = ChainConfig::default();
        let chain = ChainConfig {
            n_chains: self.chain.n_chains.unwrap_or(d.n_chains),
            n_iter: self.chain.n_iter.unwrap_or(d.n_iter),
            n_burnin: self.chain.n_burnin.unwrap_or(d.n_burnin),
            thin: self.chain.thin.unwrap_or(d.thin),
            seed: self.master_seed.unwrap_or(0),
        };
        for (k, v) in chain.violations() {
            problems.push(format!("chain.{k} = {v}: out of range"));
        }

        let m = MoveConfig::default();
        let moves = MoveConfig {
            p_split: self.moves.p_split.unwrap_or(m.p_split),
            beta_u1: self.moves.beta_u1.unwrap_or(m.beta_u1),
            beta_u2: self.moves.beta_u2.unwrap_or(m.beta_u2),
            beta_u3: self.moves.beta_u3.unwrap_or(m.beta_u3),
        };
        for (k, v) in moves.violations() {
            problems.push(format!("moves.{k} = {v}: out of range"));
        }

        let dd = DesignConfig::default();
        let design = DesignConfig {
            analysis_totals: self.design.analysis_totals.clone().unwrap_or(dd.analysis_totals),
            x_e: self.design.x_e.unwrap_or(dd.x_e),
            x_f: self.design.x_f.unwrap_or(dd.x_f),
            prob_e: self.design.prob_e.clone().unwrap_or(dd.prob_e),
            prob_f: self.design.prob_f.clone().unwrap_or(dd.prob_f),
            accrual_policy: self.design.accrual_policy.unwrap_or(dd.accrual_policy),
        };
        if mode == Mode::Trial {
            for (k, v) in design.violations() {
                problems.push(format!("design.{k} = {v}: out of range"));
            }
        }

        let n_replicates = self.n_replicates.unwrap_or(1);
        if n_replicates == 0 {
            problems.push("n_replicates = 0: must be at least 1".into());
        }
        let data = self.data.as_deref().map(rel);
        if let Some(p) = &data {
            if !p.is_file() {
                problems.push(format!("data = {:?}: file not found", p.display()));
            }
        }
        let output_dir = rel(self.output_dir.as_deref().unwrap_or(Path::new("bharp-out")));
        let input = self.input.as_deref().map(rel);
        if mode == Mode::Summarize {
            let path = input.clone().unwrap_or_else(|| output_dir.join("draws_bharp.csv"));
            if !path.is_file() {
                problems.push(format!("input = {:?}: file not found", path.display()));
            }
        }
        if mode == Mode::Simulate || (mode == Mode::Fit && data.is_none()) {
            if let Some(s) = &scenario {
                if s.fixed_cell_sizes.is_none() {
                    problems.push(format!(
                        "scenario = {scenario_ref:?}: {mode:?} mode needs fixed cell sizes (or a data file)"
                    ));
                }
            }
        }

        if !problems.is_empty() {
            let mut msg = String::new();
            for p in problems {
                let _ = writeln!(msg, "  {p}");
            }
            return Err(Error::Config(msg));
        }
        Ok(RunConfig {
            mode,
            methods,
            scenario_ref,
            scenario: scenario.expect("checked"),
            data,
            input,
            hypers,
            chain,
            moves,
            design,
            n_replicates,
            master_seed: self.master_seed.unwrap_or(0),
            workers: self.workers.unwrap_or(0),
            output_dir,
        })
    }
}

fn load_scenario(reference: &str, base: &Path) -> Result<TrialScenario> {
    if crate::trial::BUILTIN_SCENARIOS.contains(&reference) {
        return TrialScenario::builtin(reference)?.validated();
    }
    let path = if Path::new(reference).is_absolute() {
        PathBuf::from(reference)
    } else {
        base.join(reference)
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut s: TrialScenario = toml::from_str(&text).map_err(|e| Error::Serialization {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if s.name.is_empty() {
        s.name = path.file_stem().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    }
    s.validated()
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub methods: Vec<Method>,
    pub scenario_ref: String,
    pub scenario: TrialScenario,
    pub data: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub hypers: Hyperparameters,
    pub chain: ChainConfig,
    pub moves: MoveConfig,
    pub design: DesignConfig,
    pub n_replicates: usize,
    pub master_seed: u64,
    /// 0 uses every available core.
    pub workers: usize,
    pub output_dir: PathBuf,
}

/// Reads and resolves a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    load_raw_config(path)?.resolve()
}

/// Reads a configuration file without resolving defaults.
pub fn load_raw_config(path: impl AsRef<Path>) -> Result<RawConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut raw = RawConfig::parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}:\n{m}", path.display())),
        other => other,
    })?;
    raw.base_dir = path.parent().map(Path::to_path_buf);
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trial_config_uses_defaults() {
        let raw = RawConfig::parse("mode = \"trial\"\nscenario = \"partner-step-t2d\"").unwrap();
        let cfg = raw.resolve().unwrap();
        assert_eq!(cfg.hypers, Hyperparameters::enrichment_defaults(3));
        assert_eq!(cfg.design, DesignConfig::default());
        assert_eq!(cfg.chain.n_iter, 2000);
    }

    #[test]
    fn negative_a_within_is_named() {
        let raw = RawConfig::parse("[hyperparameters]\na_within = -1\nb_within = 0").unwrap();
        let err = raw.resolve().unwrap_err().to_string();
        assert!(err.contains("hyperparameters.a_within"));
        assert!(err.contains("hyperparameters.b_within"));
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let err = RawConfig::parse("foo = 1\n[chain]\nn_iters = 5\n[moves]\np_splitt = 0.5")
            .unwrap_err()
            .to_string();
        for key in ["foo", "chain.n_iters", "moves.p_splitt"] {
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn p_split_passes_through() {
        let cfg = RawConfig::parse("[moves]\np_split = 0.5").unwrap().resolve().unwrap();
        assert_eq!(cfg.moves.p_split, 0.5);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = RawConfig::parse("mode = \n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}

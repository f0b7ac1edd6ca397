//! Domain types and the joint log-density of the partition mixture model.
//!
//! Cell means decompose as `theta[i][k] = beta[i] + delta[i][k]`. Within an
//! arm the deviations `delta` follow a finite normal mixture with an unknown
//! number of components `q`; subgroups allocated to the same component form a
//! cluster and borrow strength through its (small) variance. All indices are
//! zero-based.
//!
//! Parameterizations: the outcome precision `varsigma` has a Gamma(shape,
//! rate) prior, component `sigma` values are VARIANCES with an inverse-gamma
//! prior, and `tau` is the precision of component means.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::stats::{
    ln_gamma_pdf, ln_inv_gamma_pdf, ln_normal_prec, ln_normal_var, log_sum_exp, LN_2PI,
};

/// Outcomes observed in one (arm, subgroup) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellData {
    pub arm: usize,
    pub subgroup: usize,
    pub outcomes: Vec<f64>,
}

/// Observations for every cell of an `n_arms x n_subgroups` design, stored
/// arm-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n_arms: usize,
    n_subgroups: usize,
    cells: Vec<CellData>,
}

impl Dataset {
    pub fn new(n_arms: usize, n_subgroups: usize, cells: Vec<CellData>) -> Result<Self> {
        if n_arms == 0 || n_subgroups == 0 {
            return Err(Error::InvalidData(
                "arm and subgroup counts must be positive".into(),
            ));
        }
        if cells.len() != n_arms * n_subgroups {
            return Err(Error::DimensionMismatch {
                what: "dataset cells",
                expected: n_arms * n_subgroups,
                found: cells.len(),
            });
        }
        let mut slots: Vec<Option<CellData>> = vec![None; n_arms * n_subgroups];
        for cell in cells {
            if cell.arm >= n_arms || cell.subgroup >= n_subgroups {
                return Err(Error::InvalidData(format!(
                    "cell ({}, {}) outside {n_arms}x{n_subgroups} design",
                    cell.arm, cell.subgroup
                )));
            }
            if let Some(bad) = cell.outcomes.iter().find(|y| !y.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite outcome {bad} in cell ({}, {})",
                    cell.arm, cell.subgroup
                )));
            }
            let idx = cell.arm * n_subgroups + cell.subgroup;
            if slots[idx].is_some() {
                return Err(Error::InvalidData(format!(
                    "duplicate cell ({}, {})",
                    cell.arm, cell.subgroup
                )));
            }
            slots[idx] = Some(cell);
        }
        Ok(Self {
            n_arms,
            n_subgroups,
            cells: slots.into_iter().map(|c| c.expect("all slots filled")).collect(),
        })
    }

    /// A design with no observations yet.
    pub fn empty(n_arms: usize, n_subgroups: usize) -> Result<Self> {
        Self::from_grid(vec![vec![Vec::new(); n_subgroups]; n_arms])
    }

    /// Builds a dataset from `grid[arm][subgroup] = outcomes`.
    pub fn from_grid(grid: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n_arms = grid.len();
        let n_subgroups = grid.first().map_or(0, Vec::len);
        let mut cells = Vec::with_capacity(n_arms * n_subgroups);
        for (arm, row) in grid.into_iter().enumerate() {
            if row.len() != n_subgroups {
                return Err(Error::DimensionMismatch {
                    what: "subgroups per arm",
                    expected: n_subgroups,
                    found: row.len(),
                });
            }
            for (subgroup, outcomes) in row.into_iter().enumerate() {
                cells.push(CellData {
                    arm,
                    subgroup,
                    outcomes,
                });
            }
        }
        Self::new(n_arms, n_subgroups, cells)
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn n_subgroups(&self) -> usize {
        self.n_subgroups
    }

    pub fn cells(&self) -> &[CellData] {
        &self.cells
    }

    pub fn cell(&self, arm: usize, subgroup: usize) -> &CellData {
        &self.cells[arm * self.n_subgroups + subgroup]
    }

    pub fn cell_mut(&mut self, arm: usize, subgroup: usize) -> &mut CellData {
        &mut self.cells[arm * self.n_subgroups + subgroup]
    }

    pub fn total_observations(&self) -> usize {
        self.cells.iter().map(|c| c.outcomes.len()).sum()
    }

    /// Appends every outcome of `other` onto the matching cell.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.n_arms != self.n_arms || other.n_subgroups != self.n_subgroups {
            return Err(Error::DimensionMismatch {
                what: "dataset shape",
                expected: self.cells.len(),
                found: other.cells.len(),
            });
        }
        for (mine, theirs) in self.cells.iter_mut().zip(&other.cells) {
            mine.outcomes.extend_from_slice(&theirs.outcomes);
        }
        Ok(())
    }
}

/// Sufficient statistics of one cell: count, mean and centered sum of squares.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellStats {
    pub n: usize,
    pub mean: f64,
    pub ss: f64,
}

impl CellStats {
    pub fn from_outcomes(ys: &[f64]) -> Self {
        let n = ys.len();
        if n == 0 {
            return Self::default();
        }
        let mean = ys.iter().sum::<f64>() / n as f64;
        let ss = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
        Self { n, mean, ss }
    }

    /// sum over observations of (y - theta)^2
    #[inline]
    pub fn sq_dev(&self, theta: f64) -> f64 {
        let d = self.mean - theta;
        self.ss + self.n as f64 * d * d
    }

    #[inline]
    pub fn sum(&self) -> f64 {
        self.n as f64 * self.mean
    }
}

/// Dataset reduced to per-cell sufficient statistics, the form every sampler
/// consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub n_arms: usize,
    pub n_subgroups: usize,
    pub cells: Vec<CellStats>,
}

impl PreparedData {
    pub fn cell(&self, arm: usize, subgroup: usize) -> &CellStats {
        &self.cells[arm * self.n_subgroups + subgroup]
    }

    pub fn arm(&self, arm: usize) -> &[CellStats] {
        &self.cells[arm * self.n_subgroups..(arm + 1) * self.n_subgroups]
    }

    pub fn total_n(&self) -> usize {
        self.cells.iter().map(|c| c.n).sum()
    }
}

impl From<&Dataset> for PreparedData {
    fn from(data: &Dataset) -> Self {
        Self {
            n_arms: data.n_arms,
            n_subgroups: data.n_subgroups,
            cells: data
                .cells
                .iter()
                .map(|c| CellStats::from_outcomes(&c.outcomes))
                .collect(),
        }
    }
}

/// Full prior specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Shape of the Gamma prior on the outcome precision.
    pub a_cell: f64,
    /// Rate of the Gamma prior on the outcome precision.
    pub b_cell: f64,
    /// Per-arm prior means of the arm averages.
    pub c: Vec<f64>,
    /// Per-arm prior precisions of the arm averages.
    pub p: Vec<f64>,
    /// Exponent of the component-count prior `P(q) ∝ q^alpha`.
    pub alpha: f64,
    pub a_within: f64,
    pub b_within: f64,
    pub a_between: f64,
    pub b_between: f64,
}

impl Hyperparameters {
    /// Defaults calibrated for unit-variance outcomes with at least 35
    /// patients per subgroup.
    pub fn defaults(n_arms: usize) -> Self {
        Self {
            a_cell: 5.0,
            b_cell: 6.0,
            c: vec![0.0; n_arms],
            p: vec![2.0; n_arms],
            alpha: 2.0,
            a_within: 70.0,
            b_within: 0.71,
            a_between: 4.0,
            b_between: 4.0,
        }
    }

    /// Defaults for the larger multi-arm enrichment design, which relaxes the
    /// within-component prior.
    pub fn enrichment_defaults(n_arms: usize) -> Self {
        Self {
            a_within: 30.0,
            b_within: 0.31,
            ..Self::defaults(n_arms)
        }
    }

    /// Repeats single-entry `c`/`p` vectors to `n_arms` entries.
    pub fn broadcast(mut self, n_arms: usize) -> Self {
        if self.c.len() == 1 && n_arms > 1 {
            self.c = vec![self.c[0]; n_arms];
        }
        if self.p.len() == 1 && n_arms > 1 {
            self.p = vec![self.p[0]; n_arms];
        }
        self
    }

    /// Returns every violated constraint, not only the first.
    pub fn violations(&self) -> Vec<(String, f64)> {
        let mut bad = Vec::new();
        let positive = [
            ("a_cell", self.a_cell),
            ("b_cell", self.b_cell),
            ("a_within", self.a_within),
            ("b_within", self.b_within),
            ("a_between", self.a_between),
            ("b_between", self.b_between),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bad.push((name.to_string(), v));
            }
        }
        if !self.alpha.is_finite() {
            bad.push(("alpha".into(), self.alpha));
        }
        for (i, &v) in self.p.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                bad.push((format!("p[{i}]"), v));
            }
        }
        for (i, &v) in self.c.iter().enumerate() {
            if !v.is_finite() {
                bad.push((format!("c[{i}]"), v));
            }
        }
        bad
    }

    pub fn validate(&self, n_arms: usize) -> Result<()> {
        if let Some((name, v)) = self.violations().into_iter().next() {
            return Err(Error::invalid(name, v, "must be finite and positive"));
        }
        if self.c.len() != n_arms {
            return Err(Error::DimensionMismatch {
                what: "hyperparameter c",
                expected: n_arms,
                found: self.c.len(),
            });
        }
        if self.p.len() != n_arms {
            return Err(Error::DimensionMismatch {
                what: "hyperparameter p",
                expected: n_arms,
                found: self.p.len(),
            });
        }
        Ok(())
    }
}

/// Sampler state of one arm. `q` is implied by `w.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub beta: f64,
    pub delta: Vec<f64>,
    pub w: Vec<f64>,
    pub mu: Vec<f64>,
    /// Component variances.
    pub sigma: Vec<f64>,
    pub tau: f64,
    pub z: Vec<usize>,
}

impl ArmState {
    pub fn q(&self) -> usize {
        self.w.len()
    }

    pub fn n_subgroups(&self) -> usize {
        self.delta.len()
    }

    pub fn theta(&self) -> Vec<f64> {
        self.delta.iter().map(|d| self.beta + d).collect()
    }

    /// Number of subgroups allocated to each component.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.q()];
        for &t in &self.z {
            counts[t] += 1;
        }
        counts
    }

    pub fn occupied(&self) -> usize {
        self.counts().iter().filter(|&&n| n > 0).count()
    }

    /// Moves the mean deviation into `beta` so deviations sum to zero.
    /// Cell means are unchanged.
    pub fn identified(&self) -> ArmState {
        let shift = self.delta.iter().sum::<f64>() / self.delta.len() as f64;
        let mut out = self.clone();
        out.beta += shift;
        for d in &mut out.delta {
            *d -= shift;
        }
        out
    }

    pub fn check_invariants(&self) -> Result<()> {
        let q = self.q();
        if q == 0 || q > self.delta.len() {
            return Err(Error::InvalidData(format!(
                "component count {q} outside 1..={}",
                self.delta.len()
            )));
        }
        if self.mu.len() != q || self.sigma.len() != q {
            return Err(Error::DimensionMismatch {
                what: "component parameters",
                expected: q,
                found: self.mu.len().min(self.sigma.len()),
            });
        }
        if self.z.len() != self.delta.len() {
            return Err(Error::DimensionMismatch {
                what: "allocations",
                expected: self.delta.len(),
                found: self.z.len(),
            });
        }
        let wsum: f64 = self.w.iter().sum();
        if (wsum - 1.0).abs() > 1e-12 || self.w.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidData(format!("weights not on simplex (sum {wsum})")));
        }
        if let Some(&s) = self.sigma.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("sigma", s, "component variance must be positive"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", self.tau, "must be positive"));
        }
        if let Some(&t) = self.z.iter().find(|&&t| t >= q) {
            return Err(Error::InvalidData(format!("allocation {t} >= q = {q}")));
        }
        if !self.beta.is_finite()
            || self.delta.iter().any(|d| !d.is_finite())
            || self.mu.iter().any(|m| !m.is_finite())
        {
            return Err(Error::NonFinite { block: "arm state" });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// Outcome precision shared by all cells.
    pub varsigma: f64,
    pub arms: Vec<ArmState>,
}

impl ModelState {
    pub fn check_invariants(&self) -> Result<()> {
        if !(self.varsigma > 0.0 && self.varsigma.is_finite()) {
            return Err(Error::invalid("varsigma", self.varsigma, "must be positive"));
        }
        self.arms.iter().try_for_each(ArmState::check_invariants)
    }

    fn check_shape(&self, n_arms: usize, n_subgroups: usize) -> Result<()> {
        if self.arms.len() != n_arms {
            return Err(Error::DimensionMismatch {
                what: "arms in state",
                expected: n_arms,
                found: self.arms.len(),
            });
        }
        for arm in &self.arms {
            if arm.delta.len() != n_subgroups {
                return Err(Error::DimensionMismatch {
                    what: "subgroups in state",
                    expected: n_subgroups,
                    found: arm.delta.len(),
                });
            }
        }
        Ok(())
    }
}

/// Normalized log prior of the component count over `1..=max_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCountPrior {
    log_probs: Vec<f64>,
}

impl ComponentCountPrior {
    pub fn new(alpha: f64, max_q: usize) -> Self {
        let raw: Vec<f64> = (1..=max_q).map(|q| alpha * (q as f64).ln()).collect();
        let norm = log_sum_exp(&raw);
        Self {
            log_probs: raw.into_iter().map(|l| l - norm).collect(),
        }
    }

    /// log P(q) for `q` in `1..=max_q`.
    pub fn ln_prob(&self, q: usize) -> f64 {
        self.log_probs[q - 1]
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn max_q(&self) -> usize {
        self.log_probs.len()
    }
}

/// log p(y | theta, varsigma) summed over all cells.
pub fn log_likelihood(state: &ModelState, data: &Dataset) -> Result<f64> {
    state.check_shape(data.n_arms(), data.n_subgroups())?;
    if !(state.varsigma > 0.0) {
        return Err(Error::invalid("varsigma", state.varsigma, "must be positive"));
    }
    let prepared = PreparedData::from(data);
    Ok(log_likelihood_prepared(state, &prepared))
}

pub(crate) fn log_likelihood_prepared(state: &ModelState, data: &PreparedData) -> f64 {
    let ln_prec = state.varsigma.ln();
    let mut total = 0.0;
    for (i, arm) in state.arms.iter().enumerate() {
        for (k, cell) in data.arm(i).iter().enumerate() {
            if cell.n == 0 {
                continue;
            }
            let theta = arm.beta + arm.delta[k];
            total += 0.5 * cell.n as f64 * (ln_prec - LN_2PI) - 0.5 * state.varsigma * cell.sq_dev(theta);
        }
    }
    total
}

/// Mixture-layer log density of one arm given `tau`: component-count prior,
/// Dirichlet weights, component priors, allocations and deviations.
pub(crate) fn ln_mixture_layer(
    arm: &ArmState,
    hypers: &Hyperparameters,
    q_prior: &ComponentCountPrior,
    include_delta: bool,
) -> f64 {
    let q = arm.q();
    let mut total = q_prior.ln_prob(q) + ln_gamma(q as f64);
    for t in 0..q {
        total += ln_normal_prec(arm.mu[t], 0.0, arm.tau);
        total += ln_inv_gamma_pdf(arm.sigma[t], hypers.a_within, hypers.b_within);
    }
    for (k, &t) in arm.z.iter().enumerate() {
        total += arm.w[t].ln();
        if include_delta {
            total += ln_normal_var(arm.delta[k], arm.mu[t], arm.sigma[t]);
        }
    }
    total
}

/// log p(state | hypers).
pub fn log_prior(state: &ModelState, hypers: &Hyperparameters) -> Result<f64> {
    hypers.validate(state.arms.len())?;
    if !(state.varsigma > 0.0) {
        return Err(Error::invalid("varsigma", state.varsigma, "must be positive"));
    }
    let mut total = ln_gamma_pdf(state.varsigma, hypers.a_cell, hypers.b_cell);
    for (i, arm) in state.arms.iter().enumerate() {
        if let Some(&s) = arm.sigma.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::invalid("sigma", s, "component variance must be positive"));
        }
        if !(arm.tau > 0.0) {
            return Err(Error::invalid("tau", arm.tau, "must be positive"));
        }
        arm.check_invariants()?;
        let q_prior = ComponentCountPrior::new(hypers.alpha, arm.n_subgroups());
        total += ln_normal_prec(arm.beta, hypers.c[i], hypers.p[i]);
        total += ln_gamma_pdf(arm.tau, hypers.a_between, hypers.b_between);
        total += ln_mixture_layer(arm, hypers, &q_prior, true);
    }
    Ok(total)
}

/// log p(data | state) + log p(state | hypers).
pub fn log_joint(state: &ModelState, data: &Dataset, hypers: &Hyperparameters) -> Result<f64> {
    let like = log_likelihood(state, data)?;
    let prior = log_prior(state, hypers)?;
    Ok(like + prior)
}

/// Implied prior on the standard-deviation scale when a variance has an
/// InvGamma(shape, scale) prior (equivalently the precision is
/// Gamma(shape, rate)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdPriorSummary {
    /// Square root of the variance mode.
    pub mode: f64,
    /// Narrowest interval holding 95% of the standard-deviation prior.
    pub hdi95: (f64, f64),
}

/// CDF of the standard deviation `s = sqrt(v)`, `v ~ InvGamma(a, b)`.
fn sd_cdf(s: f64, a: f64, b: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    gamma_ur(a, b / (s * s))
}

fn sd_quantile(p: f64, a: f64, b: f64) -> f64 {
    // Bracket in log space, then bisect.
    let (mut lo, mut hi) = (1e-12_f64.ln(), 1e12_f64.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sd_cdf(mid.exp(), a, b) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

pub fn sd_prior_summary(shape: f64, scale: f64) -> Result<SdPriorSummary> {
    if !(shape.is_finite() && shape > 1.0) {
        return Err(Error::ModeUndefined { shape });
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid("b", scale, "must be positive"));
    }
    let mode = (scale / (shape + 1.0)).sqrt();
    let mass = 0.95;
    let width = |p: f64| sd_quantile(p + mass, shape, scale) - sd_quantile(p, shape, scale);
    // Golden-section search over the lower-tail probability.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (1e-9, 1.0 - mass - 1e-9);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (width(c), width(d));
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = width(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = width(d);
        }
    }
    let p = 0.5 * (a + b);
    Ok(SdPriorSummary {
        mode,
        hdi95: (sd_quantile(p, shape, scale), sd_quantile(p + mass, shape, scale)),
    })
}

/// Location-zero Student-t log density with `df` degrees of freedom and scale.
pub fn ln_student_t(x: f64, df: f64, scale: f64) -> f64 {
    let r = x / scale;
    ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * std::f64::consts::PI).ln()
        - scale.ln()
        - 0.5 * (df + 1.0) * (1.0 + r * r / df).ln()
}

/// Prior density of the difference of two deviations drawn from one component.
pub fn within_difference_density(x: f64, a_within: f64, b_within: f64) -> f64 {
    ln_student_t(x, 2.0 * a_within, (2.0 * b_within / a_within).sqrt()).exp()
}

/// Prior density of the difference of two component means.
pub fn between_difference_density(x: f64, a_between: f64, b_between: f64) -> f64 {
    ln_student_t(x, 2.0 * a_between, (2.0 * b_between / a_between).sqrt()).exp()
}

/// Smallest positive difference at which two subgroups become a priori more
/// likely to sit in different components than in the same one. Zero when the
/// within-component difference density never exceeds the between one at 0.
pub fn crossover_delta(hypers: &Hyperparameters) -> Result<f64> {
    for (name, v) in [
        ("a_within", hypers.a_within),
        ("b_within", hypers.b_within),
        ("a_between", hypers.a_between),
        ("b_between", hypers.b_between),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(name, v, "must be finite and positive"));
        }
    }
    let gap = |x: f64| {
        within_difference_density(x, hypers.a_within, hypers.b_within)
            - between_difference_density(x, hypers.a_between, hypers.b_between)
    };
    if gap(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let scale_w = (2.0 * hypers.b_within / hypers.a_within).sqrt();
    let scale_b = (2.0 * hypers.b_between / hypers.a_between).sqrt();
    let step = scale_w.min(scale_b) / 200.0;
    let limit = 100.0 * scale_w.max(scale_b);
    let mut prev = 0.0;
    let mut x = step;
    while x <= limit {
        if gap(x) <= 0.0 {
            let (mut lo, mut hi) = (prev, x);
            while hi - lo > 1e-13 {
                let mid = 0.5 * (lo + hi);
                if gap(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        prev = x;
        x += step;
    }
    Ok(f64::INFINITY)
}

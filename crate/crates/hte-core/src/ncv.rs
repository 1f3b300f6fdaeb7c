//! Nested cross-validation inference for the predictive comparison.
//!
//! A single cross-validation estimates out-of-sample loss but not its
//! sampling error. The nested scheme trains on doubly held-out data so the
//! spread between inner and outer fold means identifies both a bias
//! correction and a mean-squared-error estimate for the point estimate,
//! yielding calibrated confidence intervals and h-values.
//!
//! Work is split into independent training cells, one per (repetition,
//! outer fold, inner fold) triple plus one outer cell per (repetition,
//! outer fold). All randomness is drawn from the master seed before any
//! cell runs, and cell outputs are reduced in a fixed order, so results are
//! identical for any worker count.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{compute_modified_outcomes, split_folds, Dataset, ModifiedDataset, Propensity};
use crate::error::{Error, Result};
use crate::learners::{fit_baseline, fit_unrestricted, FittedModel, LearnerSpec};
use crate::losses::{evaluate_pair, EvalData, LossRecord, Mode, PairedModels};
use crate::restricted::{fit_restricted, restricted_tau_mo, RestrictedModel};
use crate::seeds::child_seed;

fn default_k() -> usize {
    5
}

fn default_reps() -> usize {
    50
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

fn default_mode() -> Mode {
    Mode::Outcome
}

fn default_mse_floor() -> f64 {
    1e-12
}

/// Settings for one nested cross-validation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcvConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_alphas")]
    pub alpha_levels: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_mse_floor")]
    pub mse_floor: f64,
}

impl Default for NcvConfig {
    fn default() -> Self {
        NcvConfig {
            k: default_k(),
            reps: default_reps(),
            alpha_levels: default_alphas(),
            seed: 0,
            mode: default_mode(),
            mse_floor: default_mse_floor(),
        }
    }
}

impl NcvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::InvalidConfig(format!(
                "k must be at least 3 so the inner loop has 2 or more folds, got {}",
                self.k
            )));
        }
        if self.reps < 1 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.alpha_levels.is_empty() {
            return Err(Error::InvalidConfig("alpha_levels must be non-empty".into()));
        }
        for &a in &self.alpha_levels {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "alpha levels must lie strictly between 0 and 1, got {a}"
                )));
            }
        }
        if !(self.mse_floor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mse_floor must be positive, got {}",
                self.mse_floor
            )));
        }
        Ok(())
    }
}

/// Aggregates of one nested cross-validation run. Per-cell means are stored
/// row-major over (repetition, outer fold).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcvResult {
    pub e_ncv: f64,
    pub e_cv: f64,
    pub bias: f64,
    pub mse: f64,
    pub raw_mse: f64,
    pub inner_fold_means: Vec<f64>,
    pub outer_fold_means: Vec<f64>,
    pub outer_fold_vars: Vec<f64>,
    pub n_per_fold: Vec<usize>,
    pub k: usize,
    pub reps: usize,
    pub warnings: Vec<String>,
}

impl NcvResult {
    /// Bias-corrected point estimate, the center of every interval.
    pub fn center(&self) -> f64 {
        self.e_ncv - self.bias
    }
}

/// One held-out loss tagged with the cell that produced it. `inner_fold` is
/// `None` for the outer evaluation stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedLoss {
    pub rep: usize,
    pub outer_fold: usize,
    pub inner_fold: Option<usize>,
    #[serde(flatten)]
    pub record: LossRecord,
}

/// A confidence interval at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaInterval {
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Full evaluation artifact: the run's aggregates, intervals, h-values, and
/// an echo of everything needed to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub learner: LearnerSpec,
    pub config: NcvConfig,
    pub ncv: NcvResult,
    pub intervals: Vec<AlphaInterval>,
    pub h_two_sided: f64,
    pub h_one_sided: f64,
    pub wall_time_seconds: f64,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).map_err(std::io::Error::from)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text).map_err(std::io::Error::from)?)
    }
}

/// A model pair trained on one dataset, owned, one variant per mode.
#[derive(Clone, Debug)]
pub enum TrainedPair {
    Outcome {
        f: FittedModel,
        g: RestrictedModel,
    },
    Modified {
        theta: FittedModel,
        tau_mo: f64,
    },
    ModifiedFromOutcome {
        f: FittedModel,
        g: RestrictedModel,
    },
}

impl TrainedPair {
    pub fn as_models(&self) -> PairedModels<'_> {
        match self {
            TrainedPair::Outcome { f, g } => PairedModels::Outcome { f, g },
            TrainedPair::Modified { theta, tau_mo } => PairedModels::Modified {
                theta,
                tau_mo: *tau_mo,
            },
            TrainedPair::ModifiedFromOutcome { f, g } => {
                PairedModels::ModifiedFromOutcome { f, g }
            }
        }
    }
}

pub(crate) fn fit_effect_regression(
    spec: &LearnerSpec,
    m: &ModifiedDataset,
) -> Result<(FittedModel, f64)> {
    let cov = m.as_covariate_dataset();
    Ok((fit_baseline(spec, &cov)?, restricted_tau_mo(m)))
}

/// Trains the mode's model pair on the full dataset.
pub fn train_pair(
    spec: &LearnerSpec,
    d: &Dataset,
    propensities: Option<&[f64]>,
    mode: Mode,
) -> Result<TrainedPair> {
    match mode {
        Mode::Outcome => Ok(TrainedPair::Outcome {
            f: fit_unrestricted(spec, d)?,
            g: fit_restricted(spec, d)?,
        }),
        Mode::Modified => {
            let prop = propensities.map(Propensity::PerRow).unwrap_or_default();
            let m = compute_modified_outcomes(d, prop)?;
            let (theta, tau_mo) = fit_effect_regression(spec, &m)?;
            Ok(TrainedPair::Modified { theta, tau_mo })
        }
        Mode::ModifiedFromOutcome => Ok(TrainedPair::ModifiedFromOutcome {
            f: fit_unrestricted(spec, d)?,
            g: fit_restricted(spec, d)?,
        }),
    }
}

struct Cell {
    rep: usize,
    outer: usize,
    inner: Option<usize>,
    train_rows: Vec<usize>,
    eval_rows: Vec<usize>,
    tuning_seed: u64,
}

fn build_cells(d: &Dataset, cfg: &NcvConfig) -> Result<Vec<Cell>> {
    let k = cfg.k;
    let mut cells = Vec::with_capacity(cfg.reps * k * k);
    for r in 0..cfg.reps {
        let rep_seed = child_seed(cfg.seed, r as u64);
        let folds = split_folds(d, k, rep_seed)?;
        for outer in 0..k {
            for inner in 0..k {
                if inner == outer {
                    continue;
                }
                cells.push(Cell {
                    rep: r,
                    outer,
                    inner: Some(inner),
                    train_rows: folds.complement2(outer, inner),
                    eval_rows: folds.fold_indices(inner),
                    tuning_seed: child_seed(rep_seed, (outer * (k + 1) + inner) as u64),
                });
            }
            cells.push(Cell {
                rep: r,
                outer,
                inner: None,
                train_rows: folds.complement(outer),
                eval_rows: folds.fold_indices(outer),
                tuning_seed: child_seed(rep_seed, (outer * (k + 1) + k) as u64),
            });
        }
    }
    Ok(cells)
}

fn run_cell(
    spec: &LearnerSpec,
    d: &Dataset,
    m: Option<&ModifiedDataset>,
    mode: Mode,
    cell: &Cell,
) -> Result<Vec<LossRecord>> {
    let mut has_arm = [false, false];
    for &i in &cell.train_rows {
        has_arm[d.treatments()[i] as usize] = true;
    }
    if !has_arm[0] || !has_arm[1] {
        return Err(Error::FoldArmMissing {
            rep: cell.rep,
            fold: cell.outer,
        });
    }
    let mut task_spec = spec.clone();
    task_spec.tuning_seed = cell.tuning_seed;

    match mode {
        Mode::Outcome => {
            let train = d.subset(&cell.train_rows)?;
            let f = fit_unrestricted(&task_spec, &train)?;
            let g = fit_restricted(&task_spec, &train)?;
            evaluate_pair(
                &PairedModels::Outcome { f: &f, g: &g },
                &EvalData::Outcome(d),
                &cell.eval_rows,
            )
        }
        Mode::Modified => {
            let m = m.expect("modified mode carries modified outcomes");
            let train = m.subset(&cell.train_rows);
            let (theta, tau_mo) = fit_effect_regression(&task_spec, &train)?;
            evaluate_pair(
                &PairedModels::Modified { theta: &theta, tau_mo },
                &EvalData::Modified(m),
                &cell.eval_rows,
            )
        }
        Mode::ModifiedFromOutcome => {
            let m = m.expect("modified mode carries modified outcomes");
            let train = d.subset(&cell.train_rows)?;
            let f = fit_unrestricted(&task_spec, &train)?;
            let g = fit_restricted(&task_spec, &train)?;
            evaluate_pair(
                &PairedModels::ModifiedFromOutcome { f: &f, g: &g },
                &EvalData::Modified(m),
                &cell.eval_rows,
            )
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// The nested-minus-plain gap scaled by `1 + (K-2)/K`.
pub fn bias_correction(k: usize, e_ncv: f64, e_cv: f64) -> f64 {
    (1.0 + (k as f64 - 2.0) / k as f64) * (e_ncv - e_cv)
}

/// Plug-in MSE estimate before flooring: the mean squared inner-outer gap
/// minus the mean within-fold sampling variance of the outer means.
pub fn raw_mse_estimate(
    inner_fold_means: &[f64],
    outer_fold_means: &[f64],
    outer_fold_vars: &[f64],
    n_per_fold: &[usize],
) -> f64 {
    let cells = inner_fold_means.len() as f64;
    let gap_sq = inner_fold_means
        .iter()
        .zip(outer_fold_means)
        .map(|(i, o)| (i - o) * (i - o))
        .sum::<f64>()
        / cells;
    let sampling = outer_fold_vars
        .iter()
        .zip(n_per_fold)
        .map(|(v, &n)| v / n as f64)
        .sum::<f64>()
        / cells;
    gap_sq - sampling
}

/// Runs nested cross-validation and returns the aggregates.
///
/// `propensities` is consulted only by the modified modes; rows without a
/// recorded propensity default to a randomized half-half assignment.
pub fn run_ncv(
    spec: &LearnerSpec,
    d: &Dataset,
    propensities: Option<&[f64]>,
    cfg: &NcvConfig,
) -> Result<NcvResult> {
    run_ncv_with_losses(spec, d, propensities, cfg).map(|(res, _)| res)
}

/// Like [`run_ncv`], also returning every held-out loss tagged by cell.
pub fn run_ncv_with_losses(
    spec: &LearnerSpec,
    d: &Dataset,
    propensities: Option<&[f64]>,
    cfg: &NcvConfig,
) -> Result<(NcvResult, Vec<TaggedLoss>)> {
    cfg.validate()?;
    spec.validate()?;
    let modified = match cfg.mode {
        Mode::Outcome => None,
        Mode::Modified | Mode::ModifiedFromOutcome => {
            let prop = match propensities {
                Some(p) => Propensity::PerRow(p),
                None => Propensity::default(),
            };
            Some(compute_modified_outcomes(d, prop)?)
        }
    };

    let cells = build_cells(d, cfg)?;
    let outputs: Vec<Result<Vec<LossRecord>>> = cells
        .par_iter()
        .map(|cell| {
            run_cell(spec, d, modified.as_ref(), cfg.mode, cell)
                .map_err(|e| e.in_fit_context(cell.rep, cell.outer, cell.inner))
        })
        .collect();

    let k = cfg.k;
    let n_cells = cfg.reps * k;
    let mut inner_sums = vec![0.0f64; n_cells];
    let mut outer_fold_means = vec![0.0f64; n_cells];
    let mut outer_fold_vars = vec![0.0f64; n_cells];
    let mut n_per_fold = vec![0usize; n_cells];
    let mut tagged = Vec::new();

    for (cell, output) in cells.iter().zip(outputs) {
        let records = output?;
        let losses: Vec<f64> = records.iter().map(|r| r.loss_value).collect();
        let fold_mean = mean(&losses);
        let idx = cell.rep * k + cell.outer;
        match cell.inner {
            Some(_) => inner_sums[idx] += fold_mean,
            None => {
                outer_fold_means[idx] = fold_mean;
                outer_fold_vars[idx] = sample_variance(&losses);
                n_per_fold[idx] = losses.len();
            }
        }
        for record in records {
            tagged.push(TaggedLoss {
                rep: cell.rep,
                outer_fold: cell.outer,
                inner_fold: cell.inner,
                record,
            });
        }
    }

    let inner_fold_means: Vec<f64> =
        inner_sums.iter().map(|s| s / (k - 1) as f64).collect();
    let e_ncv = mean(&inner_fold_means);
    let e_cv = mean(&outer_fold_means[0..k]);
    let bias = bias_correction(k, e_ncv, e_cv);
    let raw_mse = raw_mse_estimate(
        &inner_fold_means,
        &outer_fold_means,
        &outer_fold_vars,
        &n_per_fold,
    );
    let mut warnings = Vec::new();
    let mse = if raw_mse < cfg.mse_floor {
        warnings.push(format!(
            "raw mse estimate {raw_mse:.6e} is below the floor {:.1e}; the estimators are \
             near-identical and intervals are degenerately narrow",
            cfg.mse_floor
        ));
        cfg.mse_floor
    } else {
        raw_mse
    };

    Ok((
        NcvResult {
            e_ncv,
            e_cv,
            bias,
            mse,
            raw_mse,
            inner_fold_means,
            outer_fold_means,
            outer_fold_vars,
            n_per_fold,
            k,
            reps: cfg.reps,
            warnings,
        },
        tagged,
    ))
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Two-sided interval for the comparison estimand at level `alpha`.
pub fn confidence_interval(res: &NcvResult, alpha: f64) -> (f64, f64) {
    assert!(
        alpha > 0.0 && alpha < 1.0,
        "alpha must lie strictly between 0 and 1"
    );
    let z = standard_normal().inverse_cdf(1.0 - alpha / 2.0);
    let center = res.center();
    let half = z * res.mse.sqrt();
    (center - half, center + half)
}

/// Smallest level at which the two-sided interval excludes zero.
pub fn h_value(res: &NcvResult) -> f64 {
    2.0 * standard_normal().cdf(-res.center().abs() / res.mse.sqrt())
}

/// Smallest level at which the one-sided upper interval falls below zero;
/// small values favor the unrestricted model.
pub fn one_sided_h_value(res: &NcvResult) -> f64 {
    standard_normal().cdf(res.center() / res.mse.sqrt())
}

/// Runs the engine and assembles the full report.
pub fn run_evaluation(
    spec: &LearnerSpec,
    d: &Dataset,
    propensities: Option<&[f64]>,
    cfg: &NcvConfig,
) -> Result<EvaluationReport> {
    run_evaluation_with_losses(spec, d, propensities, cfg).map(|(report, _)| report)
}

/// Like [`run_evaluation`], also returning the tagged loss table.
pub fn run_evaluation_with_losses(
    spec: &LearnerSpec,
    d: &Dataset,
    propensities: Option<&[f64]>,
    cfg: &NcvConfig,
) -> Result<(EvaluationReport, Vec<TaggedLoss>)> {
    let start = Instant::now();
    let (ncv, tagged) = run_ncv_with_losses(spec, d, propensities, cfg)?;
    let intervals = cfg
        .alpha_levels
        .iter()
        .map(|&alpha| {
            let (lower, upper) = confidence_interval(&ncv, alpha);
            AlphaInterval { alpha, lower, upper }
        })
        .collect();
    let report = EvaluationReport {
        schema_version: 1,
        learner: spec.clone(),
        config: cfg.clone(),
        h_two_sided: h_value(&ncv),
        h_one_sided: one_sided_h_value(&ncv),
        intervals,
        ncv,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, tagged))
}

/// Writes the tagged loss table as CSV for external audit.
pub fn write_losses_csv<W: Write>(mut w: W, losses: &[TaggedLoss]) -> Result<()> {
    writeln!(
        w,
        "rep,outer_fold,inner_fold,row_index,mode,loss_value,f_pred,g_pred,y_or_w"
    )?;
    for t in losses {
        let inner = t
            .inner_fold
            .map(|j| j.to_string())
            .unwrap_or_default();
        let mode = match t.record.mode {
            crate::losses::LossKind::Outcome => "outcome",
            crate::losses::LossKind::Modified => "modified",
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            t.rep,
            t.outer_fold,
            inner,
            t.record.row_index,
            mode,
            t.record.loss_value,
            t.record.f_pred,
            t.record.g_pred,
            t.record.y_or_w
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::data::compute_modified_outcomes;
    use crate::restricted::estimate_tau_star;
    use crate::seeds::rng_from_seed;

    fn stub_result(e_ncv: f64, bias: f64, mse: f64) -> NcvResult {
        NcvResult {
            e_ncv,
            e_cv: 0.0,
            bias,
            mse,
            raw_mse: mse,
            inner_fold_means: vec![],
            outer_fold_means: vec![],
            outer_fold_vars: vec![],
            n_per_fold: vec![],
            k: 5,
            reps: 1,
            warnings: vec![],
        }
    }

    fn linear_dataset(n: usize, seed: u64, hetero: f64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut outcomes = Vec::with_capacity(n);
        let mut treatments = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let x1: f64 = StandardNormal.sample(&mut rng);
            let x2: f64 = StandardNormal.sample(&mut rng);
            let a = if i < 4 { (i % 2) as u8 } else { u8::from(rng.random::<f64>() < 0.5) };
            let noise: f64 = StandardNormal.sample(&mut rng);
            let y = 2.0 + 3.0 * x1 - x2 + 1.5 * f64::from(a) + hetero * f64::from(a) * x1 + noise;
            outcomes.push(y);
            treatments.push(a);
            rows.push(vec![x1, x2]);
        }
        Dataset::new(outcomes, treatments, rows, None).unwrap()
    }

    #[test]
    fn interval_formula_examples() {
        let res = stub_result(-1.0, 0.0, 0.04);
        let (lo, hi) = confidence_interval(&res, 0.05);
        assert_relative_eq!(lo, -1.392, epsilon = 1e-3);
        assert_relative_eq!(hi, -0.608, epsilon = 1e-3);

        let (lo, hi) = confidence_interval(&res, 1.0 - 1e-12);
        assert!(hi - lo < 1e-5, "near-alpha-one width {}", hi - lo);

        let floored = stub_result(0.0, 0.0, 1e-12);
        let (lo, hi) = confidence_interval(&floored, 0.05);
        assert_relative_eq!(hi - lo, 2.0 * 1.959964 * 1e-6, max_relative = 1e-5);
    }

    #[test]
    fn h_value_examples() {
        assert_eq!(h_value(&stub_result(0.0, 0.0, 0.04)), 1.0);
        let res = stub_result(-1.0, 0.0, 0.04);
        assert_relative_eq!(h_value(&res), 5.733e-7, max_relative = 1e-3);
        let flipped = stub_result(1.0, 0.0, 0.04);
        assert_eq!(h_value(&res), h_value(&flipped));
    }

    #[test]
    fn one_sided_relations_hold() {
        assert_eq!(one_sided_h_value(&stub_result(0.0, 0.0, 1.0)), 0.5);
        let neg = stub_result(-0.7, 0.0, 0.09);
        assert!((one_sided_h_value(&neg) - h_value(&neg) / 2.0).abs() < 1e-12);
        let pos = stub_result(0.7, 0.0, 0.09);
        assert!((one_sided_h_value(&pos) - (1.0 - h_value(&pos) / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let mut cfg = NcvConfig::default();
        cfg.k = 2;
        assert!(cfg.validate().is_err());
        cfg = NcvConfig::default();
        cfg.reps = 0;
        assert!(cfg.validate().is_err());
        cfg = NcvConfig::default();
        cfg.alpha_levels = vec![1.5];
        assert!(cfg.validate().is_err());
        cfg = NcvConfig::default();
        cfg.mse_floor = 0.0;
        assert!(cfg.validate().is_err());
        assert!(NcvConfig::default().validate().is_ok());
    }

    fn balanced_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut outcomes = Vec::with_capacity(n);
        let mut treatments = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let a = (i % 2) as u8;
            let noise: f64 = StandardNormal.sample(&mut rng);
            outcomes.push(1.0 + 2.0 * x + f64::from(a) * (1.0 + 0.8 * x) + noise);
            treatments.push(a);
            rows.push(vec![x]);
        }
        Dataset::new(outcomes, treatments, rows, None).unwrap()
    }

    #[test]
    fn e_ncv_is_grand_mean_with_equal_fold_sizes() {
        // 24 rows, 12 per arm, K=4: every fold holds 6 rows, so the per-fold
        // weighting reduces to the unweighted grand mean of inner losses.
        let d = balanced_dataset(24, 7);
        let cfg = NcvConfig {
            k: 4,
            reps: 2,
            seed: 11,
            ..NcvConfig::default()
        };
        let (res, tagged) =
            run_ncv_with_losses(&LearnerSpec::ols(), &d, None, &cfg).unwrap();
        let inner: Vec<f64> = tagged
            .iter()
            .filter(|t| t.inner_fold.is_some())
            .map(|t| t.record.loss_value)
            .collect();
        assert_eq!(inner.len(), 2 * 4 * 3 * 6);
        assert_relative_eq!(res.e_ncv, mean(&inner), epsilon = 1e-12);
        assert_relative_eq!(res.e_ncv, mean(&res.inner_fold_means), epsilon = 1e-12);
    }

    #[test]
    fn aggregates_match_recomputation_from_loss_table() {
        let d = linear_dataset(20, 13, 1.0);
        let cfg = NcvConfig {
            k: 4,
            reps: 3,
            seed: 5,
            ..NcvConfig::default()
        };
        let (res, tagged) =
            run_ncv_with_losses(&LearnerSpec::ols(), &d, None, &cfg).unwrap();

        let k = cfg.k;
        let mut e_ncv_acc = 0.0;
        for r in 0..cfg.reps {
            for outer in 0..k {
                for inner in 0..k {
                    if inner == outer {
                        continue;
                    }
                    let fold: Vec<f64> = tagged
                        .iter()
                        .filter(|t| {
                            t.rep == r && t.outer_fold == outer && t.inner_fold == Some(inner)
                        })
                        .map(|t| t.record.loss_value)
                        .collect();
                    assert!(!fold.is_empty());
                    e_ncv_acc += mean(&fold);
                }
            }
        }
        let e_ncv = e_ncv_acc / (cfg.reps * k * (k - 1)) as f64;
        assert_relative_eq!(res.e_ncv, e_ncv, epsilon = 1e-10);

        let mut e_cv_acc = 0.0;
        for outer in 0..k {
            let fold: Vec<f64> = tagged
                .iter()
                .filter(|t| t.rep == 0 && t.outer_fold == outer && t.inner_fold.is_none())
                .map(|t| t.record.loss_value)
                .collect();
            e_cv_acc += mean(&fold);
        }
        assert_relative_eq!(res.e_cv, e_cv_acc / k as f64, epsilon = 1e-10);
        assert_relative_eq!(
            res.bias,
            (1.0 + (k as f64 - 2.0) / k as f64) * (res.e_ncv - res.e_cv),
            epsilon = 1e-12
        );

        let mut gap_sq = 0.0;
        let mut sampling = 0.0;
        for r in 0..cfg.reps {
            for outer in 0..k {
                let idx = r * k + outer;
                let outer_losses: Vec<f64> = tagged
                    .iter()
                    .filter(|t| t.rep == r && t.outer_fold == outer && t.inner_fold.is_none())
                    .map(|t| t.record.loss_value)
                    .collect();
                let e_out = mean(&outer_losses);
                assert_relative_eq!(res.outer_fold_means[idx], e_out, epsilon = 1e-12);
                gap_sq += (res.inner_fold_means[idx] - e_out).powi(2);
                sampling += sample_variance(&outer_losses) / outer_losses.len() as f64;
            }
        }
        let cells = (cfg.reps * k) as f64;
        assert_relative_eq!(
            res.raw_mse,
            gap_sq / cells - sampling / cells,
            epsilon = 1e-10
        );
    }

    #[test]
    fn coinciding_estimators_floor_the_mse_with_a_warning() {
        let d = linear_dataset(30, 21, 0.0);
        let cfg = NcvConfig {
            k: 5,
            reps: 2,
            seed: 3,
            ..NcvConfig::default()
        };
        let res = run_ncv(&LearnerSpec::constant(), &d, None, &cfg).unwrap();
        assert!(res.e_ncv.abs() < 1e-8, "e_ncv {}", res.e_ncv);
        assert!(res.raw_mse < cfg.mse_floor);
        assert_eq!(res.mse, cfg.mse_floor);
        assert_eq!(res.warnings.len(), 1);
        let report = run_evaluation(&LearnerSpec::constant(), &d, None, &cfg).unwrap();
        assert!(report.h_two_sided > 0.99);
        let (lo, hi) = (report.intervals[0].lower, report.intervals[0].upper);
        assert!(lo <= 0.0 && 0.0 <= hi);
        assert!(hi - lo < 1e-4);
    }

    #[test]
    fn pure_modified_constant_pair_is_exactly_degenerate() {
        // The constant effect regression and the mean modified outcome are
        // the same arithmetic, so every loss is exactly zero.
        let d = linear_dataset(30, 22, 0.5);
        let cfg = NcvConfig {
            k: 5,
            reps: 2,
            seed: 4,
            mode: Mode::Modified,
            ..NcvConfig::default()
        };
        let (res, tagged) =
            run_ncv_with_losses(&LearnerSpec::constant(), &d, None, &cfg).unwrap();
        assert!(tagged.iter().all(|t| t.record.loss_value == 0.0));
        assert_eq!(res.e_ncv, 0.0);
        assert!(res.raw_mse < 0.0 || res.raw_mse == 0.0);
        assert_eq!(res.mse, cfg.mse_floor);
    }

    #[test]
    fn modified_from_outcome_constant_matches_scalar_pass() {
        // With the constant family both effect estimates are scalars, so
        // each fold mean has the closed form derived from the fold mean of
        // the modified outcomes.
        let d = linear_dataset(25, 23, 1.2);
        let cfg = NcvConfig {
            k: 3,
            reps: 2,
            seed: 9,
            mode: Mode::ModifiedFromOutcome,
            ..NcvConfig::default()
        };
        let spec = LearnerSpec::constant();
        let res = run_ncv(&spec, &d, None, &cfg).unwrap();

        let m = compute_modified_outcomes(&d, Propensity::default()).unwrap();
        let k = cfg.k;
        let mut acc = 0.0;
        for r in 0..cfg.reps {
            let rep_seed = child_seed(cfg.seed, r as u64);
            let folds = split_folds(&d, k, rep_seed).unwrap();
            for outer in 0..k {
                for inner in 0..k {
                    if inner == outer {
                        continue;
                    }
                    let train_rows = folds.complement2(outer, inner);
                    let train = d.subset(&train_rows).unwrap();
                    let mut sums = [0.0f64; 2];
                    let mut counts = [0usize; 2];
                    for (&y, &a) in train.outcomes().iter().zip(train.treatments()) {
                        sums[a as usize] += y;
                        counts[a as usize] += 1;
                    }
                    let theta = sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64;
                    let tau = estimate_tau_star(
                        &spec,
                        &train,
                        &crate::restricted::OptimizerOptions::default(),
                    )
                    .unwrap()
                    .tau_star;
                    let eval = folds.fold_indices(inner);
                    let w_mean = mean(
                        &eval
                            .iter()
                            .map(|&i| m.modified_outcomes()[i])
                            .collect::<Vec<f64>>(),
                    );
                    acc += (theta * theta - 2.0 * theta * w_mean)
                        - (tau * tau - 2.0 * tau * w_mean);
                }
            }
        }
        let by_hand = acc / (cfg.reps * k * (k - 1)) as f64;
        assert_relative_eq!(res.e_ncv, by_hand, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn ols_outcome_mode_matches_independent_reimplementation() {
        // Re-runs the whole scheme with nalgebra least squares in place of
        // the engine's fitting stack.
        use nalgebra::{DMatrix, DVector};

        let d = linear_dataset(24, 31, 1.0);
        let cfg = NcvConfig {
            k: 3,
            reps: 2,
            seed: 17,
            ..NcvConfig::default()
        };
        let res = run_ncv(&LearnerSpec::ols(), &d, None, &cfg).unwrap();

        let p = d.p();
        let fit = |rows: &[usize], interactions: bool| -> DVector<f64> {
            let cols = if interactions { 2 + 2 * p } else { 2 + p };
            let mut x = DMatrix::<f64>::zeros(rows.len(), cols);
            let mut y = DVector::<f64>::zeros(rows.len());
            for (r, &i) in rows.iter().enumerate() {
                let xi = d.covariate_row(i);
                let a = f64::from(d.treatments()[i]);
                x[(r, 0)] = 1.0;
                for j in 0..p {
                    x[(r, 1 + j)] = xi[j];
                }
                x[(r, 1 + p)] = a;
                if interactions {
                    for j in 0..p {
                        x[(r, 2 + p + j)] = a * xi[j];
                    }
                }
                y[r] = d.outcomes()[i];
            }
            (x.transpose() * &x).lu().solve(&(x.transpose() * y)).unwrap()
        };
        let predict = |beta: &DVector<f64>, i: usize, interactions: bool| -> f64 {
            let xi = d.covariate_row(i);
            let a = f64::from(d.treatments()[i]);
            let mut v = beta[0] + beta[1 + p] * a;
            for j in 0..p {
                v += beta[1 + j] * xi[j];
                if interactions {
                    v += beta[2 + p + j] * a * xi[j];
                }
            }
            v
        };

        let k = cfg.k;
        let mut inner_means = Vec::new();
        let mut outer_means = Vec::new();
        let mut outer_vars = Vec::new();
        let mut outer_ns = Vec::new();
        for r in 0..cfg.reps {
            let folds = split_folds(&d, k, child_seed(cfg.seed, r as u64)).unwrap();
            for outer in 0..k {
                let mut acc = 0.0;
                for inner in 0..k {
                    if inner == outer {
                        continue;
                    }
                    let train = folds.complement2(outer, inner);
                    let beta_f = fit(&train, true);
                    let beta_g = fit(&train, false);
                    let losses: Vec<f64> = folds
                        .fold_indices(inner)
                        .iter()
                        .map(|&i| {
                            let y = d.outcomes()[i];
                            let f = predict(&beta_f, i, true);
                            let g = predict(&beta_g, i, false);
                            (y - f) * (y - f) - (y - g) * (y - g)
                        })
                        .collect();
                    acc += mean(&losses);
                }
                inner_means.push(acc / (k - 1) as f64);
                let train = folds.complement(outer);
                let beta_f = fit(&train, true);
                let beta_g = fit(&train, false);
                let losses: Vec<f64> = folds
                    .fold_indices(outer)
                    .iter()
                    .map(|&i| {
                        let y = d.outcomes()[i];
                        let f = predict(&beta_f, i, true);
                        let g = predict(&beta_g, i, false);
                        (y - f) * (y - f) - (y - g) * (y - g)
                    })
                    .collect();
                outer_means.push(mean(&losses));
                outer_vars.push(sample_variance(&losses));
                outer_ns.push(losses.len());
            }
        }
        let e_ncv = mean(&inner_means);
        let e_cv = mean(&outer_means[0..k]);
        assert_relative_eq!(res.e_ncv, e_ncv, epsilon = 1e-6, max_relative = 1e-6);
        assert_relative_eq!(res.e_cv, e_cv, epsilon = 1e-6, max_relative = 1e-6);
        assert_relative_eq!(
            res.bias,
            bias_correction(k, e_ncv, e_cv),
            epsilon = 1e-6,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            res.raw_mse,
            raw_mse_estimate(&inner_means, &outer_means, &outer_vars, &outer_ns),
            epsilon = 1e-6,
            max_relative = 1e-6
        );
    }

    #[test]
    fn results_are_identical_across_worker_counts() {
        let d = linear_dataset(30, 41, 0.7);
        let cfg = NcvConfig {
            k: 4,
            reps: 3,
            seed: 77,
            ..NcvConfig::default()
        };
        let spec = LearnerSpec::ols();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_ncv(&spec, &d, None, &cfg))
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| run_ncv(&spec, &d, None, &cfg))
            .unwrap();
        assert_eq!(single, many);
    }

    #[test]
    fn report_round_trips_through_json() {
        let d = linear_dataset(20, 51, 0.4);
        let cfg = NcvConfig {
            k: 4,
            reps: 2,
            seed: 8,
            alpha_levels: vec![0.05, 0.2],
            ..NcvConfig::default()
        };
        let report = run_evaluation(&LearnerSpec::ols(), &d, None, &cfg).unwrap();
        let text = report.to_json().unwrap();
        let back = EvaluationReport::from_json(&text).unwrap();
        assert_eq!(report, back);
        for iv in &report.intervals {
            let (lo, hi) = confidence_interval(&report.ncv, iv.alpha);
            assert_eq!(iv.lower, lo);
            assert_eq!(iv.upper, hi);
        }
    }

    #[test]
    fn losses_csv_has_one_line_per_record() {
        let d = linear_dataset(20, 61, 0.4);
        let cfg = NcvConfig {
            k: 4,
            reps: 1,
            seed: 2,
            ..NcvConfig::default()
        };
        let (_, tagged) = run_ncv_with_losses(&LearnerSpec::ols(), &d, None, &cfg).unwrap();
        let mut buf = Vec::new();
        write_losses_csv(&mut buf, &tagged).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), tagged.len() + 1);
        assert!(text.starts_with("rep,outer_fold,inner_fold,row_index,mode,loss_value"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn intervals_nest_as_alpha_decreases(
            center in -5.0f64..5.0,
            mse in 1e-8f64..4.0,
            a1 in 0.01f64..0.98,
            gap in 0.001f64..0.5,
        ) {
            let res = stub_result(center, 0.0, mse);
            let a2 = (a1 + gap).min(0.999);
            let (lo1, hi1) = confidence_interval(&res, a1);
            let (lo2, hi2) = confidence_interval(&res, a2);
            prop_assert!(lo1 <= lo2 && hi2 <= hi1);
        }

        #[test]
        fn interval_containment_of_zero_flips_at_h(
            center in -3.0f64..3.0,
            mse in 1e-6f64..2.0,
        ) {
            let res = stub_result(center, 0.0, mse);
            let h = h_value(&res);
            prop_assume!(h > 1e-5 && h < 1.0 - 1e-5);
            let eps = 1e-6;
            let (lo, hi) = confidence_interval(&res, h + eps);
            prop_assert!(lo > 0.0 || hi < 0.0, "above h must exclude zero");
            let (lo, hi) = confidence_interval(&res, h - eps);
            prop_assert!(lo <= 0.0 && 0.0 <= hi, "below h must contain zero");
        }
    }
}

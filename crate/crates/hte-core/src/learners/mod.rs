//! Outcome model families and the two fit entry points used everywhere else:
//! [`fit_unrestricted`] for models that see the treatment indicator, and
//! [`fit_baseline`] for covariate-only regressions.
//!
//! Families share one contract: given the same spec, data, and seeds, a fit
//! is bit-for-bit reproducible. Linear families expand the design to
//! `[x, a, a*x]`; boosting exposes `[a, x]` to the trees; the constant family
//! is a degenerate test double that predicts arm means.

mod boosting;
mod linear;

use serde::{Deserialize, Serialize};

use crate::data::{CovariateDataset, Dataset};
use crate::error::{Error, Result};

pub(crate) use boosting::BoostedModel;
pub(crate) use linear::LinearModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ols,
    Ridge,
    Lasso,
    Boosting,
    Constant,
}

impl Family {
    pub fn is_penalized(self) -> bool {
        matches!(self, Family::Ridge | Family::Lasso)
    }
}

/// Hyperparameters shared across families; irrelevant fields are ignored.
///
/// `penalty` is the absolute regularization strength used when tuning is
/// `fixed`. Boosting reads `iterations`, `shrinkage`, and `tree_depth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub penalty: Option<f64>,
    pub iterations: u32,
    pub shrinkage: f64,
    pub tree_depth: u32,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            penalty: None,
            iterations: 100,
            shrinkage: 0.1,
            tree_depth: 2,
        }
    }
}

/// Penalty selection strategy.
///
/// `inner_cv` grids are multipliers of the per-fit `lambda_max` computed from
/// the standardized training design, so one spec applies across training sets
/// of different sizes and scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tuning {
    Fixed,
    InnerCv { folds: usize, grid: Vec<f64> },
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning::Fixed
    }
}

/// Everything needed to reproduce a fit: family, hyperparameters, tuning
/// strategy, and the seed for tuning-internal randomness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: Family,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default)]
    pub tuning_seed: u64,
}

/// Multipliers for the default penalty path: 50 log-spaced values from
/// `lambda_max` down to `1e-3 * lambda_max`.
pub fn default_penalty_fractions() -> Vec<f64> {
    (0..50)
        .map(|i| 10f64.powf(-3.0 * i as f64 / 49.0))
        .collect()
}

impl LearnerSpec {
    pub fn ols() -> LearnerSpec {
        LearnerSpec {
            family: Family::Ols,
            hyperparameters: Hyperparameters::default(),
            tuning: Tuning::Fixed,
            tuning_seed: 0,
        }
    }

    pub fn ridge(tuning_seed: u64) -> LearnerSpec {
        LearnerSpec {
            family: Family::Ridge,
            hyperparameters: Hyperparameters::default(),
            tuning: Tuning::InnerCv {
                folds: 5,
                grid: default_penalty_fractions(),
            },
            tuning_seed,
        }
    }

    pub fn lasso(tuning_seed: u64) -> LearnerSpec {
        LearnerSpec {
            family: Family::Lasso,
            ..LearnerSpec::ridge(tuning_seed)
        }
    }

    pub fn boosting() -> LearnerSpec {
        LearnerSpec {
            family: Family::Boosting,
            hyperparameters: Hyperparameters::default(),
            tuning: Tuning::Fixed,
            tuning_seed: 0,
        }
    }

    pub fn constant() -> LearnerSpec {
        LearnerSpec {
            family: Family::Constant,
            hyperparameters: Hyperparameters::default(),
            tuning: Tuning::Fixed,
            tuning_seed: 0,
        }
    }

    /// Looks up a named preset: `ols`, `ridge`, `lasso`, `boost`, `constant`.
    pub fn preset(name: &str, tuning_seed: u64) -> Result<LearnerSpec> {
        match name {
            "ols" => Ok(LearnerSpec::ols()),
            "ridge" => Ok(LearnerSpec::ridge(tuning_seed)),
            "lasso" => Ok(LearnerSpec::lasso(tuning_seed)),
            "boost" | "boosting" => Ok(LearnerSpec::boosting()),
            "constant" => Ok(LearnerSpec::constant()),
            other => Err(Error::InvalidConfig(format!(
                "unknown learner preset '{other}' (expected ols, ridge, lasso, boost, or constant)"
            ))),
        }
    }

    pub fn from_json(s: &str) -> Result<LearnerSpec> {
        let spec: LearnerSpec = serde_json::from_str(s)
            .map_err(|e| Error::InvalidConfig(format!("cannot parse learner spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("learner spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match &self.tuning {
            Tuning::Fixed => {
                if self.family.is_penalized() {
                    match self.hyperparameters.penalty {
                        Some(p) if p > 0.0 && p.is_finite() => {}
                        Some(_) => {
                            return Err(Error::InvalidConfig(
                                "fixed penalty must be positive and finite".into(),
                            ))
                        }
                        None => {
                            return Err(Error::InvalidConfig(
                                "penalized family with fixed tuning requires hyperparameters.penalty"
                                    .into(),
                            ))
                        }
                    }
                }
            }
            Tuning::InnerCv { folds, grid } => {
                if !self.family.is_penalized() {
                    return Err(Error::InvalidConfig(
                        "inner_cv tuning only applies to ridge and lasso".into(),
                    ));
                }
                if *folds < 2 {
                    return Err(Error::InvalidConfig("inner_cv needs at least 2 folds".into()));
                }
                if grid.is_empty() {
                    return Err(Error::InvalidConfig("inner_cv grid must be nonempty".into()));
                }
                if grid.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "inner_cv grid values must be positive and finite".into(),
                    ));
                }
            }
        }
        if self.family == Family::Boosting {
            let h = &self.hyperparameters;
            if !(h.shrinkage > 0.0 && h.shrinkage <= 1.0) {
                return Err(Error::InvalidConfig("shrinkage must lie in (0, 1]".into()));
            }
            if h.tree_depth == 0 {
                return Err(Error::InvalidConfig("tree_depth must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// Which feature expansion a fitted model expects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Unrestricted,
    Baseline,
}

#[derive(Clone, Debug)]
pub(crate) enum Inner {
    Linear(LinearModel),
    Boosted(BoostedModel),
    ConstantArms { c0: f64, c1: f64 },
    ConstantMean(f64),
}

/// Diagnostic record of how a model was trained.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainingMeta {
    pub family: Family,
    pub n_train: usize,
    pub selected_penalty: Option<f64>,
    pub iterations: Option<u32>,
    pub sweeps: Option<u32>,
    pub intercept: Option<f64>,
    pub coefficients: Option<Vec<f64>>,
    pub dropped_columns: Vec<usize>,
}

/// A trained outcome model. Prediction is deterministic and total on feature
/// vectors of the training dimensionality.
#[derive(Clone, Debug)]
pub struct FittedModel {
    family: Family,
    kind: ModelKind,
    p: usize,
    inner: Inner,
    meta: TrainingMeta,
}

impl FittedModel {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Raw covariate dimensionality the model was trained on.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    /// Predicts the outcome at treatment `a` and covariates `x`.
    ///
    /// Baseline models ignore `a`.
    pub fn predict_outcome(&self, a: u8, x: &[f64]) -> Result<f64> {
        if a > 1 {
            return Err(Error::InvalidConfig(format!(
                "treatment indicator must be 0 or 1, got {a}"
            )));
        }
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        Ok(self.raw_predict(a, x))
    }

    pub(crate) fn raw_predict(&self, a: u8, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.p);
        let af = f64::from(a);
        match (&self.inner, self.kind) {
            (Inner::Linear(m), ModelKind::Unrestricted) => {
                let p = self.p;
                let mut acc = m.intercept;
                for (b, &xi) in m.slopes[..p].iter().zip(x) {
                    acc += b * xi;
                }
                if a == 1 {
                    acc += m.slopes[p];
                    for (b, &xi) in m.slopes[p + 1..].iter().zip(x) {
                        acc += b * xi;
                    }
                }
                acc
            }
            (Inner::Linear(m), ModelKind::Baseline) => {
                let mut acc = m.intercept;
                for (b, &xi) in m.slopes.iter().zip(x) {
                    acc += b * xi;
                }
                acc
            }
            (Inner::Boosted(m), ModelKind::Unrestricted) => {
                m.predict_by(|f| if f == 0 { af } else { x[f - 1] })
            }
            (Inner::Boosted(m), ModelKind::Baseline) => m.predict_by(|f| x[f]),
            (Inner::ConstantArms { c0, c1 }, _) => {
                if a == 1 {
                    *c1
                } else {
                    *c0
                }
            }
            (Inner::ConstantMean(c), _) => *c,
        }
    }

    /// Staged boosting prediction using only the first `iterations` trees.
    /// Returns `None` for non-boosted models.
    pub fn predict_staged(&self, a: u8, x: &[f64], iterations: usize) -> Option<f64> {
        let af = f64::from(a);
        match (&self.inner, self.kind) {
            (Inner::Boosted(m), ModelKind::Unrestricted) => {
                Some(m.predict_staged_by(|f| if f == 0 { af } else { x[f - 1] }, iterations))
            }
            (Inner::Boosted(m), ModelKind::Baseline) => {
                Some(m.predict_staged_by(|f| x[f], iterations))
            }
            _ => None,
        }
    }
}

/// Object-safe prediction over (treatment, covariates) pairs, implemented by
/// fitted models and by plain closures standing in for known truths.
pub trait OutcomeModel: Sync {
    fn predict(&self, a: u8, x: &[f64]) -> f64;
}

impl OutcomeModel for FittedModel {
    fn predict(&self, a: u8, x: &[f64]) -> f64 {
        self.raw_predict(a, x)
    }
}

impl<F> OutcomeModel for F
where
    F: Fn(u8, &[f64]) -> f64 + Sync,
{
    fn predict(&self, a: u8, x: &[f64]) -> f64 {
        self(a, x)
    }
}

/// Object-safe prediction over covariates alone.
pub trait CovariateModel: Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

impl CovariateModel for FittedModel {
    fn predict(&self, x: &[f64]) -> f64 {
        self.raw_predict(0, x)
    }
}

impl<F> CovariateModel for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

fn unrestricted_design(d: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = d.n();
    let p = d.p();
    let m = 2 * p + 1;
    let mut cols = vec![Vec::with_capacity(n); m];
    for i in 0..n {
        let a = f64::from(d.treatments()[i]);
        let x = d.covariate_row(i);
        for j in 0..p {
            cols[j].push(x[j]);
        }
        cols[p].push(a);
        for j in 0..p {
            cols[p + 1 + j].push(a * x[j]);
        }
    }
    (cols, d.outcomes().to_vec())
}

fn baseline_design(m: &CovariateDataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = m.n();
    let p = m.p();
    let mut cols = vec![Vec::with_capacity(n); p];
    for i in 0..n {
        let x = m.covariate_row(i);
        for j in 0..p {
            cols[j].push(x[j]);
        }
    }
    (cols, m.outcomes().to_vec())
}

fn resolve_penalty(spec: &LearnerSpec, cols: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    match &spec.tuning {
        Tuning::Fixed => Ok(spec
            .hyperparameters
            .penalty
            .expect("validated fixed penalty")),
        Tuning::InnerCv { folds, grid } => linear::tune_penalty(
            linear::PenaltyKind::from_family(spec.family),
            cols,
            y,
            *folds,
            grid,
            spec.tuning_seed,
        ),
    }
}

fn arm_means(d: &Dataset) -> (f64, f64) {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (&y, &a) in d.outcomes().iter().zip(d.treatments()) {
        sums[a as usize] += y;
        counts[a as usize] += 1;
    }
    (sums[0] / counts[0] as f64, sums[1] / counts[1] as f64)
}

/// Fits the unrestricted model `f(a, x)` of the given family.
pub fn fit_unrestricted(spec: &LearnerSpec, d: &Dataset) -> Result<FittedModel> {
    spec.validate()?;
    let p = d.p();
    let n = d.n();
    let meta_base = |family| TrainingMeta {
        family,
        n_train: n,
        selected_penalty: None,
        iterations: None,
        sweeps: None,
        intercept: None,
        coefficients: None,
        dropped_columns: Vec::new(),
    };
    match spec.family {
        Family::Ols => {
            let (cols, y) = unrestricted_design(d);
            let fit = linear::ols_with_intercept(cols, &y)?;
            let mut meta = meta_base(Family::Ols);
            meta.intercept = Some(fit.intercept);
            meta.coefficients = Some(fit.slopes.clone());
            meta.dropped_columns = fit.dropped;
            Ok(FittedModel {
                family: Family::Ols,
                kind: ModelKind::Unrestricted,
                p,
                inner: Inner::Linear(LinearModel {
                    intercept: fit.intercept,
                    slopes: fit.slopes,
                }),
                meta,
            })
        }
        Family::Ridge | Family::Lasso => {
            let (cols, y) = unrestricted_design(d);
            let lambda = resolve_penalty(spec, &cols, &y)?;
            let fit = linear::fit_penalized(
                linear::PenaltyKind::from_family(spec.family),
                &cols,
                &y,
                lambda,
            )?;
            let mut meta = meta_base(spec.family);
            meta.selected_penalty = Some(lambda);
            meta.sweeps = fit.sweeps;
            meta.intercept = Some(fit.intercept);
            meta.coefficients = Some(fit.slopes.clone());
            Ok(FittedModel {
                family: spec.family,
                kind: ModelKind::Unrestricted,
                p,
                inner: Inner::Linear(LinearModel {
                    intercept: fit.intercept,
                    slopes: fit.slopes,
                }),
                meta,
            })
        }
        Family::Boosting => {
            let h = &spec.hyperparameters;
            let features: Vec<f64> = (0..n)
                .flat_map(|i| {
                    let mut row = Vec::with_capacity(p + 1);
                    row.push(f64::from(d.treatments()[i]));
                    row.extend_from_slice(d.covariate_row(i));
                    row
                })
                .collect();
            let model = boosting::fit_boosted(
                &features,
                n,
                p + 1,
                d.outcomes(),
                h.iterations,
                h.shrinkage,
                h.tree_depth,
            );
            let mut meta = meta_base(Family::Boosting);
            meta.iterations = Some(h.iterations);
            Ok(FittedModel {
                family: Family::Boosting,
                kind: ModelKind::Unrestricted,
                p,
                inner: Inner::Boosted(model),
                meta,
            })
        }
        Family::Constant => {
            let (c0, c1) = arm_means(d);
            let mut meta = meta_base(Family::Constant);
            meta.coefficients = Some(vec![c0, c1]);
            Ok(FittedModel {
                family: Family::Constant,
                kind: ModelKind::Unrestricted,
                p,
                inner: Inner::ConstantArms { c0, c1 },
                meta,
            })
        }
    }
}

/// Fits the covariate-only baseline model of the given family.
pub fn fit_baseline(spec: &LearnerSpec, m: &CovariateDataset) -> Result<FittedModel> {
    spec.validate()?;
    let p = m.p();
    let n = m.n();
    let meta_base = |family| TrainingMeta {
        family,
        n_train: n,
        selected_penalty: None,
        iterations: None,
        sweeps: None,
        intercept: None,
        coefficients: None,
        dropped_columns: Vec::new(),
    };
    match spec.family {
        Family::Ols => {
            let (cols, y) = baseline_design(m);
            let fit = linear::ols_with_intercept(cols, &y)?;
            let mut meta = meta_base(Family::Ols);
            meta.intercept = Some(fit.intercept);
            meta.coefficients = Some(fit.slopes.clone());
            meta.dropped_columns = fit.dropped;
            Ok(FittedModel {
                family: Family::Ols,
                kind: ModelKind::Baseline,
                p,
                inner: Inner::Linear(LinearModel {
                    intercept: fit.intercept,
                    slopes: fit.slopes,
                }),
                meta,
            })
        }
        Family::Ridge | Family::Lasso => {
            let (cols, y) = baseline_design(m);
            let lambda = resolve_penalty(spec, &cols, &y)?;
            let fit = linear::fit_penalized(
                linear::PenaltyKind::from_family(spec.family),
                &cols,
                &y,
                lambda,
            )?;
            let mut meta = meta_base(spec.family);
            meta.selected_penalty = Some(lambda);
            meta.sweeps = fit.sweeps;
            meta.intercept = Some(fit.intercept);
            meta.coefficients = Some(fit.slopes.clone());
            Ok(FittedModel {
                family: spec.family,
                kind: ModelKind::Baseline,
                p,
                inner: Inner::Linear(LinearModel {
                    intercept: fit.intercept,
                    slopes: fit.slopes,
                }),
                meta,
            })
        }
        Family::Boosting => {
            let h = &spec.hyperparameters;
            let features: Vec<f64> = (0..n)
                .flat_map(|i| m.covariate_row(i).to_vec())
                .collect();
            let model = boosting::fit_boosted(
                &features,
                n,
                p,
                m.outcomes(),
                h.iterations,
                h.shrinkage,
                h.tree_depth,
            );
            let mut meta = meta_base(Family::Boosting);
            meta.iterations = Some(h.iterations);
            Ok(FittedModel {
                family: Family::Boosting,
                kind: ModelKind::Baseline,
                p,
                inner: Inner::Boosted(model),
                meta,
            })
        }
        Family::Constant => {
            let mean = m.outcomes().iter().sum::<f64>() / n as f64;
            let mut meta = meta_base(Family::Constant);
            meta.coefficients = Some(vec![mean]);
            Ok(FittedModel {
                family: Family::Constant,
                kind: ModelKind::Baseline,
                p,
                inner: Inner::ConstantMean(mean),
                meta,
            })
        }
    }
}

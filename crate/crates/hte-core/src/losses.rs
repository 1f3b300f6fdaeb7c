//! Pointwise comparison losses between an unrestricted model and its
//! constant-effect counterpart.
//!
//! The outcome loss compares squared prediction errors on the observed
//! outcome. The modified loss compares squared errors on the modified
//! outcome `W`, whose conditional mean is the true individual effect, so it
//! scores effect estimates directly.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModifiedDataset};
use crate::error::{Error, Result};
use crate::learners::FittedModel;
use crate::restricted::RestrictedModel;

/// Which loss formula produced a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Outcome,
    Modified,
}

/// How an evaluation scores the model pair.
///
/// `Outcome` compares outcome predictions against `Y`. `Modified` regresses
/// the modified outcome on covariates and compares effect estimates against
/// `W`. `ModifiedFromOutcome` scores outcome-model effect estimates
/// `f(1,x) - f(0,x)` under the modified loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Outcome,
    Modified,
    ModifiedFromOutcome,
}

impl Mode {
    pub fn loss_kind(self) -> LossKind {
        match self {
            Mode::Outcome => LossKind::Outcome,
            Mode::Modified | Mode::ModifiedFromOutcome => LossKind::Modified,
        }
    }
}

/// One held-out observation's loss, with the inputs that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub row_index: usize,
    pub loss_value: f64,
    pub f_pred: f64,
    pub g_pred: f64,
    pub y_or_w: f64,
    pub mode: LossKind,
}

impl LossRecord {
    /// Re-evaluates the defining formula from the stored fields.
    pub fn recompute(&self) -> f64 {
        match self.mode {
            LossKind::Outcome => diff_sq_loss(self.f_pred, self.g_pred, self.y_or_w),
            LossKind::Modified => modified_diff_sq_loss(self.f_pred, self.g_pred, self.y_or_w),
        }
    }
}

/// Difference in squared prediction error: `(y - f)^2 - (y - g)^2`.
/// Negative values favor the unrestricted model.
pub fn diff_sq_loss(f_pred: f64, g_pred: f64, y: f64) -> f64 {
    (y - f_pred) * (y - f_pred) - (y - g_pred) * (y - g_pred)
}

/// Modified-outcome analogue: `(w - theta)^2 - (w - tau_mo)^2`.
pub fn modified_diff_sq_loss(theta_pred: f64, tau_mo: f64, w: f64) -> f64 {
    (w - theta_pred) * (w - theta_pred) - (w - tau_mo) * (w - tau_mo)
}

/// The trained pair under comparison, one variant per evaluation mode.
#[derive(Clone, Copy)]
pub enum PairedModels<'a> {
    /// Unrestricted outcome model against the restricted model.
    Outcome {
        f: &'a FittedModel,
        g: &'a RestrictedModel,
    },
    /// Effect regression `theta(x)` against the constant `tau_mo`.
    Modified { theta: &'a FittedModel, tau_mo: f64 },
    /// Outcome pair scored through their implied effect estimates.
    ModifiedFromOutcome {
        f: &'a FittedModel,
        g: &'a RestrictedModel,
    },
}

/// The held-out data a pair is scored on.
#[derive(Clone, Copy)]
pub enum EvalData<'a> {
    Outcome(&'a Dataset),
    Modified(&'a ModifiedDataset),
}

/// Scores the pair on the given rows of the full dataset, one record per
/// row. `rows` index into `data`; the caller guarantees the models were
/// trained without them.
pub fn evaluate_pair(
    models: &PairedModels<'_>,
    data: &EvalData<'_>,
    rows: &[usize],
) -> Result<Vec<LossRecord>> {
    let mut out = Vec::with_capacity(rows.len());
    match (models, data) {
        (PairedModels::Outcome { f, g }, EvalData::Outcome(d)) => {
            for &i in rows {
                let x = d.covariate_row(i);
                let a = d.treatments()[i];
                let y = d.outcomes()[i];
                let f_pred = f.predict_outcome(a, x)?;
                let g_pred = g.predict(a, x)?;
                out.push(LossRecord {
                    row_index: i,
                    loss_value: diff_sq_loss(f_pred, g_pred, y),
                    f_pred,
                    g_pred,
                    y_or_w: y,
                    mode: LossKind::Outcome,
                });
            }
        }
        (PairedModels::Modified { theta, tau_mo }, EvalData::Modified(m)) => {
            for &i in rows {
                let x = m.covariate_row(i);
                let w = m.modified_outcomes()[i];
                let theta_pred = theta.predict_outcome(0, x)?;
                out.push(LossRecord {
                    row_index: i,
                    loss_value: modified_diff_sq_loss(theta_pred, *tau_mo, w),
                    f_pred: theta_pred,
                    g_pred: *tau_mo,
                    y_or_w: w,
                    mode: LossKind::Modified,
                });
            }
        }
        (PairedModels::ModifiedFromOutcome { f, g }, EvalData::Modified(m)) => {
            let tau = g.ite_gap();
            for &i in rows {
                let x = m.covariate_row(i);
                let w = m.modified_outcomes()[i];
                let theta_pred = f.predict_outcome(1, x)? - f.predict_outcome(0, x)?;
                out.push(LossRecord {
                    row_index: i,
                    loss_value: modified_diff_sq_loss(theta_pred, tau, w),
                    f_pred: theta_pred,
                    g_pred: tau,
                    y_or_w: w,
                    mode: LossKind::Modified,
                });
            }
        }
        _ => {
            return Err(Error::InvalidConfig(
                "model pair and evaluation data disagree about the mode".into(),
            ))
        }
    }
    Ok(out)
}

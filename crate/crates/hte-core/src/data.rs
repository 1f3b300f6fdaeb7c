//! Dataset ingestion and the derived views consumed downstream: treatment
//! shifted outcomes, modified outcomes, and stratified fold assignments.
//!
//! A [`Dataset`] is immutable after construction. Derived views share the
//! covariate matrix through an `Arc`, so producing a shifted copy per
//! candidate tau inside the optimizer costs one outcome vector, not a matrix
//! clone.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    Binary,
}

/// An observational unit table: outcome, binary treatment, covariates.
#[derive(Clone, Debug)]
pub struct Dataset {
    outcomes: Vec<f64>,
    treatments: Vec<u8>,
    covariates: Arc<Vec<f64>>,
    p: usize,
    covariate_names: Vec<String>,
    covariate_kinds: Vec<CovariateKind>,
}

/// Covariates plus a single outcome column, with no treatment column.
///
/// Produced by [`shift_outcomes`] (then `tau` records the applied shift) or
/// built directly when a learner must regress an arbitrary response on the
/// covariates alone.
#[derive(Clone, Debug)]
pub struct CovariateDataset {
    outcomes: Vec<f64>,
    covariates: Arc<Vec<f64>>,
    p: usize,
    tau: f64,
}

/// Modified-outcome view: `W_i` has conditional mean equal to the true
/// individual effect under the recorded propensities.
#[derive(Clone, Debug)]
pub struct ModifiedDataset {
    modified_outcomes: Vec<f64>,
    covariates: Arc<Vec<f64>>,
    p: usize,
    propensities: Vec<f64>,
}

/// Per-row propensity scores, or one score shared by every row.
#[derive(Clone, Copy, Debug)]
pub enum Propensity<'a> {
    Scalar(f64),
    PerRow(&'a [f64]),
}

impl Default for Propensity<'_> {
    fn default() -> Self {
        Propensity::Scalar(0.5)
    }
}

fn derive_kinds(covariates: &[f64], n: usize, p: usize) -> Vec<CovariateKind> {
    (0..p)
        .map(|j| {
            let binary = (0..n).all(|i| {
                let v = covariates[i * p + j];
                v == 0.0 || v == 1.0
            });
            if binary {
                CovariateKind::Binary
            } else {
                CovariateKind::Continuous
            }
        })
        .collect()
}

impl Dataset {
    /// Builds a validated dataset from per-row covariate vectors.
    ///
    /// Requires equal lengths, finite values, treatments in {0, 1}, and both
    /// arms present. Covariate kinds are derived from the observed values.
    pub fn new(
        outcomes: Vec<f64>,
        treatments: Vec<u8>,
        rows: Vec<Vec<f64>>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if treatments.len() != n || rows.len() != n {
            return Err(Error::InvalidConfig(format!(
                "outcomes ({}), treatments ({}) and covariate rows ({}) must have equal length",
                n,
                treatments.len(),
                rows.len()
            )));
        }
        let p = rows[0].len();
        let names = match names {
            Some(v) => {
                if v.len() != p {
                    return Err(Error::InvalidConfig(format!(
                        "{} covariate names given for {} columns",
                        v.len(),
                        p
                    )));
                }
                v
            }
            None => (1..=p).map(|j| format!("x{j}")).collect(),
        };
        let mut flat = Vec::with_capacity(n * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::MissingValue {
                        row: i + 1,
                        col: names[j].clone(),
                    });
                }
                flat.push(v);
            }
        }
        for (i, &y) in outcomes.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::MissingValue {
                    row: i + 1,
                    col: "outcome".to_string(),
                });
            }
            if treatments[i] > 1 {
                return Err(Error::InvalidTreatmentValue { row: i + 1 });
            }
        }
        for arm in [0u8, 1u8] {
            if !treatments.iter().any(|&a| a == arm) {
                return Err(Error::MissingArm { arm });
            }
        }
        let kinds = derive_kinds(&flat, n, p);
        Ok(Dataset {
            outcomes,
            treatments,
            covariates: Arc::new(flat),
            p,
            covariate_names: names,
            covariate_kinds: kinds,
        })
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn treatments(&self) -> &[u8] {
        &self.treatments
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_kinds(&self) -> &[CovariateKind] {
        &self.covariate_kinds
    }

    pub fn covariate_column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.covariates[i * self.p + j]).collect()
    }

    /// Row indices belonging to the given arm, in dataset order.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        self.treatments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == arm)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copies the selected rows into a new dataset, preserving order.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut outcomes = Vec::with_capacity(rows.len());
        let mut treatments = Vec::with_capacity(rows.len());
        let mut flat = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            outcomes.push(self.outcomes[i]);
            treatments.push(self.treatments[i]);
            flat.extend_from_slice(self.covariate_row(i));
        }
        for arm in [0u8, 1u8] {
            if !treatments.iter().any(|&a| a == arm) {
                return Err(Error::MissingArm { arm });
            }
        }
        let kinds = self.covariate_kinds.clone();
        Ok(Dataset {
            outcomes,
            treatments,
            covariates: Arc::new(flat),
            p: self.p,
            covariate_names: self.covariate_names.clone(),
            covariate_kinds: kinds,
        })
    }

    pub(crate) fn covariates_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.covariates)
    }
}

impl CovariateDataset {
    /// Wraps an arbitrary response over the covariates of `d`.
    ///
    /// `rows` selects and orders the units; `tau` is carried along purely as
    /// bookkeeping (zero when the response is not a shifted outcome).
    pub fn from_response(d: &Dataset, rows: &[usize], response: &[f64], tau: f64) -> Self {
        debug_assert_eq!(rows.len(), response.len());
        let p = d.p();
        let mut flat = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            flat.extend_from_slice(d.covariate_row(i));
        }
        CovariateDataset {
            outcomes: response.to_vec(),
            covariates: Arc::new(flat),
            p,
            tau,
        }
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl ModifiedDataset {
    pub fn n(&self) -> usize {
        self.modified_outcomes.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn modified_outcomes(&self) -> &[f64] {
        &self.modified_outcomes
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    pub fn covariate_row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    /// Copies the selected rows into a new modified-outcome view.
    pub fn subset(&self, rows: &[usize]) -> ModifiedDataset {
        let mut w = Vec::with_capacity(rows.len());
        let mut props = Vec::with_capacity(rows.len());
        let mut flat = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            w.push(self.modified_outcomes[i]);
            props.push(self.propensities[i]);
            flat.extend_from_slice(self.covariate_row(i));
        }
        ModifiedDataset {
            modified_outcomes: w,
            covariates: Arc::new(flat),
            p: self.p,
            propensities: props,
        }
    }

    /// Regression view of the modified outcomes over the covariates.
    pub fn as_covariate_dataset(&self) -> CovariateDataset {
        CovariateDataset {
            outcomes: self.modified_outcomes.clone(),
            covariates: Arc::clone(&self.covariates),
            p: self.p,
            tau: 0.0,
        }
    }
}

/// Subtracts `tau` from every treated outcome, leaving controls untouched.
///
/// The returned view drops the treatment column; a learner fit on it sees
/// only covariates.
pub fn shift_outcomes(d: &Dataset, tau: f64) -> CovariateDataset {
    let outcomes = d
        .outcomes()
        .iter()
        .zip(d.treatments())
        .map(|(&y, &a)| if a == 1 { y - tau } else { y })
        .collect();
    CovariateDataset {
        outcomes,
        covariates: d.covariates_arc(),
        p: d.p(),
        tau,
    }
}

/// Builds the modified-outcome transformation `W` of the dataset.
///
/// `W_i = Y_i / p_i` for treated rows and `-Y_i / (1 - p_i)` for controls.
/// Every propensity must lie strictly between 0 and 1.
pub fn compute_modified_outcomes(d: &Dataset, propensity: Propensity) -> Result<ModifiedDataset> {
    let n = d.n();
    let props: Vec<f64> = match propensity {
        Propensity::Scalar(s) => vec![s; n],
        Propensity::PerRow(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            v.to_vec()
        }
    };
    for (i, &p) in props.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidPropensity { row: i + 1 });
        }
    }
    let w = d
        .outcomes()
        .iter()
        .zip(d.treatments())
        .zip(&props)
        .map(|((&y, &a), &p)| if a == 1 { y / p } else { -y / (1.0 - p) })
        .collect();
    Ok(ModifiedDataset {
        modified_outcomes: w,
        covariates: d.covariates_arc(),
        p: d.p(),
        propensities: props,
    })
}

/// A partition of row indices into `k` folds, stratified by treatment arm.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    assignment: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    /// Rows belonging to fold `j`, ascending.
    pub fn fold_indices(&self, j: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == j)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows outside fold `j`, ascending.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != j)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows outside both folds, ascending.
    pub fn complement2(&self, j1: usize, j2: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != j1 && f != j2)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Randomly assigns rows to `k` folds, stratified so each fold draws a
/// near-equal share of each treatment arm.
///
/// Within an arm, fold sizes differ by at most one. Requires at least `k`
/// rows per arm, so every fold receives at least one row from each arm.
pub fn split_folds(d: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut assignment = vec![usize::MAX; d.n()];
    for arm in [1u8, 0u8] {
        let mut idx = d.arm_indices(arm);
        if idx.len() < k {
            return Err(Error::TooFewRowsPerArm {
                arm,
                have: idx.len(),
                need: k,
            });
        }
        idx.shuffle(&mut rng);
        let base = idx.len() / k;
        let extras = idx.len() % k;
        let mut cursor = 0;
        for fold in 0..k {
            let take = base + usize::from(fold < extras);
            for &i in &idx[cursor..cursor + take] {
                assignment[i] = fold;
            }
            cursor += take;
        }
    }
    Ok(FoldAssignment { assignment, k })
}

/// Reads a dataset from an RFC 4180 CSV file with a header row.
///
/// All columns other than the outcome, treatment, and optional propensity
/// column become covariates, in header order. Returns the propensity column
/// separately when one is named.
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    outcome_col: &str,
    treatment_col: &str,
    propensity_col: Option<&str>,
) -> Result<(Dataset, Option<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_idx = find(outcome_col)?;
    let a_idx = find(treatment_col)?;
    let p_idx = propensity_col.map(find).transpose()?;

    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != y_idx && j != a_idx && Some(j) != p_idx)
        .collect();
    let names: Vec<String> = covariate_cols.iter().map(|&j| headers[j].clone()).collect();

    let parse_cell = |row: usize, col: &str, raw: &str| -> Result<f64> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(Error::MissingValue {
                row,
                col: col.to_string(),
            });
        }
        match trimmed.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::NonNumericCell {
                row,
                col: col.to_string(),
                value: trimmed.to_string(),
            }),
        }
    };

    let mut outcomes = Vec::new();
    let mut treatments = Vec::new();
    let mut rows = Vec::new();
    let mut propensities = p_idx.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let y = parse_cell(row, &headers[y_idx], record.get(y_idx).unwrap_or(""))?;
        let a = parse_cell(row, &headers[a_idx], record.get(a_idx).unwrap_or(""))?;
        let a = if a == 0.0 {
            0u8
        } else if a == 1.0 {
            1u8
        } else {
            return Err(Error::InvalidTreatmentValue { row });
        };
        if let (Some(j), Some(store)) = (p_idx, propensities.as_mut()) {
            let p = parse_cell(row, &headers[j], record.get(j).unwrap_or(""))?;
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidPropensity { row });
            }
            store.push(p);
        }
        let mut x = Vec::with_capacity(covariate_cols.len());
        for (&j, name) in covariate_cols.iter().zip(&names) {
            x.push(parse_cell(row, name, record.get(j).unwrap_or(""))?);
        }
        outcomes.push(y);
        treatments.push(a);
        rows.push(x);
    }
    let d = Dataset::new(outcomes, treatments, rows, Some(names))?;
    Ok((d, propensities))
}

/// Writes the dataset as CSV with columns `y, a, <covariates...>` and an
/// optional trailing propensity column.
pub fn write_csv<P: AsRef<Path>>(
    d: &Dataset,
    propensities: Option<&[f64]>,
    path: P,
) -> Result<()> {
    let mut out = String::new();
    out.push_str("y,a");
    for name in d.covariate_names() {
        let _ = write!(out, ",{name}");
    }
    if propensities.is_some() {
        out.push_str(",propensity");
    }
    out.push('\n');
    for i in 0..d.n() {
        let _ = write!(out, "{},{}", d.outcomes()[i], d.treatments()[i]);
        for &v in d.covariate_row(i) {
            let _ = write!(out, ",{v}");
        }
        if let Some(props) = propensities {
            let _ = write!(out, ",{}", props[i]);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

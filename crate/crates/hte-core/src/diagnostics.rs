//! Partial-dependence curves for fitted models and resampled h-value
//! distributions, the raw material for the usual presentation plots.

use std::io::Write;

use rayon::prelude::*;

use crate::data::{CovariateKind, Dataset};
use crate::error::{Error, Result};
use crate::learners::{LearnerSpec, OutcomeModel};
use crate::ncv::{run_evaluation, NcvConfig};
use crate::seeds::child_seed;

/// Equally spaced grid for covariate `k`: `points` values between the 2nd
/// and 98th percentile for a continuous covariate, `{0, 1}` for a binary
/// one.
pub fn default_grid(d: &Dataset, k: usize, points: usize) -> Result<Vec<f64>> {
    if k >= d.p() {
        return Err(Error::DimensionMismatch {
            expected: d.p(),
            got: k,
        });
    }
    if points < 2 {
        return Err(Error::InvalidConfig("grid needs at least 2 points".into()));
    }
    if d.covariate_kinds()[k] == CovariateKind::Binary {
        return Ok(vec![0.0, 1.0]);
    }
    let mut col = d.covariate_column(k);
    col.sort_by(|a, b| a.partial_cmp(b).expect("finite covariates"));
    let lo = percentile(&col, 0.02);
    let hi = percentile(&col, 0.98);
    if lo == hi {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| lo + step * i as f64).collect())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lower = h.floor() as usize;
    let upper = h.ceil() as usize;
    let frac = h - lower as f64;
    sorted[lower] + frac * (sorted[upper] - sorted[lower])
}

/// The partial-dependence curve of `model` for covariate `k` in arm `a`:
/// at each grid value `u`, the sample-average prediction with that
/// coordinate pinned to `u`. Passing no grid uses [`default_grid`] with 25
/// points.
pub fn partial_dependence(
    model: &dyn OutcomeModel,
    d: &Dataset,
    k: usize,
    grid: Option<&[f64]>,
    a: u8,
) -> Result<Vec<(f64, f64)>> {
    if k >= d.p() {
        return Err(Error::DimensionMismatch {
            expected: d.p(),
            got: k,
        });
    }
    if a > 1 {
        return Err(Error::InvalidConfig(format!(
            "treatment arm must be 0 or 1, got {a}"
        )));
    }
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = default_grid(d, k, 25)?;
            &owned
        }
    };
    let n = d.n();
    Ok(grid
        .par_iter()
        .map(|&u| {
            let mut scratch = vec![0.0; d.p()];
            let mut sum = 0.0;
            for i in 0..n {
                scratch.copy_from_slice(d.covariate_row(i));
                scratch[k] = u;
                sum += model.predict(a, &scratch);
            }
            (u, sum / n as f64)
        })
        .collect())
}

/// Writes a curve as CSV with columns `u,rho`.
pub fn write_pdp_csv<W: Write>(mut w: W, curve: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "u,rho")?;
    for (u, rho) in curve {
        writeln!(w, "{u},{rho}")?;
    }
    Ok(())
}

/// Repeats the full evaluation `draws` times, the i-th run seeded with
/// `child(cfg.seed, i)`, and returns the one-sided h-values.
pub fn h_value_distribution(
    spec: &LearnerSpec,
    d: &Dataset,
    propensities: Option<&[f64]>,
    cfg: &NcvConfig,
    draws: usize,
) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::InvalidConfig("draws must be at least 1".into()));
    }
    let outcomes: Vec<Result<f64>> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut cfg_i = cfg.clone();
            cfg_i.seed = child_seed(cfg.seed, i as u64);
            Ok(run_evaluation(spec, d, propensities, &cfg_i)?.h_one_sided)
        })
        .collect();
    outcomes.into_iter().collect()
}

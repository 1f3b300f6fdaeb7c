//! Linear-family internals: pivoted-QR least squares, standardized ridge and
//! lasso solvers, and the inner cross-validation penalty search.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::seeds::rng_from_seed;
use rand::seq::SliceRandom;

use super::Family;

const COLLINEARITY_RTOL: f64 = 1e-10;
const SD_FLOOR: f64 = 1e-12;
const CD_TOL: f64 = 1e-7;
const CD_MAX_SWEEPS: usize = 100_000;

#[derive(Clone, Debug)]
pub(crate) struct LinearModel {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PenaltyKind {
    Ridge,
    Lasso,
}

impl PenaltyKind {
    pub(crate) fn from_family(f: Family) -> PenaltyKind {
        match f {
            Family::Ridge => PenaltyKind::Ridge,
            Family::Lasso => PenaltyKind::Lasso,
            _ => unreachable!("penalty kind requested for non-penalized family"),
        }
    }
}

pub(crate) struct OlsFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub dropped: Vec<usize>,
}

/// Least squares with an implicit leading intercept column.
///
/// Exactly collinear columns are dropped (coefficient zero) rather than
/// failing; `dropped` reports their indices in the slope vector.
pub(crate) fn ols_with_intercept(cols: Vec<Vec<f64>>, y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    let mut design = Vec::with_capacity(cols.len() + 1);
    design.push(vec![1.0; n]);
    design.extend(cols);
    let (coefs, dropped) = pivoted_qr_solve(design, y)?;
    let slopes = coefs[1..].to_vec();
    let dropped: Vec<usize> = dropped
        .into_iter()
        .filter(|&j| j > 0)
        .map(|j| j - 1)
        .collect();
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} exactly collinear design column(s): {:?}",
            dropped.len(),
            dropped
        );
    }
    Ok(OlsFit {
        intercept: coefs[0],
        slopes,
        dropped,
    })
}

/// Householder QR with column pivoting, solving min ||X b - y|| and zeroing
/// coefficients of columns whose pivoted norm falls below the collinearity
/// tolerance.
fn pivoted_qr_solve(mut cols: Vec<Vec<f64>>, y: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
    let n = y.len();
    let m = cols.len();
    let steps = m.min(n);
    let mut piv: Vec<usize> = (0..m).collect();
    let mut yv = y.to_vec();
    let mut rdiag = vec![0.0f64; steps];
    let mut rank = steps;
    let mut first_pivot_norm = 0.0f64;

    for k in 0..steps {
        let mut best_j = k;
        let mut best_norm2 = 0.0f64;
        for j in k..m {
            let norm2: f64 = cols[j][k..].iter().map(|v| v * v).sum();
            if norm2 > best_norm2 {
                best_norm2 = norm2;
                best_j = j;
            }
        }
        let best_norm = best_norm2.sqrt();
        if k == 0 {
            first_pivot_norm = best_norm;
            if first_pivot_norm == 0.0 {
                return Err(Error::SingularDesign);
            }
        }
        if best_norm <= COLLINEARITY_RTOL * first_pivot_norm {
            rank = k;
            break;
        }
        cols.swap(k, best_j);
        piv.swap(k, best_j);

        let alpha = if cols[k][k] >= 0.0 { -best_norm } else { best_norm };
        rdiag[k] = alpha;
        cols[k][k] -= alpha;
        let vnorm2: f64 = cols[k][k..].iter().map(|v| v * v).sum();
        if vnorm2 == 0.0 {
            rank = k;
            break;
        }
        for j in k + 1..m {
            let dot: f64 = cols[k][k..]
                .iter()
                .zip(&cols[j][k..])
                .map(|(v, w)| v * w)
                .sum();
            let scale = 2.0 * dot / vnorm2;
            for i in k..n {
                cols[j][i] -= scale * cols[k][i];
            }
        }
        let dot: f64 = cols[k][k..].iter().zip(&yv[k..]).map(|(v, w)| v * w).sum();
        let scale = 2.0 * dot / vnorm2;
        for i in k..n {
            yv[i] -= scale * cols[k][i];
        }
    }

    if rank == 0 {
        return Err(Error::SingularDesign);
    }

    let mut z = vec![0.0f64; rank];
    for i in (0..rank).rev() {
        let mut acc = yv[i];
        for j in i + 1..rank {
            acc -= cols[j][i] * z[j];
        }
        z[i] = acc / rdiag[i];
    }

    let mut coefs = vec![0.0f64; m];
    for (k, &zk) in z.iter().enumerate() {
        coefs[piv[k]] = zk;
    }
    let dropped = piv[rank..].to_vec();
    Ok((coefs, dropped))
}

pub(crate) struct Standardized {
    pub cols: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub active: Vec<bool>,
    pub y_mean: f64,
    pub yc: Vec<f64>,
}

/// Centers and scales each column to unit population variance; constant
/// columns are deactivated. The response is centered, which absorbs the
/// unpenalized intercept.
pub(crate) fn standardize(cols: &[Vec<f64>], y: &[f64]) -> Standardized {
    let n = y.len() as f64;
    let mut out_cols = Vec::with_capacity(cols.len());
    let mut means = Vec::with_capacity(cols.len());
    let mut sds = Vec::with_capacity(cols.len());
    let mut active = Vec::with_capacity(cols.len());
    for col in cols {
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > SD_FLOOR {
            out_cols.push(col.iter().map(|&v| (v - mean) / sd).collect());
            active.push(true);
        } else {
            out_cols.push(vec![0.0; y.len()]);
            active.push(false);
        }
        means.push(mean);
        sds.push(sd);
    }
    let y_mean = y.iter().sum::<f64>() / n;
    let yc = y.iter().map(|&v| v - y_mean).collect();
    Standardized {
        cols: out_cols,
        means,
        sds,
        active,
        y_mean,
        yc,
    }
}

/// Smallest penalty that zeroes every lasso coefficient on the standardized
/// design. Falls back to 1 when the response is orthogonal to all columns.
pub(crate) fn lambda_max(s: &Standardized) -> f64 {
    let n = s.yc.len() as f64;
    let mut best = 0.0f64;
    for (col, &act) in s.cols.iter().zip(&s.active) {
        if !act {
            continue;
        }
        let dot: f64 = col.iter().zip(&s.yc).map(|(a, b)| a * b).sum();
        best = best.max((dot / n).abs());
    }
    if best > 0.0 {
        best
    } else {
        1.0
    }
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for the lasso objective
/// `(1/2n) ||y - X b||^2 + lambda ||b||_1` on a standardized design.
///
/// `beta` supplies the warm start and receives the solution. Returns the
/// sweep count; errs after the sweep cap without meeting the per-coordinate
/// stopping rule.
pub(crate) fn lasso_cd(
    cols: &[Vec<f64>],
    active: &[bool],
    yc: &[f64],
    lambda: f64,
    beta: &mut [f64],
    mut on_sweep: Option<&mut dyn FnMut(&[f64])>,
) -> Result<u32> {
    let n = yc.len();
    let nf = n as f64;
    let mut residual = yc.to_vec();
    for (j, col) in cols.iter().enumerate() {
        if beta[j] != 0.0 {
            for i in 0..n {
                residual[i] -= beta[j] * col[i];
            }
        }
    }
    let denom: Vec<f64> = cols
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>() / nf)
        .collect();

    for sweep in 1..=CD_MAX_SWEEPS {
        let mut converged = true;
        for (j, col) in cols.iter().enumerate() {
            if !active[j] {
                continue;
            }
            let old = beta[j];
            let partial: f64 = col.iter().zip(&residual).map(|(a, b)| a * b).sum::<f64>() / nf
                + denom[j] * old;
            let new = soft_threshold(partial, lambda) / denom[j];
            let delta = new - old;
            if delta != 0.0 {
                for i in 0..n {
                    residual[i] -= delta * col[i];
                }
                beta[j] = new;
            }
            if delta.abs() >= CD_TOL * (1.0 + new.abs()) {
                converged = false;
            }
        }
        if let Some(cb) = on_sweep.as_deref_mut() {
            cb(beta);
        }
        if converged {
            return Ok(sweep as u32);
        }
    }
    Err(Error::NonConvergence {
        iterations: CD_MAX_SWEEPS,
    })
}

/// Lasso objective value on the standardized design, for diagnostics.
#[allow(dead_code)]
pub(crate) fn lasso_objective(
    cols: &[Vec<f64>],
    yc: &[f64],
    lambda: f64,
    beta: &[f64],
) -> f64 {
    let n = yc.len();
    let mut rss = 0.0;
    for i in 0..n {
        let mut fit = 0.0;
        for (j, col) in cols.iter().enumerate() {
            fit += beta[j] * col[i];
        }
        let r = yc[i] - fit;
        rss += r * r;
    }
    rss / (2.0 * n as f64) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Closed-form ridge solve `(X'X/n + lambda I) b = X'y/n` on a standardized
/// design. Inactive columns keep coefficient zero automatically.
pub(crate) fn ridge_closed_form(
    cols: &[Vec<f64>],
    yc: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    let m = cols.len();
    let nf = yc.len() as f64;
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for k in j..m {
            let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
            gram[(j, k)] = dot / nf;
            gram[(k, j)] = dot / nf;
        }
    }
    for j in 0..m {
        gram[(j, j)] += lambda;
    }
    let rhs = DVector::from_iterator(
        m,
        cols.iter()
            .map(|col| col.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / nf),
    );
    let chol = Cholesky::new(gram).ok_or(Error::SingularDesign)?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

pub(crate) struct PenalizedFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub sweeps: Option<u32>,
}

/// Fits ridge or lasso at an absolute penalty on the raw design, returning
/// coefficients on the original scale.
pub(crate) fn fit_penalized(
    kind: PenaltyKind,
    cols: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
) -> Result<PenalizedFit> {
    let s = standardize(cols, y);
    let mut beta = vec![0.0f64; cols.len()];
    let sweeps = match kind {
        PenaltyKind::Lasso => Some(lasso_cd(&s.cols, &s.active, &s.yc, lambda, &mut beta, None)?),
        PenaltyKind::Ridge => {
            beta = ridge_closed_form(&s.cols, &s.yc, lambda)?;
            None
        }
    };
    let (intercept, slopes) = destandardize(&beta, &s);
    Ok(PenalizedFit {
        intercept,
        slopes,
        sweeps,
    })
}

fn destandardize(beta_std: &[f64], s: &Standardized) -> (f64, Vec<f64>) {
    let mut slopes = vec![0.0f64; beta_std.len()];
    let mut intercept = s.y_mean;
    for j in 0..beta_std.len() {
        if s.active[j] {
            slopes[j] = beta_std[j] / s.sds[j];
            intercept -= slopes[j] * s.means[j];
        }
    }
    (intercept, slopes)
}

/// Selects an absolute penalty by inner cross-validation.
///
/// The grid entries are multipliers of `lambda_max` computed on the full
/// training design. Each fold standardizes on its own training part, fits
/// the path from largest to smallest penalty with warm starts, and scores
/// held-out squared error; the winner is the smallest mean error, with ties
/// going to the larger penalty.
pub(crate) fn tune_penalty(
    kind: PenaltyKind,
    cols: &[Vec<f64>],
    y: &[f64],
    folds: usize,
    grid: &[f64],
    tuning_seed: u64,
) -> Result<f64> {
    let n = y.len();
    if folds < 2 || n < 2 * folds {
        return Err(Error::InvalidConfig(format!(
            "inner_cv with {folds} folds needs at least {} rows, got {n}",
            2 * folds
        )));
    }
    let mut fractions: Vec<f64> = grid.to_vec();
    fractions.sort_by(|a, b| b.partial_cmp(a).expect("finite grid"));

    let lmax = lambda_max(&standardize(cols, y));
    let lambdas: Vec<f64> = fractions.iter().map(|f| f * lmax).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(tuning_seed));
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }

    let mut sse = vec![0.0f64; lambdas.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let val: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let tr_cols: Vec<Vec<f64>> = cols
            .iter()
            .map(|col| train.iter().map(|&i| col[i]).collect())
            .collect();
        let tr_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let s = standardize(&tr_cols, &tr_y);

        let mut beta = vec![0.0f64; cols.len()];
        for (t, &lambda) in lambdas.iter().enumerate() {
            match kind {
                PenaltyKind::Lasso => {
                    lasso_cd(&s.cols, &s.active, &s.yc, lambda, &mut beta, None)?;
                }
                PenaltyKind::Ridge => {
                    beta = ridge_closed_form(&s.cols, &s.yc, lambda)?;
                }
            }
            for &i in &val {
                let mut pred = s.y_mean;
                for j in 0..cols.len() {
                    if s.active[j] && beta[j] != 0.0 {
                        pred += beta[j] * (cols[j][i] - s.means[j]) / s.sds[j];
                    }
                }
                let r = y[i] - pred;
                sse[t] += r * r;
            }
        }
    }

    let mut best = 0usize;
    for t in 1..lambdas.len() {
        if sse[t] < sse[best] {
            best = t;
        }
    }
    Ok(lambdas[best])
}

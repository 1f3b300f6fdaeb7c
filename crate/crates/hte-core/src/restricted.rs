//! The constant-effect counterpart of an unrestricted outcome model.
//!
//! For a candidate effect `tau`, the treated outcomes are shifted down by
//! `tau` and a covariate-only baseline is fit to the shifted data. The
//! restricted model adds `tau * a` back at prediction time, so its treatment
//! effect is constant in `x` by construction. `tau_star` minimizes the
//! in-sample squared error of this procedure over `tau`.
//!
//! The minimizer is found by a bracketed scan: a coarse grid centered on the
//! difference-in-means estimate, golden-section refinement inside the best
//! grid cell, and a final parabolic polish which is exact when the profile is
//! quadratic (all linear-in-parameters families).

use std::io::Write;

use crate::data::{shift_outcomes, Dataset, ModifiedDataset};
use crate::error::{Error, Result};
use crate::learners::{fit_baseline, FittedModel, LearnerSpec, OutcomeModel};

/// Controls for the one-dimensional `tau` search.
#[derive(Clone, Debug)]
pub struct OptimizerOptions {
    /// Bracket center; defaults to the difference of arm means.
    pub center: Option<f64>,
    /// Bracket half-width in pooled outcome standard deviations.
    pub width_sds: f64,
    /// Points in the coarse scan.
    pub grid_points: usize,
    /// Golden-section absolute tolerance, as a multiple of the pooled sd.
    pub tol_factor: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            center: None,
            width_sds: 3.0,
            grid_points: 41,
            tol_factor: 1e-5,
        }
    }
}

/// Result of the `tau` search: the minimizer, its SSE, and every profile
/// evaluation in order.
#[derive(Clone, Debug)]
pub struct TauSearch {
    pub tau_star: f64,
    pub sse: f64,
    pub trace: Vec<(f64, f64)>,
}

/// Unrestricted model's constant-effect counterpart: a covariate-only
/// baseline fit at the optimal shift, plus `tau_star` on the treated arm.
#[derive(Clone, Debug)]
pub struct RestrictedModel {
    baseline: FittedModel,
    tau_star: f64,
    sse_at_tau_star: f64,
    trace: Vec<(f64, f64)>,
}

impl RestrictedModel {
    pub fn tau_star(&self) -> f64 {
        self.tau_star
    }

    /// The model's treatment effect function. Constant by construction, so
    /// this is exactly `tau_star` for every covariate value.
    pub fn ite_gap(&self) -> f64 {
        self.tau_star
    }

    pub fn baseline(&self) -> &FittedModel {
        &self.baseline
    }

    pub fn sse_at_tau_star(&self) -> f64 {
        self.sse_at_tau_star
    }

    /// Profile evaluations `(tau, sse)` recorded during the search.
    pub fn trace(&self) -> &[(f64, f64)] {
        &self.trace
    }

    pub fn predict(&self, a: u8, x: &[f64]) -> Result<f64> {
        let base = self.baseline.predict_outcome(a, x)?;
        Ok(base + self.tau_star * f64::from(a))
    }

    /// Writes the optimizer trace as a two-column CSV.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau,sse")?;
        for (tau, sse) in &self.trace {
            writeln!(w, "{tau},{sse}")?;
        }
        Ok(())
    }
}

impl OutcomeModel for RestrictedModel {
    fn predict(&self, a: u8, x: &[f64]) -> f64 {
        self.baseline.raw_predict(0, x) + self.tau_star * f64::from(a)
    }
}

/// In-sample squared error of the shift-and-refit procedure at a fixed `tau`.
pub fn restricted_sse(spec: &LearnerSpec, d: &Dataset, tau: f64) -> Result<f64> {
    let shifted = shift_outcomes(d, tau);
    let baseline = fit_baseline(spec, &shifted)?;
    let mut sse = 0.0;
    for i in 0..shifted.n() {
        let r = shifted.outcomes()[i] - baseline.raw_predict(0, shifted.covariate_row(i));
        sse += r * r;
    }
    Ok(sse)
}

fn difference_in_means(d: &Dataset) -> f64 {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (&y, &a) in d.outcomes().iter().zip(d.treatments()) {
        sums[a as usize] += y;
        counts[a as usize] += 1;
    }
    sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64
}

/// Pooled within-arm standard deviation, falling back to the overall sample
/// standard deviation when an arm is a singleton.
fn pooled_sd(d: &Dataset) -> f64 {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (&y, &a) in d.outcomes().iter().zip(d.treatments()) {
        sums[a as usize] += y;
        counts[a as usize] += 1;
    }
    let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];
    let mut ss = 0.0;
    for (&y, &a) in d.outcomes().iter().zip(d.treatments()) {
        let r = y - means[a as usize];
        ss += r * r;
    }
    let n = d.n();
    if n > 2 {
        (ss / (n - 2) as f64).sqrt()
    } else {
        let mean = d.outcomes().iter().sum::<f64>() / n as f64;
        let total: f64 = d.outcomes().iter().map(|&y| (y - mean) * (y - mean)).sum();
        if n > 1 {
            (total / (n - 1) as f64).sqrt()
        } else {
            0.0
        }
    }
}

/// One-dimensional minimization of the restricted SSE profile.
///
/// Scans `grid_points` values across `center +/- width_sds * s`, refines the
/// best cell by golden section to `tol_factor * s`, then polishes with one
/// parabolic-vertex step. Hitting a bracket edge widens the bracket once
/// (doubled width) before failing with `OptimizerBoundaryHit`.
pub fn estimate_tau_star(
    spec: &LearnerSpec,
    d: &Dataset,
    opts: &OptimizerOptions,
) -> Result<TauSearch> {
    if opts.grid_points < 5 {
        return Err(Error::InvalidConfig(
            "tau search needs at least 5 grid points".into(),
        ));
    }
    let center = opts.center.unwrap_or_else(|| difference_in_means(d));
    let s = pooled_sd(d);
    let mut trace: Vec<(f64, f64)> = Vec::new();

    if s == 0.0 {
        // Outcomes are constant within arms; the difference in means shifts
        // the data onto a single constant, which no learner can improve on.
        let sse = restricted_sse(spec, d, center)?;
        trace.push((center, sse));
        return Ok(TauSearch {
            tau_star: center,
            sse,
            trace,
        });
    }

    let mut width = opts.width_sds * s;
    let mut widened = false;
    loop {
        let lo = center - width;
        let hi = center + width;
        let g = opts.grid_points;
        let step = (hi - lo) / (g - 1) as f64;
        let mut best_i = 0usize;
        let mut best_f = f64::INFINITY;
        let mut grid = Vec::with_capacity(g);
        for i in 0..g {
            let tau = lo + step * i as f64;
            let sse = restricted_sse(spec, d, tau)?;
            trace.push((tau, sse));
            grid.push((tau, sse));
            if sse < best_f {
                best_f = sse;
                best_i = i;
            }
        }
        if best_i == 0 || best_i == g - 1 {
            if widened {
                return Err(Error::OptimizerBoundaryHit {
                    tau: grid[best_i].0,
                });
            }
            widened = true;
            width *= 2.0;
            continue;
        }

        let tol = (opts.tol_factor * s).max(f64::EPSILON * (1.0 + center.abs()));
        let (a, fa) = grid[best_i - 1];
        let (b, fb) = grid[best_i + 1];
        let search = golden_section(
            |tau| {
                let sse = restricted_sse(spec, d, tau)?;
                trace.push((tau, sse));
                Ok(sse)
            },
            a,
            fa,
            b,
            fb,
            tol,
        )?;
        let (x0, f0, xm, fm, x2, f2) = search;

        let (mut tau_star, mut sse) = (xm, fm);
        if let Some(v) = parabola_vertex(x0, f0, xm, fm, x2, f2) {
            if v > x0 && v < x2 && v.is_finite() {
                let fv = restricted_sse(spec, d, v)?;
                trace.push((v, fv));
                if fv <= sse {
                    tau_star = v;
                    sse = fv;
                }
            }
        }
        return Ok(TauSearch {
            tau_star,
            sse,
            trace,
        });
    }
}

/// Golden-section minimization on `[a, b]` with known endpoint values.
/// Returns the terminal triple `(lo, f_lo, best, f_best, hi, f_hi)`.
fn golden_section<F>(
    mut f: F,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    tol: f64,
) -> Result<(f64, f64, f64, f64, f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV: f64 = 0.381_966_011_250_105_2;
    let mut x1 = a + INV * (b - a);
    let mut x2 = b - INV * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while (b - a) > tol {
        if f1 <= f2 {
            b = x2;
            fb = f2;
            x2 = x1;
            f2 = f1;
            x1 = a + INV * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            fa = f1;
            x1 = x2;
            f1 = f2;
            x2 = b - INV * (b - a);
            f2 = f(x2)?;
        }
    }
    if f1 <= f2 {
        Ok((a, fa, x1, f1, x2, f2))
    } else {
        Ok((x1, f1, x2, f2, b, fb))
    }
}

/// Vertex of the parabola through three points, `None` when degenerate.
fn parabola_vertex(x0: f64, f0: f64, x1: f64, f1: f64, x2: f64, f2: f64) -> Option<f64> {
    let d01 = (x1 - x0) * (f1 - f2);
    let d21 = (x1 - x2) * (f1 - f0);
    let denom = d01 - d21;
    if denom == 0.0 {
        return None;
    }
    let num = (x1 - x0) * d01 - (x1 - x2) * d21;
    Some(x1 - 0.5 * num / denom)
}

/// Fits the restricted model with default optimizer settings.
pub fn fit_restricted(spec: &LearnerSpec, d: &Dataset) -> Result<RestrictedModel> {
    fit_restricted_with(spec, d, &OptimizerOptions::default())
}

/// Fits the restricted model: finds `tau_star`, then refits the baseline on
/// the data shifted by it.
pub fn fit_restricted_with(
    spec: &LearnerSpec,
    d: &Dataset,
    opts: &OptimizerOptions,
) -> Result<RestrictedModel> {
    let search = estimate_tau_star(spec, d, opts)?;
    let shifted = shift_outcomes(d, search.tau_star);
    let baseline = fit_baseline(spec, &shifted)?;
    let mut sse = 0.0;
    for i in 0..shifted.n() {
        let r = shifted.outcomes()[i] - baseline.raw_predict(0, shifted.covariate_row(i));
        sse += r * r;
    }
    Ok(RestrictedModel {
        baseline,
        tau_star: search.tau_star,
        sse_at_tau_star: sse,
        trace: search.trace,
    })
}

/// Closed-form `tau_star` for the least-squares family with one covariate.
///
/// Equals the main-effect coefficient of the treatment in the regression of
/// the outcome on an intercept, the covariate, and the treatment.
pub fn closed_form_tau_linear_scalar(d: &Dataset) -> Result<f64> {
    if d.p() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: d.p(),
        });
    }
    let n = d.n() as f64;
    let mut mx = 0.0;
    let mut ma = 0.0;
    let mut my = 0.0;
    let mut mxx = 0.0;
    let mut max_ = 0.0;
    let mut may = 0.0;
    let mut mxy = 0.0;
    for i in 0..d.n() {
        let x = d.covariate_row(i)[0];
        let a = f64::from(d.treatments()[i]);
        let y = d.outcomes()[i];
        mx += x;
        ma += a;
        my += y;
        mxx += x * x;
        max_ += a * x;
        may += a * y;
        mxy += x * y;
    }
    mx /= n;
    ma /= n;
    my /= n;
    mxx /= n;
    max_ /= n;
    may /= n;
    mxy /= n;

    let s_x = mxx - mx * mx;
    if !(s_x > 0.0) {
        return Err(Error::DegenerateDesign);
    }
    let c_aa = (ma - ma * ma) / s_x;
    let c_xa = (max_ - ma * mx) / s_x;
    let c_ay = (may - ma * my) / s_x;
    let c_xy = (mxy - my * mx) / s_x;
    let denom = c_aa - c_xa * c_xa;
    if denom.abs() < 1e-12 {
        return Err(Error::DegenerateDesign);
    }
    Ok((c_ay - c_xa * c_xy) / denom)
}

/// The restricted effect under the modified-outcome loss: the sample mean of
/// the modified outcomes.
pub fn restricted_tau_mo(m: &ModifiedDataset) -> f64 {
    m.modified_outcomes().iter().sum::<f64>() / m.n() as f64
}

//! Synthetic trial generators with known ground truth, a Monte Carlo oracle
//! for the predictive estimands, and the coverage-study harness.
//!
//! The generators expose the true baseline and effect functions so a study
//! can score each replication's interval against the estimand it targets:
//! the expected held-out loss difference conditional on that replication's
//! trained models, approximated by fresh draws from the same law.

use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::losses::{diff_sq_loss, modified_diff_sq_loss, PairedModels};
use crate::ncv::{run_evaluation, train_pair, NcvConfig};
use crate::seeds::{child_seed, rng_from_seed};

fn default_noise_sd() -> f64 {
    1.0
}

/// Which synthetic design to draw from.
///
/// The linear designs share one regression with two covariates; the
/// nonlinear designs combine a baseline function `mu_id` in 1..=3 with an
/// effect function `theta_id` in 1..=4 over nine covariates, alternating
/// binary (odd positions) and standard normal (even positions).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    LinearA,
    LinearB,
    Nonlinear { mu_id: u8, theta_id: u8 },
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<GeneratorKind> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "linear_a" => return Ok(GeneratorKind::LinearA),
            "linear_b" => return Ok(GeneratorKind::LinearB),
            _ => {}
        }
        if let Some(rest) = lower.strip_prefix("mu") {
            if let Some((m, t)) = rest.split_once("_theta") {
                if let (Ok(mu_id), Ok(theta_id)) = (m.parse(), t.parse()) {
                    let kind = GeneratorKind::Nonlinear { mu_id, theta_id };
                    GeneratorSpec {
                        kind,
                        n: 1,
                        seed: 0,
                        noise_sd: 1.0,
                        mu1_term4_as_x6: false,
                    }
                    .validate()?;
                    return Ok(kind);
                }
            }
        }
        Err(Error::InvalidConfig(format!(
            "unknown design '{s}'; expected linear_a, linear_b, or mu<1-3>_theta<1-4>"
        )))
    }
}

/// A fully specified generator: design, size, seed, and noise level.
///
/// `mu1_term4_as_x6` switches the fourth term of the first baseline function
/// from its published form `4 x2 (1-x4)(1-x4)` to the pattern-completing
/// `4 x2 (1-x4)(1-x6)`; the published form is the default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub mu1_term4_as_x6: bool,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, n: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            kind,
            n,
            seed,
            noise_sd: 1.0,
            mu1_term4_as_x6: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let GeneratorKind::Nonlinear { mu_id, theta_id } = self.kind {
            if !(1..=3).contains(&mu_id) || !(1..=4).contains(&theta_id) {
                return Err(Error::InvalidConfig(format!(
                    "nonlinear design needs mu_id in 1..=3 and theta_id in 1..=4, got mu{mu_id}/theta{theta_id}"
                )));
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("generator n must be positive".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_sd must be a finite non-negative number, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        match self.kind {
            GeneratorKind::LinearA | GeneratorKind::LinearB => 2,
            GeneratorKind::Nonlinear { .. } => 9,
        }
    }

    fn betas(&self) -> [f64; 6] {
        match self.kind {
            GeneratorKind::LinearA => [2.0, 3.0, -1.0, 1.5, 0.0, 0.0],
            GeneratorKind::LinearB => [2.0, 3.0, -1.0, 1.5, 0.5, -2.0],
            GeneratorKind::Nonlinear { .. } => unreachable!("linear coefficients"),
        }
    }

    /// True baseline risk at `x`.
    pub fn mu(&self, x: &[f64]) -> f64 {
        match self.kind {
            GeneratorKind::LinearA | GeneratorKind::LinearB => {
                let b = self.betas();
                b[0] + b[1] * x[0] + b[2] * x[1]
            }
            GeneratorKind::Nonlinear { mu_id, .. } => match mu_id {
                1 => mu1(x, self.mu1_term4_as_x6),
                2 => mu2(x),
                3 => mu3(x),
                _ => unreachable!("validated id"),
            },
        }
    }

    /// The named effect function: the heterogeneous part `b4*x1 + b5*x2`
    /// for the linear designs, the full effect for the nonlinear ones.
    pub fn theta(&self, x: &[f64]) -> f64 {
        match self.kind {
            GeneratorKind::LinearA | GeneratorKind::LinearB => {
                let b = self.betas();
                b[4] * x[0] + b[5] * x[1]
            }
            GeneratorKind::Nonlinear { theta_id, .. } => match theta_id {
                1 => 0.0,
                2 => 1.0,
                3 => 2.0 + 0.1 / (1.0 + (-x[1]).exp()),
                4 => mu1(x, self.mu1_term4_as_x6),
                _ => unreachable!("validated id"),
            },
        }
    }

    /// The coefficient on the treatment in the outcome model; this is what
    /// the modified outcome estimates. Adds the constant `b3` to
    /// [`GeneratorSpec::theta`] for the linear designs.
    pub fn treatment_effect(&self, x: &[f64]) -> f64 {
        match self.kind {
            GeneratorKind::LinearA | GeneratorKind::LinearB => self.betas()[3] + self.theta(x),
            GeneratorKind::Nonlinear { .. } => self.theta(x),
        }
    }

    fn draw_covariates<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            GeneratorKind::LinearA | GeneratorKind::LinearB => {
                vec![StandardNormal.sample(rng), StandardNormal.sample(rng)]
            }
            GeneratorKind::Nonlinear { .. } => (1..=9)
                .map(|j| {
                    if j % 2 == 1 {
                        f64::from(u8::from(rng.random::<f64>() < 0.5))
                    } else {
                        StandardNormal.sample(rng)
                    }
                })
                .collect(),
        }
    }
}

fn mu1(x: &[f64], term4_as_x6: bool) -> f64 {
    let (x2, x4, x6) = (x[1], x[3], x[5]);
    let term4 = if term4_as_x6 {
        4.0 * x2 * (1.0 - x4) * (1.0 - x6)
    } else {
        4.0 * x2 * (1.0 - x4) * (1.0 - x4)
    };
    x2 * x4 * x6
        + 2.0 * x2 * x4 * (1.0 - x6)
        + 3.0 * x2 * (1.0 - x4) * x6
        + term4
        + 5.0 * (1.0 - x2) * x4 * x6
        + 6.0 * (1.0 - x2) * x4 * (1.0 - x6)
        + 7.0 * (1.0 - x2) * (1.0 - x4) * x6
        + 8.0 * (1.0 - x2) * (1.0 - x4) * (1.0 - x6)
}

fn mu2(x: &[f64]) -> f64 {
    let ind = |c: bool| if c { 1.0 } else { 0.0 };
    4.0 * ind(x[0] > 1.0) * ind(x[2] > 0.0) + 4.0 * ind(x[4] > 1.0) * ind(x[6] > 0.0)
        + 2.0 * x[7] * x[8]
}

fn mu3(x: &[f64]) -> f64 {
    0.5 * (x[0] * x[0] + x[1] + x[2] * x[2] + x[3] + x[4] * x[4] + x[5] + x[6] * x[6] + x[7]
        + x[8] * x[8]
        - 11.0)
}

/// Draws one dataset.
///
/// Per row, the stream is consumed in a fixed order: covariates in position
/// order, then the treatment, then the noise.
pub fn generate(g: &GeneratorSpec) -> Result<Dataset> {
    g.validate()?;
    let mut rng = rng_from_seed(g.seed);
    let mut outcomes = Vec::with_capacity(g.n);
    let mut treatments = Vec::with_capacity(g.n);
    let mut rows = Vec::with_capacity(g.n);
    for _ in 0..g.n {
        let x = g.draw_covariates(&mut rng);
        let a = u8::from(rng.random::<f64>() < 0.5);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let y = g.mu(&x) + f64::from(a) * g.treatment_effect(&x) + g.noise_sd * eps;
        outcomes.push(y);
        treatments.push(a);
        rows.push(x);
    }
    Dataset::new(outcomes, treatments, rows, None)
}

/// Monte Carlo approximation of the predictive estimand conditional on the
/// trained models, over `m` fresh draws from the generator's law. Returns
/// the estimate and its Monte Carlo standard error.
pub fn oracle_estimand(
    models: &PairedModels<'_>,
    g: &GeneratorSpec,
    m: usize,
    oracle_seed: u64,
) -> Result<(f64, f64)> {
    g.validate()?;
    if m < 2 {
        return Err(Error::InvalidConfig(
            "oracle needs at least 2 draws".into(),
        ));
    }
    let mut rng = rng_from_seed(oracle_seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..m {
        let x = g.draw_covariates(&mut rng);
        let a = u8::from(rng.random::<f64>() < 0.5);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let y = g.mu(&x) + f64::from(a) * g.treatment_effect(&x) + g.noise_sd * eps;
        let loss = match models {
            PairedModels::Outcome { f, g: rest } => {
                diff_sq_loss(f.predict_outcome(a, &x)?, rest.predict(a, &x)?, y)
            }
            PairedModels::Modified { theta, tau_mo } => {
                let w = if a == 1 { 2.0 * y } else { -2.0 * y };
                modified_diff_sq_loss(theta.predict_outcome(0, &x)?, *tau_mo, w)
            }
            PairedModels::ModifiedFromOutcome { f, g: rest } => {
                let w = if a == 1 { 2.0 * y } else { -2.0 * y };
                let theta = f.predict_outcome(1, &x)? - f.predict_outcome(0, &x)?;
                modified_diff_sq_loss(theta, rest.ite_gap(), w)
            }
        };
        sum += loss;
        sum_sq += loss * loss;
    }
    let mf = m as f64;
    let mean = sum / mf;
    let var = (sum_sq - sum * sum / mf).max(0.0) / (mf - 1.0);
    Ok((mean, (var / mf).sqrt()))
}

/// One replication of a coverage study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub estimand: f64,
    pub mc_se: f64,
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub contained: bool,
    pub h_two_sided: f64,
    pub h_one_sided: f64,
}

/// Aggregates over the replications of a coverage study, reported at the
/// first configured interval level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub replications: usize,
    pub alpha: f64,
    pub mean_estimand: f64,
    pub coverage_proportion: f64,
    pub mean_ci_width: f64,
    pub median_one_sided_h: f64,
    pub records: Vec<ReplicationRecord>,
}

impl CoverageReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).map_err(std::io::Error::from)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text).map_err(std::io::Error::from)?)
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite h-values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Repeats draw, evaluate, and score against the Monte Carlo oracle.
///
/// Per replication `i`, the dataset seed is `child(g.seed, i)`, the engine
/// seed `child(cfg.seed, i)`, and the oracle seed `child(dataset_seed, 1)`.
/// Containment is judged at the first level in `cfg.alpha_levels` against
/// the oracle value for that replication's full-data trained pair.
pub fn coverage_study(
    g: &GeneratorSpec,
    spec: &LearnerSpec,
    cfg: &NcvConfig,
    replications: usize,
    oracle_m: usize,
) -> Result<CoverageReport> {
    g.validate()?;
    cfg.validate()?;
    spec.validate()?;
    if replications == 0 {
        return Err(Error::InvalidConfig(
            "coverage study needs at least 1 replication".into(),
        ));
    }
    let alpha = cfg.alpha_levels[0];

    let outcomes: Vec<Result<ReplicationRecord>> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let run = || -> Result<ReplicationRecord> {
                let data_seed = child_seed(g.seed, i as u64);
                let mut gen_i = g.clone();
                gen_i.seed = data_seed;
                let d = generate(&gen_i)?;
                let mut cfg_i = cfg.clone();
                cfg_i.seed = child_seed(cfg.seed, i as u64);
                let report = run_evaluation(spec, &d, None, &cfg_i)?;
                let pair = train_pair(spec, &d, None, cfg.mode)?;
                let (estimand, mc_se) =
                    oracle_estimand(&pair.as_models(), g, oracle_m, child_seed(data_seed, 1))?;
                let iv = &report.intervals[0];
                Ok(ReplicationRecord {
                    replication: i,
                    estimand,
                    mc_se,
                    center: report.ncv.center(),
                    lower: iv.lower,
                    upper: iv.upper,
                    width: iv.upper - iv.lower,
                    contained: iv.lower <= estimand && estimand <= iv.upper,
                    h_two_sided: report.h_two_sided,
                    h_one_sided: report.h_one_sided,
                })
            };
            run().map_err(|e| Error::Replication {
                replication: i,
                source: Box::new(e),
            })
        })
        .collect();

    let mut records = Vec::with_capacity(replications);
    for outcome in outcomes {
        records.push(outcome?);
    }
    let nf = replications as f64;
    Ok(CoverageReport {
        replications,
        alpha,
        mean_estimand: records.iter().map(|r| r.estimand).sum::<f64>() / nf,
        coverage_proportion: records.iter().filter(|r| r.contained).count() as f64 / nf,
        mean_ci_width: records.iter().map(|r| r.width).sum::<f64>() / nf,
        median_one_sided_h: median(records.iter().map(|r| r.h_one_sided).collect()),
        records,
    })
}

/// Writes the per-replication rows as CSV.
pub fn write_coverage_csv<W: Write>(mut w: W, report: &CoverageReport) -> Result<()> {
    writeln!(
        w,
        "replication,estimand,mc_se,center,lower,upper,width,contained,h_two_sided,h_one_sided"
    )?;
    for r in &report.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.replication,
            r.estimand,
            r.mc_se,
            r.center,
            r.lower,
            r.upper,
            r.width,
            r.contained,
            r.h_two_sided,
            r.h_one_sided
        )?;
    }
    Ok(())
}

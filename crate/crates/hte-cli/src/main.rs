//! Command-line front end for the evaluation engine: `evaluate` scores a CSV
//! dataset, `simulate` runs coverage studies against the Monte Carlo oracle,
//! `pdp` and `hdist` expose the diagnostics, and `generate` materializes the
//! built-in simulation designs as CSV.
//!
//! Every command is byte-for-byte reproducible given identical flags; the one
//! nondeterministic report field (wall time) is zeroed before writing and
//! logged to stderr instead.

use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hte_core::seeds::child_seed;
use hte_core::{
    confidence_interval, coverage_study, default_grid, generate, h_value_distribution, load_csv,
    partial_dependence, run_evaluation_with_losses, train_pair, write_coverage_csv, write_csv,
    write_losses_csv, Dataset, Error, GeneratorSpec, LearnerSpec, Mode, NcvConfig, TrainedPair,
};

#[derive(Parser)]
#[command(name = "hte", version, about = "Out-of-sample tests for treatment effect heterogeneity")]
struct Cli {
    /// Worker threads for the engine (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the predictive benefit of heterogeneity on a CSV dataset
    Evaluate(EvaluateArgs),
    /// Run a simulation design and report oracle coverage over replications
    Simulate(SimulateArgs),
    /// Partial dependence curves of the trained unrestricted or restricted model
    Pdp(PdpArgs),
    /// Distribution of one-sided h-values over reseeded evaluations
    Hdist(HdistArgs),
    /// Generate a dataset from a built-in simulation design
    Generate(GenerateArgs),
}

/// Flags naming the input CSV and its special columns.
#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row
    #[arg(long)]
    data: PathBuf,

    /// Outcome column name
    #[arg(long)]
    outcome: String,

    /// Treatment column name (values 0/1)
    #[arg(long)]
    treatment: String,

    /// Propensity column name, or a constant in (0,1) applied to every row
    #[arg(long)]
    propensity: Option<String>,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, Option<Vec<f64>>), Error> {
        if let Some(spec) = &self.propensity {
            if let Ok(value) = spec.parse::<f64>() {
                if !(value > 0.0 && value < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "propensity constant must lie strictly between 0 and 1, got {value}"
                    )));
                }
                let (d, _) = load_csv(&self.data, &self.outcome, &self.treatment, None)?;
                let props = vec![value; d.n()];
                return Ok((d, Some(props)));
            }
        }
        load_csv(
            &self.data,
            &self.outcome,
            &self.treatment,
            self.propensity.as_deref(),
        )
    }
}

/// Flags shared by every command that runs the nested-CV engine.
#[derive(Args)]
struct EngineArgs {
    /// Learner: preset name (ols, ridge, lasso, boost), inline JSON, or @file
    #[arg(long, default_value = "ols")]
    learner: String,

    /// Loss construction: outcome, modified, or modified_from_outcome
    #[arg(long, default_value = "outcome")]
    mode: String,

    /// Outer folds K
    #[arg(long, default_value_t = 5)]
    k: usize,

    /// Nested cross-validation repetitions R
    #[arg(long, default_value_t = 50)]
    reps: usize,

    /// Interval levels, repeatable or comma-separated
    #[arg(long, value_delimiter = ',', default_values_t = [0.05])]
    alpha: Vec<f64>,

    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl EngineArgs {
    fn learner_spec(&self) -> Result<LearnerSpec, Error> {
        parse_learner(&self.learner, child_seed(self.seed, 1))
    }

    fn ncv_config(&self) -> Result<NcvConfig, Error> {
        for &a in &self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidConfig("alpha must be in (0,1)".into()));
            }
        }
        Ok(NcvConfig {
            k: self.k,
            reps: self.reps,
            alpha_levels: self.alpha.clone(),
            seed: self.seed,
            mode: parse_mode(&self.mode)?,
            ..NcvConfig::default()
        })
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    engine: EngineArgs,

    /// Output path for the evaluation report JSON
    #[arg(long)]
    out: PathBuf,

    /// Optional CSV of every held-out loss, tagged by cell
    #[arg(long)]
    losses_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Design name: linear_A, linear_B, or mu<1-3>_theta<1-4>
    #[arg(long)]
    design: String,

    /// Rows per replication
    #[arg(long)]
    n: usize,

    /// Number of independent replications
    #[arg(long, default_value_t = 100)]
    replications: usize,

    /// Noise standard deviation of the design
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,

    /// Monte Carlo draws for the oracle estimand per replication
    #[arg(long, default_value_t = 100_000)]
    oracle_m: usize,

    #[command(flatten)]
    engine: EngineArgs,

    /// Output path for the coverage report JSON; a CSV sibling is written too
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PdpArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    engine: EngineArgs,

    /// Which member of the trained pair to trace: unrestricted or restricted
    #[arg(long, default_value = "unrestricted")]
    model: String,

    /// Covariate to vary: column name or 0-based index
    #[arg(long)]
    covariate: String,

    /// Grid points between the 2nd and 98th percentile
    #[arg(long, default_value_t = 25)]
    points: usize,

    /// Output CSV with columns u, rho0, rho1, gap
    #[arg(long)]
    out: PathBuf,

    /// Optional CSV of the tau search trace (restricted model only)
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct HdistArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    engine: EngineArgs,

    /// Number of reseeded evaluations
    #[arg(long)]
    draws: usize,

    /// Output CSV with columns draw, h_one_sided
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Design name: linear_A, linear_B, or mu<1-3>_theta<1-4>
    #[arg(long)]
    design: String,

    /// Number of rows
    #[arg(long)]
    n: usize,

    /// Noise standard deviation of the design
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,

    /// Read the fourth mu_1 term with x6 in place of the repeated (1 - x4)
    #[arg(long)]
    mu1_term4_x6: bool,

    /// Master seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(text: &str) -> Result<Mode, Error> {
    match text {
        "outcome" => Ok(Mode::Outcome),
        "modified" => Ok(Mode::Modified),
        "modified_from_outcome" => Ok(Mode::ModifiedFromOutcome),
        other => Err(Error::InvalidConfig(format!(
            "unknown mode '{other}' (expected outcome, modified, or modified_from_outcome)"
        ))),
    }
}

fn parse_learner(text: &str, tuning_seed: u64) -> Result<LearnerSpec, Error> {
    if let Some(path) = text.strip_prefix('@') {
        let raw = fs::read_to_string(path)?;
        return serde_json::from_str(&raw)
            .map_err(|e| Error::InvalidConfig(format!("learner file {path}: {e}")));
    }
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("learner JSON: {e}")));
    }
    LearnerSpec::preset(text, tuning_seed)
}

fn parse_generator(design: &str, n: usize, noise_sd: f64, seed: u64) -> Result<GeneratorSpec, Error> {
    let kind = design.parse()?;
    let mut g = GeneratorSpec::new(kind, n, seed);
    g.noise_sd = noise_sd;
    g.validate()?;
    Ok(g)
}

fn resolve_covariate(d: &Dataset, text: &str) -> Result<usize, Error> {
    if let Some(k) = d.covariate_names().iter().position(|name| name == text) {
        return Ok(k);
    }
    match text.parse::<usize>() {
        Ok(k) if k < d.p() => Ok(k),
        _ => Err(Error::MissingColumn(text.to_string())),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text)?;
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Error> {
    let (d, props) = args.data.load()?;
    let spec = args.engine.learner_spec()?;
    let cfg = args.engine.ncv_config()?;
    let start = Instant::now();
    let (mut report, losses) = run_evaluation_with_losses(&spec, &d, props.as_deref(), &cfg)?;
    log::info!("evaluation finished in {:.2}s", start.elapsed().as_secs_f64());
    report.wall_time_seconds = 0.0;
    write_text(&args.out, &(report.to_json()? + "\n"))?;
    if let Some(path) = &args.losses_out {
        let mut w = BufWriter::new(File::create(path)?);
        write_losses_csv(&mut w, &losses)?;
        w.flush()?;
    }
    let (lower, upper) = confidence_interval(&report.ncv, 0.05);
    println!(
        "center {:.6}; 95% CI [{:.6}, {:.6}]; one-sided h {:.6}",
        report.ncv.center(),
        lower,
        upper,
        report.h_one_sided
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let mut g = parse_generator(&args.design, args.n, args.noise_sd, 0)?;
    g.seed = child_seed(args.engine.seed, 0);
    let spec = args.engine.learner_spec()?;
    let mut cfg = args.engine.ncv_config()?;
    cfg.seed = child_seed(args.engine.seed, 1);
    let csv_path = args.out.with_extension("csv");
    if csv_path == args.out {
        return Err(Error::InvalidConfig(
            "simulate --out must not already end in .csv; it names the JSON report".into(),
        ));
    }
    let start = Instant::now();
    let report = coverage_study(&g, &spec, &cfg, args.replications, args.oracle_m)?;
    log::info!(
        "{} replications finished in {:.2}s",
        args.replications,
        start.elapsed().as_secs_f64()
    );
    write_text(&args.out, &(report.to_json()? + "\n"))?;
    let mut w = BufWriter::new(File::create(&csv_path)?);
    write_coverage_csv(&mut w, &report)?;
    w.flush()?;
    println!(
        "mean estimand {:.6}; coverage {:.4} at alpha {}; mean width {:.4}; median one-sided h {:.6}",
        report.mean_estimand,
        report.coverage_proportion,
        report.alpha,
        report.mean_ci_width,
        report.median_one_sided_h
    );
    Ok(())
}

fn cmd_pdp(args: &PdpArgs) -> Result<(), Error> {
    let (d, props) = args.data.load()?;
    let spec = args.engine.learner_spec()?;
    let k = resolve_covariate(&d, &args.covariate)?;
    let pair = train_pair(&spec, &d, props.as_deref(), Mode::Outcome)?;
    let (f, g) = match &pair {
        TrainedPair::Outcome { f, g } => (f, g),
        _ => unreachable!("pdp always trains in outcome mode"),
    };
    if let Some(path) = &args.trace_out {
        let mut w = BufWriter::new(File::create(path)?);
        g.write_trace_csv(&mut w)?;
        w.flush()?;
    }
    let grid = default_grid(&d, k, args.points)?;
    let (curve0, curve1) = match args.model.as_str() {
        "unrestricted" => (
            partial_dependence(f, &d, k, Some(&grid), 0)?,
            partial_dependence(f, &d, k, Some(&grid), 1)?,
        ),
        "restricted" => (
            partial_dependence(g, &d, k, Some(&grid), 0)?,
            partial_dependence(g, &d, k, Some(&grid), 1)?,
        ),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown model '{other}' (expected unrestricted or restricted)"
            )))
        }
    };
    let mut out = String::from("u,rho0,rho1,gap\n");
    for ((u, rho0), (_, rho1)) in curve0.iter().zip(&curve1) {
        out.push_str(&format!("{u},{rho0},{rho1},{}\n", rho1 - rho0));
    }
    write_text(&args.out, &out)?;
    println!(
        "wrote {} grid points for covariate '{}' to {}",
        grid.len(),
        d.covariate_names()[k],
        args.out.display()
    );
    Ok(())
}

fn cmd_hdist(args: &HdistArgs) -> Result<(), Error> {
    let (d, props) = args.data.load()?;
    let spec = args.engine.learner_spec()?;
    let cfg = args.engine.ncv_config()?;
    let values = h_value_distribution(&spec, &d, props.as_deref(), &cfg, args.draws)?;
    let mut out = String::from("draw,h_one_sided\n");
    for (i, h) in values.iter().enumerate() {
        out.push_str(&format!("{i},{h}\n"));
    }
    write_text(&args.out, &out)?;
    println!("wrote {} h-values to {}", values.len(), args.out.display());
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), Error> {
    let mut g = parse_generator(&args.design, args.n, args.noise_sd, args.seed)?;
    g.mu1_term4_as_x6 = args.mu1_term4_x6;
    let d = generate(&g)?;
    write_csv(&d, None, &args.out)?;
    println!(
        "wrote {} rows with {} covariates to {}",
        d.n(),
        d.p(),
        args.out.display()
    );
    Ok(())
}

/// Exit 2 marks input that can never work (flags, config, malformed data);
/// exit 1 marks failures of a well-formed run (I/O, numerics).
fn classify(e: &Error) -> u8 {
    match e {
        Error::MissingColumn(_)
        | Error::NonNumericCell { .. }
        | Error::MissingValue { .. }
        | Error::InvalidTreatmentValue { .. }
        | Error::InvalidPropensity { .. }
        | Error::EmptyDataset
        | Error::MissingArm { .. }
        | Error::TooFewRowsPerArm { .. }
        | Error::DimensionMismatch { .. }
        | Error::InvalidConfig(_) => 2,
        Error::FitContext { source, .. } => classify(source),
        Error::Replication { source, .. } => classify(source),
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Pdp(args) => cmd_pdp(args),
        Command::Hdist(args) => cmd_hdist(args),
        Command::Generate(args) => cmd_generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}

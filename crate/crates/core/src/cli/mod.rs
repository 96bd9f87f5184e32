//! The `emtest` command line: `test`, `simulate` and `calibrate`.
//!
//! [`run`] takes its streams as arguments so it can be driven in-process.
//! Data goes to `stdout` in one write after the command has succeeded;
//! progress and errors go to `stderr`. Exit codes: 0 success, 2 usage
//! error, 3 data error.

pub mod ingest;
pub mod report;

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::em::{em_test, EmTestConfig};
use crate::error::{Error, Result};
use crate::sim::{
    calibration_experiment, fit_tuning_regression, reference_calibration_cells, simulate_rejection_rate,
    write_calibration_long, write_calibration_wide, write_fit_block, write_simulation_csv, CalibrationSpec,
    GeneratorSpec, TuningFit,
};

pub use ingest::{parse_scores, read_scores, t_to_z, z_to_p, ColumnSelector, InputFormat, InputSource, ScoreColumn, ZScore};
pub use report::{ReportContext, TestReport, TransformInfo};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "emtest", version, about = "EM-test for homogeneity in a contaminated normal mixture")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test a column of z-scores (or t-statistics) for homogeneity.
    Test(TestArgs),
    /// Estimate rejection rates by simulation.
    Simulate(SimulateArgs),
    /// Relate a_n to the simulated type-I error and fit the tuning regression.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    /// Initial mixing proportions.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.15,0.25")]
    pub alpha_grid: Vec<f64>,
    /// EM iterations K, counting the first profile step.
    #[arg(long, short = 'K', default_value_t = 3)]
    pub iterations: usize,
    /// Fixed tuning constant a_n instead of the sample-size formula.
    #[arg(long = "a-n")]
    pub a_n: Option<f64>,
}

impl EmArgs {
    pub fn config(&self) -> Result<EmTestConfig> {
        let cfg = EmTestConfig {
            alpha_grid: self.alpha_grid.clone(),
            iterations: self.iterations,
            a_n_override: self.a_n,
            ..EmTestConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Input file; `-` or absent reads standard input.
    pub input: Option<PathBuf>,
    /// Input layout; defaults to csv for `.csv` files and plain otherwise.
    #[arg(long, value_enum)]
    pub input_format: Option<InputFormat>,
    /// CSV column, by header name or 1-based position.
    #[arg(long)]
    pub column: Option<ColumnSelector>,
    #[command(flatten)]
    pub em: EmArgs,
    /// Significance level for a decision; repeatable.
    #[arg(long = "level", default_values_t = [0.05])]
    pub levels: Vec<f64>,
    /// Treat inputs as t-statistics and map them to z-scores first.
    #[arg(long)]
    pub from_t: bool,
    /// Degrees of freedom for --from-t.
    #[arg(long, default_value_t = 100, requires = "from_t")]
    pub df: u32,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
    /// Recorded in the report; the test itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Sample from N(0, sigma²).
    #[arg(long, conflicts_with = "mixture")]
    pub null: bool,
    /// Sample from (1-alpha)N(0,sigma1²) + alpha N(mu,sigma2²).
    #[arg(long)]
    pub mixture: bool,
    /// Standard deviation of the null model.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, requires = "mixture")]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma1: f64,
    #[arg(long, conflicts_with = "sigma2_sq")]
    pub sigma2: Option<f64>,
    /// Variance of the second component, as an alternative to --sigma2.
    #[arg(long)]
    pub sigma2_sq: Option<f64>,
    /// Sample sizes; one output row each.
    #[arg(long = "n", value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub em: EmArgs,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: TableFormat,
}

impl SimulateArgs {
    pub fn generator(&self) -> Result<GeneratorSpec> {
        let spec = if self.mixture {
            let alpha = self.alpha.ok_or_else(|| Error::InvalidArgument("--mixture needs --alpha".into()))?;
            let sigma2 = match (self.sigma2, self.sigma2_sq) {
                (Some(s), _) => s,
                (None, Some(v)) if v > 0.0 => v.sqrt(),
                (None, Some(v)) => return Err(Error::InvalidArgument(format!("--sigma2-sq must be positive, got {v}"))),
                (None, None) => 1.0,
            };
            GeneratorSpec::Mixture { alpha, mu: self.mu, sigma1: self.sigma1, sigma2 }
        } else {
            GeneratorSpec::Null { sigma: self.sigma }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableLayout {
    /// One row per (n, a_n) cell.
    Long,
    /// Rows are sample sizes, columns are a_n values.
    Wide,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Values of a_n, each above 1.4.
    #[arg(long, value_delimiter = ',')]
    pub a_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5000)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fit the regression to the bundled reference discrepancies instead of simulating.
    #[arg(long, conflicts_with_all = ["a_grid", "n_grid"])]
    pub reference: bool,
    #[arg(long, value_enum, default_value = "long")]
    pub layout: TableLayout,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: TableFormat,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Domain(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { stdout.write_all(rendered.as_bytes()) } else { stderr.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Test(a) => cmd_test(a, stdin, stderr),
        Command::Simulate(a) => cmd_simulate(a, stderr),
        Command::Calibrate(a) => cmd_calibrate(a, stderr),
    };
    match outcome {
        Ok(out) => match stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(stderr, "emtest: writing output: {e}");
                EXIT_DATA
            }
        },
        Err(e) => {
            let _ = writeln!(stderr, "emtest: {e}");
            exit_code(&e)
        }
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("level must lie in (0,1), got {level}")))
    }
}

/// Run the `test` subcommand and return the rendered report.
pub fn cmd_test(args: &TestArgs, stdin: &mut dyn Read, stderr: &mut dyn Write) -> Result<String> {
    let cfg = args.em.config()?;
    for &l in &args.levels {
        check_level(l)?;
    }
    if args.from_t && args.df < 1 {
        return Err(Error::InvalidArgument("--df must be at least 1".into()));
    }
    let source = InputSource::from_arg(args.input.as_deref());
    let format = args.input_format.unwrap_or_else(|| InputFormat::infer(source.path()));
    let bytes = match &source {
        InputSource::Path(p) => std::fs::read(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        InputSource::Stdin => {
            let mut buf = Vec::new();
            stdin.read_to_end(&mut buf)?;
            buf
        }
    };
    let scores = parse_scores(&bytes, &source.to_string(), format, args.column.as_ref())?;

    let (data, transform) = if args.from_t {
        let mut clamped = 0;
        let mut z = Vec::with_capacity(scores.values.len());
        for &t in &scores.values {
            let r = t_to_z(t, args.df)?;
            clamped += r.clamped as usize;
            z.push(r.z);
        }
        if clamped > 0 {
            let _ = writeln!(stderr, "emtest: warning: {clamped} t-values beyond the representable tail were clamped");
        }
        (z, Some(TransformInfo { df: args.df, clamped }))
    } else {
        (scores.values.clone(), None)
    };

    let result = em_test(&data, &cfg)?;
    let report = TestReport::new(
        &result,
        &cfg,
        ReportContext {
            levels: args.levels.clone(),
            transform,
            seed: args.seed,
            source: scores.source.clone(),
            label: scores.label.clone(),
            input_digest: scores.digest.clone(),
        },
    );
    Ok(match args.format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Text => report.to_text(),
    })
}

/// Run the `simulate` subcommand and return the rendered table.
pub fn cmd_simulate(args: &SimulateArgs, stderr: &mut dyn Write) -> Result<String> {
    let cfg = args.em.config()?;
    let spec = args.generator()?;
    check_level(args.level)?;
    if args.reps < 1 {
        return Err(Error::InvalidArgument("--reps must be at least 1".into()));
    }
    let mut results = Vec::with_capacity(args.n.len());
    for &n in &args.n {
        let r = simulate_rejection_rate(&spec, n, args.reps, args.level, &cfg, args.seed)?;
        let _ = writeln!(
            stderr,
            "n={n}: {}/{} rejections ({:.1}s)",
            r.rejections,
            r.reps,
            r.elapsed.as_secs_f64()
        );
        results.push(r);
    }
    match args.format {
        TableFormat::Csv => {
            let mut buf = Vec::new();
            write_simulation_csv(&results, &mut buf)?;
            Ok(String::from_utf8(buf).expect("csv output is utf-8"))
        }
        TableFormat::Json => {
            let rows: Vec<serde_json::Value> = results
                .iter()
                .map(|r| {
                    let mut v = serde_json::to_value(r).expect("finite fields");
                    // Timing varies between runs; keep the data output reproducible.
                    v.as_object_mut().map(|o| o.remove("elapsed"));
                    v
                })
                .collect();
            Ok(serde_json::to_string_pretty(&rows).expect("finite fields") + "\n")
        }
    }
}

/// Run the `calibrate` subcommand and return the rendered table.
pub fn cmd_calibrate(args: &CalibrateArgs, stderr: &mut dyn Write) -> Result<String> {
    let (cells, fit, spec): (_, TuningFit, Option<CalibrationSpec>) = if args.reference {
        let cells = reference_calibration_cells();
        let fit = fit_tuning_regression(&cells)?;
        (cells, fit, None)
    } else {
        check_level(args.level)?;
        if args.reps < 1 {
            return Err(Error::InvalidArgument("--reps must be at least 1".into()));
        }
        let d = CalibrationSpec::default();
        let spec = CalibrationSpec {
            a_grid: args.a_grid.clone().unwrap_or(d.a_grid),
            n_grid: args.n_grid.clone().unwrap_or(d.n_grid),
            reps: args.reps,
            level: args.level,
            seed: args.seed,
            base: d.base,
        };
        let out = calibration_experiment(&spec, |done, total| {
            let _ = writeln!(stderr, "cell {done}/{total}");
        })?;
        (out.cells, out.fit, Some(out.spec))
    };
    match args.format {
        TableFormat::Csv => {
            let mut buf = Vec::new();
            match args.layout {
                TableLayout::Long => write_calibration_long(&cells, &mut buf)?,
                TableLayout::Wide => write_calibration_wide(&cells, &mut buf)?,
            }
            write_fit_block(&fit, &mut buf)?;
            Ok(String::from_utf8(buf).expect("csv output is utf-8"))
        }
        TableFormat::Json => {
            let v = serde_json::json!({ "spec": spec, "cells": cells, "fit": fit });
            Ok(serde_json::to_string_pretty(&v).expect("finite fields") + "\n")
        }
    }
}

//! Monte Carlo studies: rejection rates under null and alternative models
//! and the tuning experiment that relates `a_n` to the type-I error.
//!
//! Replication `r` of a run seeded with `seed` always draws from
//! `RngState::new(seed, r)`, so counts do not depend on how replications are
//! spread across worker threads.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::RngState;
use crate::em::{em_test, EmTestConfig};
use crate::error::{ensure_finite, Error, Result};

/// Environment variable capping the number of simulation threads.
pub const THREADS_ENV: &str = "EMTEST_THREADS";

/// Data-generating model for a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorSpec {
    /// N(0, sigma²).
    Null { sigma: f64 },
    /// `(1-α)N(0,σ₁²) + αN(μ,σ₂²)`; α = 0 is allowed and reproduces the
    /// null generator draw for draw.
    Mixture { alpha: f64, mu: f64, sigma1: f64, sigma2: f64 },
}

impl GeneratorSpec {
    pub fn standard_null() -> Self {
        GeneratorSpec::Null { sigma: 1.0 }
    }

    /// Alternative with σ₁² = 1, parameterized by σ₂² as in power tables.
    pub fn alternative(alpha: f64, sigma2_sq: f64, mu: f64) -> Self {
        GeneratorSpec::Mixture { alpha, mu, sigma1: 1.0, sigma2: sigma2_sq.sqrt() }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GeneratorSpec::Null { sigma } => {
                ensure_finite("sigma", sigma)?;
                if sigma <= 0.0 {
                    return Err(Error::InvalidArgument(format!("null sigma must be positive, got {sigma}")));
                }
            }
            GeneratorSpec::Mixture { alpha, mu, sigma1, sigma2 } => {
                for (name, v) in [("alpha", alpha), ("mu", mu), ("sigma1", sigma1), ("sigma2", sigma2)] {
                    ensure_finite(name, v)?;
                }
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::InvalidArgument(format!("alpha must lie in [0,1], got {alpha}")));
                }
                if sigma1 <= 0.0 || sigma2 <= 0.0 {
                    return Err(Error::InvalidArgument("component sigmas must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Flat view used for CSV rows: (kind, null_sigma, alpha, mu, sigma1, sigma2).
    fn csv_fields(&self) -> (&'static str, String, String, String, String, String) {
        match *self {
            GeneratorSpec::Null { sigma } => ("null", sigma.to_string(), String::new(), String::new(), String::new(), String::new()),
            GeneratorSpec::Mixture { alpha, mu, sigma1, sigma2 } => (
                "mixture",
                String::new(),
                alpha.to_string(),
                mu.to_string(),
                sigma1.to_string(),
                sigma2.to_string(),
            ),
        }
    }
}

/// Draw `n` observations from `spec`.
///
/// All normal deviates are drawn first and component labels afterwards, so
/// a mixture with α = 0 consumes the stream exactly like the null model.
pub fn generate_sample(spec: &GeneratorSpec, n: usize, state: &mut RngState) -> Result<Vec<f64>> {
    spec.validate()?;
    let z: Vec<f64> = (0..n).map(|_| state.standard_normal()).collect();
    Ok(match *spec {
        GeneratorSpec::Null { sigma } => z.into_iter().map(|v| sigma * v).collect(),
        GeneratorSpec::Mixture { alpha, mu, sigma1, sigma2 } => z
            .into_iter()
            .map(|v| {
                if state.uniform() < alpha {
                    mu + sigma2 * v
                } else {
                    sigma1 * v
                }
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub spec: GeneratorSpec,
    pub n: usize,
    pub level: f64,
    pub rejections: usize,
    pub reps: usize,
    pub rate: f64,
    pub mc_stderr: f64,
    pub seed: u64,
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// Number of worker threads: `EMTEST_THREADS` when set to a positive
/// integer, otherwise rayon's default.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn run_parallel<T, F>(reps: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    pool.install(|| (0..reps).into_par_iter().map(&f).collect())
}

/// EM-test statistics and p-values for `reps` samples from `spec`.
pub fn simulate_statistics(
    spec: &GeneratorSpec,
    n: usize,
    reps: usize,
    cfg: &EmTestConfig,
    seed: u64,
    threads: usize,
) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    cfg.validate()?;
    run_parallel(reps, threads, |r| {
        let mut state = RngState::new(seed, r as u64);
        let x = generate_sample(spec, n, &mut state)?;
        let res = em_test(&x, cfg)?;
        Ok((res.statistic, res.p_value))
    })
}

/// Fraction of `reps` replications in which the EM-test rejects at `level`.
pub fn simulate_rejection_rate(
    spec: &GeneratorSpec,
    n: usize,
    reps: usize,
    level: f64,
    cfg: &EmTestConfig,
    seed: u64,
) -> Result<SimulationResult> {
    simulate_rejection_rate_with_threads(spec, n, reps, level, cfg, seed, worker_count())
}

pub fn simulate_rejection_rate_with_threads(
    spec: &GeneratorSpec,
    n: usize,
    reps: usize,
    level: f64,
    cfg: &EmTestConfig,
    seed: u64,
    threads: usize,
) -> Result<SimulationResult> {
    if reps < 1 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0,1), got {level}")));
    }
    let start = Instant::now();
    let stats = simulate_statistics(spec, n, reps, cfg, seed, threads)?;
    let rejections = stats.iter().filter(|(_, p)| *p < level).count();
    let rate = rejections as f64 / reps as f64;
    Ok(SimulationResult {
        spec: *spec,
        n,
        level,
        rejections,
        reps,
        rate,
        mc_stderr: (rate * (1.0 - rate) / reps as f64).sqrt(),
        seed,
        elapsed: start.elapsed(),
    })
}

pub const SIMULATION_CSV_HEADER: &str = "kind,null_sigma,alpha,mu,sigma1,sigma2,n,reps,level,rate,mc_stderr,seed";

/// One CSV row per result, with [`SIMULATION_CSV_HEADER`] first.
pub fn write_simulation_csv<W: Write>(results: &[SimulationResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SIMULATION_CSV_HEADER}")?;
    for r in results {
        let (kind, ns, a, mu, s1, s2) = r.spec.csv_fields();
        writeln!(
            out,
            "{kind},{ns},{a},{mu},{s1},{s2},{},{},{},{},{},{}",
            r.n, r.reps, r.level, r.rate, r.mc_stderr, r.seed
        )?;
    }
    Ok(())
}

/// Log-odds discrepancy `log{q̂/(1-q̂)} - log{q/(1-q)}`.
pub fn discrepancy_y(q_hat: f64, q: f64) -> Result<f64> {
    for (name, v) in [("q_hat", q_hat), ("q", q)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Domain(format!("{name} must lie strictly inside (0,1), got {v}")));
        }
    }
    Ok((q_hat / (1.0 - q_hat)).ln() - (q / (1.0 - q)).ln())
}

/// One (n, a_n) cell of the tuning experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub n: usize,
    pub a_n: f64,
    pub y: f64,
    /// Rejection counts behind `y`; absent for tabulated reference values.
    pub rejections: Option<usize>,
    pub reps: Option<usize>,
}

/// Least-squares fit of `y ~ 1 + 1/n + log(a_n - 1.4)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningFit {
    pub intercept: f64,
    pub coef_inv_n: f64,
    pub coef_log_a: f64,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub observations: usize,
    pub residuals: Vec<f64>,
}

impl TuningFit {
    /// The `a_n` at which the fitted discrepancy is zero:
    /// `exp((β₀ + β₁/n)/(-β₂)) + 1.4`.
    pub fn solved_a_n(&self, n: usize) -> f64 {
        ((self.intercept + self.coef_inv_n / n as f64) / -self.coef_log_a).exp() + 1.4
    }

    /// Constants (c₀, c₁) of the solved form `exp(c₀ - c₁/n) + 1.4`.
    pub fn solved_constants(&self) -> (f64, f64) {
        (self.intercept / -self.coef_log_a, self.coef_inv_n / self.coef_log_a)
    }
}

/// Rows of the design matrix: `[1, 1/n, log(a_n - 1.4)]`.
pub fn design_row(n: usize, a_n: f64) -> [f64; 3] {
    [1.0, 1.0 / n as f64, (a_n - 1.4).ln()]
}

/// Fit the tuning regression by Householder QR.
pub fn fit_tuning_regression(cells: &[CalibrationCell]) -> Result<TuningFit> {
    let distinct = |vals: Vec<f64>| {
        let mut v = vals;
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct(cells.iter().map(|c| c.n as f64).collect()) < 2 || distinct(cells.iter().map(|c| c.a_n).collect()) < 2 {
        return Err(Error::InvalidArgument("design needs at least two distinct n and two distinct a_n".into()));
    }
    if let Some(c) = cells.iter().find(|c| !(c.a_n > 1.4) || c.n == 0 || !c.y.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid calibration cell {c:?}; a_n must exceed 1.4")));
    }
    let m = cells.len();
    let x = DMatrix::from_fn(m, 3, |i, j| design_row(cells[i].n, cells[i].a_n)[j]);
    let y = DVector::from_iterator(m, cells.iter().map(|c| c.y));
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * &y;
    let beta = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::InvalidArgument("design matrix is rank deficient".into()))?;
    let resid = &y - &x * &beta;
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let sse = resid.norm_squared();
    let r2 = 1.0 - sse / sst;
    let p = 2.0;
    let adj = 1.0 - (1.0 - r2) * (m as f64 - 1.0) / (m as f64 - p - 1.0);
    Ok(TuningFit {
        intercept: beta[0],
        coef_inv_n: beta[1],
        coef_log_a: beta[2],
        r_squared: r2,
        adj_r_squared: adj,
        observations: m,
        residuals: resid.iter().copied().collect(),
    })
}

/// The reference 13 × 3 table of discrepancies at q = 0.05, bundled so the
/// regression can be reproduced without fresh simulation.
pub fn reference_calibration_cells() -> Vec<CalibrationCell> {
    const TABLE: &str = include_str!("../data/reference_calibration.csv");
    TABLE
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            CalibrationCell {
                n: f[0].parse().expect("bundled table"),
                a_n: f[1].parse().expect("bundled table"),
                y: f[2].parse().expect("bundled table"),
                rejections: None,
                reps: None,
            }
        })
        .collect()
}

/// Settings for a fresh tuning experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub a_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub level: f64,
    pub seed: u64,
    /// Settings other than `a_n_override`, which each cell sets itself.
    pub base: EmTestConfig,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            a_grid: (0..13).map(|i| ((16 + 2 * i) as f64) / 10.0).collect(),
            n_grid: vec![500, 1000, 1500],
            reps: 5000,
            level: 0.05,
            seed: 0,
            base: EmTestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub spec: CalibrationSpec,
    pub cells: Vec<CalibrationCell>,
    pub fit: TuningFit,
}

/// Seed for cell `index`, kept apart from the master seed by a golden-ratio stride.
fn cell_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Simulated type-I error of one cell, reported through `y`.
pub fn calibration_cell(n: usize, a_n: f64, reps: usize, level: f64, base: &EmTestConfig, seed: u64) -> Result<CalibrationCell> {
    let cfg = EmTestConfig { a_n_override: Some(a_n), ..base.clone() };
    let res = simulate_rejection_rate(&GeneratorSpec::standard_null(), n, reps, level, &cfg, seed)?;
    Ok(CalibrationCell {
        n,
        a_n,
        y: discrepancy_y(res.rate, level)?,
        rejections: Some(res.rejections),
        reps: Some(reps),
    })
}

/// Run every (a_n, n) cell and fit the tuning regression. `progress` is
/// called after each cell with (cells done, cells total).
pub fn calibration_experiment(spec: &CalibrationSpec, mut progress: impl FnMut(usize, usize)) -> Result<CalibrationOutcome> {
    if let Some(a) = spec.a_grid.iter().find(|a| !(**a > 1.4)) {
        return Err(Error::InvalidArgument(format!("a_n grid values must exceed 1.4, got {a}")));
    }
    let mut a_sorted = spec.a_grid.clone();
    a_sorted.sort_by(f64::total_cmp);
    a_sorted.dedup();
    let mut n_sorted = spec.n_grid.clone();
    n_sorted.sort();
    n_sorted.dedup();
    if a_sorted.len() < 2 || n_sorted.len() < 2 {
        return Err(Error::InvalidArgument("calibration needs at least two distinct n and two distinct a_n".into()));
    }
    let total = spec.a_grid.len() * spec.n_grid.len();
    let mut cells = Vec::with_capacity(total);
    for &n in &spec.n_grid {
        for &a in &spec.a_grid {
            let seed = cell_seed(spec.seed, cells.len());
            cells.push(calibration_cell(n, a, spec.reps, spec.level, &spec.base, seed)?);
            progress(cells.len(), total);
        }
    }
    let fit = fit_tuning_regression(&cells)?;
    Ok(CalibrationOutcome { spec: spec.clone(), cells, fit })
}

/// Long layout: one row per cell.
pub fn write_calibration_long<W: Write>(cells: &[CalibrationCell], mut out: W) -> std::io::Result<()> {
    writeln!(out, "n,a_n,rejections,reps,y")?;
    for c in cells {
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{:.3}", c.n, c.a_n, opt(c.rejections), opt(c.reps), c.y)?;
    }
    Ok(())
}

/// Wide layout: rows are sample sizes, columns are a_n values.
pub fn write_calibration_wide<W: Write>(cells: &[CalibrationCell], mut out: W) -> std::io::Result<()> {
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.sort();
    ns.dedup();
    let mut ays: Vec<f64> = cells.iter().map(|c| c.a_n).collect();
    ays.sort_by(f64::total_cmp);
    ays.dedup();
    let header: Vec<String> = ays.iter().map(|a| format!("{a:.1}")).collect();
    writeln!(out, "n,{}", header.join(","))?;
    for n in ns {
        let row: Vec<String> = ays
            .iter()
            .map(|&a| {
                cells
                    .iter()
                    .find(|c| c.n == n && c.a_n == a)
                    .map(|c| format!("{:.3}", c.y))
                    .unwrap_or_default()
            })
            .collect();
        writeln!(out, "{n},{}", row.join(","))?;
    }
    Ok(())
}

/// Regression summary as `#`-prefixed lines.
pub fn write_fit_block<W: Write>(fit: &TuningFit, mut out: W) -> std::io::Result<()> {
    let (c0, c1) = fit.solved_constants();
    writeln!(out, "# observations={}", fit.observations)?;
    writeln!(out, "# y_hat = {:.3} + ({:.3})/n + ({:.3})*log(a_n - 1.4)", fit.intercept, fit.coef_inv_n, fit.coef_log_a)?;
    writeln!(out, "# r_squared={:.4} adj_r_squared={:.4}", fit.r_squared, fit.adj_r_squared)?;
    let sign = if c1 < 0.0 { '+' } else { '-' };
    writeln!(out, "# a_n(n) = exp({c0:.3} {sign} {:.3}/n) + 1.4", c1.abs())?;
    Ok(())
}

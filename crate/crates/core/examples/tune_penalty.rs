//! Fit the a_n tuning regression, first to the bundled reference
//! discrepancies, then to a small fresh experiment.
//!
//!     cargo run --release --example tune_penalty -- [reps]

use emtest::a_n_default;
use emtest::sim::{
    calibration_experiment, fit_tuning_regression, reference_calibration_cells, write_calibration_wide, write_fit_block,
    CalibrationSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(400);
    let stdout = std::io::stdout();

    println!("reference discrepancies y = logit(q_hat) - logit(0.05):");
    let cells = reference_calibration_cells();
    write_calibration_wide(&cells, stdout.lock())?;
    let fit = fit_tuning_regression(&cells)?;
    write_fit_block(&fit, stdout.lock())?;
    for n in [100, 500, 1000, 5000] {
        println!("  n={n:>5}: solved a_n = {:.3}, default a_n = {:.3}", fit.solved_a_n(n), a_n_default(n)?);
    }

    println!("\nfresh experiment, {reps} reps per cell:");
    let spec = CalibrationSpec {
        a_grid: vec![1.6, 2.4, 3.2, 4.0],
        n_grid: vec![200, 400],
        reps,
        seed: 5,
        ..CalibrationSpec::default()
    };
    let out = calibration_experiment(&spec, |done, total| eprint!("\r  cell {done}/{total}"))?;
    eprintln!();
    write_calibration_wide(&out.cells, stdout.lock())?;
    write_fit_block(&out.fit, stdout.lock())?;
    Ok(())
}

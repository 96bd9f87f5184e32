//! Compare the EM-test statistic with its large-sample quadratic
//! approximation on null samples of growing size.
//!
//!     cargo run --release --example asymptotic_check -- [reps]

use emtest::dist::{sample_normal, RngState};
use emtest::oracle::{asymptotic_em_statistic, hermite_stats, standardize, t_hat};
use emtest::{em_test, EmTestConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reps: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(40);
    let cfg = EmTestConfig::default();
    let shift = cfg.shift();

    println!("{:>7} {:>14} {:>14}", "n", "median |gap|", "max |gap|");
    for n in [200, 1000, 5000, 20_000] {
        let mut gaps = Vec::new();
        for r in 0..reps {
            let x = sample_normal(&mut RngState::new(10, r), 0.0, 1.0, n)?;
            let em = em_test(&x, &cfg)?.statistic;
            let (std, _) = standardize(&x)?;
            gaps.push((em - asymptotic_em_statistic(&std, shift)?).abs());
        }
        gaps.sort_by(f64::total_cmp);
        println!("{n:>7} {:>14.4} {:>14.4}", gaps[gaps.len() / 2], gaps[gaps.len() - 1]);
    }

    let x = sample_normal(&mut RngState::new(10, 999), 0.0, 1.0, 5000)?;
    let (std, _) = standardize(&x)?;
    let t = t_hat(&hermite_stats(&std)?)?;
    println!("\none sample, n=5000: t1={:.5} t2={:.5} t4={:.5}", t.t1, t.t2, t.t4);
    Ok(())
}

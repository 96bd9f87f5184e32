//! The limiting null law of the statistic: a shifted 50:50 mixture of χ²₁
//! and χ²₂. Prints critical values and checks the closed-form tail against
//! Monte Carlo draws.
//!
//!     cargo run --release --example limiting_law

use emtest::dist::RngState;
use emtest::oracle::mc_limiting_sample;
use emtest::{limiting_pvalue, EmTestConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shift = EmTestConfig::default().shift();
    println!("shift = 2 log 0.25 = {shift:.6}");

    for level in [0.10, 0.05, 0.01, 0.001] {
        // Bisection on the monotone tail.
        let (mut lo, mut hi) = (shift, shift + 50.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if limiting_pvalue(mid, shift) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        println!("  level {level:<6} critical statistic {:.4}", 0.5 * (lo + hi));
    }

    let mut draws = mc_limiting_sample(200_000, &mut RngState::new(1, 0))?;
    draws.sort_by(f64::total_cmp);
    println!("\n{:>6} {:>10} {:>10}", "s", "exact", "MC");
    for s in [0.5, 1.0, 2.0, 4.0, 6.0, 9.0] {
        let mc = (draws.len() - draws.partition_point(|d| *d <= s)) as f64 / draws.len() as f64;
        println!("{s:>6.1} {:>10.5} {:>10.5}", limiting_pvalue(s + shift, shift), mc);
    }
    Ok(())
}

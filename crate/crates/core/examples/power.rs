//! Power of the EM-test at n = 500 against `(1-α)N(0,1) + αN(μ,σ₂²)`.
//!
//!     cargo run --release --example power -- [reps] [seed]

use emtest::sim::{simulate_rejection_rate, GeneratorSpec};
use emtest::EmTestConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let reps: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(7);

    let cfg = EmTestConfig::default();
    // (α, σ₂², μ)
    let rows = [(0.05, 2.0, 1.5), (0.10, 1.0, 1.0), (0.07, 2.0, 2.0), (0.10, 0.5, 0.5)];
    println!("{:>6} {:>6} {:>6} {:>9} {:>8}", "alpha", "s2^2", "mu", "power(%)", "se(%)");
    for (alpha, s2, mu) in rows {
        let spec = GeneratorSpec::alternative(alpha, s2, mu);
        let r = simulate_rejection_rate(&spec, 500, reps, 0.05, &cfg, seed)?;
        println!("{alpha:>6.2} {s2:>6.1} {mu:>6.1} {:>9.1} {:>8.2}", 100.0 * r.rate, 100.0 * r.mc_stderr);
    }
    Ok(())
}

//! Simulated size of the EM-test under N(0,1).
//!
//!     cargo run --release --example type_one_error -- [n] [reps] [seed]

use emtest::sim::{simulate_statistics, worker_count, GeneratorSpec};
use emtest::EmTestConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let reps: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed: u64 = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(2024);

    let start = std::time::Instant::now();
    let stats = simulate_statistics(&GeneratorSpec::standard_null(), n, reps, &EmTestConfig::default(), seed, worker_count())?;
    println!("n={n} reps={reps} ({:.1}s)", start.elapsed().as_secs_f64());
    for level in [0.10, 0.05, 0.01] {
        let rate = stats.iter().filter(|(_, p)| *p < level).count() as f64 / reps as f64;
        let se = (rate * (1.0 - rate) / reps as f64).sqrt();
        println!("  level {:>4.1}%: rejected {:>5.2}% (se {:.2}%)", 100.0 * level, 100.0 * rate, 100.0 * se);
    }
    Ok(())
}

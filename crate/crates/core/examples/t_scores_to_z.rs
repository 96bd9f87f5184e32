//! Convert two-sample t-statistics to z-scores and p-values, then test the
//! z-scores for a contaminated empirical null.
//!
//!     cargo run --release --example t_scores_to_z -- [df]

use emtest::cli::{t_to_z, z_to_p};
use emtest::dist::RngState;
use emtest::{em_test, EmTestConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let df: u32 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let mut rng = RngState::new(3, 0);

    // t-statistics: mostly null, a few genes with a real shift.
    let t: Vec<f64> = (0..3000)
        .map(|i| {
            let chi: f64 = (0..df).map(|_| rng.standard_normal().powi(2)).sum();
            let shift = if i % 40 == 0 { 3.0 } else { 0.0 };
            (rng.standard_normal() + shift) / (chi / df as f64).sqrt()
        })
        .collect();

    let mut clamped = 0;
    let mut z = Vec::with_capacity(t.len());
    for &ti in &t {
        let r = t_to_z(ti, df)?;
        clamped += r.clamped as usize;
        z.push(r.z);
    }
    println!("{:>10} {:>10} {:>12}", "t", "z", "p");
    for i in [0, 40, 80, 600, 1200, 1800, 2400] {
        println!("{:>10.4} {:>10.4} {:>12.4e}", t[i], z[i], z_to_p(z[i]));
    }
    let small_p = z.iter().filter(|&&v| z_to_p(v) < 0.001).count();
    println!("{small_p} of {} scores have p < 0.001; {clamped} clamped", z.len());

    let r = em_test(&z, &EmTestConfig::default())?;
    let p = r.best_params;
    println!(
        "EM-test: M = {:.3}, p = {:.3e}; fit {:.3} N(0, {:.3}^2) + {:.3} N({:.3}, {:.3}^2)",
        r.statistic,
        r.p_value,
        1.0 - p.alpha(),
        p.sigma1(),
        p.alpha(),
        p.mu(),
        p.sigma2()
    );
    Ok(())
}

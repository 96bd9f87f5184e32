//! Machine-readable and text reports for a single EM-test.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::em::{EmTestConfig, EmTestResult, EmTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub alpha: f64,
    pub mu: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

/// How t-statistics were mapped to z-scores before testing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformInfo {
    pub df: u32,
    /// Inputs whose tail probability underflowed; their z was clamped.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub n: usize,
    pub statistic: f64,
    pub shift: f64,
    pub p_value: f64,
    pub a_n: f64,
    pub sigma0_sq: f64,
    pub pl_null: f64,
    pub alpha_grid: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub fit: FitSummary,
    pub best_index: usize,
    pub tied_indices: Vec<usize>,
    pub traces: Vec<EmTrace>,
    pub decisions: BTreeMap<String, bool>,
    pub transform: Option<TransformInfo>,
    pub seed: Option<u64>,
    pub source: String,
    pub label: String,
    pub version: String,
    pub input_digest: String,
}

/// Inputs to [`TestReport::new`] that do not come from the test itself.
#[derive(Debug, Clone, Default)]
pub struct ReportContext {
    pub levels: Vec<f64>,
    pub transform: Option<TransformInfo>,
    pub seed: Option<u64>,
    pub source: String,
    pub label: String,
    pub input_digest: String,
}

/// Key used for a level in the decision map, e.g. `0.05`.
pub fn level_key(level: f64) -> String {
    format!("{level}")
}

impl TestReport {
    pub fn new(result: &EmTestResult, cfg: &EmTestConfig, ctx: ReportContext) -> Self {
        let decisions = ctx.levels.iter().map(|&l| (level_key(l), result.p_value < l)).collect();
        let p = &result.best_params;
        TestReport {
            n: result.n,
            statistic: result.statistic,
            shift: result.shift,
            p_value: result.p_value,
            a_n: result.a_n_used,
            sigma0_sq: result.null_sigma0_sq,
            pl_null: result.pl_null,
            alpha_grid: cfg.alpha_grid.clone(),
            k: cfg.iterations,
            fit: FitSummary { alpha: p.alpha(), mu: p.mu(), sigma1: p.sigma1(), sigma2: p.sigma2() },
            best_index: result.best_index,
            tied_indices: result.tied_indices.clone(),
            traces: result.traces.clone(),
            decisions,
            transform: ctx.transform,
            seed: ctx.seed,
            source: ctx.source,
            label: ctx.label,
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_digest: ctx.input_digest,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report fields are finite");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let f = &self.fit;
        let mut out = String::new();
        let _ = writeln!(out, "EM-test for homogeneity ({}, n = {})", self.source, self.n);
        let _ = writeln!(out, "  statistic   {}", sig4(self.statistic));
        let _ = writeln!(out, "  shift       {}", sig4(self.shift));
        let _ = writeln!(out, "  p-value     {}", sig4(self.p_value));
        let _ = writeln!(out, "  a_n         {}", sig4(self.a_n));
        let _ = writeln!(out, "  sigma0^2    {}", sig4(self.sigma0_sq));
        let _ = writeln!(
            out,
            "  fit         {} N(0, {}^2) + {} N({}, {}^2)",
            sig4(1.0 - f.alpha),
            sig4(f.sigma1),
            sig4(f.alpha),
            sig4(f.mu),
            sig4(f.sigma2)
        );
        if let Some(t) = &self.transform {
            let _ = writeln!(out, "  input       t-statistics, df = {}, {} clamped", t.df, t.clamped);
        }
        for (level, reject) in &self.decisions {
            let verdict = if *reject { "reject homogeneity" } else { "do not reject" };
            let _ = writeln!(out, "  level {level:<6}{verdict}");
        }
        out
    }
}

/// `x` to four significant digits, in scientific notation outside
/// [1e-4, 1e6).
pub fn sig4(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (3 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // Rounding can carry into a new digit, e.g. 9.9996 -> 10.000.
        let digits = s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len();
        if digits > 4 && decimals > 0 {
            let decimals = decimals - 1;
            return format!("{x:.decimals$}");
        }
        s
    } else {
        format!("{x:.3e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{sample_normal, RngState};
    use crate::em::em_test;

    fn report() -> TestReport {
        let x = sample_normal(&mut RngState::new(8, 0), 0.0, 1.0, 200).unwrap();
        let cfg = EmTestConfig::default();
        let r = em_test(&x, &cfg).unwrap();
        TestReport::new(
            &r,
            &cfg,
            ReportContext { levels: vec![0.05, 0.01], source: "mem".into(), input_digest: "ab".into(), ..Default::default() },
        )
    }

    #[test]
    fn sig4_formats() {
        assert_eq!(sig4(41.0423), "41.04");
        assert_eq!(sig4(1.391), "1.391");
        assert_eq!(sig4(0.049), "0.04900");
        assert_eq!(sig4(-2.772589), "-2.773");
        assert_eq!(sig4(1.7e-10), "1.700e-10");
        assert_eq!(sig4(9.99996), "10.00");
        assert_eq!(sig4(123456.0), "123456");
        assert_eq!(sig4(0.0), "0");
    }

    #[test]
    fn json_round_trips() {
        let r = report();
        let json = r.to_json();
        let back: TestReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn json_has_stable_keys() {
        let v: serde_json::Value = serde_json::from_str(&report().to_json()).unwrap();
        for key in ["n", "statistic", "shift", "p_value", "a_n", "sigma0_sq", "alpha_grid", "K", "fit", "traces", "decisions", "version", "input_digest"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for key in ["alpha", "mu", "sigma1", "sigma2"] {
            assert!(v["fit"].get(key).is_some());
        }
        assert!(v["decisions"].get("0.05").is_some());
    }

    #[test]
    fn decisions_follow_p_value() {
        let r = report();
        for (k, d) in &r.decisions {
            assert_eq!(*d, r.p_value < k.parse::<f64>().unwrap());
        }
        let text = r.to_text();
        assert!(text.contains("statistic"));
        assert!(text.contains(" N(0, "));
    }
}

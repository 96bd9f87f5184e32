//! The contaminated normal mixture `(1-α)N(0,σ₁²) + αN(μ,σ₂²)`, its
//! log-likelihood, the penalties, and the null fit.

use serde::{Deserialize, Serialize};

use crate::dist::normal_logpdf_var;
use crate::error::{ensure_finite, Error, Result};

/// Variances are floored at this fraction of the null variance inside
/// penalized evaluations.
pub const MIN_VARIANCE_RATIO: f64 = 1e-12;

/// Parameters of the two-component model, stored as variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    alpha: f64,
    mu: f64,
    var1: f64,
    var2: f64,
}

impl MixtureParams {
    /// Build from standard deviations. `alpha` is the weight of the
    /// N(μ, σ₂²) component and must lie in (0, 1].
    pub fn new(alpha: f64, mu: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        ensure_finite("sigma1", sigma1)?;
        ensure_finite("sigma2", sigma2)?;
        Self::from_variances(alpha, mu, sigma1 * sigma1, sigma2 * sigma2)
    }

    pub fn from_variances(alpha: f64, mu: f64, var1: f64, var2: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("mu", mu), ("var1", var1), ("var2", var2)] {
            ensure_finite(name, v)?;
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0,1], got {alpha}")));
        }
        if var1 <= 0.0 || var2 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "component variances must be positive, got ({var1}, {var2})"
            )));
        }
        Ok(Self { alpha, mu, var1, var2 })
    }

    /// The homogeneous model N(0, var) written as a degenerate mixture.
    pub fn null(var: f64) -> Result<Self> {
        Self::from_variances(1.0, 0.0, var, var)
    }

    pub(crate) fn from_variances_unchecked(alpha: f64, mu: f64, var1: f64, var2: f64) -> Self {
        Self { alpha, mu, var1, var2 }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma1(&self) -> f64 {
        self.var1.sqrt()
    }

    pub fn sigma2(&self) -> f64 {
        self.var2.sqrt()
    }

    pub fn var1(&self) -> f64 {
        self.var1
    }

    pub fn var2(&self) -> f64 {
        self.var2
    }

    /// True when both components coincide with N(0, var1), so the density
    /// does not depend on alpha.
    pub fn is_homogeneous(&self) -> bool {
        self.alpha == 1.0 && self.mu == 0.0 || (self.mu == 0.0 && self.var1 == self.var2)
    }

    /// Rescale as if the data had been multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            alpha: self.alpha,
            mu: self.mu * c,
            var1: self.var1 * c * c,
            var2: self.var2 * c * c,
        }
    }
}

/// Strength of the variance penalty and the null variance it is anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    a_n: f64,
    sigma0_sq: f64,
}

impl PenaltyConfig {
    pub fn new(a_n: f64, sigma0_sq: f64) -> Result<Self> {
        ensure_finite("a_n", a_n)?;
        ensure_finite("sigma0_sq", sigma0_sq)?;
        if a_n <= 0.0 {
            return Err(Error::InvalidArgument(format!("a_n must be positive, got {a_n}")));
        }
        if sigma0_sq <= 0.0 {
            return Err(Error::InvalidArgument(format!("sigma0_sq must be positive, got {sigma0_sq}")));
        }
        Ok(Self { a_n, sigma0_sq })
    }

    pub fn a_n(&self) -> f64 {
        self.a_n
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    #[inline]
    pub(crate) fn penalty(&self, var: f64) -> f64 {
        let var = var.max(MIN_VARIANCE_RATIO * self.sigma0_sq);
        let r = self.sigma0_sq / var;
        -self.a_n * (r - r.ln())
    }
}

/// Per-observation log mixture density, evaluated with log-sum-exp.
#[inline]
pub(crate) fn log_mix_density(x: f64, p: &MixtureParams, log_a: f64, log_1ma: f64) -> f64 {
    let l2 = log_a + normal_logpdf_var(x, p.mu, p.var2);
    if p.alpha == 1.0 {
        return l2;
    }
    let l1 = log_1ma + normal_logpdf_var(x, 0.0, p.var1);
    let m = l1.max(l2);
    m + ((l1 - m).exp() + (l2 - m).exp()).ln()
}

/// Log-likelihood without validation. Homogeneous parameters take the
/// single-normal path, so they reproduce the null log-likelihood bit for bit.
pub(crate) fn log_likelihood_raw(p: &MixtureParams, data: &[f64]) -> f64 {
    if p.is_homogeneous() {
        let var = if p.alpha == 1.0 { p.var2 } else { p.var1 };
        return data.iter().map(|&x| normal_logpdf_var(x, 0.0, var)).sum();
    }
    let log_a = p.alpha.ln();
    let log_1ma = (-p.alpha).ln_1p();
    data.iter().map(|&x| log_mix_density(x, p, log_a, log_1ma)).sum()
}

fn check_data(data: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("data must be non-empty".into()));
    }
    if let Some(x) = data.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("data contains non-finite value {x}")));
    }
    Ok(())
}

/// `Σ log{(1-α)f(x;0,σ₁) + αf(x;μ,σ₂)}`.
pub fn log_likelihood(params: &MixtureParams, data: &[f64]) -> Result<f64> {
    check_data(data)?;
    Ok(log_likelihood_raw(params, data))
}

/// The mixing-proportion penalty `log α`.
pub fn penalty_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1], got {alpha}")));
    }
    Ok(alpha.ln())
}

/// The variance penalty `-a_n(σ̂₀²/σ² + log(σ²/σ̂₀²))`.
pub fn penalty_sigma(sigma_sq: f64, cfg: &PenaltyConfig) -> Result<f64> {
    if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
        return Err(Error::Domain(format!("sigma_sq must be positive and finite, got {sigma_sq}")));
    }
    Ok(cfg.penalty(sigma_sq))
}

/// Sum of the three penalty terms.
pub(crate) fn total_penalty(p: &MixtureParams, cfg: &PenaltyConfig) -> f64 {
    p.alpha.ln() + cfg.penalty(p.var1) + cfg.penalty(p.var2)
}

/// Penalized log-likelihood `l_n + p(α) + p_n(σ₁) + p_n(σ₂)`.
pub fn modified_log_likelihood(params: &MixtureParams, data: &[f64], cfg: &PenaltyConfig) -> Result<f64> {
    check_data(data)?;
    Ok(log_likelihood_raw(params, data) + total_penalty(params, cfg))
}

/// Result of fitting the homogeneous model N(0, σ²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullFit {
    pub sigma0_sq: f64,
    pub log_likelihood: f64,
    /// Penalized log-likelihood at `(1, 0, σ̂₀, σ̂₀)`; the penalties add `-2a_n`.
    pub pl_null: f64,
}

impl NullFit {
    pub fn params(&self) -> MixtureParams {
        MixtureParams::from_variances_unchecked(1.0, 0.0, self.sigma0_sq, self.sigma0_sq)
    }
}

/// Null variance estimate `Σx²/n` and the penalized log-likelihood there.
pub fn null_fit(data: &[f64], a_n: f64) -> Result<NullFit> {
    check_data(data)?;
    let sigma0_sq = data.iter().map(|x| x * x).sum::<f64>() / data.len() as f64;
    if sigma0_sq <= 0.0 {
        return Err(Error::DegenerateData("all observations are zero".into()));
    }
    let cfg = PenaltyConfig::new(a_n, sigma0_sq)?;
    let null = MixtureParams::from_variances_unchecked(1.0, 0.0, sigma0_sq, sigma0_sq);
    let log_likelihood = log_likelihood_raw(&null, data);
    Ok(NullFit {
        sigma0_sq,
        log_likelihood,
        pl_null: log_likelihood + total_penalty(&null, &cfg),
    })
}

/// Empirical tuning formula `a_n = exp(1.747 - 843.681/n) + 1.4`.
pub fn a_n_default(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    Ok((1.747 - 843.681 / n as f64).exp() + 1.4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(a: f64, v0: f64) -> PenaltyConfig {
        PenaltyConfig::new(a, v0).unwrap()
    }

    #[test]
    fn loglik_collapses_at_alpha_one() {
        let p = MixtureParams::new(1.0, 0.0, 7.0, 1.0).unwrap();
        assert_abs_diff_eq!(log_likelihood(&p, &[0.0]).unwrap(), -0.918_938_5, epsilon = 1e-7);
    }

    #[test]
    fn loglik_identical_components() {
        let data = [0.3, -1.2, 2.2, 0.0];
        let p = MixtureParams::new(0.3, 0.0, 1.7, 1.7).unwrap();
        let direct: f64 = data.iter().map(|&x| crate::dist::normal_logpdf(x, 0.0, 1.7).unwrap()).sum();
        assert_abs_diff_eq!(log_likelihood(&p, &data).unwrap(), direct, epsilon = 1e-12);
    }

    #[test]
    fn loglik_hand_value() {
        let p = MixtureParams::new(0.5, 1.0, 1.0, 1.0).unwrap();
        let expected = (0.5 * 0.398_942_3 + 0.5 * 0.241_970_7f64).ln();
        assert_abs_diff_eq!(log_likelihood(&p, &[0.0]).unwrap(), expected, epsilon = 1e-6);
        assert_abs_diff_eq!(log_likelihood(&p, &[0.0]).unwrap(), -1.1380, epsilon = 1e-4);
    }

    #[test]
    fn loglik_far_tail_is_finite() {
        let p = MixtureParams::new(0.05, 0.0, 1.0, 1.0e-3).unwrap();
        assert!(log_likelihood(&p, &[40.0, -35.0]).unwrap().is_finite());
        assert!(log_likelihood(&p, &[]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(MixtureParams::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(MixtureParams::new(1.1, 0.0, 1.0, 1.0).is_err());
        assert!(MixtureParams::new(0.5, 0.0, 0.0, 1.0).is_err());
        assert!(MixtureParams::new(0.5, f64::NAN, 1.0, 1.0).is_err());
        assert!(MixtureParams::new(1.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn alpha_penalty() {
        assert_eq!(penalty_alpha(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(penalty_alpha(0.25).unwrap(), -1.386_294, epsilon = 1e-6);
        assert_abs_diff_eq!(penalty_alpha(0.05).unwrap(), -2.995_732, epsilon = 1e-6);
        assert!(penalty_alpha(0.0).is_err());
        assert!(penalty_alpha(1.5).is_err());
    }

    #[test]
    fn sigma_penalty() {
        let c = cfg(2.0, 1.3);
        assert_eq!(penalty_sigma(1.3, &c).unwrap(), -2.0);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(penalty_sigma(e, &cfg(2.0, 1.0)).unwrap(), -2.735_76, epsilon = 1e-5);
        assert!(penalty_sigma(0.0, &c).is_err());
        // ratio form
        for k in [0.5, 3.0, 11.0] {
            let a = penalty_sigma(k * 0.7, &cfg(1.9, k * 1.3)).unwrap();
            let b = penalty_sigma(0.7, &cfg(1.9, 1.3)).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn sigma_penalty_concave_in_log_variance() {
        let c = cfg(2.5, 1.0);
        let f = |s: f64| penalty_sigma(s.exp(), &c).unwrap();
        let h = 1e-3;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=400 {
            let s = -4.0 + 0.02 * i as f64;
            let d2 = (f(s + h) - 2.0 * f(s) + f(s - h)) / (h * h);
            assert!(d2 < 0.0, "not concave at {s}");
            if f(s) > best.0 {
                best = (f(s), s);
            }
        }
        assert_abs_diff_eq!(best.1, 0.0, epsilon = 1e-9);
        assert!(penalty_sigma(1e-10, &c).unwrap() < -1e9);
    }

    #[test]
    fn modified_loglik_additivity() {
        let data = [0.5, -0.4, 2.0, 1.1, -3.0];
        let c = cfg(1.7, 0.9);
        let p = MixtureParams::new(0.2, 0.7, 0.8, 1.4).unwrap();
        let pl = modified_log_likelihood(&p, &data, &c).unwrap();
        let l = log_likelihood(&p, &data).unwrap();
        let pens = penalty_alpha(0.2).unwrap()
            + penalty_sigma(0.64, &c).unwrap()
            + penalty_sigma(1.4 * 1.4, &c).unwrap();
        assert_abs_diff_eq!(pl - l, pens, epsilon = 1e-12);

        let s0 = 0.9f64.sqrt();
        let at_null = MixtureParams::new(1.0, 0.0, s0, s0).unwrap();
        assert_abs_diff_eq!(
            modified_log_likelihood(&at_null, &data, &c).unwrap(),
            log_likelihood(&at_null, &data).unwrap() - 2.0 * 1.7,
            epsilon = 1e-12
        );
    }

    #[test]
    fn modified_loglik_falls_as_variance_vanishes() {
        let data = [0.0, 0.5, -0.5, 1.0];
        let c = cfg(2.0, 0.375);
        let mut prev = f64::INFINITY;
        for k in 2..10 {
            let v = 10f64.powi(-k);
            let p = MixtureParams::from_variances(0.5, 0.0, v, 0.375).unwrap();
            let pl = modified_log_likelihood(&p, &data, &c).unwrap();
            assert!(pl < prev);
            prev = pl;
        }
    }

    #[test]
    fn null_fit_values() {
        let f = null_fit(&[1.0, -1.0], 2.0).unwrap();
        assert_eq!(f.sigma0_sq, 1.0);
        assert_abs_diff_eq!(f.pl_null, f.log_likelihood - 4.0, epsilon = 1e-14);
        let g = null_fit(&[2.0, -2.0], 2.0).unwrap();
        assert_eq!(g.sigma0_sq, 4.0);
        assert!(matches!(null_fit(&[0.0, 0.0, 0.0], 2.0), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn null_fit_maximizes_restricted_pl() {
        let data = [0.3, -1.1, 2.4, 0.9, -0.2, 1.7];
        let a = 2.2;
        let f = null_fit(&data, a).unwrap();
        let c = cfg(a, f.sigma0_sq);
        for k in [0.5, 0.9, 0.99, 1.01, 1.1, 2.0] {
            let p = MixtureParams::null(k * f.sigma0_sq).unwrap();
            assert!(modified_log_likelihood(&p, &data, &c).unwrap() < f.pl_null);
        }
    }

    #[test]
    fn a_n_formula() {
        assert_abs_diff_eq!(a_n_default(500).unwrap(), 2.4615, epsilon = 1e-3);
        assert_abs_diff_eq!(a_n_default(1500).unwrap(), 4.669, epsilon = 1e-3);
        assert_abs_diff_eq!(a_n_default(100_000_000).unwrap(), 1.747f64.exp() + 1.4, epsilon = 1e-4);
        assert_abs_diff_eq!(1.747f64.exp() + 1.4, 7.138, epsilon = 1e-3);
        assert!(a_n_default(0).is_err());
        // For n below about 25 the exponential term is smaller than one ulp
        // of 1.4, so the value rounds to 1.4 itself.
        assert_eq!(a_n_default(1).unwrap(), 1.4);
        let mut prev = 1.4;
        for n in 1..5000 {
            let a = a_n_default(n).unwrap();
            assert!(a >= prev);
            if n >= 30 {
                assert!(a > prev && a > 1.4);
            }
            prev = a;
        }
    }

    proptest! {
        #[test]
        fn loglik_scale_family(
            alpha in 0.01f64..1.0,
            mu in -3.0f64..3.0,
            s1 in 0.3f64..3.0,
            s2 in 0.3f64..3.0,
            c in 0.1f64..10.0,
            data in proptest::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let p = MixtureParams::new(alpha, mu, s1, s2).unwrap();
            let scaled: Vec<f64> = data.iter().map(|x| x * c).collect();
            let lhs = log_likelihood(&p.scaled(c), &scaled).unwrap();
            let rhs = log_likelihood(&p, &data).unwrap() - data.len() as f64 * c.ln();
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn modified_loglik_bounded_above() {
        // Random search never beats a structured grid search by more than tolerance.
        use crate::dist::RngState;
        let data = [0.2, -0.7, 1.9, 0.4, -1.5, 3.1, 0.0, -0.3];
        let f = null_fit(&data, 2.0).unwrap();
        let c = cfg(2.0, f.sigma0_sq);
        let mut grid_best = f64::NEG_INFINITY;
        for ai in 1..=20 {
            for mi in 0..=40 {
                for v1i in 0..=20 {
                    for v2i in 0..=20 {
                        let p = MixtureParams::from_variances(
                            ai as f64 * 0.05,
                            -4.0 + 0.2 * mi as f64,
                            f.sigma0_sq * (0.1 + 0.2 * v1i as f64),
                            f.sigma0_sq * (0.1 + 0.2 * v2i as f64),
                        )
                        .unwrap();
                        grid_best = grid_best.max(modified_log_likelihood(&p, &data, &c).unwrap());
                    }
                }
            }
        }
        let mut rng = RngState::new(9, 0);
        for _ in 0..20_000 {
            let p = MixtureParams::from_variances(
                rng.uniform().max(1e-6),
                -6.0 + 12.0 * rng.uniform(),
                f.sigma0_sq * (-8.0 + 12.0 * rng.uniform()).exp(),
                f.sigma0_sq * (-8.0 + 12.0 * rng.uniform()).exp(),
            )
            .unwrap();
            assert!(modified_log_likelihood(&p, &data, &c).unwrap() <= grid_best + 0.5);
        }
    }
}

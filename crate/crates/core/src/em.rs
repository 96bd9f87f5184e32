//! The penalized EM-test.
//!
//! For every starting proportion α_j the engine maximizes the penalized
//! log-likelihood over (μ, σ₁, σ₂) with α frozen at α_j, then runs K-1
//! unconstrained EM iterations. The statistic is twice the largest gain in
//! penalized log-likelihood over the homogeneous fit.
//!
//! Internally all work happens on data divided by σ̂₀, so the variance
//! penalty is anchored at 1 and every quantity below is scale free. Gains
//! are accumulated term by term (likelihood difference, α penalty, and each
//! variance penalty relative to its value at σ̂₀), which makes the gain of
//! the homogeneous start equal to `log α_j` exactly.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dist::{chisq_survival, normal_logpdf_var, LN_SQRT_2PI};
use crate::error::{Error, Result};
use crate::mixture::{a_n_default, log_likelihood_raw, null_fit, MixtureParams, PenaltyConfig};

/// Smallest sample accepted by [`em_test`].
pub const MIN_SAMPLE_SIZE: usize = 10;

/// ECM sweeps run from each start before Newton polishing takes over.
const ECM_WARMUP: usize = 6;

/// Variance floor relative to σ̂₀² for the standardized chains.
const MIN_VAR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTestConfig {
    /// Starting mixing proportions α_1..α_J.
    pub alpha_grid: Vec<f64>,
    /// Total number of parameter updates K; Step 1 counts as the first.
    pub iterations: usize,
    /// A Step-1 chain stops once an iteration gains less than this much
    /// penalized log-likelihood.
    pub step1_tol: f64,
    pub step1_max_iter: usize,
    /// Quantile levels used as extra μ starts; μ = 0 is always included.
    pub step1_mu_starts: Vec<f64>,
    pub a_n_override: Option<f64>,
}

impl Default for EmTestConfig {
    fn default() -> Self {
        Self {
            alpha_grid: vec![0.05, 0.15, 0.25],
            iterations: 3,
            step1_tol: 1e-10,
            step1_max_iter: 2000,
            step1_mu_starts: vec![0.10, 0.25, 0.50, 0.75, 0.90],
            a_n_override: None,
        }
    }
}

impl EmTestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::InvalidArgument("alpha grid must not be empty".into()));
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::InvalidArgument(format!("alpha grid values must lie in (0,1), got {a}")));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidArgument("iteration count K must be at least 1".into()));
        }
        if !(self.step1_tol > 0.0) {
            return Err(Error::InvalidArgument("step1_tol must be positive".into()));
        }
        if self.step1_max_iter < 1 {
            return Err(Error::InvalidArgument("step1_max_iter must be at least 1".into()));
        }
        if let Some(q) = self.step1_mu_starts.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::InvalidArgument(format!("μ start quantile levels must lie in (0,1), got {q}")));
        }
        if let Some(a) = self.a_n_override {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!("a_n must be positive, got {a}")));
            }
        }
        Ok(())
    }

    /// `2 max_j log α_j`, the location of the limiting law.
    pub fn shift(&self) -> f64 {
        2.0 * self.alpha_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln()
    }
}

/// Parameters and objective values after one update of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub alpha: f64,
    pub mu: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Penalized log-likelihood on the original data scale.
    pub pl: f64,
    /// `M_n^(k)(α_j)`.
    pub m_stat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub alpha_init: f64,
    /// One record per k = 1..K.
    pub records: Vec<IterationRecord>,
    pub final_stat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmTestResult {
    pub n: usize,
    pub statistic: f64,
    pub shift: f64,
    pub p_value: f64,
    pub traces: Vec<EmTrace>,
    /// Grid index whose trace attains the statistic (first on ties).
    pub best_index: usize,
    /// Other grid indices whose final value equals the statistic.
    pub tied_indices: Vec<usize>,
    pub best_params: MixtureParams,
    pub null_sigma0_sq: f64,
    pub pl_null: f64,
    pub a_n_used: f64,
}

/// Posterior probabilities that each observation belongs to the N(μ, σ₂²)
/// component.
pub fn e_step(params: &MixtureParams, data: &[f64]) -> Result<Vec<f64>> {
    let alpha = params.alpha();
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DegeneratePosterior(alpha));
    }
    let mut w = vec![0.0; data.len()];
    e_step_into(params, data, &mut w);
    Ok(w)
}

/// Per-parameter constants for evaluating both component log densities.
struct Kernel {
    mu: f64,
    c1: f64,
    c2: f64,
    h1: f64,
    h2: f64,
}

impl Kernel {
    fn new(p: &MixtureParams) -> Self {
        let (v1, v2) = (p.var1(), p.var2());
        Self {
            mu: p.mu(),
            c1: (-p.alpha()).ln_1p() - LN_SQRT_2PI - 0.5 * v1.ln(),
            c2: p.alpha().ln() - LN_SQRT_2PI - 0.5 * v2.ln(),
            h1: 0.5 / v1,
            h2: 0.5 / v2,
        }
    }

    /// Posterior weight of the second component, together with the larger
    /// component log density `l` and the factor `f ∈ [1, 2]` such that the
    /// log mixture density is `l + ln f`.
    #[inline]
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let l1 = self.c1 - x * x * self.h1;
        let d = x - self.mu;
        let l2 = self.c2 - d * d * self.h2;
        if l2 >= l1 {
            let f = 1.0 + (l1 - l2).exp();
            (1.0 / f, l2, f)
        } else {
            let f = 1.0 + (l2 - l1).exp();
            ((f - 1.0) / f, l1, f)
        }
    }
}

/// Sums log densities given as `l + ln f`, taking one logarithm per block
/// of factors.
struct LogSum {
    linear: f64,
    logs: f64,
    prod: f64,
    count: u32,
}

impl LogSum {
    const BLOCK: u32 = 32;

    fn new() -> Self {
        Self { linear: 0.0, logs: 0.0, prod: 1.0, count: 0 }
    }

    #[inline]
    fn add(&mut self, l: f64, f: f64) {
        self.linear += l;
        self.prod *= f;
        self.count += 1;
        if self.count == Self::BLOCK {
            self.logs += self.prod.ln();
            self.prod = 1.0;
            self.count = 0;
        }
    }

    fn total(&self) -> f64 {
        self.linear + (self.logs + self.prod.ln())
    }
}

fn e_step_into(p: &MixtureParams, data: &[f64], w: &mut [f64]) {
    let k = Kernel::new(p);
    for (wi, &x) in w.iter_mut().zip(data) {
        *wi = k.eval(x).0;
    }
}

/// Weighted sufficient statistics for one M-step.
#[derive(Debug, Clone, Copy)]
struct Moments {
    sw: f64,
    swx: f64,
    s1x2: f64,
    n: f64,
}

impl Moments {
    fn collect(w: &[f64], data: &[f64]) -> Self {
        let mut m = Moments { sw: 0.0, swx: 0.0, s1x2: 0.0, n: data.len() as f64 };
        for (&wi, &x) in w.iter().zip(data) {
            m.sw += wi;
            m.swx += wi * x;
            m.s1x2 += (1.0 - wi) * x * x;
        }
        m
    }

    /// `Σ w (x - c)²`, via a second pass for accuracy.
    fn centered(w: &[f64], data: &[f64], c: f64) -> f64 {
        w.iter().zip(data).map(|(&wi, &x)| wi * (x - c) * (x - c)).sum()
    }
}

/// Closed-form penalized M-step.
///
/// `α⁺ = (Σw + 1)/(n + 1)`, `μ⁺ = Σwx/Σw`,
/// `σ₁²⁺ = (Σ(1-w)x² + 2a_nσ̂₀²)/(Σ(1-w) + 2a_n)` and
/// `σ₂²⁺ = (Σw(x-μ_current)² + 2a_nσ̂₀²)/(Σw + 2a_n)`.
pub fn m_step(weights: &[f64], data: &[f64], mu_current: f64, cfg: &PenaltyConfig) -> Result<MixtureParams> {
    if weights.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "weights ({}) and data ({}) differ in length",
            weights.len(),
            data.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("data must be non-empty".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && **w <= 1.0)) {
        return Err(Error::InvalidArgument(format!("weights must lie in [0,1], got {w}")));
    }
    let m = Moments::collect(weights, data);
    if m.sw <= 0.0 {
        return Err(Error::DegenerateWeights(m.sw));
    }
    let s2w = Moments::centered(weights, data, mu_current);
    let (alpha, mu, v1, v2) = m_step_values(&m, s2w, cfg.a_n(), cfg.sigma0_sq());
    MixtureParams::from_variances(alpha, mu, v1, v2)
}

fn m_step_values(m: &Moments, s2w_centered: f64, a: f64, v0: f64) -> (f64, f64, f64, f64) {
    let alpha = (m.sw + 1.0) / (m.n + 1.0);
    let mu = m.swx / m.sw;
    let v1 = (m.s1x2 + 2.0 * a * v0) / ((m.n - m.sw) + 2.0 * a);
    let v2 = (s2w_centered + 2.0 * a * v0) / (m.sw + 2.0 * a);
    (alpha, mu, v1.max(MIN_VAR * v0), v2.max(MIN_VAR * v0))
}

/// Limiting p-value of the statistic: `½χ₁² + ½χ₂²` shifted by `shift`.
pub fn limiting_pvalue(statistic: f64, shift: f64) -> f64 {
    let s = statistic - shift;
    if !(s > 0.0) {
        return 1.0;
    }
    // df is fixed to 1 and 2 and s > 0, so neither call can fail.
    let p1 = chisq_survival(s, 1).unwrap_or(0.0);
    let p2 = chisq_survival(s, 2).unwrap_or(0.0);
    0.5 * p1 + 0.5 * p2
}

/// Data standardized by σ̂₀ together with the null log-likelihood there.
struct Standardized {
    x: Vec<f64>,
    a: f64,
    l_null: f64,
}

/// Gain and M-step statistics gathered in one pass at a parameter value.
struct Sweep {
    gain: f64,
    m: Moments,
    s2w: f64,
}

/// Gain with its gradient and Hessian in (μ, log σ₁², log σ₂²).
struct NewtonTerms {
    gain: f64,
    g: Vector3<f64>,
    h: Matrix3<f64>,
}

impl Standardized {
    fn new(data: &[f64], sigma0_sq: f64, a: f64) -> Self {
        let s = sigma0_sq.sqrt();
        let x: Vec<f64> = data.iter().map(|v| v / s).collect();
        let l_null = x.iter().map(|&v| normal_logpdf_var(v, 0.0, 1.0)).sum();
        Self { x, a, l_null }
    }

    /// Variance penalty relative to its value at σ² = σ̂₀² (= 1 here).
    #[inline]
    fn rel_penalty(&self, v: f64) -> f64 {
        let v = v.max(MIN_VAR);
        let r = 1.0 / v;
        -self.a * ((r - 1.0) - r.ln())
    }

    /// `pl_n(θ) - pl_n(1, 0, σ̂₀, σ̂₀)` given `l_n(θ)` from the mixture kernel.
    /// Homogeneous points are re-evaluated with the single-normal density.
    fn gain_from(&self, p: &MixtureParams, ll: f64) -> f64 {
        let ll = if p.is_homogeneous() { log_likelihood_raw(p, &self.x) } else { ll };
        (ll - self.l_null) + p.alpha().ln() + self.rel_penalty(p.var1()) + self.rel_penalty(p.var2())
    }

    #[cfg(test)]
    fn gain(&self, p: &MixtureParams) -> f64 {
        self.sweep(p).gain
    }

    fn sweep(&self, p: &MixtureParams) -> Sweep {
        let k = Kernel::new(p);
        let mu = p.mu();
        let mut ll = LogSum::new();
        let mut s2w = 0.0;
        let mut m = Moments { sw: 0.0, swx: 0.0, s1x2: 0.0, n: self.x.len() as f64 };
        for &x in &self.x {
            let (w, l, f) = k.eval(x);
            ll.add(l, f);
            m.sw += w;
            m.swx += w * x;
            m.s1x2 += (1.0 - w) * x * x;
            let d = x - mu;
            s2w += w * d * d;
        }
        Sweep { gain: self.gain_from(p, ll.total()), m, s2w }
    }

    /// The ECM/EM update from the statistics of `s`. With `alpha_frozen`, α stays put.
    fn next_params(&self, p: &MixtureParams, s: &Sweep, alpha_frozen: bool) -> Option<MixtureParams> {
        if !(s.m.sw > 0.0) || !(s.m.sw.is_finite()) {
            return None;
        }
        let (alpha, mu, v1, v2) = m_step_values(&s.m, s.s2w, self.a, 1.0);
        let alpha = if alpha_frozen { p.alpha() } else { alpha };
        Some(MixtureParams::from_variances_unchecked(alpha, mu, v1, v2))
    }

    /// Gradient and Hessian of the gain in (μ, log σ₁², log σ₂²) with α fixed.
    fn newton_terms(&self, p: &MixtureParams) -> NewtonTerms {
        let (mu, v1, v2) = (p.mu(), p.var1(), p.var2());
        let k = Kernel::new(p);
        let (i1, i2) = (1.0 / v1, 1.0 / v2);
        let mut ll = LogSum::new();
        let mut g = Vector3::zeros();
        let mut h = Matrix3::zeros();
        for &x in &self.x {
            let (w, l, f) = k.eval(x);
            ll.add(l, f);
            let u = 1.0 - w;
            let d = x - mu;
            let x2h = 0.5 * x * x * i1;
            let d2h = 0.5 * d * d * i2;
            let a1 = x2h - 0.5;
            let b = d * i2;
            let c = d2h - 0.5;
            let q = Vector3::new(w * b, u * a1, w * c);
            g += q;
            h[(0, 0)] += w * (b * b - i2) - q[0] * q[0];
            h[(0, 1)] -= q[0] * q[1];
            h[(0, 2)] += w * (b * c - b) - q[0] * q[2];
            h[(1, 1)] += u * (a1 * a1 - x2h) - q[1] * q[1];
            h[(1, 2)] -= q[1] * q[2];
            h[(2, 2)] += w * (c * c - d2h) - q[2] * q[2];
        }
        h[(1, 0)] = h[(0, 1)];
        h[(2, 0)] = h[(0, 2)];
        h[(2, 1)] = h[(1, 2)];
        // p(s) + a = -a(e^{-s} + s - 1) in s = log σ².
        g[1] += self.a * (i1 - 1.0);
        g[2] += self.a * (i2 - 1.0);
        h[(1, 1)] -= self.a * i1;
        h[(2, 2)] -= self.a * i2;
        NewtonTerms { gain: self.gain_from(p, ll.total()), g, h }
    }

    /// Maximize the gain over (μ, σ₁², σ₂²) from `start` with α held fixed:
    /// ECM sweeps, then damped Newton steps. Every accepted step increases
    /// the gain up to rounding, so the result is never below the starting
    /// value.
    fn profile_chain(&self, start: MixtureParams, tol: f64, max_iter: usize) -> (MixtureParams, f64) {
        let mut cur = start;
        let mut cur_s = self.sweep(&cur);
        let mut iter = 0;

        while iter < ECM_WARMUP.min(max_iter) {
            iter += 1;
            let Some(next) = self.next_params(&cur, &cur_s, true) else { break };
            let next_s = self.sweep(&next);
            if !(next_s.gain >= cur_s.gain) {
                break;
            }
            let improvement = next_s.gain - cur_s.gain;
            cur = next;
            cur_s = next_s;
            if improvement < tol {
                break;
            }
        }

        let mut cur_gain = cur_s.gain;
        if iter >= max_iter {
            return (cur, cur_gain);
        }
        let mut terms = self.newton_terms(&cur);
        while iter < max_iter {
            iter += 1;
            let Some(step) = damped_newton_step(&terms.g, &terms.h) else { break };
            let predicted = terms.g.dot(&step);
            if !(predicted > 2.0 * tol) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = None;
            while t > 1e-12 {
                let trial = MixtureParams::from_variances_unchecked(
                    cur.alpha(),
                    cur.mu() + t * step[0],
                    (cur.var1().ln() + t * step[1]).exp().max(MIN_VAR),
                    (cur.var2().ln() + t * step[2]).exp().max(MIN_VAR),
                );
                let trial_terms = self.newton_terms(&trial);
                if trial_terms.gain >= cur_gain + 1e-4 * t * predicted {
                    accepted = Some((trial, trial_terms));
                    break;
                }
                t *= 0.5;
            }
            let Some((next, next_terms)) = accepted else { break };
            let improvement = next_terms.gain - cur_gain;
            cur = next;
            cur_gain = next_terms.gain;
            terms = next_terms;
            if improvement < tol && t == 1.0 {
                break;
            }
        }
        // Final full Newton step to settle the parameters, kept unless the
        // gain drops by more than rounding noise.
        if iter < max_iter {
            if let Some(step) = damped_newton_step(&terms.g, &terms.h) {
                let trial = MixtureParams::from_variances_unchecked(
                    cur.alpha(),
                    cur.mu() + step[0],
                    (cur.var1().ln() + step[1]).exp().max(MIN_VAR),
                    (cur.var2().ln() + step[2]).exp().max(MIN_VAR),
                );
                let g = self.sweep(&trial).gain;
                let noise = 64.0 * f64::EPSILON * (1.0 + self.l_null.abs());
                if g >= cur_gain - noise {
                    cur = trial;
                    cur_gain = g;
                }
            }
        }
        (cur, cur_gain)
    }

    /// Step 1 for one grid value: the best chain over all starts.
    fn step1(&self, alpha: f64, mu_starts: &[f64], tol: f64, max_iter: usize) -> (MixtureParams, f64) {
        let mut best: Option<(MixtureParams, f64)> = None;
        for &mu0 in mu_starts {
            let start = MixtureParams::from_variances_unchecked(alpha, mu0, 1.0, 1.0);
            let (p, g) = self.profile_chain(start, tol, max_iter);
            if best.as_ref().is_none_or(|(_, bg)| g > *bg) {
                best = Some((p, g));
            }
        }
        best.expect("at least the μ = 0 start is present")
    }
}

/// Levenberg-damped Newton direction for maximizing a function with
/// gradient `g` and Hessian `h`.
fn damped_newton_step(g: &Vector3<f64>, h: &Matrix3<f64>) -> Option<Vector3<f64>> {
    if !g.iter().chain(h.iter()).all(|v| v.is_finite()) {
        return None;
    }
    let neg = -h;
    let scale = neg.diagonal().abs().max().max(1e-12);
    let mut lambda = 0.0;
    for _ in 0..40 {
        let m = neg + Matrix3::identity() * lambda;
        if let Some(chol) = m.cholesky() {
            return Some(chol.solve(g));
        }
        lambda = if lambda == 0.0 { 1e-10 * scale } else { lambda * 10.0 };
    }
    None
}

fn mu_starts(x: &[f64], levels: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut starts = vec![0.0];
    for &q in levels {
        // Linear interpolation between order statistics.
        let h = (n - 1) as f64 * q;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        starts.push(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]));
    }
    starts
}

/// Step 1 with α fixed at `alpha_j`: approximately maximize the penalized
/// log-likelihood over (μ, σ₁, σ₂), starting from μ = 0 and from the
/// configured sample quantiles with σ₁ = σ₂ = σ̂₀.
///
/// Returns the best endpoint and its penalized log-likelihood. The
/// homogeneous start is always among the candidates.
pub fn step1_profile_fit(
    alpha_j: f64,
    data: &[f64],
    cfg: &EmTestConfig,
    pen: &PenaltyConfig,
) -> Result<(MixtureParams, f64)> {
    if !(alpha_j > 0.0 && alpha_j < 1.0) {
        return Err(Error::Domain(format!("alpha_j must lie in (0,1), got {alpha_j}")));
    }
    cfg.validate()?;
    if data.is_empty() || data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("data must be non-empty and finite".into()));
    }
    let std = Standardized::new(data, pen.sigma0_sq(), pen.a_n());
    let starts = mu_starts(&std.x, &cfg.step1_mu_starts);
    let (p, _) = std.step1(alpha_j, &starts, cfg.step1_tol, cfg.step1_max_iter);
    let raw = p.scaled(pen.sigma0_sq().sqrt());
    let pl = crate::mixture::modified_log_likelihood(&raw, data, pen)?;
    Ok((raw, pl))
}

/// Run the EM-test on `data`.
pub fn em_test(data: &[f64], cfg: &EmTestConfig) -> Result<EmTestResult> {
    cfg.validate()?;
    let n = data.len();
    if n < MIN_SAMPLE_SIZE {
        return Err(Error::DegenerateData(format!(
            "need at least {MIN_SAMPLE_SIZE} observations, got {n}"
        )));
    }
    let a = match cfg.a_n_override {
        Some(a) => a,
        None => a_n_default(n)?,
    };
    let null = null_fit(data, a)?;
    let scale = null.sigma0_sq.sqrt();
    let std = Standardized::new(data, null.sigma0_sq, a);
    let starts = mu_starts(&std.x, &cfg.step1_mu_starts);

    let record = |p: &MixtureParams, gain: f64| {
        let raw = p.scaled(scale);
        IterationRecord {
            alpha: raw.alpha(),
            mu: raw.mu(),
            sigma1: raw.sigma1(),
            sigma2: raw.sigma2(),
            pl: null.pl_null + gain,
            m_stat: 2.0 * gain,
        }
    };

    let mut traces = Vec::with_capacity(cfg.alpha_grid.len());
    let mut finals = Vec::with_capacity(cfg.alpha_grid.len());
    for &alpha_j in &cfg.alpha_grid {
        let (mut cur, cur_gain) = std.step1(alpha_j, &starts, cfg.step1_tol, cfg.step1_max_iter);
        let mut records = vec![record(&cur, cur_gain)];
        let mut cur_s = std.sweep(&cur);
        let mut cur_gain = cur_gain;
        for _ in 1..cfg.iterations {
            if let Some(next) = std.next_params(&cur, &cur_s, false) {
                let next_s = std.sweep(&next);
                // EM never decreases pl_n; a rounding-level dip keeps the old point.
                if next_s.gain >= cur_gain {
                    cur = next;
                    cur_gain = next_s.gain;
                    cur_s = next_s;
                }
            }
            records.push(record(&cur, cur_gain));
        }
        finals.push((cur, cur_gain));
        traces.push(EmTrace {
            alpha_init: alpha_j,
            final_stat: 2.0 * cur_gain,
            records,
        });
    }

    let mut best_index = 0;
    for (j, t) in traces.iter().enumerate() {
        if t.final_stat > traces[best_index].final_stat {
            best_index = j;
        }
    }
    let statistic = traces[best_index].final_stat;
    let tied_indices = traces
        .iter()
        .enumerate()
        .filter(|(j, t)| *j != best_index && t.final_stat == statistic)
        .map(|(j, _)| j)
        .collect();
    let shift = cfg.shift();
    Ok(EmTestResult {
        n,
        statistic,
        shift,
        p_value: limiting_pvalue(statistic, shift),
        traces,
        best_index,
        tied_indices,
        best_params: finals[best_index].0.scaled(scale),
        null_sigma0_sq: null.sigma0_sq,
        pl_null: null.pl_null,
        a_n_used: a,
    })
}

/// The fitted model `(1-α)N(0,σ₁²) + αN(μ,σ₂²)` attaining the statistic.
pub fn fit_report(data: &[f64], cfg: &EmTestConfig) -> Result<MixtureParams> {
    Ok(em_test(data, cfg)?.best_params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{sample_normal, RngState};
    use crate::mixture::modified_log_likelihood;
    use approx::assert_abs_diff_eq;

    fn normal_sample(seed: u64, n: usize) -> Vec<f64> {
        sample_normal(&mut RngState::new(seed, 0), 0.0, 1.0, n).unwrap()
    }

    #[test]
    fn e_step_identical_components() {
        let p = MixtureParams::new(0.3, 0.0, 1.2, 1.2).unwrap();
        for w in e_step(&p, &[-2.0, 0.0, 0.7, 5.0]).unwrap() {
            assert_abs_diff_eq!(w, 0.3, epsilon = 1e-14);
        }
        let half = MixtureParams::new(0.5, 0.0, 1.0, 1.0).unwrap();
        assert!(e_step(&half, &[1.0, -3.0]).unwrap().iter().all(|w| (w - 0.5).abs() < 1e-15));
    }

    #[test]
    fn e_step_hand_value() {
        let p = MixtureParams::new(0.5, 3.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(e_step(&p, &[3.0]).unwrap()[0], 0.989_01, epsilon = 1e-4);
    }

    #[test]
    fn e_step_rejects_boundary_alpha() {
        let p = MixtureParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        assert!(matches!(e_step(&p, &[0.0]), Err(Error::DegeneratePosterior(_))));
    }

    #[test]
    fn e_step_weights_bounded_and_monotone() {
        let p = MixtureParams::new(0.1, 2.0, 1.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..200).map(|i| -30.0 + 0.3 * i as f64).collect();
        let w = e_step(&p, &xs).unwrap();
        assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        // Equal variances: the density ratio is increasing in x.
        assert!(w.windows(2).all(|p| p[1] >= p[0]));
        assert!(w.last().unwrap() > &0.999_999);
    }

    #[test]
    fn m_step_closed_forms() {
        let cfg = PenaltyConfig::new(2.0, 1.0).unwrap();
        let data = [0.5, -1.0, 2.0, 0.1, -0.3, 1.4, 0.0, -2.2, 0.9, 0.6];
        let mut w = vec![0.0; 10];
        w[2] = 1.0;
        w[5] = 1.0;
        let p = m_step(&w, &data, 0.0, &cfg).unwrap();
        assert_abs_diff_eq!(p.alpha(), 3.0 / 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.mu(), 1.7, epsilon = 1e-12);

        // Symmetric data, equal weights.
        let sym = [-2.0, -1.0, 1.0, 2.0];
        let p = m_step(&[0.3; 4], &sym, 0.4, &cfg).unwrap();
        assert_abs_diff_eq!(p.mu(), 0.0, epsilon = 1e-15);

        // Σ(1-w)x² = 4 with n = 4 and w → 0: σ₁² = (4 + 4)/(4 + 4).
        let one = [1.0, -1.0, 1.0, -1.0];
        let eps = 1e-12;
        let p = m_step(&[eps; 4], &one, 0.0, &cfg).unwrap();
        assert_abs_diff_eq!(p.var1(), 1.0, epsilon = 1e-9);

        assert!(matches!(m_step(&[0.0; 4], &one, 0.0, &cfg), Err(Error::DegenerateWeights(_))));
        assert!(m_step(&[0.1; 3], &one, 0.0, &cfg).is_err());
    }

    #[test]
    fn m_step_alpha_matches_numeric_maximizer() {
        // Golden-section search on Σ(1-w)log(1-α) + Σw log α + log α.
        let (n, sw) = (10.0, 2.0);
        let f = |a: f64| (n - sw) * (1.0 - a).ln() + sw * a.ln() + a.ln();
        let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let m1 = hi - r * (hi - lo);
            let m2 = lo + r * (hi - lo);
            if f(m1) < f(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        assert_abs_diff_eq!(0.5 * (lo + hi), 0.272_727, epsilon = 1e-6);
    }

    #[test]
    fn limiting_pvalue_values() {
        assert_eq!(limiting_pvalue(-1.0, -1.0), 1.0);
        assert_eq!(limiting_pvalue(-3.0, -1.0), 1.0);
        let shift = 2.0 * 0.25f64.ln();
        let p = limiting_pvalue(41.042, shift);
        let s: f64 = 41.042 - shift;
        let direct = (1.0 - crate::dist::normal_cdf(s.sqrt())) + 0.5 * (-s / 2.0).exp();
        assert!((p / direct - 1.0).abs() < 1e-3, "{p} vs {direct}");
        assert!(p / 1.7e-10 < 1.2 && 1.7e-10 / p < 1.2, "p = {p}");
    }

    #[test]
    fn config_validation() {
        assert!(EmTestConfig::default().validate().is_ok());
        let bad = |f: fn(&mut EmTestConfig)| {
            let mut c = EmTestConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.alpha_grid.clear()));
        assert!(bad(|c| c.alpha_grid = vec![0.0]));
        assert!(bad(|c| c.alpha_grid = vec![1.0]));
        assert!(bad(|c| c.iterations = 0));
        assert!(bad(|c| c.step1_tol = 0.0));
        assert!(bad(|c| c.a_n_override = Some(-1.0)));
        assert_abs_diff_eq!(EmTestConfig::default().shift(), -2.772_589, epsilon = 1e-6);
    }

    #[test]
    fn newton_terms_match_finite_differences() {
        let x = normal_sample(5, 300);
        let s0 = x.iter().map(|v| v * v).sum::<f64>() / 300.0;
        let std = Standardized::new(&x, s0, 2.3);
        let p = MixtureParams::from_variances_unchecked(0.15, 0.4, 0.8, 1.7);
        let NewtonTerms { g, h, .. } = std.newton_terms(&p);
        let f = |t: Vector3<f64>| {
            std.gain(&MixtureParams::from_variances_unchecked(0.15, t[0], t[1].exp(), t[2].exp()))
        };
        let t0 = Vector3::new(0.4, 0.8f64.ln(), 1.7f64.ln());
        let eps = 1e-5;
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = eps;
            let fd = (f(t0 + e) - f(t0 - e)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()), "grad {i}: {fd} vs {}", g[i]);
            for j in 0..3 {
                let mut e2 = Vector3::zeros();
                e2[j] = eps;
                let fd2 = (f(t0 + e + e2) - f(t0 + e - e2) - f(t0 - e + e2) + f(t0 - e - e2)) / (4.0 * eps * eps);
                assert!((fd2 - h[(i, j)]).abs() < 1e-3 * (1.0 + h[(i, j)].abs()), "hess {i}{j}: {fd2} vs {}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn step1_is_stationary() {
        let cfg = EmTestConfig::default();
        for seed in 0..5 {
            let x = normal_sample(100 + seed, 400);
            let n = x.len() as f64;
            let s0 = x.iter().map(|v| v * v).sum::<f64>() / n;
            let pen = PenaltyConfig::new(a_n_default(400).unwrap(), s0).unwrap();
            let (p, pl) = step1_profile_fit(0.15, &x, &cfg, &pen).unwrap();
            assert_abs_diff_eq!(pl, modified_log_likelihood(&p, &x, &pen).unwrap(), epsilon = 1e-9);
            // Central differences of pl_n in (μ, σ₁², σ₂²).
            let f = |mu: f64, v1: f64, v2: f64| {
                modified_log_likelihood(&MixtureParams::from_variances(0.15, mu, v1, v2).unwrap(), &x, &pen).unwrap()
            };
            let h = 1e-6;
            let grads = [
                (f(p.mu() + h, p.var1(), p.var2()) - f(p.mu() - h, p.var1(), p.var2())) / (2.0 * h),
                (f(p.mu(), p.var1() + h, p.var2()) - f(p.mu(), p.var1() - h, p.var2())) / (2.0 * h),
                (f(p.mu(), p.var1(), p.var2() + h) - f(p.mu(), p.var1(), p.var2() - h)) / (2.0 * h),
            ];
            for g in grads {
                assert!(g.abs() < 1e-3 * n, "gradient {g}");
                assert!(g.abs() < 1e-3, "gradient {g} not tight");
            }
            let null_start = MixtureParams::new(0.15, 0.0, s0.sqrt(), s0.sqrt()).unwrap();
            assert!(pl >= modified_log_likelihood(&null_start, &x, &pen).unwrap());
        }
    }

    #[test]
    fn step1_two_point_data_stays_at_null() {
        let x = [-1.0, 1.0];
        let pen = PenaltyConfig::new(2.0, 1.0).unwrap();
        let (_, pl) = step1_profile_fit(0.05, &x, &EmTestConfig::default(), &pen).unwrap();
        let null_start = MixtureParams::new(0.05, 0.0, 1.0, 1.0).unwrap();
        let pl0 = modified_log_likelihood(&null_start, &x, &pen).unwrap();
        assert!(pl >= pl0);
        assert!(pl - pl0 < 1e-6, "moved by {}", pl - pl0);
    }

    #[test]
    fn em_test_basic_invariants() {
        let x = normal_sample(77, 500);
        let cfg = EmTestConfig::default();
        let r = em_test(&x, &cfg).unwrap();
        assert_eq!(r.traces.len(), 3);
        assert!(r.traces.iter().all(|t| t.records.len() == 3));
        assert!(r.statistic >= r.shift);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        let max = r.traces.iter().map(|t| t.final_stat).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.statistic, max);
        for t in &r.traces {
            for w in t.records.windows(2) {
                assert!(w[1].pl >= w[0].pl - 1e-9);
            }
            assert_eq!(t.final_stat, t.records.last().unwrap().m_stat);
        }
        // Recorded pl matches a direct evaluation on the raw data.
        let pen = PenaltyConfig::new(r.a_n_used, r.null_sigma0_sq).unwrap();
        let rec = r.traces[r.best_index].records.last().unwrap();
        let p = MixtureParams::new(rec.alpha, rec.mu, rec.sigma1, rec.sigma2).unwrap();
        assert_abs_diff_eq!(modified_log_likelihood(&p, &x, &pen).unwrap(), rec.pl, epsilon = 1e-8);
        let b = r.best_params;
        for (u, v) in [(b.alpha(), p.alpha()), (b.mu(), p.mu()), (b.var1(), p.var1()), (b.var2(), p.var2())] {
            assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0), "{u} vs {v}");
        }
    }

    #[test]
    fn em_test_rejects_degenerate_inputs() {
        let cfg = EmTestConfig::default();
        assert!(matches!(em_test(&[1.0; 9], &cfg), Err(Error::DegenerateData(_))));
        assert!(matches!(em_test(&[0.0; 20], &cfg), Err(Error::DegenerateData(_))));
        let mut x = normal_sample(1, 20);
        x[3] = f64::NAN;
        assert!(em_test(&x, &cfg).is_err());
    }

    #[test]
    fn k_equal_one_uses_step1_only() {
        let x = normal_sample(8, 300);
        let cfg = EmTestConfig { iterations: 1, ..EmTestConfig::default() };
        let r = em_test(&x, &cfg).unwrap();
        assert!(r.traces.iter().all(|t| t.records.len() == 1));
        let r3 = em_test(&x, &EmTestConfig::default()).unwrap();
        assert!(r3.statistic >= r.statistic - 1e-12);
    }

    #[test]
    fn em_test_is_deterministic() {
        let x = normal_sample(3, 250);
        let a = em_test(&x, &EmTestConfig::default()).unwrap();
        let b = em_test(&x, &EmTestConfig::default()).unwrap();
        assert_eq!(a.statistic, b.statistic);
        assert_eq!(a.traces, b.traces);
        assert_eq!(fit_report(&x, &EmTestConfig::default()).unwrap(), a.best_params);
    }

    #[test]
    fn single_alpha_grid_shift() {
        let x = normal_sample(4, 100);
        let cfg = EmTestConfig { alpha_grid: vec![0.5], ..EmTestConfig::default() };
        let r = em_test(&x, &cfg).unwrap();
        assert_abs_diff_eq!(r.shift, -1.386_294, epsilon = 1e-6);
    }
}

//! Large-sample representation of the EM-test statistic.
//!
//! Under the null and after scaling the data to unit null variance, the
//! statistic behaves like `(ΣX)²/ΣX² + {(ΣV)⁺}²/ΣV² + shift` where
//! `V = (X⁴ - 6X² + 3)/24` is the fourth Hermite polynomial. Functions here
//! compute that representation directly from the data so that it can be set
//! against the output of [`crate::em::em_test`].
//!
//! All functions expect standardized data; [`standardize`] performs the
//! division by σ̂₀.

use serde::{Deserialize, Serialize};

use crate::dist::RngState;
use crate::error::{Error, Result};

/// Sums of the Hermite transforms X, Z = (X²-1)/2, U = (X³-3X)/6 and
/// V = (X⁴-6X²+3)/24 and of their squares.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HermiteStats {
    pub n: usize,
    pub sum_x: f64,
    pub sum_x_sq: f64,
    pub sum_z: f64,
    pub sum_z_sq: f64,
    pub sum_u: f64,
    pub sum_u_sq: f64,
    pub sum_v: f64,
    pub sum_v_sq: f64,
}

/// Hermite transforms `(Z, U, V)` of one observation.
#[inline]
pub fn hermite_terms(x: f64) -> (f64, f64, f64) {
    let x2 = x * x;
    ((x2 - 1.0) / 2.0, (x2 * x - 3.0 * x) / 6.0, (x2 * x2 - 6.0 * x2 + 3.0) / 24.0)
}

/// Divide by `σ̂₀ = sqrt(Σx²/n)`; returns the scaled data and σ̂₀.
pub fn standardize(data: &[f64]) -> Result<(Vec<f64>, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("data must be non-empty".into()));
    }
    let s0 = (data.iter().map(|x| x * x).sum::<f64>() / data.len() as f64).sqrt();
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(Error::DegenerateData(format!("null scale is {s0}")));
    }
    Ok((data.iter().map(|x| x / s0).collect(), s0))
}

/// Accumulate [`HermiteStats`] over standardized data.
pub fn hermite_stats(data: &[f64]) -> Result<HermiteStats> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("data must be non-empty".into()));
    }
    let mut s = HermiteStats { n: data.len(), ..HermiteStats::default() };
    for &x in data {
        let (z, u, v) = hermite_terms(x);
        s.sum_x += x;
        s.sum_x_sq += x * x;
        s.sum_z += z;
        s.sum_z_sq += z * z;
        s.sum_u += u;
        s.sum_u_sq += u * u;
        s.sum_v += v;
        s.sum_v_sq += v * v;
    }
    Ok(s)
}

/// Maximizer of the quadratic approximation in (t₁, t₂, t₄), t₄ ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct THat {
    pub t1: f64,
    pub t2: f64,
    pub t4: f64,
}

pub fn t_hat(stats: &HermiteStats) -> Result<THat> {
    if !(stats.sum_x_sq > 0.0 && stats.sum_z_sq > 0.0 && stats.sum_v_sq > 0.0) {
        return Err(Error::DegenerateData("a Hermite sum of squares is zero".into()));
    }
    Ok(THat {
        t1: stats.sum_x / stats.sum_x_sq,
        t2: stats.sum_z / stats.sum_z_sq,
        t4: stats.sum_v.max(0.0) / stats.sum_v_sq,
    })
}

/// `(ΣX)²/ΣX² + {(ΣV)⁺}²/ΣV² + shift` on standardized data.
pub fn asymptotic_em_statistic(data: &[f64], shift: f64) -> Result<f64> {
    let s = hermite_stats(data)?;
    t_hat(&s)?;
    let pos_v = s.sum_v.max(0.0);
    Ok(s.sum_x * s.sum_x / s.sum_x_sq + pos_v * pos_v / s.sum_v_sq + shift)
}

/// Draws from `½χ₁² + ½χ₂²`: each draw squares one or two fresh normals
/// with equal probability.
pub fn mc_limiting_sample(draws: usize, state: &mut RngState) -> Result<Vec<f64>> {
    if draws < 1 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    Ok((0..draws)
        .map(|_| {
            let pick_two = state.uniform() < 0.5;
            let a = state.standard_normal();
            let b = state.standard_normal();
            if pick_two {
                a * a + b * b
            } else {
                a * a
            }
        })
        .collect())
}

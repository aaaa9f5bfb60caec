//! Closed-form relations of the critical state.
//!
//! At criticality every collapse triggers on average exactly one further
//! collapse. With a power-law in-degree distribution `P(k) = q k^-gamma` and
//! branching probability `P_br = q (omega k)^-gamma` this pins the leverage
//! level `omega = q * zeta(2 gamma - 1)^(1/gamma)`, and the avalanche
//! exponent follows the degree exponent as `m = 3 gamma / 2 - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounds on the degree exponent implied by the network geometry.
pub const GAMMA_MIN: f64 = 2.0;
pub const GAMMA_MAX: f64 = 3.0;
/// Matching bounds on the avalanche CCDF exponent.
pub const M_MIN: f64 = 2.0;
pub const M_MAX: f64 = 3.5;

const ZETA_DIRECT_TERMS: usize = 1000;

// B_2, B_4, B_6, B_8 divided by (2k)!.
const EM_COEFFS: [f64; 4] = [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30_240.0, -1.0 / 1_209_600.0];

/// Riemann zeta for real `s > 1`.
///
/// Direct sum of the first 999 terms plus the Euler-Maclaurin tail with four
/// Bernoulli corrections.
pub fn riemann_zeta(s: f64) -> Result<f64> {
    hurwitz_zeta(s, 1.0)
}

/// Hurwitz zeta `sum_{k>=0} (k + a)^-s` for `s > 1`, `a > 0`.
pub fn hurwitz_zeta(s: f64, a: f64) -> Result<f64> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::Domain(format!("zeta(s) requires s > 1, got {s}")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!(
            "hurwitz zeta requires a > 0, got {a}"
        )));
    }
    let n = ZETA_DIRECT_TERMS as f64 - 1.0 + a;
    // Sum small terms first.
    let mut sum = 0.0;
    for k in (0..ZETA_DIRECT_TERMS - 1).rev() {
        sum += (k as f64 + a).powf(-s);
    }
    let n_pow = n.powf(-s);
    sum += n * n_pow / (s - 1.0) + 0.5 * n_pow;

    // Rising factorial s (s+1) ... (s+2k-2) times N^(-s-2k+1).
    let mut rising = s;
    let mut term_pow = n_pow / n;
    for (j, c) in EM_COEFFS.iter().enumerate() {
        sum += c * rising * term_pow;
        let b = s + (2 * j + 1) as f64;
        rising *= b * (b + 1.0);
        term_pow /= n * n;
    }
    Ok(sum)
}

/// Leverage level at which the expected number of secondary collapses is one.
pub fn critical_omega(gamma: f64, q: f64) -> Result<f64> {
    if !(gamma > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} must exceed 1"
        )));
    }
    if !(q > 0.0) {
        return Err(Error::InvalidParameter(format!("q = {q} must be positive")));
    }
    Ok(q * riemann_zeta(2.0 * gamma - 1.0)?.powf(1.0 / gamma))
}

/// Capital threshold matching a leverage level: `u = (omega - 1) / (omega + 1)`.
pub fn omega_to_threshold(omega: f64) -> Result<f64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "omega = {omega} must be positive"
        )));
    }
    Ok((omega - 1.0) / (omega + 1.0))
}

/// Inverse of [`omega_to_threshold`]: `omega = (1 + u) / (1 - u)`.
pub fn threshold_to_omega(u: f64) -> Result<f64> {
    if !(u > -1.0 && u < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold {u} must lie in (-1, 1)"
        )));
    }
    Ok((1.0 + u) / (1.0 - u))
}

/// Expected number of secondary collapses, `sum_k k P(k) q (omega k)^-gamma`,
/// over `(k, P(k))` pairs. Pairs with `k = 0` contribute nothing.
pub fn expected_branching<I>(pk: I, omega: f64, q: f64, gamma: f64) -> f64
where
    I: IntoIterator<Item = (usize, f64)>,
{
    let mut terms: Vec<f64> = pk
        .into_iter()
        .filter(|&(k, _)| k >= 1)
        .map(|(k, p)| {
            let k = k as f64;
            k * p * q * (omega * k).powf(-gamma)
        })
        .collect();
    terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    terms.iter().sum()
}

/// Normalizes a degree histogram into `(k, P(k))` pairs.
pub fn histogram_probabilities<'a, I>(hist: I) -> Vec<(usize, f64)>
where
    I: IntoIterator<Item = (&'a usize, &'a usize)>,
{
    let pairs: Vec<(usize, usize)> = hist.into_iter().map(|(&k, &c)| (k, c)).collect();
    let total: usize = pairs.iter().map(|&(_, c)| c).sum();
    if total == 0 {
        return Vec::new();
    }
    pairs
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total as f64))
        .collect()
}

/// Ideal power law `P(k) = q k^-gamma` for `k` in `1..=k_max`.
pub fn ideal_power_law(q: f64, gamma: f64, k_max: usize) -> impl Iterator<Item = (usize, f64)> {
    (1..=k_max).map(move |k| (k, q * (k as f64).powf(-gamma)))
}

/// Avalanche CCDF exponent from the degree exponent.
pub fn exponent_map(gamma: f64) -> f64 {
    1.5 * gamma - 1.0
}

pub fn inverse_exponent_map(m: f64) -> f64 {
    2.0 * (m + 1.0) / 3.0
}

pub fn m_in_bounds(m: f64) -> bool {
    m > M_MIN && m < M_MAX
}

pub fn gamma_in_bounds(gamma: f64) -> bool {
    gamma > GAMMA_MIN && gamma < GAMMA_MAX
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub gamma: f64,
    pub q: f64,
    pub omega: f64,
    pub u_th: f64,
    pub m: f64,
    pub gamma_in_bounds: bool,
    pub m_in_bounds: bool,
}

impl CriticalPoint {
    pub fn new(gamma: f64, q: f64) -> Result<Self> {
        let omega = critical_omega(gamma, q)?;
        let m = exponent_map(gamma);
        Ok(Self {
            gamma,
            q,
            omega,
            u_th: omega_to_threshold(omega)?,
            m,
            gamma_in_bounds: gamma_in_bounds(gamma),
            m_in_bounds: m_in_bounds(m),
        })
    }
}

//! Heavy-tail measurement: log returns, monotone-run events, CCDFs and
//! power-law tail fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::criticality::{hurwitz_zeta, m_in_bounds};
use crate::error::{Error, Result};

/// Fewest tail samples for a fit to be reported as reliable.
pub const MIN_TAIL: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Up,
    Down,
}

impl Sign {
    pub fn of(x: f64) -> Option<Sign> {
        if x > 0.0 {
            Some(Sign::Up)
        } else if x < 0.0 {
            Some(Sign::Down)
        } else {
            None
        }
    }
}

/// One maximal run of same-sign returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub start: usize,
    pub len: usize,
    pub sign: Sign,
    pub cumulative_return: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    pub events: Vec<Event>,
}

/// How an event is turned into an avalanche size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeMetric {
    /// `|cumulative log return|` of the run.
    #[default]
    CumReturn,
    /// Number of steps in the run.
    RunLength,
}

impl std::str::FromStr for SizeMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cum_return" => Ok(SizeMetric::CumReturn),
            "run_length" => Ok(SizeMetric::RunLength),
            other => Err(Error::Parse(format!("unknown size metric {other:?}"))),
        }
    }
}

/// `r_t = ln(p_{t+1} / p_t)`.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two prices, got {}",
            prices.len()
        )));
    }
    if let Some((index, &value)) = prices.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(Error::NonpositivePrice { index, value });
    }
    Ok(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Splits a return series into maximal runs of constant sign.
///
/// Zero returns join the preceding run; leading zeros join the first signed
/// run. An all-zero series is one `Up` run.
pub fn segment_events(returns: &[f64]) -> EventSeries {
    let mut events: Vec<Event> = Vec::new();
    let mut leading = 0usize;
    for (t, &r) in returns.iter().enumerate() {
        match (Sign::of(r), events.last_mut()) {
            (None, Some(ev)) => {
                ev.len += 1;
                ev.cumulative_return += r;
            }
            (None, None) => leading += 1,
            (Some(s), Some(ev)) if ev.sign == s => {
                ev.len += 1;
                ev.cumulative_return += r;
            }
            (Some(s), last) => {
                let (start, len) = if last.is_none() {
                    (0, leading + 1)
                } else {
                    (t, 1)
                };
                events.push(Event {
                    start,
                    len,
                    sign: s,
                    cumulative_return: r,
                });
            }
        }
    }
    if events.is_empty() && leading > 0 {
        events.push(Event {
            start: 0,
            len: leading,
            sign: Sign::Up,
            cumulative_return: 0.0,
        });
    }
    EventSeries { events }
}

/// Sizes of the events with the requested sign.
pub fn extract_avalanches(ev: &EventSeries, sign: Sign, metric: SizeMetric) -> Vec<f64> {
    ev.events
        .iter()
        .filter(|e| e.sign == sign)
        .map(|e| match metric {
            SizeMetric::CumReturn => e.cumulative_return.abs(),
            SizeMetric::RunLength => e.len as f64,
        })
        .collect()
}

/// Empirical `P(X >= s)` at every distinct sample value, ascending.
pub fn ccdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < xs.len() {
        out.push((xs[i], (xs.len() - i) as f64 / n));
        let v = xs[i];
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
    }
    out
}

/// Whether samples are real-valued or integer counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Continuous,
    /// Integer sizes; the estimator uses the half-integer continuity shift
    /// `xmin - 1/2`.
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum XminPolicy {
    Fixed(f64),
    /// Minimise the Kolmogorov-Smirnov distance over sample quantiles.
    Scan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// CCDF exponent `m` in `P(X >= s) ~ s^-m`; the density exponent is `m + 1`.
    pub exponent: f64,
    pub xmin: f64,
    pub ks_stat: f64,
    pub n_tail: usize,
    /// Asymptotic standard error `m / sqrt(n_tail)`.
    pub std_err: f64,
    pub in_bounds: bool,
}

impl TailFit {
    pub fn density_exponent(&self) -> f64 {
        self.exponent + 1.0
    }

    pub fn reliable(&self) -> bool {
        self.n_tail >= MIN_TAIL && self.exponent.is_finite()
    }
}

fn sorted_finite_positive(samples: &[f64]) -> Vec<f64> {
    let mut xs: Vec<f64> = samples
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > 0.0)
        .collect();
    xs.sort_by(f64::total_cmp);
    xs
}

/// Maximum-likelihood exponent and KS distance for a sorted tail.
fn fit_sorted_tail(tail: &[f64], xmin: f64, kind: DataKind) -> (f64, f64) {
    let base = match kind {
        DataKind::Continuous => xmin,
        DataKind::Discrete => xmin - 0.5,
    };
    let n = tail.len() as f64;
    let log_sum: f64 = tail.iter().map(|&x| (x / base).ln()).sum();
    let m = n / log_sum;
    // KS distance between the empirical CDF and 1 - (x / base)^-m, checked on
    // both sides of each step. Discrete data are compared at the step tops.
    let mut d = 0.0f64;
    let mut i = 0;
    while i < tail.len() {
        let v = tail[i];
        let mut j = i;
        while j < tail.len() && tail[j] == v {
            j += 1;
        }
        let (lo, hi) = (i as f64 / n, j as f64 / n);
        let model_at = |x: f64| 1.0 - (x / base).powf(-m);
        match kind {
            DataKind::Continuous => {
                let f = model_at(v);
                d = d.max((f - lo).abs()).max((hi - f).abs());
            }
            DataKind::Discrete => {
                d = d.max((hi - model_at(v + 0.5)).abs());
            }
        }
        i = j;
    }
    (m, d)
}

/// Power-law tail fit by maximum likelihood.
pub fn fit_tail_exponent(samples: &[f64], policy: XminPolicy, kind: DataKind) -> Result<TailFit> {
    let xs = sorted_finite_positive(samples);
    let finish = |m: f64, xmin: f64, ks: f64, n_tail: usize| TailFit {
        exponent: m,
        xmin,
        ks_stat: ks,
        n_tail,
        std_err: m / (n_tail as f64).sqrt(),
        in_bounds: m_in_bounds(m),
    };
    match policy {
        XminPolicy::Fixed(xmin) => {
            if kind == DataKind::Discrete && xmin <= 0.5 {
                return Err(Error::InvalidParameter(format!(
                    "discrete xmin {xmin} must exceed 1/2"
                )));
            }
            let start = xs.partition_point(|&x| x < xmin);
            let tail = &xs[start..];
            if tail.len() < MIN_TAIL {
                return Err(Error::InsufficientTail {
                    needed: MIN_TAIL,
                    got: tail.len(),
                });
            }
            let (m, ks) = fit_sorted_tail(tail, xmin, kind);
            Ok(finish(m, xmin, ks, tail.len()))
        }
        XminPolicy::Scan => {
            if xs.len() < MIN_TAIL {
                return Err(Error::InsufficientTail {
                    needed: MIN_TAIL,
                    got: xs.len(),
                });
            }
            let mut best: Option<TailFit> = None;
            for xmin in scan_candidates(&xs) {
                let start = xs.partition_point(|&x| x < xmin);
                let tail = &xs[start..];
                if tail.len() < MIN_TAIL {
                    continue;
                }
                let (m, ks) = fit_sorted_tail(tail, xmin, kind);
                if !m.is_finite() {
                    continue;
                }
                if best.is_none_or(|b| ks < b.ks_stat) {
                    best = Some(finish(m, xmin, ks, tail.len()));
                }
            }
            best.ok_or(Error::InsufficientTail {
                needed: MIN_TAIL,
                got: xs.len(),
            })
        }
    }
}

const SCAN_POINTS: usize = 200;

/// Distinct sample values at evenly spaced quantiles, leaving at least
/// `MIN_TAIL` samples above the largest candidate.
fn scan_candidates(xs: &[f64]) -> Vec<f64> {
    let top = xs.len() - MIN_TAIL;
    let mut out: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| xs[i * top / SCAN_POINTS])
        .collect();
    // For counts, every one of the smallest distinct values is a candidate.
    let mut distinct: Vec<f64> = Vec::new();
    for &x in &xs[..=top] {
        if distinct.last() != Some(&x) {
            distinct.push(x);
            if distinct.len() == 64 {
                break;
            }
        }
    }
    out.extend(distinct);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Discrete power-law fit of a degree histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeFit {
    pub gamma: f64,
    pub kmin: usize,
    pub ks_stat: f64,
    pub n_tail: usize,
}

fn degree_log_likelihood(gamma: f64, kmin: usize, n: f64, sum_ln: f64) -> f64 {
    match hurwitz_zeta(gamma, kmin as f64) {
        Ok(z) => -gamma * sum_ln - n * z.ln(),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn fit_gamma_at(hist: &BTreeMap<usize, usize>, kmin: usize) -> Option<DegreeFit> {
    let tail: Vec<(usize, usize)> = hist
        .range(kmin..)
        .map(|(&k, &c)| (k, c))
        .filter(|&(_, c)| c > 0)
        .collect();
    let n: usize = tail.iter().map(|&(_, c)| c).sum();
    if n < MIN_TAIL {
        return None;
    }
    let sum_ln: f64 = tail.iter().map(|&(k, c)| c as f64 * (k as f64).ln()).sum();
    let nf = n as f64;
    // Golden-section search; the log-likelihood is concave in gamma.
    let (mut a, mut b) = (1.000_5f64, 8.0f64);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = degree_log_likelihood(c, kmin, nf, sum_ln);
    let mut fd = degree_log_likelihood(d, kmin, nf, sum_ln);
    while b - a > 1e-9 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = degree_log_likelihood(c, kmin, nf, sum_ln);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = degree_log_likelihood(d, kmin, nf, sum_ln);
        }
    }
    let gamma = 0.5 * (a + b);
    let z = hurwitz_zeta(gamma, kmin as f64).ok()?;
    // KS against the discrete CCDF zeta(gamma, k) / zeta(gamma, kmin).
    let mut below = 0usize;
    let mut ks = 0.0f64;
    for &(k, cnt) in &tail {
        let emp_ge = 1.0 - below as f64 / nf;
        let model_ge = hurwitz_zeta(gamma, k as f64).ok()? / z;
        ks = ks.max((emp_ge - model_ge).abs());
        below += cnt;
    }
    Some(DegreeFit {
        gamma,
        kmin,
        ks_stat: ks,
        n_tail: n,
    })
}

/// Discrete maximum-likelihood degree exponent. With `kmin = None` the cutoff
/// minimising the KS distance is chosen.
pub fn fit_degree_exponent(
    hist: &BTreeMap<usize, usize>,
    kmin: Option<usize>,
) -> Result<DegreeFit> {
    let insufficient = || Error::InsufficientTail {
        needed: MIN_TAIL,
        got: hist.range(1..).map(|(_, &c)| c).sum(),
    };
    match kmin {
        Some(k) => fit_gamma_at(hist, k.max(1)).ok_or_else(insufficient),
        None => hist
            .keys()
            .copied()
            .filter(|&k| k >= 1)
            .filter_map(|k| fit_gamma_at(hist, k))
            .min_by(|a, b| a.ks_stat.total_cmp(&b.ks_stat))
            .ok_or_else(insufficient),
    }
}

/// Down-run sizes of a price series and their tail fit: log returns,
/// sign runs, crisis sizes under `metric`, then the maximum-likelihood fit
/// (discrete for run lengths).
pub fn crisis_tail(
    prices: &[f64],
    metric: SizeMetric,
    policy: XminPolicy,
) -> Result<(Vec<f64>, TailFit)> {
    let returns = log_returns(prices)?;
    let sizes = extract_avalanches(&segment_events(&returns), Sign::Down, metric);
    let kind = match metric {
        SizeMetric::CumReturn => DataKind::Continuous,
        SizeMetric::RunLength => DataKind::Discrete,
    };
    let fit = fit_tail_exponent(&sizes, policy, kind)?;
    Ok((sizes, fit))
}

/// Sample excess kurtosis, skipping non-finite values.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

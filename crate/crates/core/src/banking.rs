//! The trade model read as a banking network: collapses are bankruptcies,
//! `c_th` is the regulatory minimum capital level and `L` the number of
//! banks. Scenarios report the business level `Omega` and the tail exponent
//! of bankruptcy avalanches.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::dynamics::run;
use crate::error::{Error, Result};
use crate::tail::{fit_tail_exponent, DataKind, TailFit, XminPolicy};

/// Relative tolerance on `Omega` when matching an isoline.
pub const OMEGA_TOLERANCE: f64 = 0.05;
pub const MIN_BANKS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub c_th: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub seed: u64,
    /// Mean `U_T` per bank over the final half of the recorded run.
    pub omega_level: f64,
    /// Mean `U_T` over the same window.
    pub u_mean: f64,
    /// Fit of the avalanche link-count CCDF; `None` when the tail is too thin.
    pub tail: Option<TailFit>,
    pub n_avalanches: usize,
    pub steps: usize,
}

impl ScenarioResult {
    pub fn m(&self) -> Option<f64> {
        self.tail.as_ref().map(|t| t.exponent)
    }
}

/// `(1 / L)` times the mean of the last `window` values of `u`.
pub fn business_level(u: &[f64], l: usize, window: usize) -> Result<f64> {
    if l == 0 {
        return Err(Error::InvalidParameter("L must be positive".into()));
    }
    if window == 0 || window > u.len() {
        return Err(Error::InvalidParameter(format!(
            "window {window} outside 1..={}",
            u.len()
        )));
    }
    let tail = &u[u.len() - window..];
    Ok(tail.iter().sum::<f64>() / window as f64 / l as f64)
}

/// Seed for one grid cell, fixed by `(c_th, L, base seed)` alone.
pub fn cell_seed(c_th: f64, l: usize, base_seed: u64) -> u64 {
    [c_th.to_bits(), l as u64]
        .into_iter()
        .fold(splitmix64(base_seed), |h, x| splitmix64(h ^ x))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One banking run at minimum capital level `c_th` with `l` banks.
pub fn run_scenario(c_th: f64, l: usize, base: &SimConfig) -> Result<ScenarioResult> {
    if l < MIN_BANKS {
        return Err(Error::InvalidParameter(format!(
            "L = {l} must be at least {MIN_BANKS}"
        )));
    }
    let seed = cell_seed(c_th, l, base.seed);
    let cfg = SimConfig {
        n: l,
        c_th,
        seed,
        ..base.clone()
    };
    let out = run(&cfg)?;
    let window = (out.u_total.len() / 2).max(1);
    let omega_level = business_level(&out.u_total, l, window)?;
    let sizes = out.avalanche_link_sizes();
    let tail = fit_tail_exponent(&sizes, XminPolicy::Scan, DataKind::Discrete).ok();
    Ok(ScenarioResult {
        c_th,
        l,
        seed,
        omega_level,
        u_mean: omega_level * l as f64,
        tail,
        n_avalanches: out.avalanches.len(),
        steps: cfg.steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSurface {
    pub cells: Vec<ScenarioResult>,
    /// `(m - min m) / (max m - min m)` per cell; `None` where no fit exists.
    pub m_normalized: Vec<Option<f64>>,
}

impl SweepSurface {
    pub fn from_cells(cells: Vec<ScenarioResult>) -> Self {
        let ms: Vec<f64> = cells.iter().filter_map(ScenarioResult::m).collect();
        let lo = ms.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m_normalized = cells
            .iter()
            .map(|c| {
                c.m()
                    .map(|m| if hi > lo { (m - lo) / (hi - lo) } else { 0.0 })
            })
            .collect();
        Self {
            cells,
            m_normalized,
        }
    }

    /// CSV with header `c_th,L,omega_level,m,m_normalized,n_avalanches`;
    /// missing fits are written as `NaN`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "c_th,L,omega_level,m,m_normalized,n_avalanches")?;
        for (c, mn) in self.cells.iter().zip(&self.m_normalized) {
            writeln!(
                w,
                "{:?},{},{:?},{:?},{:?},{}",
                c.c_th,
                c.l,
                c.omega_level,
                c.m().unwrap_or(f64::NAN),
                mn.unwrap_or(f64::NAN),
                c.n_avalanches
            )?;
        }
        Ok(())
    }
}

fn with_pool<T: Send>(parallel: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match parallel {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::InvalidParameter(e.to_string())),
    }
}

/// Every `(c_th, L)` cell of the grid, `L` varying fastest. `parallel`
/// bounds the worker count (default: all cores).
pub fn sweep(
    c_grid: &[f64],
    l_grid: &[usize],
    base: &SimConfig,
    parallel: Option<usize>,
) -> Result<SweepSurface> {
    let grid: Vec<(f64, usize)> = c_grid
        .iter()
        .flat_map(|&c| l_grid.iter().map(move |&l| (c, l)))
        .collect();
    let cells = with_pool(parallel, || {
        grid.par_iter()
            .map(|&(c, l)| run_scenario(c, l, base))
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(SweepSurface::from_cells(cells))
}

fn within_tolerance(omega: f64, target: f64) -> bool {
    (omega - target).abs() <= OMEGA_TOLERANCE * target.abs()
}

/// Moves `c_th` to `c_target` while changing `L` so that `Omega` stays within
/// 5% of the reference value. The bracket is searched geometrically from
/// `L_ref` inside `[100, 10 L_ref]` and then bisected.
pub fn constant_omega_path(
    c_target: f64,
    reference: &ScenarioResult,
    base: &SimConfig,
) -> Result<ScenarioResult> {
    if c_target == reference.c_th {
        return Ok(reference.clone());
    }
    let target = reference.omega_level;
    let (lo_bound, hi_bound) = (MIN_BANKS, 10 * reference.l);
    let eval = |l: usize| run_scenario(c_target, l, base);
    let gap = |r: &ScenarioResult| r.omega_level - target;

    let start = eval(reference.l)?;
    if within_tolerance(start.omega_level, target) {
        return Ok(start);
    }
    // Local slope decides which way to walk.
    let probe_l = ((reference.l as f64) / 1.25).round() as usize;
    let probe = eval(probe_l.max(lo_bound))?;
    if within_tolerance(probe.omega_level, target) {
        return Ok(probe);
    }
    let slope_down = gap(&probe) - gap(&start);
    let go_down = (gap(&start) > 0.0) == (slope_down < 0.0);

    // `a` is the far end of the walk, `b` its predecessor.
    let (mut a, mut b) = if go_down {
        (probe, start)
    } else {
        (start, probe)
    };
    let factor = if go_down { 1.0 / 1.25 } else { 1.25 };
    while gap(&a).signum() == gap(&b).signum() {
        let next_l = ((a.l as f64) * factor).round() as usize;
        if next_l < lo_bound || next_l > hi_bound || next_l == a.l {
            return Err(Error::NoSolution(format!(
                "Omega never reaches {target} for L in [{lo_bound}, {hi_bound}] at c_th = {c_target}"
            )));
        }
        let next = eval(next_l)?;
        if within_tolerance(next.omega_level, target) {
            return Ok(next);
        }
        b = std::mem::replace(&mut a, next);
    }
    let (mut x, mut y) = (a, b);
    loop {
        if x.l.abs_diff(y.l) <= 1 {
            let best = if gap(&x).abs() <= gap(&y).abs() { x } else { y };
            return if within_tolerance(best.omega_level, target) {
                Ok(best)
            } else {
                Err(Error::NoSolution(format!(
                    "Omega jumps across {target} between adjacent L at c_th = {c_target}"
                )))
            };
        }
        let mid = eval((x.l + y.l) / 2)?;
        if within_tolerance(mid.omega_level, target) {
            return Ok(mid);
        }
        if gap(&mid).signum() == gap(&x).signum() {
            x = mid;
        } else {
            y = mid;
        }
    }
}

/// Constant-`Omega` path through every `c_th` in `c_grid`, anchored at the
/// reference scenario.
pub fn isoline(
    c_grid: &[f64],
    reference: &ScenarioResult,
    base: &SimConfig,
    parallel: Option<usize>,
) -> Result<Vec<ScenarioResult>> {
    with_pool(parallel, || {
        c_grid
            .par_iter()
            .map(|&c| constant_omega_path(c, reference, base))
            .collect::<Result<Vec<_>>>()
    })?
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_base() -> SimConfig {
        SimConfig {
            steps: 6000,
            warmup: Some(1000),
            seed: 3,
            ..SimConfig::default()
        }
    }

    #[test]
    fn business_level_constant_and_last() {
        let u = vec![4.0; 10];
        assert_eq!(business_level(&u, 2, 7).unwrap(), 2.0);
        let ramp: Vec<f64> = (0..10).map(|x| x as f64).collect();
        assert_eq!(business_level(&ramp, 3, 1).unwrap(), 3.0);
        assert!(business_level(&ramp, 3, 0).is_err());
        assert!(business_level(&ramp, 3, 11).is_err());
    }

    #[test]
    fn business_level_of_ramp_is_midpoint() {
        // Integral of t over [0, T] divided by T is T/2; the discrete mean of
        // 0..=T is exactly T/2 too.
        let t_max = 1000;
        let ramp: Vec<f64> = (0..=t_max).map(|x| x as f64).collect();
        let omega = business_level(&ramp, 5, ramp.len()).unwrap();
        assert!((omega - t_max as f64 / 2.0 / 5.0).abs() <= 1.0 / 5.0);
    }

    #[test]
    fn seeds_depend_only_on_cell() {
        assert_eq!(cell_seed(-0.7, 200, 1), cell_seed(-0.7, 200, 1));
        assert_ne!(cell_seed(-0.7, 200, 1), cell_seed(-0.69, 200, 1));
        assert_ne!(cell_seed(-0.7, 200, 1), cell_seed(-0.7, 201, 1));
        assert_ne!(cell_seed(-0.7, 200, 1), cell_seed(-0.7, 200, 2));
    }

    #[test]
    fn rejects_tiny_systems() {
        assert!(run_scenario(-0.7, 50, &small_base()).is_err());
    }

    #[test]
    fn sweep_cells_match_isolated_runs() {
        let base = small_base();
        let surface = sweep(&[-0.71, -0.6], &[150, 200], &base, Some(2)).unwrap();
        assert_eq!(surface.cells.len(), 4);
        let lone = run_scenario(-0.6, 150, &base).unwrap();
        assert_eq!(surface.cells[2], lone);
        let serial = sweep(&[-0.71, -0.6], &[150, 200], &base, Some(1)).unwrap();
        assert_eq!(surface, serial);
    }

    #[test]
    fn normalization_hits_zero_and_one() {
        let cell = |c: f64, m: Option<f64>| ScenarioResult {
            c_th: c,
            l: 100,
            seed: 0,
            omega_level: 1.0,
            u_mean: 100.0,
            tail: m.map(|exponent| TailFit {
                exponent,
                xmin: 1.0,
                ks_stat: 0.0,
                n_tail: 100,
                std_err: 0.1,
                in_bounds: false,
            }),
            n_avalanches: 0,
            steps: 0,
        };
        let s = SweepSurface::from_cells(vec![
            cell(-0.7, Some(2.0)),
            cell(-0.6, None),
            cell(-0.5, Some(3.0)),
            cell(-0.4, Some(2.5)),
        ]);
        assert_eq!(s.m_normalized, vec![Some(0.0), None, Some(1.0), Some(0.5)]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("c_th,L,omega_level,m,m_normalized,n_avalanches\n"));
        assert!(text.lines().nth(2).unwrap().contains("NaN"));
    }

    #[test]
    fn identity_path_returns_reference() {
        let base = small_base();
        let reference = run_scenario(-0.71, 150, &base).unwrap();
        let same = constant_omega_path(-0.71, &reference, &base).unwrap();
        assert_eq!(same, reference);
    }
}

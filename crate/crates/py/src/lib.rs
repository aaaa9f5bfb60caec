//! Python module `econosim`.

use std::collections::BTreeMap;

use econosim::banking;
use econosim::config::SimConfig as CoreConfig;
use econosim::criticality;
use econosim::dynamics;
use econosim::error::Error;
use econosim::geometry::{fractal_dimensions, LinkScaling};
use econosim::graph::{AgentId, EconomyNetwork};
use econosim::tail::{self, DataKind, SizeMetric, XminPolicy};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::InsufficientTail { .. } | Error::DisconnectedInput { .. } | Error::NoSolution(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "SimConfig", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct SimConfig {
    n: usize,
    k0: usize,
    q: f64,
    c_th: f64,
    alpha_max: f64,
    delta: f64,
    w: f64,
    steps: usize,
    warmup: Option<usize>,
    seed: u64,
    /// `"total"` or `"in_only"`.
    turnover_mode: String,
}

impl SimConfig {
    fn to_core(&self) -> PyResult<CoreConfig> {
        Ok(CoreConfig {
            n: self.n,
            k0: self.k0,
            q: self.q,
            c_th: self.c_th,
            alpha_max: self.alpha_max,
            delta: self.delta,
            w: self.w,
            steps: self.steps,
            warmup: self.warmup,
            seed: self.seed,
            turnover_mode: self.turnover_mode.parse().map_err(py_err)?,
        })
    }

    fn from_core(c: &CoreConfig) -> Self {
        let mode = match c.turnover_mode {
            econosim::config::TurnoverMode::Total => "total",
            econosim::config::TurnoverMode::InOnly => "in_only",
        };
        Self {
            n: c.n,
            k0: c.k0,
            q: c.q,
            c_th: c.c_th,
            alpha_max: c.alpha_max,
            delta: c.delta,
            w: c.w,
            steps: c.steps,
            warmup: c.warmup,
            seed: c.seed,
            turnover_mode: mode.to_string(),
        }
    }
}

#[pymethods]
impl SimConfig {
    /// Defaults, with any field overridable by keyword.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut cfg = CoreConfig::default();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                let value = if key == "warmup" && v.is_none() {
                    cfg.warmup = None;
                    continue;
                } else {
                    v.str()?.to_string()
                };
                cfg.set(&key, &value).map_err(py_err)?;
            }
        }
        Ok(Self::from_core(&cfg))
    }

    /// Reads a `key = value` or JSON config file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        CoreConfig::load(path.as_ref())
            .map(|c| Self::from_core(&c))
            .map_err(py_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.to_core()?.validate().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "SimConfig(n={}, q={:?}, c_th={:?}, steps={}, seed={})",
            self.n, self.q, self.c_th, self.steps, self.seed
        )
    }
}

#[pyclass(name = "SimulationOutput", get_all, skip_from_py_object)]
struct SimulationOutput {
    seed: u64,
    u_total: Vec<f64>,
    returns: Vec<f64>,
    /// `(t, agents_lost, links_destroyed)` per avalanche.
    avalanches: Vec<(usize, usize, usize)>,
    hist_in: BTreeMap<usize, usize>,
    hist_out: BTreeMap<usize, usize>,
    /// `(producer, consumer)` pairs of the final network.
    edges: Vec<(usize, usize)>,
    branching_ratio: f64,
}

#[pymethods]
impl SimulationOutput {
    /// Links destroyed by each avalanche that destroyed any.
    fn avalanche_link_sizes(&self) -> Vec<f64> {
        self.avalanches
            .iter()
            .filter(|a| a.2 > 0)
            .map(|a| a.2 as f64)
            .collect()
    }
}

/// Runs the trade dynamics; the GIL is released meanwhile.
#[pyfunction]
fn run(py: Python<'_>, config: &SimConfig) -> PyResult<SimulationOutput> {
    let cfg = config.to_core()?;
    let (out, net) = py
        .detach(|| dynamics::run_with_network(&cfg))
        .map_err(py_err)?;
    Ok(SimulationOutput {
        seed: out.seed,
        branching_ratio: out.branching_ratio(),
        avalanches: out
            .avalanches
            .iter()
            .map(|a| (a.t, a.agents_lost, a.links_destroyed))
            .collect(),
        u_total: out.u_total,
        returns: out.returns,
        hist_in: out.hist_in,
        hist_out: out.hist_out,
        edges: net.edges().map(|e| (e.producer.0, e.consumer.0)).collect(),
    })
}

#[pyclass(name = "CriticalPoint", get_all, skip_from_py_object)]
struct CriticalPoint {
    gamma: f64,
    q: f64,
    omega: f64,
    u_th: f64,
    m: f64,
    gamma_in_bounds: bool,
    m_in_bounds: bool,
}

#[pyfunction]
#[pyo3(signature = (gamma, q = 1.0))]
fn critical_point(gamma: f64, q: f64) -> PyResult<CriticalPoint> {
    let c = criticality::CriticalPoint::new(gamma, q).map_err(py_err)?;
    Ok(CriticalPoint {
        gamma: c.gamma,
        q: c.q,
        omega: c.omega,
        u_th: c.u_th,
        m: c.m,
        gamma_in_bounds: c.gamma_in_bounds,
        m_in_bounds: c.m_in_bounds,
    })
}

#[pyfunction]
#[pyo3(signature = (gamma, q = 1.0))]
fn critical_omega(gamma: f64, q: f64) -> PyResult<f64> {
    criticality::critical_omega(gamma, q).map_err(py_err)
}

#[pyfunction]
fn exponent_map(gamma: f64) -> f64 {
    criticality::exponent_map(gamma)
}

#[pyclass(name = "TailFit", get_all, skip_from_py_object)]
struct TailFit {
    exponent: f64,
    xmin: f64,
    ks_stat: f64,
    n_tail: usize,
    std_err: f64,
    in_bounds: bool,
}

impl From<tail::TailFit> for TailFit {
    fn from(f: tail::TailFit) -> Self {
        Self {
            exponent: f.exponent,
            xmin: f.xmin,
            ks_stat: f.ks_stat,
            n_tail: f.n_tail,
            std_err: f.std_err,
            in_bounds: f.in_bounds,
        }
    }
}

#[pymethods]
impl TailFit {
    fn __repr__(&self) -> String {
        format!(
            "TailFit(exponent={:?}, xmin={:?}, n_tail={})",
            self.exponent, self.xmin, self.n_tail
        )
    }
}

fn policy(xmin: Option<f64>) -> XminPolicy {
    xmin.map_or(XminPolicy::Scan, XminPolicy::Fixed)
}

/// Power-law fit of `P(X >= x)`; `xmin=None` scans for the KS minimum.
#[pyfunction]
#[pyo3(signature = (samples, xmin = None, discrete = false))]
fn fit_tail(samples: Vec<f64>, xmin: Option<f64>, discrete: bool) -> PyResult<TailFit> {
    let kind = if discrete {
        DataKind::Discrete
    } else {
        DataKind::Continuous
    };
    tail::fit_tail_exponent(&samples, policy(xmin), kind)
        .map(TailFit::from)
        .map_err(py_err)
}

/// Down-run sizes of a price series and their tail fit.
#[pyfunction]
#[pyo3(signature = (prices, size_metric = "cum_return", xmin = None))]
fn crisis_tail(
    prices: Vec<f64>,
    size_metric: &str,
    xmin: Option<f64>,
) -> PyResult<(Vec<f64>, TailFit)> {
    let metric: SizeMetric = size_metric.parse().map_err(py_err)?;
    tail::crisis_tail(&prices, metric, policy(xmin))
        .map(|(s, f)| (s, f.into()))
        .map_err(py_err)
}

#[pyclass(name = "FractalEstimate", get_all, skip_from_py_object)]
struct FractalEstimate {
    d_b: f64,
    d_k: f64,
    ell: u32,
    gamma_geo: f64,
    r2: f64,
    boxes: Vec<(usize, usize)>,
}

/// Box-covering dimensions of the giant component of an edge list.
#[pyfunction]
#[pyo3(signature = (edges, ell = 2, method = "link_count", seed = 0))]
fn geometry(
    py: Python<'_>,
    edges: Vec<(usize, usize)>,
    ell: u32,
    method: &str,
    seed: u64,
) -> PyResult<FractalEstimate> {
    let method: LinkScaling = method.parse().map_err(py_err)?;
    let n = edges.iter().map(|&(p, c)| p.max(c) + 1).max().unwrap_or(0);
    let mut net = EconomyNetwork::empty(n);
    for (p, c) in edges {
        net.add_edge(AgentId(p), AgentId(c)).map_err(py_err)?;
    }
    let est = py
        .detach(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            fractal_dimensions(&net, ell, method, &mut rng)
        })
        .map_err(py_err)?;
    Ok(FractalEstimate {
        d_b: est.d_b,
        d_k: est.d_k,
        ell: est.ell,
        gamma_geo: est.gamma_geo,
        r2: est.r2,
        boxes: est.boxes,
    })
}

#[pyclass(name = "ScenarioResult", get_all, skip_from_py_object)]
struct ScenarioResult {
    c_th: f64,
    #[pyo3(name = "L")]
    l: usize,
    seed: u64,
    omega_level: f64,
    m: Option<f64>,
    n_avalanches: usize,
}

impl From<banking::ScenarioResult> for ScenarioResult {
    fn from(r: banking::ScenarioResult) -> Self {
        Self {
            m: r.m(),
            c_th: r.c_th,
            l: r.l,
            seed: r.seed,
            omega_level: r.omega_level,
            n_avalanches: r.n_avalanches,
        }
    }
}

/// One banking run with `l` banks at capital floor `c_th`.
#[pyfunction]
fn run_scenario(py: Python<'_>, c_th: f64, l: usize, base: &SimConfig) -> PyResult<ScenarioResult> {
    let base = base.to_core()?;
    py.detach(|| banking::run_scenario(c_th, l, &base))
        .map(ScenarioResult::from)
        .map_err(py_err)
}

/// Every `(c_th, L)` cell, `L` varying fastest.
#[pyfunction]
#[pyo3(signature = (c_grid, l_grid, base, parallel = None))]
fn sweep(
    py: Python<'_>,
    c_grid: Vec<f64>,
    l_grid: Vec<usize>,
    base: &SimConfig,
    parallel: Option<usize>,
) -> PyResult<Vec<ScenarioResult>> {
    let base = base.to_core()?;
    let surface = py
        .detach(|| banking::sweep(&c_grid, &l_grid, &base, parallel))
        .map_err(py_err)?;
    Ok(surface
        .cells
        .into_iter()
        .map(ScenarioResult::from)
        .collect())
}

#[pymodule(name = "econosim")]
pub fn econosim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<SimConfig>()?;
    m.add_class::<SimulationOutput>()?;
    m.add_class::<CriticalPoint>()?;
    m.add_class::<TailFit>()?;
    m.add_class::<FractalEstimate>()?;
    m.add_class::<ScenarioResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(critical_point, m)?)?;
    m.add_function(wrap_pyfunction!(critical_omega, m)?)?;
    m.add_function(wrap_pyfunction!(exponent_map, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tail, m)?)?;
    m.add_function(wrap_pyfunction!(crisis_tail, m)?)?;
    m.add_function(wrap_pyfunction!(geometry, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}

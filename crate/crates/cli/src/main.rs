//! `econosim`: simulate trade networks, fit crisis tails, locate critical
//! points, sweep banking scenarios and estimate network geometry.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod output;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use econosim::banking::{self, ScenarioResult, SweepSurface};
use econosim::config::SimConfig;
use econosim::criticality::CriticalPoint;
use econosim::dynamics;
use econosim::error::{Error, Result};
use econosim::geometry::{self, LinkScaling};
use econosim::graph::{write_histogram_csv, EconomyNetwork};
use econosim::tail::{self, ccdf, DataKind, SizeMetric, XminPolicy};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use output::{io_err, read_series, write_pairs, OutDir};

const DEFAULT_OUT: &str = "econosim_out";

#[derive(Parser)]
#[command(name = "econosim", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Configuration file (`key = value` lines or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "ECONOSIM_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for `sweep` (default: all cores).
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Capital floor; `a:b:step` for `sweep`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    cth: Option<String>,
    /// Number of agents; comma list for `sweep`.
    #[arg(long = "L", global = true)]
    l: Option<String>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    q: Option<f64>,
    /// Fixed tail cutoff instead of the KS scan.
    #[arg(long, global = true)]
    xmin: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Metric::CumReturn)]
    size_metric: Metric,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    #[value(name = "cum_return")]
    CumReturn,
    #[value(name = "run_length")]
    RunLength,
}

impl From<Metric> for SizeMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::CumReturn => SizeMetric::CumReturn,
            Metric::RunLength => SizeMetric::RunLength,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    #[value(name = "constant_L")]
    ConstantL,
    #[value(name = "constant_omega")]
    ConstantOmega,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trade dynamics and write series, avalanches and tail fits.
    Simulate,
    /// Fit the crisis tail of a price series (last CSV column).
    Analyze { prices: PathBuf },
    /// Print the critical point for a degree exponent.
    Critical,
    /// Banking scenarios over a (c_th, L) grid.
    Sweep {
        #[arg(long, value_enum, default_value_t = SweepMode::ConstantL)]
        mode: SweepMode,
    },
    /// Box-covering dimensions of an edge list, or of a simulated network.
    Geometry {
        edges: Option<PathBuf>,
        /// 1 for directed, 2 for undirected.
        #[arg(long, default_value_t = 2)]
        ell: u32,
        #[arg(long, default_value = "link_count")]
        dk_method: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("econosim: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InsufficientTail { .. } | Error::DisconnectedInput { .. } => 3,
        Error::NoSolution(_) | Error::Domain(_) => 1,
        _ => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate => simulate(g),
        Command::Analyze { prices } => analyze(g, prices),
        Command::Critical => critical(g),
        Command::Sweep { mode } => sweep(g, *mode),
        Command::Geometry {
            edges,
            ell,
            dk_method,
        } => geometry_cmd(g, edges.as_ref(), *ell, dk_method),
    }
}

impl Global {
    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn policy(&self) -> XminPolicy {
        self.xmin.map_or(XminPolicy::Scan, XminPolicy::Fixed)
    }

    /// Config file (or defaults) with single-valued flags applied on top.
    fn sim_config(&self, scalar_flags: bool) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => SimConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(q) = self.q {
            cfg.q = q;
        }
        if scalar_flags {
            if let Some(c) = &self.cth {
                cfg.set("c_th", c)?;
            }
            if let Some(l) = &self.l {
                cfg.set("n", l)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A config file, or a run manifest whose `config` echo is reused.
fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if let Ok(serde_json::Value::Object(mut obj)) = serde_json::from_str(&text) {
        if let Some(cfg) = obj.remove("config").filter(|c| c.is_object()) {
            return serde_json::from_value(cfg)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())));
        }
    }
    SimConfig::parse(&text)
}

fn simulate(g: &Global) -> Result<ExitCode> {
    let cfg = g.sim_config(true)?;
    let mut out = OutDir::create(g.out_dir())?;
    let (sim, net) = dynamics::run_with_network(&cfg)?;
    let t0 = cfg.warmup_steps();

    write_pairs(
        out.file("u_total.csv")?,
        "t,U_T",
        sim.u_total
            .iter()
            .enumerate()
            .map(|(i, u)| (t0 + i + 1, *u)),
    )?;
    write_pairs(
        out.file("returns.csv")?,
        "t,return",
        sim.returns
            .iter()
            .enumerate()
            .map(|(i, r)| (t0 + i + 2, *r)),
    )?;
    let mut w = out.file("avalanches.csv")?;
    writeln!(w, "t,agents_lost,links_destroyed")?;
    for a in &sim.avalanches {
        writeln!(w, "{},{},{}", a.t, a.agents_lost, a.links_destroyed)?;
    }
    w.flush()?;

    net.write_edges_csv(out.file("edges.csv")?)?;
    write_histogram_csv(&sim.hist_in, out.file("hist_in.csv")?)?;
    write_histogram_csv(&sim.hist_out, out.file("hist_out.csv")?)?;

    let sizes = sim.avalanche_link_sizes();
    write_pairs(out.file("ccdf.csv")?, "size,ccdf", ccdf(&sizes))?;
    let fit = tail::fit_tail_exponent(&sizes, g.policy(), DataKind::Discrete);
    if let Ok(f) = &fit {
        out.json("tailfit.json", f)?;
    }
    if let Ok((_, f)) = tail::crisis_tail(&sim.u_total, g.size_metric.into(), g.policy()) {
        out.json("index_tailfit.json", &f)?;
    }
    out.finish("simulate", Some(cfg.clone()), Some(cfg.seed))?;
    fit.map(|_| ExitCode::SUCCESS)
}

fn analyze(g: &Global, prices: &Path) -> Result<ExitCode> {
    let series = read_series(prices)?;
    let (sizes, fit) = tail::crisis_tail(&series, g.size_metric.into(), g.policy())?;
    let mut out = OutDir::create(g.out_dir())?;
    write_pairs(out.file("ccdf.csv")?, "size,ccdf", ccdf(&sizes))?;
    out.json("tailfit.json", &fit)?;
    out.finish("analyze", None, None)?;
    print_json(&fit)?;
    Ok(ExitCode::SUCCESS)
}

fn critical(g: &Global) -> Result<ExitCode> {
    let gamma = g
        .gamma
        .ok_or_else(|| Error::InvalidParameter("critical needs --gamma".into()))?;
    let cp = CriticalPoint::new(gamma, g.q.unwrap_or(1.0))?;
    if let Some(dir) = &g.out {
        let mut out = OutDir::create(dir.clone())?;
        out.json("critical.json", &cp)?;
        out.finish("critical", None, None)?;
    }
    print_json(&cp)?;
    Ok(ExitCode::SUCCESS)
}

fn sweep(g: &Global, mode: SweepMode) -> Result<ExitCode> {
    let base = g.sim_config(false)?;
    let c_grid = match &g.cth {
        Some(s) => parse_range(s)?,
        None => vec![base.c_th],
    };
    let l_grid = match &g.l {
        Some(s) => parse_list(s)?,
        None => vec![base.n],
    };
    let cells: Vec<ScenarioResult> = match mode {
        SweepMode::ConstantL => banking::sweep(&c_grid, &l_grid, &base, g.parallel)?.cells,
        SweepMode::ConstantOmega => {
            let mut all = Vec::new();
            for &l in &l_grid {
                let reference = banking::run_scenario(c_grid[0], l, &base)?;
                all.extend(banking::isoline(&c_grid, &reference, &base, g.parallel)?);
            }
            all
        }
    };
    let surface = SweepSurface::from_cells(cells);
    let mut out = OutDir::create(g.out_dir())?;
    surface.write_csv(out.file("sweep.csv")?)?;
    out.json("sweep.json", &surface.cells)?;
    out.finish("sweep", Some(base.clone()), Some(base.seed))?;
    Ok(ExitCode::SUCCESS)
}

fn geometry_cmd(g: &Global, edges: Option<&PathBuf>, ell: u32, method: &str) -> Result<ExitCode> {
    let method: LinkScaling = method.parse()?;
    let (net, cfg) = match edges {
        Some(p) => {
            let f = File::open(p).map_err(|e| io_err(p, e))?;
            (
                EconomyNetwork::read_edges_csv(BufReader::new(f), None)?,
                None,
            )
        }
        None => {
            let cfg = g.sim_config(true)?;
            (dynamics::run_with_network(&cfg)?.1, Some(cfg))
        }
    };
    let seed = g.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let est = geometry::fractal_dimensions(&net, ell, method, &mut rng)?;
    let mut out = OutDir::create(g.out_dir())?;
    out.json("geometry.json", &est)?;
    out.finish("geometry", cfg, Some(seed))?;
    print_json(&est)?;
    Ok(ExitCode::SUCCESS)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    // A closed pipe downstream is not an error for us.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

/// `a:b:step`, inclusive of `b` up to rounding; a bare number is one point.
fn parse_range(s: &str) -> Result<Vec<f64>> {
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("--cth {s:?}: {e}")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [one] => Ok(vec![num(one)?]),
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || b < a {
                return Err(Error::InvalidParameter(format!(
                    "--cth {s:?}: need a <= b and step > 0"
                )));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|i| a + i as f64 * step).collect())
        }
        _ => Err(Error::Parse(format!("--cth {s:?}: expected a:b:step"))),
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("--L {s:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_includes_endpoint() {
        let r = parse_range("-0.71:-0.69:0.01").unwrap();
        assert_eq!(r.len(), 3);
        assert!((r[2] + 0.69).abs() < 1e-12);
    }

    #[test]
    fn range_rejects_backwards() {
        assert!(parse_range("1:0:0.1").is_err());
        assert!(parse_range("0:1:0").is_err());
        assert!(parse_range("0:1").is_err());
    }

    #[test]
    fn list_parses() {
        assert_eq!(parse_list("1500, 2000").unwrap(), vec![1500, 2000]);
        assert!(parse_list("15x").is_err());
    }
}
